use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use aaq_core::cost::{cost_report, CostReport, Variant};
use aaq_core::fixtures;
use aaq_core::metrics::rmse;
use aaq_core::quant::{dequantize_token, encode_block, quantize_token, ActivationGroup, QuantScheme};
use aaq_core::sim::{simulate_trace, sweep, SimReport, SweepRow};
use aaq_core::synth;
use aaq_core::tensor::ActivationTensor;
use aaq_core::workload::{build_folding_block, emit_trace, Trace};
use aaq_core::RunConfig;

use crate::output::Run;
use crate::{Cli, CliError, Command, ReportFormat, WorkloadFlags};

/// Outliers per synthetic heavy-tailed token.
const SYNTHETIC_OUTLIERS: usize = 4;

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.config {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            RunConfig::parse_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Overlays `A:8:4,B:4:4`-style entries on the config's scheme table.
fn apply_schemes(cfg: &mut RunConfig, spec: &str) -> Result<(), CliError> {
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (group, scheme) = part
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("bad scheme entry '{part}' (want GROUP:BITS:K)")))?;
        let key = format!("quant.{}", group.to_ascii_lowercase());
        cfg.set(&key, scheme)
            .map_err(|e| CliError::Usage(format!("scheme entry '{part}': {e}")))?;
    }
    Ok(())
}

fn parse_list(flag: &str, text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("--{flag}: cannot parse '{text}'"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((lo, hi)) = part.split_once(':') {
            let (lo, hi): (u64, u64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
            if lo > hi {
                return Err(bad());
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err(CliError::Usage(format!("--{flag}: values must be positive")));
    }
    Ok(out)
}

/// Applies workload flags, returning the trace for them.
fn workload_trace(cfg: &mut RunConfig, w: &WorkloadFlags) -> Result<Trace, CliError> {
    if let Some(s) = &w.schemes {
        apply_schemes(cfg, s)?;
    }
    cfg.workload.chunk4 |= w.chunk4;
    if w.no_streaming_mha {
        cfg.workload.streaming_mha = false;
    }
    cfg.validate()?;
    let g = build_folding_block(w.ns, &cfg.workload)?;
    let schemes = (!w.unquantized).then_some(cfg.quant);
    Ok(emit_trace(&g, schemes.as_ref()))
}

pub fn run(cli: &Cli, args: Vec<String>) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut cfg = load_config(cli)?;
    let mut run = Run::new(&cli.out_dir);
    let mut failure = None;
    let name = match &cli.command {
        Command::Quantize {
            input,
            synthetic,
            group,
            scheme,
            name,
        } => {
            quantize(
                &cfg,
                cli.seed,
                &mut run,
                input.as_deref(),
                *synthetic,
                group,
                scheme.as_deref(),
                name,
            )?;
            "quantize"
        }
        Command::Verify { fixtures: dir, bless } => {
            failure = verify(&mut run, dir, *bless)?;
            "verify"
        }
        Command::Simulate {
            workload,
            trace_out,
            report,
        } => {
            let trace = workload_trace(&mut cfg, workload)?;
            let r = simulate_trace(&trace, &cfg.sim)?;
            if let Some(p) = trace_out {
                run.emit_json(&p.to_string_lossy(), &trace)?;
            }
            match report {
                ReportFormat::Json => run.emit_json("simulate.json", &r)?,
                ReportFormat::Csv => run.emit("simulate.csv", report_csv(&r).as_bytes())?,
            };
            println!(
                "ns={} total_cycles={} latency_ms={:.6} rmpu={:.2}% vvpu={:.2}%",
                r.ns, r.total_cycles, r.latency_ms, r.rmpu_utilization, r.vvpu_utilization
            );
            "simulate"
        }
        Command::Sweep {
            ns,
            rmpus,
            vvpus,
            schemes,
        } => {
            if let Some(s) = schemes {
                apply_schemes(&mut cfg, s)?;
            }
            cfg.validate()?;
            let ns = parse_list("ns", ns)?;
            let rmpus = parse_list("rmpus", rmpus)?;
            let vvpus = parse_list("vvpus", vvpus)?;
            let traces = ns
                .iter()
                .map(|&n| Ok(emit_trace(&build_folding_block(n, &cfg.workload)?, Some(&cfg.quant))))
                .collect::<Result<Vec<_>, CliError>>()?;
            let grid: Vec<_> = rmpus
                .iter()
                .flat_map(|&r| vvpus.iter().map(move |&v| (r, v)))
                .map(|(r, v)| {
                    let mut s = cfg.sim.clone();
                    s.num_rmpus = r;
                    s.vvpus_per_rmpu = v;
                    s
                })
                .collect();
            let rows = sweep(&traces, &grid, cli.jobs)?;
            run.emit(
                "sweep.csv",
                table(SweepRow::CSV_HEADER, rows.iter().map(SweepRow::csv)).as_bytes(),
            )?;
            println!("{} grid points", rows.len());
            "sweep"
        }
        Command::Cost { ns, variant } => {
            let ns = parse_list("ns", ns)?;
            let variants = if variant.eq_ignore_ascii_case("all") {
                Variant::ALL.to_vec()
            } else {
                vec![variant.parse::<Variant>()?]
            };
            let mut rows = Vec::new();
            for &n in &ns {
                for &v in &variants {
                    rows.push(cost_report(n, v, &cfg.workload, &cfg.quant)?);
                }
            }
            run.emit(
                "cost.csv",
                table(CostReport::CSV_HEADER, rows.iter().map(CostReport::csv)).as_bytes(),
            )?;
            println!("{} rows", rows.len());
            "cost"
        }
        Command::Trace { workload } => {
            let trace = workload_trace(&mut cfg, workload)?;
            run.emit_json("trace.json", &trace)?;
            println!("{} nodes, {} bytes per block", trace.entries.len(), trace.block_bytes());
            "trace"
        }
    };
    run.finish(name, args, cli.seed, cli.jobs, &cfg.to_text())?;
    failure.map_or(Ok(()), Err)
}

fn table(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn report_csv(r: &SimReport) -> String {
    let mut out = String::from("node,name,mem_cycles,rmpu_cycles,vvpu_cycles,latency\n");
    for s in &r.stages {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.node, s.name, s.mem_cycles, s.rmpu_cycles, s.vvpu_cycles, s.latency
        );
    }
    let _ = writeln!(out, ",block,,,,{}", r.block_cycles);
    let _ = writeln!(out, ",total,,,,{}", r.total_cycles);
    out
}

#[derive(Debug, Serialize)]
struct GroupCounts {
    #[serde(rename = "A")]
    a: usize,
    #[serde(rename = "B")]
    b: usize,
    #[serde(rename = "C")]
    c: usize,
}

#[derive(Debug, Serialize)]
struct QuantizeSidecar {
    source: String,
    tokens: usize,
    hz: usize,
    scheme: String,
    blocks: usize,
    bytes: usize,
    rmse: f64,
    max_abs_error: f64,
    group_counts: GroupCounts,
}

#[allow(clippy::too_many_arguments)]
fn quantize(
    cfg: &RunConfig,
    seed: u64,
    run: &mut Run,
    input: Option<&Path>,
    synthetic: Option<usize>,
    group: &str,
    scheme: Option<&str>,
    name: &str,
) -> Result<(), CliError> {
    let hz = cfg.workload.hz as usize;
    let (tokens, hz, source): (Vec<Vec<f64>>, usize, String) = match (input, synthetic) {
        (Some(p), None) => {
            let bytes = fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let t =
                ActivationTensor::from_dump_bytes(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            (
                t.token_iter().map(<[f64]>::to_vec).collect(),
                t.hz(),
                p.display().to_string(),
            )
        }
        (None, Some(n)) if n > 0 => (
            synth::heavy_tailed_corpus(seed, n, hz, SYNTHETIC_OUTLIERS),
            hz,
            format!("synthetic:{n}"),
        ),
        _ => {
            return Err(CliError::Usage(
                "quantize needs --input FILE or --synthetic N (N > 0)".into(),
            ))
        }
    };

    let g = match group {
        "A" | "a" => ActivationGroup::A,
        "B" | "b" => ActivationGroup::B,
        "C" | "c" => ActivationGroup::C,
        _ => return Err(CliError::Usage(format!("--group must be A, B or C, got '{group}'"))),
    };
    let scheme = match scheme {
        Some(s) => s
            .parse::<QuantScheme>()
            .map_err(|e| CliError::Usage(format!("--scheme: {e}")))?,
        None => cfg.quant.get(g)?,
    };
    validate_scheme(&scheme, hz)?;

    let per_block = cfg.workload.tokens_per_block as usize;
    let txn = cfg.workload.txn_bytes as usize;
    let mut quantized = Vec::with_capacity(tokens.len());
    for t in &tokens {
        quantized.push(quantize_token(t, &scheme)?);
    }
    let mut out = Vec::new();
    let mut blocks = 0;
    for chunk in quantized.chunks(per_block) {
        out.extend_from_slice(encode_block(chunk, &scheme, hz, txn)?.as_bytes());
        blocks += 1;
    }
    let (mut orig, mut back) = (Vec::new(), Vec::new());
    for (t, q) in tokens.iter().zip(&quantized) {
        orig.extend_from_slice(t);
        back.extend(dequantize_token(q, &scheme)?);
    }
    let err = if orig.is_empty() { 0.0 } else { rmse(&orig, &back)? };
    let max_abs = orig.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let n = tokens.len();
    let sidecar = QuantizeSidecar {
        source,
        tokens: n,
        hz,
        scheme: scheme.to_string(),
        blocks,
        bytes: out.len(),
        rmse: err,
        max_abs_error: max_abs,
        group_counts: GroupCounts {
            a: if g == ActivationGroup::A { n } else { 0 },
            b: if g == ActivationGroup::B { n } else { 0 },
            c: if g == ActivationGroup::C { n } else { 0 },
        },
    };
    run.emit(&format!("{name}.blocks"), &out)?;
    run.emit_json(&format!("{name}.json"), &sidecar)?;
    println!("{n} tokens, {} bytes, rmse {err:.6e}", out.len());
    Ok(())
}

fn validate_scheme(s: &QuantScheme, hz: usize) -> Result<(), CliError> {
    s.validate(hz)
        .map_err(|e| CliError::Usage(format!("scheme {s} at Hz={hz}: {e}")))
}

/// Returns the verification failure, if any, so the manifest still gets written.
fn verify(run: &mut Run, dir: &Path, bless: bool) -> Result<Option<CliError>, CliError> {
    if bless {
        let m = fixtures::generate(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        println!("wrote {} fixtures to {}", m.fixtures.len(), dir.display());
        return Ok(None);
    }
    let outcomes = fixtures::verify(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    run.emit_json("verify.json", &outcomes)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    Ok((!failed.is_empty()).then(|| {
        CliError::Verify(format!(
            "{} of {} fixtures failed: {}",
            failed.len(),
            outcomes.len(),
            failed.join(", ")
        ))
    }))
}
