//! Golden fixtures: small frozen cases covering the oracle, the block layout,
//! lane arithmetic and simulator cycle counts.
//!
//! A fixture directory holds `manifest.json` plus the binary files it names.
//! [`generate`] writes a fresh set from the current code; [`verify`] replays
//! a directory and reports every mismatch by fixture name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{variant_trace, Variant};
use crate::error::{Error, Result};
use crate::oracle::{
    tokenwise_mha_ref, triangular_attention_ref, triangular_multiplication_ref, AttentionParams, AttentionWeights,
    TriMulDirection, TriMulWeights, TriangleSide,
};
use crate::quant::{decode_block, encode_block, quantize_token, QuantScheme, SchemeTable, TokenBlock};
use crate::sim::{job_lanes, mem_cycles, simulate_trace, units_required, GroupAMode, SimConfig};
use crate::synth;
use crate::tensor::ActivationTensor;
use crate::workload::{Operand, WorkloadConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub version: u32,
    pub fixtures: Vec<Fixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    #[serde(flatten)]
    pub spec: FixtureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureSpec {
    /// Multiplicative update with seeded weights; `expected` is the oracle output.
    Trimul {
        input: String,
        expected: String,
        seed: u64,
        hidden: usize,
        outgoing: bool,
        tolerance: f64,
    },
    /// Streaming attention replayed against the materialized oracle output.
    Mha {
        input: String,
        expected: String,
        seed: u64,
        num_heads: usize,
        head_dim: usize,
        starting: bool,
        tolerance: f64,
    },
    /// Tokens of `input` quantized and packed must reproduce `expected` byte for byte.
    Layout {
        input: String,
        expected: String,
        inlier_bits: u32,
        outliers: usize,
        txn_bytes: usize,
    },
    Lanes {
        /// `A`, `B`, `C` under the default table, or `f16`.
        operand: String,
        weight_bits: u32,
        len: u64,
        serialized: bool,
        units: u64,
        lanes: Vec<u64>,
    },
    Sim {
        ns: u64,
        variant: Variant,
        total_cycles: u64,
        total_bytes: u64,
    },
    Mem {
        bytes: u64,
        cycles: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn operand(name: &str) -> Result<Operand> {
    let t = SchemeTable::default();
    Ok(match name {
        "A" => Operand::Quantized(t.a),
        "B" => Operand::Quantized(t.b),
        "C" => Operand::Quantized(t.c),
        "f16" => Operand::F16,
        _ => return Err(Error::Config(format!("unknown operand '{name}'"))),
    })
}

fn trimul_weights(seed: u64, hz: usize, hidden: usize) -> TriMulWeights {
    TriMulWeights::random(&mut synth::rng(seed), hz, hidden)
}

fn attention(seed: u64, num_heads: usize, head_dim: usize, hz: usize) -> Result<(AttentionParams, AttentionWeights)> {
    let p = AttentionParams::new(num_heads, head_dim, hz)?;
    let w = AttentionWeights::random(&mut synth::rng(seed), &p);
    Ok((p, w))
}

fn side(starting: bool) -> TriangleSide {
    if starting {
        TriangleSide::Starting
    } else {
        TriangleSide::Ending
    }
}

fn direction(outgoing: bool) -> TriMulDirection {
    if outgoing {
        TriMulDirection::Outgoing
    } else {
        TriMulDirection::Incoming
    }
}

fn encode_tensor(t: &ActivationTensor, scheme: &QuantScheme, txn: usize) -> Result<TokenBlock> {
    let tokens = t
        .token_iter()
        .map(|tok| quantize_token(tok, scheme))
        .collect::<Result<Vec<_>>>()?;
    encode_block(&tokens, scheme, t.hz(), txn)
}

fn sim_numbers(ns: u64, variant: Variant) -> Result<(u64, u64)> {
    let (_, trace) = variant_trace(ns, variant, &WorkloadConfig::default(), &SchemeTable::default())?;
    let report = simulate_trace(&trace, &SimConfig::default())?;
    Ok((report.total_cycles, trace.total_bytes()))
}

fn max_abs_diff(a: &ActivationTensor, b: &ActivationTensor) -> Result<f64> {
    if a.ns() != b.ns() || a.hz() != b.hz() {
        return Err(Error::contract(format!(
            "shape ({}, {}) vs ({}, {})",
            a.ns(),
            a.hz(),
            b.ns(),
            b.hz()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

fn write_tensor(dir: &Path, name: &str, t: &ActivationTensor) -> Result<()> {
    let mut bytes = Vec::new();
    t.write_dump(&mut bytes)?;
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn read_tensor(dir: &Path, name: &str) -> Result<ActivationTensor> {
    ActivationTensor::from_dump_bytes(&fs::read(dir.join(name))?)
}

/// Writes the full fixture set into `dir` and returns its manifest.
pub fn generate(dir: &Path) -> Result<FixtureManifest> {
    fs::create_dir_all(dir)?;
    let mut fixtures = Vec::new();

    for (name, seed, outgoing) in [
        ("oracle.trimul_outgoing", 11, true),
        ("oracle.trimul_incoming", 12, false),
    ] {
        let (ns, hz, hidden) = (6, 16, 8);
        let input = synth::normal_tensor(seed, ns, hz, 1.0);
        let out = triangular_multiplication_ref(&input, &trimul_weights(seed, hz, hidden), direction(outgoing))?;
        let (fi, fe) = (format!("{name}.in.aaqt"), format!("{name}.out.aaqt"));
        write_tensor(dir, &fi, &input)?;
        write_tensor(dir, &fe, &out)?;
        fixtures.push(Fixture {
            name: name.into(),
            spec: FixtureSpec::Trimul {
                input: fi,
                expected: fe,
                seed,
                hidden,
                outgoing,
                tolerance: 1e-12,
            },
        });
    }

    for (name, seed, starting) in [("oracle.mha_starting", 21, true), ("oracle.mha_ending", 22, false)] {
        let (ns, heads, dim) = (8, 2, 8);
        let input = synth::normal_tensor(seed, ns, heads * dim, 1.0);
        let (p, w) = attention(seed, heads, dim, heads * dim)?;
        let out = triangular_attention_ref(&input, &p, &w, side(starting))?;
        let (fi, fe) = (format!("{name}.in.aaqt"), format!("{name}.out.aaqt"));
        write_tensor(dir, &fi, &input)?;
        write_tensor(dir, &fe, &out)?;
        fixtures.push(Fixture {
            name: name.into(),
            spec: FixtureSpec::Mha {
                input: fi,
                expected: fe,
                seed,
                num_heads: heads,
                head_dim: dim,
                starting,
                tolerance: 1e-10,
            },
        });
    }

    let table = SchemeTable::default();
    for (group, scheme, seed) in [("A", table.a, 31), ("B", table.b, 32), ("C", table.c, 33)] {
        let name = format!("layout.scheme_{group}");
        let input = synth::normal_tensor(seed, 4, 128, 2.0);
        let block = encode_tensor(&input, &scheme, 64)?;
        let (fi, fe) = (format!("{name}.in.aaqt"), format!("{name}.bin"));
        write_tensor(dir, &fi, &input)?;
        fs::write(dir.join(&fe), block.as_bytes())?;
        fixtures.push(Fixture {
            name,
            spec: FixtureSpec::Layout {
                input: fi,
                expected: fe,
                inlier_bits: scheme.inlier_bits,
                outliers: scheme.outlier_count,
                txn_bytes: 64,
            },
        });
    }

    for (op, serialized) in [("A", false), ("A", true), ("B", false), ("C", false), ("f16", false)] {
        let o = operand(op)?;
        let mode = if serialized {
            GroupAMode::Serialized
        } else {
            GroupAMode::TwoJob
        };
        let name = format!("lanes.{op}{}", if serialized { ".serialized" } else { "" });
        fixtures.push(Fixture {
            name,
            spec: FixtureSpec::Lanes {
                operand: op.into(),
                weight_bits: 16,
                len: 128,
                serialized,
                units: units_required(&o, 16, 128),
                lanes: job_lanes(&o, 16, 128, mode)?,
            },
        });
    }

    for (ns, variant) in [(64, Variant::Aaq), (64, Variant::Vanilla), (32, Variant::Chunk4)] {
        let (total_cycles, total_bytes) = sim_numbers(ns, variant)?;
        fixtures.push(Fixture {
            name: format!("sim.ns{ns}_{variant}"),
            spec: FixtureSpec::Sim {
                ns,
                variant,
                total_cycles,
                total_bytes,
            },
        });
    }

    let cfg = SimConfig::default();
    for bytes in [0, 64, 65, 1 << 20] {
        fixtures.push(Fixture {
            name: format!("mem.{bytes}B"),
            spec: FixtureSpec::Mem {
                bytes,
                cycles: mem_cycles(bytes, &cfg),
            },
        });
    }

    let manifest = FixtureManifest {
        version: FIXTURE_VERSION,
        fixtures,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::contract(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

fn check(fx: &Fixture, dir: &Path) -> Result<String> {
    let fail = |msg: String| Err(Error::contract(msg));
    match &fx.spec {
        FixtureSpec::Trimul {
            input,
            expected,
            seed,
            hidden,
            outgoing,
            tolerance,
        } => {
            let x = read_tensor(dir, input)?;
            let want = read_tensor(dir, expected)?;
            let got = triangular_multiplication_ref(&x, &trimul_weights(*seed, x.hz(), *hidden), direction(*outgoing))?;
            let d = max_abs_diff(&got, &want)?;
            if d <= *tolerance {
                Ok(format!("max |diff| {d:.3e}"))
            } else {
                fail(format!("max |diff| {d:.3e} exceeds {tolerance:e}"))
            }
        }
        FixtureSpec::Mha {
            input,
            expected,
            seed,
            num_heads,
            head_dim,
            starting,
            tolerance,
        } => {
            let x = read_tensor(dir, input)?;
            let want = read_tensor(dir, expected)?;
            let (p, w) = attention(*seed, *num_heads, *head_dim, x.hz())?;
            let (got, _) = tokenwise_mha_ref(&x, &p, &w, side(*starting))?;
            let d = max_abs_diff(&got, &want)?;
            if d <= *tolerance {
                Ok(format!("max |diff| {d:.3e}"))
            } else {
                fail(format!("max |diff| {d:.3e} exceeds {tolerance:e}"))
            }
        }
        FixtureSpec::Layout {
            input,
            expected,
            inlier_bits,
            outliers,
            txn_bytes,
        } => {
            let scheme = QuantScheme::new(*inlier_bits, *outliers)?;
            let x = read_tensor(dir, input)?;
            let want = fs::read(dir.join(expected))?;
            let block = encode_tensor(&x, &scheme, *txn_bytes)?;
            if block.as_bytes() != want.as_slice() {
                let at = block.as_bytes().iter().zip(&want).position(|(a, b)| a != b);
                return fail(match at {
                    Some(i) => format!("encoded block differs at byte {i}"),
                    None => format!("encoded block is {} bytes, fixture {}", block.len(), want.len()),
                });
            }
            let stored = TokenBlock::from_bytes(&want)?;
            let again = encode_block(&decode_block(&stored)?, &scheme, x.hz(), *txn_bytes)?;
            if again.as_bytes() != want.as_slice() {
                return fail("decode/encode roundtrip is not bit-exact".into());
            }
            Ok(format!("{} bytes bit-exact", want.len()))
        }
        FixtureSpec::Lanes {
            operand: op,
            weight_bits,
            len,
            serialized,
            units,
            lanes,
        } => {
            let o = operand(op)?;
            let mode = if *serialized {
                GroupAMode::Serialized
            } else {
                GroupAMode::TwoJob
            };
            let (u, l) = (
                units_required(&o, *weight_bits, *len),
                job_lanes(&o, *weight_bits, *len, mode)?,
            );
            if u != *units || &l != lanes {
                return fail(format!("got {u} units / lanes {l:?}, fixture {units} / {lanes:?}"));
            }
            Ok(format!("{u} units, lanes {l:?}"))
        }
        FixtureSpec::Sim {
            ns,
            variant,
            total_cycles,
            total_bytes,
        } => {
            let (c, b) = sim_numbers(*ns, *variant)?;
            if c != *total_cycles || b != *total_bytes {
                return fail(format!(
                    "got {c} cycles / {b} bytes, fixture {total_cycles} / {total_bytes}"
                ));
            }
            Ok(format!("{c} cycles, {b} bytes"))
        }
        FixtureSpec::Mem { bytes, cycles } => {
            let c = mem_cycles(*bytes, &SimConfig::default());
            if c != *cycles {
                return fail(format!("got {c} cycles, fixture {cycles}"));
            }
            Ok(format!("{c} cycles"))
        }
    }
}

pub fn load_manifest(dir: &Path) -> Result<FixtureManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: FixtureManifest =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(0, format!("{MANIFEST_FILE}: {e}")))?;
    if m.version != FIXTURE_VERSION {
        return Err(Error::corrupt(
            0,
            format!("fixture version {} (expected {FIXTURE_VERSION})", m.version),
        ));
    }
    Ok(m)
}

/// Replays every fixture in `dir`. Only a missing or unreadable manifest is
/// an error; individual failures, including missing files, are outcomes.
pub fn verify(dir: &Path) -> Result<Vec<FixtureOutcome>> {
    let manifest = load_manifest(dir)?;
    Ok(manifest
        .fixtures
        .iter()
        .map(|fx| match check(fx, dir) {
            Ok(detail) => FixtureOutcome {
                name: fx.name.clone(),
                passed: true,
                detail,
            },
            Err(e) => FixtureOutcome {
                name: fx.name.clone(),
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect())
}
