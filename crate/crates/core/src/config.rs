//! Flat `key = value` configuration with `sim.`, `workload.` and `quant.`
//! sections.
//!
//! ```text
//! # comments and blank lines are ignored
//! sim.num_rmpus = 32
//! workload.streaming_mha = true
//! quant.schemes = A:8:4,B:4:4,C:4:0
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{ActivationGroup, QuantScheme, SchemeTable};
use crate::sim::{GroupAMode, SimConfig};
use crate::workload::WorkloadConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub workload: WorkloadConfig,
    pub quant: SchemeTable,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

fn parse_scheme(key: &str, value: &str) -> Result<QuantScheme> {
    value.parse().map_err(|e| Error::Config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (s, w) = (&mut self.sim, &mut self.workload);
        match key {
            "sim.num_rmpus" => s.num_rmpus = parse(key, value)?,
            "sim.vvpus_per_rmpu" => s.vvpus_per_rmpu = parse(key, value)?,
            "sim.clock_ghz" => s.clock_ghz = parse(key, value)?,
            "sim.mem_bandwidth_gbps" => s.mem_bandwidth_gbps = parse(key, value)?,
            "sim.mem_txn_bytes" => s.mem_txn_bytes = parse(key, value)?,
            "sim.mem_fixed_overhead_cycles" => s.mem_fixed_overhead_cycles = parse(key, value)?,
            "sim.token_scratchpad_bytes" => s.token_scratchpad_bytes = parse(key, value)?,
            "sim.weight_scratchpad_bytes" => s.weight_scratchpad_bytes = parse(key, value)?,
            "sim.output_scratchpad_bytes" => s.output_scratchpad_bytes = parse(key, value)?,
            "sim.simd_lanes_per_vvpu" => s.simd_lanes_per_vvpu = parse(key, value)?,
            "sim.crossbar_hop_cycles" => s.crossbar_hop_cycles = parse(key, value)?,
            "sim.group_a_mode" => {
                s.group_a_mode = match value {
                    "two_job" => GroupAMode::TwoJob,
                    "serialized" => GroupAMode::Serialized,
                    _ => return Err(Error::Config(format!("{key} is two_job or serialized, got '{value}'"))),
                }
            }
            "workload.hz" => w.hz = parse(key, value)?,
            "workload.num_blocks" => w.num_blocks = parse(key, value)?,
            "workload.num_heads" => w.num_heads = parse(key, value)?,
            "workload.head_dim" => w.head_dim = parse(key, value)?,
            "workload.trimul_hidden" => w.trimul_hidden = parse(key, value)?,
            "workload.transition_factor" => w.transition_factor = parse(key, value)?,
            "workload.seq_hidden" => w.seq_hidden = parse(key, value)?,
            "workload.seq_params_per_block" => w.seq_params_per_block = Some(parse(key, value)?),
            "workload.lm_params" => w.lm_params = parse(key, value)?,
            "workload.streaming_mha" => w.streaming_mha = parse_bool(key, value)?,
            "workload.chunk4" => w.chunk4 = parse_bool(key, value)?,
            "workload.tokens_per_block" => w.tokens_per_block = parse(key, value)?,
            "workload.txn_bytes" => w.txn_bytes = parse(key, value)?,
            "quant.schemes" => {
                let t: SchemeTable = value.parse()?;
                self.quant = t;
            }
            "quant.a" => self.quant.set(ActivationGroup::A, parse_scheme(key, value)?)?,
            "quant.b" => self.quant.set(ActivationGroup::B, parse_scheme(key, value)?)?,
            "quant.c" => self.quant.set(ActivationGroup::C, parse_scheme(key, value)?)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a config file on top of the defaults.
    pub fn parse_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("configuration error: ")
                ))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.workload.validate()?;
        self.quant.validate(self.workload.hz as usize)
    }

    /// Every setting in parse order; feeding the text back reproduces the config.
    pub fn to_text(&self) -> String {
        let (s, w) = (&self.sim, &self.workload);
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("sim.num_rmpus", s.num_rmpus.to_string());
        put("sim.vvpus_per_rmpu", s.vvpus_per_rmpu.to_string());
        put("sim.clock_ghz", s.clock_ghz.to_string());
        put("sim.mem_bandwidth_gbps", s.mem_bandwidth_gbps.to_string());
        put("sim.mem_txn_bytes", s.mem_txn_bytes.to_string());
        put("sim.mem_fixed_overhead_cycles", s.mem_fixed_overhead_cycles.to_string());
        put("sim.token_scratchpad_bytes", s.token_scratchpad_bytes.to_string());
        put("sim.weight_scratchpad_bytes", s.weight_scratchpad_bytes.to_string());
        put("sim.output_scratchpad_bytes", s.output_scratchpad_bytes.to_string());
        put("sim.simd_lanes_per_vvpu", s.simd_lanes_per_vvpu.to_string());
        put("sim.crossbar_hop_cycles", s.crossbar_hop_cycles.to_string());
        put(
            "sim.group_a_mode",
            match s.group_a_mode {
                GroupAMode::TwoJob => "two_job",
                GroupAMode::Serialized => "serialized",
            }
            .to_string(),
        );
        put("workload.hz", w.hz.to_string());
        put("workload.num_blocks", w.num_blocks.to_string());
        put("workload.num_heads", w.num_heads.to_string());
        put("workload.head_dim", w.head_dim.to_string());
        put("workload.trimul_hidden", w.trimul_hidden.to_string());
        put("workload.transition_factor", w.transition_factor.to_string());
        put("workload.seq_hidden", w.seq_hidden.to_string());
        put("workload.seq_params_per_block", w.seq_params().to_string());
        put("workload.lm_params", w.lm_params.to_string());
        put("workload.streaming_mha", w.streaming_mha.to_string());
        put("workload.chunk4", w.chunk4.to_string());
        put("workload.tokens_per_block", w.tokens_per_block.to_string());
        put("workload.txn_bytes", w.txn_bytes.to_string());
        put("quant.schemes", self.quant.to_string());
        out
    }
}
