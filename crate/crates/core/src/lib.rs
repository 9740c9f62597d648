//! Token-wise adaptive activation quantization (AAQ) for pair-representation
//! workloads, a double-precision reference of the pair operators, a
//! shape-level workload model, a cycle-level accelerator simulator and an
//! analytic cost model.

pub mod config;
pub mod cost;
pub mod error;
pub mod fixed;
pub mod fixtures;
pub mod metrics;
pub mod oracle;
pub mod quant;
pub mod sim;
pub mod synth;
pub mod tensor;
pub mod workload;

pub use config::RunConfig;
pub use error::{Error, Result};

/// The user guide from `book/`, compiled here so its examples run as doc-tests.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    pub mod quantization {}
    #[doc = include_str!("../../../book/src/layout.md")]
    pub mod layout {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    pub mod oracle {}
    #[doc = include_str!("../../../book/src/workload.md")]
    pub mod workload {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    pub mod simulator {}
    #[doc = include_str!("../../../book/src/cost.md")]
    pub mod cost {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/validation.md")]
    pub mod validation {}
}
