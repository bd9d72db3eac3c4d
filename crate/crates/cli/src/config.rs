//! Run configuration: a strict JSON schema with a problem block, a solver
//! block, an output directory, and the simulation replication count.
//! Unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gbdp_core::{AhdProblem, MnlParams, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Ahd(MnlParams),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_replications() -> usize {
    1000
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config
            .solver
            .validate()
            .context("invalid solver block")?;
        Ok(config)
    }

    /// Builds the problem instance described by the problem block.
    pub fn build_problem(&self) -> Result<AhdProblem> {
        match &self.problem {
            ProblemConfig::Ahd(params) => {
                AhdProblem::new(params.clone()).context("invalid problem block")
            }
        }
    }
}
