//! Versioned JSON experiment configs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use invmcmc_core::samplers::{DivergencePolicy, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::targets::TargetSpec;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the output directory when neither the
/// command line nor the config sets one.
pub const OUTPUT_DIR_ENV: &str = "INVMCMC_OUTPUT_DIR";

/// Output directory used when nothing else names one.
pub const DEFAULT_OUTPUT_DIR: &str = "invmcmc-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub target: TargetSpec,
    pub sampler: SamplerConfig,
    pub n_iter: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub n_chains: usize,
    pub seed: u64,
    /// Shared starting point of every chain; the target's default otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub divergence: DivergencePolicy,
    #[serde(default)]
    pub output: OutputSpec,
    /// Parameter grid of `sweep`; every combination is run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_prefix() -> String {
    "chain".to_string()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            prefix: default_prefix(),
        }
    }
}

/// Sampler settings that a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    StepSize,
    DeltaA,
    DeltaB,
    NSteps,
    Rho,
    ProposalCount,
    MhgjScale,
    TargetAccept,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::StepSize => "step_size",
            SweepParameter::DeltaA => "delta_a",
            SweepParameter::DeltaB => "delta_b",
            SweepParameter::NSteps => "n_steps",
            SweepParameter::Rho => "rho",
            SweepParameter::ProposalCount => "proposal_count",
            SweepParameter::MhgjScale => "mhgj_scale",
            SweepParameter::TargetAccept => "target_accept",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SweepParameter::NSteps | SweepParameter::ProposalCount)
    }

    /// Writes `value` into `config`.
    pub fn apply(self, config: &mut SamplerConfig, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(CliError::config(format!("{} must be finite", self.name())));
        }
        if self.is_count() && (value < 1.0 || value.fract() != 0.0) {
            return Err(CliError::config(format!(
                "{} must be a positive integer, got {value}",
                self.name()
            )));
        }
        match self {
            SweepParameter::StepSize => config.step_size = Some(value),
            SweepParameter::DeltaA => config.delta_a = Some(value),
            SweepParameter::DeltaB => config.delta_b = Some(value),
            SweepParameter::NSteps => config.n_steps = value as usize,
            SweepParameter::Rho => config.rho = Some(value),
            SweepParameter::ProposalCount => config.proposal_count = Some(value as usize),
            SweepParameter::MhgjScale => config.mhgj_scale = Some(value),
            SweepParameter::TargetAccept => config.target_accept = Some(value),
        }
        Ok(())
    }
}

pub type SweepGrid = BTreeMap<SweepParameter, Vec<f64>>;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file; relative data paths are taken
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.target.resolve_paths(base);
        if let Some(dir) = &mut config.output.dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        if self.n_iter <= self.burn_in {
            return Err(CliError::config(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        if self.n_chains == 0 {
            return Err(CliError::config("n_chains must be at least 1"));
        }
        let prefix = &self.output.prefix;
        if prefix.is_empty() || prefix.contains(['/', '\\']) {
            return Err(CliError::config("output prefix must be a non-empty file name"));
        }
        if let Some(init) = &self.initial {
            if init.iter().any(|x| !x.is_finite()) {
                return Err(CliError::config("initial state must be finite"));
            }
        }
        if let Some(t) = self.sampler.target_accept {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::config("target_accept must lie in (0, 1)"));
            }
        }
        if let Some(grid) = &self.sweep {
            for (p, values) in grid {
                if values.is_empty() {
                    return Err(CliError::config(format!("sweep over {} has no values", p.name())));
                }
                let mut probe = self.sampler.clone();
                for &v in values {
                    p.apply(&mut probe, v)?;
                }
            }
        }
        Ok(())
    }

    /// The output directory: `cli` if given, then the config, then
    /// [`OUTPUT_DIR_ENV`], then [`DEFAULT_OUTPUT_DIR`].
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(dir) = cli {
            return dir.to_path_buf();
        }
        if let Some(dir) = &self.output.dir {
            return dir.clone();
        }
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "target": {"kind": "gaussian", "mean": [0.0, 0.0]},
        "sampler": {"kind": "rwm", "step_size": 1.0},
        "n_iter": 100,
        "seed": 3
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.burn_in, 0);
        assert_eq!(c.n_chains, 1);
        assert_eq!(c.output.prefix, "chain");
        assert_eq!(c.divergence, DivergencePolicy::Reject);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let top = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        let target = MINIMAL.replace("\"mean\"", "\"colour\": 1, \"mean\"");
        let sampler = MINIMAL.replace("\"step_size\"", "\"colour\": 1, \"step_size\"");
        for text in [top, target, sampler] {
            assert!(
                matches!(ExperimentConfig::from_json(&text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let cases = [
            MINIMAL.replace("\"version\": 1", "\"version\": 2"),
            MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"burn_in\": 100"),
            MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"n_chains\": 0"),
            MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"output\": {\"prefix\": \"a/b\"}"),
            MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sweep\": {\"step_size\": []}"),
            MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sweep\": {\"n_steps\": [2.5]}"),
            MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sweep\": {\"colour\": [1]}"),
        ];
        for text in cases {
            assert!(ExperimentConfig::from_json(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn output_dir_precedence() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.output_dir(Some(Path::new("x"))), PathBuf::from("x"));
        c.output.dir = Some(PathBuf::from("y"));
        assert_eq!(c.output_dir(None), PathBuf::from("y"));
    }

    #[test]
    fn sweep_parameters_apply() {
        let mut s = SamplerConfig::new(invmcmc_core::samplers::SamplerKind::Mpcn);
        SweepParameter::ProposalCount.apply(&mut s, 4.0).unwrap();
        SweepParameter::Rho.apply(&mut s, 0.9).unwrap();
        assert_eq!(s.proposal_count, Some(4));
        assert_eq!(s.rho, Some(0.9));
        assert!(SweepParameter::ProposalCount.apply(&mut s, 0.0).is_err());
    }
}
