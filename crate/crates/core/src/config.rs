//! Run configuration: a single JSON document, unknown fields rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::Tolerances;
use crate::einstein::EinsteinConfig;
use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, InitialDatum};
use crate::oracle::ORACLE_MAX_N;
use crate::kernel::{CoefficientFamily, CoefficientSpec, KernelFamily, KernelSpec};
use crate::torus::{AssemblyOptions, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Cell,
    Evolve,
    Einstein,
    Oracle,
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Cell => "cell",
            Study::Evolve => "evolve",
            Study::Einstein => "einstein",
            Study::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
}

fn default_epsilons() -> Vec<f64> {
    vec![0.125, 0.0625, 0.03125]
}

fn default_horizon() -> f64 {
    0.25
}

fn default_n_cell() -> usize {
    32
}

fn default_dt_safety() -> f64 {
    0.5
}

/// Evolution settings shared by every epsilon of the ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_n_cell")]
    pub n_cell: usize,
    /// Defaults to cos(2 pi x_1), filled in on resolution.
    #[serde(default)]
    pub initial_datum: Option<InitialDatum>,
    #[serde(default = "default_dt_safety")]
    pub dt_safety: f64,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            horizon: default_horizon(),
            n_cell: default_n_cell(),
            initial_datum: None,
            dt_safety: default_dt_safety(),
        }
    }
}

impl EvolutionSection {
    /// One validated run configuration per epsilon.
    pub fn runs(&self, dim: usize) -> Result<Vec<EvolutionConfig>> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("evolution needs at least one epsilon".into()));
        }
        let datum = self.initial_datum.clone().unwrap_or_else(|| {
            let mut k0 = vec![0; dim];
            k0[0] = 1;
            InitialDatum::Harmonic { k0 }
        });
        self.epsilons
            .iter()
            .map(|&epsilon| {
                let cfg = EvolutionConfig {
                    epsilon,
                    horizon: self.horizon,
                    n_cell: self.n_cell,
                    initial_datum: datum.clone(),
                    dt_safety: self.dt_safety,
                };
                cfg.inverse_epsilon()?;
                Ok(cfg)
            })
            .collect()
    }
}

fn default_mu() -> CoefficientFamily {
    CoefficientFamily::Constant { value: 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must agree with the study requested on the command line when present.
    #[serde(default)]
    pub study: Option<Study>,
    pub kernel: KernelFamily,
    #[serde(default = "default_mu")]
    pub mu: CoefficientFamily,
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub assembly: AssemblyOptions,
    #[serde(default)]
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub einstein: EinsteinConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// A configuration with every descriptor turned into a validated object.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub study: Study,
    pub config: RunConfig,
    pub kernel: KernelSpec,
    pub mu: CoefficientSpec,
    pub grid: TorusGrid,
    pub evolution: Vec<EvolutionConfig>,
    pub output_dir: PathBuf,
}

pub const DEFAULT_OUTPUT_DIR: &str = "nlhomog_out";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Validates everything a study needs before any artifact is written.
    pub fn resolve(mut self, study: Study, out: Option<PathBuf>) -> Result<ResolvedRun> {
        if let Some(declared) = self.study {
            if declared != study {
                return Err(Error::Config(format!(
                    "config declares study '{}' but '{}' was requested",
                    declared.name(),
                    study.name()
                )));
            }
        }
        self.study = Some(study);
        let grid = TorusGrid::new(self.grid.dim, self.grid.n)?;
        let kernel = KernelSpec::new(self.kernel.clone(), grid.dim)?;
        let mu = CoefficientSpec::new(self.mu.clone(), grid.dim)?;
        self.tolerances.validate()?;
        if self.evolution.initial_datum.is_none() {
            let mut k0 = vec![0; grid.dim];
            k0[0] = 1;
            self.evolution.initial_datum = Some(InitialDatum::Harmonic { k0 });
        }
        let evolution = match study {
            Study::Evolve => self.evolution.runs(grid.dim)?,
            _ => Vec::new(),
        };
        if study == Study::Einstein {
            self.einstein.validate()?;
        }
        if study == Study::Oracle && (grid.dim != 1 || grid.n > ORACLE_MAX_N) {
            return Err(Error::Config(format!(
                "oracle study needs dim = 1 and n <= {ORACLE_MAX_N}"
            )));
        }
        let output_dir = out
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        self.output_dir = Some(output_dir.clone());
        Ok(ResolvedRun {
            study,
            config: self,
            kernel,
            mu,
            grid,
            evolution,
            output_dir,
        })
    }
}
