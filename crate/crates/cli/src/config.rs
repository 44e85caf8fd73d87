//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use ellpar_core::fom::FullOrderModel;
use ellpar_core::greedy::GreedyConfig;
use ellpar_core::optim::{BfgsOptions, CostConfig, TrConfig};
use ellpar_core::{InputSignal, Parameter, ParameterBox, ProblemDefinition, ScalarField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for the random test set and the measurement noise; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Reduced-model artifact written by `greedy`: seeds the trust-region
    /// basis in `optimize` and adds a reduced solve to `solve`.
    #[serde(default)]
    pub basis: Option<PathBuf>,
    pub problem: ProblemBlock,
    pub discretization: DiscretizationBlock,
    #[serde(default)]
    pub greedy: Option<GreedyBlock>,
    #[serde(default)]
    pub optim: Option<OptimBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default = "one")]
    pub length: f64,
    pub final_time: f64,
    #[serde(default = "unit_field")]
    pub kappa1: FieldSpec,
    #[serde(default = "unit_field")]
    pub kappa2: FieldSpec,
    #[serde(default = "initial_field")]
    pub y_init: FieldSpec,
    pub input: InputSpec,
    /// Lower and upper corner of the admissible box.
    #[serde(default = "default_bounds")]
    pub bounds: [[f64; 4]; 2],
}

/// Coefficient field: a constant or `a + b x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Affine { at_zero: f64, slope: f64 },
}

impl FieldSpec {
    fn to_field(&self) -> ScalarField {
        match *self {
            FieldSpec::Constant(c) => ScalarField::Constant(c),
            FieldSpec::Affine { at_zero, slope } => ScalarField::Affine { at_zero, slope },
        }
    }
}

/// Input signal: a named member of the standard family or an explicit description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Named { named: String },
    Explicit(InputSignal),
}

impl PartialEq for InputSpec {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_string(self).ok() == serde_json::to_string(other).ok()
    }
}

impl InputSpec {
    pub fn to_signal(&self) -> Result<InputSignal> {
        match self {
            InputSpec::Named { named } => match named.as_str() {
                "u1" => Ok(InputSignal::u1()),
                "u2" => Ok(InputSignal::u2()),
                "u3" | "sinusoid" => Ok(InputSignal::u3()),
                "step_pm3" => Ok(InputSignal::step_pm3()),
                "zero" => Ok(InputSignal::zero()),
                other => Err(CliError::Config(format!("unknown input signal '{other}' (u1, u2, u3, sinusoid, step_pm3, zero)"))),
            },
            InputSpec::Explicit(InputSignal::Tabulated { times, values }) => {
                if times.len() != values.len() || times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CliError::Config("tabulated input needs matching, nonempty, increasing times".into()));
                }
                Ok(InputSignal::Tabulated { times: times.clone(), values: values.clone() })
            }
            InputSpec::Explicit(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationBlock {
    pub n_cells: usize,
    #[serde(default = "one_usize")]
    pub order: usize,
    /// Number of time nodes `K`, including `t = 0`.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyBlock {
    pub tol: f64,
    /// Cap on `l_y + l_q`.
    #[serde(default = "default_cap")]
    pub max_basis: usize,
    /// Training grid points per parameter component.
    #[serde(default = "default_grid")]
    pub grid_per_dim: usize,
    /// First greedy parameter; box center if omitted.
    #[serde(default)]
    pub initial_mu: Option<[f64; 4]>,
    /// Size of the random test set.
    #[serde(default = "default_test_count")]
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimBlock {
    pub alpha_j: f64,
    pub lambda: f64,
    /// Tikhonov reference.
    pub mu_ref: [f64; 4],
    pub mu_start: [f64; 4],
    /// Parameter generating the synthetic data.
    pub mu_true: [f64; 4],
    pub noise_variance: f64,
    #[serde(default = "default_eps_tr")]
    pub eps_tr: f64,
    #[serde(default = "default_tr_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_radius")]
    pub initial_radius: f64,
    #[serde(default = "yes")]
    pub run_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub svg: bool,
    /// Write the reduced model as an artifact container.
    #[serde(default = "yes")]
    pub artifacts: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_out(), svg: true, artifacts: true }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn unit_field() -> FieldSpec {
    FieldSpec::Constant(1.0)
}
fn initial_field() -> FieldSpec {
    FieldSpec::Constant(5.0)
}
fn default_bounds() -> [[f64; 4]; 2] {
    [[1.0; 4], [5.0; 4]]
}
fn default_cap() -> usize {
    50
}
fn default_grid() -> usize {
    5
}
fn default_test_count() -> usize {
    100
}
fn default_eps_tr() -> f64 {
    1e-5
}
fn default_tr_iterations() -> usize {
    30
}
fn default_radius() -> f64 {
    0.1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // relative artifact paths are resolved against the config file
        if let (Some(b), Some(dir)) = (cfg.basis.as_mut(), path.parent()) {
            if b.is_relative() {
                *b = dir.join(&*b);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.problem()?.validate()?;
        let d = &self.discretization;
        if d.n_cells == 0 || !(1..=2).contains(&d.order) || d.steps < 2 {
            return bad(format!("invalid discretization {d:?}"));
        }
        if let Some(g) = &self.greedy {
            if !(g.tol > 0.0) || g.max_basis == 0 || g.grid_per_dim == 0 {
                return bad(format!("invalid greedy block {g:?}"));
            }
            if let Some(mu) = g.initial_mu {
                self.check_in_box("greedy.initial_mu", mu)?;
            }
        }
        if let Some(o) = &self.optim {
            self.cost()?.validate()?;
            if !(o.noise_variance >= 0.0) || !(o.eps_tr > 0.0) || !(o.initial_radius > 0.0) {
                return bad(format!("invalid optim block {o:?}"));
            }
            self.check_in_box("optim.mu_true", o.mu_true)?;
            self.check_in_box("optim.mu_start", o.mu_start)?;
        }
        Ok(())
    }

    fn check_in_box(&self, name: &str, mu: [f64; 4]) -> Result<()> {
        if !self.bounds()?.contains(&Parameter(mu)) {
            return Err(CliError::Config(format!("{name} = {mu:?} lies outside the admissible box")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<ParameterBox> {
        let [lo, hi] = self.problem.bounds;
        Ok(ParameterBox::new(Parameter(lo), Parameter(hi))?)
    }

    pub fn problem(&self) -> Result<ProblemDefinition> {
        let p = &self.problem;
        Ok(ProblemDefinition {
            length: p.length,
            kappa1: p.kappa1.to_field(),
            kappa2: p.kappa2.to_field(),
            y_init: p.y_init.to_field(),
            input: p.input.to_signal()?,
            final_time: p.final_time,
            bounds: self.bounds()?,
        })
    }

    pub fn model(&self) -> Result<FullOrderModel> {
        let d = &self.discretization;
        Ok(FullOrderModel::new(self.problem()?, d.n_cells, d.order, d.steps)?)
    }

    /// SHA-256 over the blocks that define the full-order model.
    pub fn model_hash(&self) -> String {
        let text = serde_json::to_string(&(&self.problem, &self.discretization)).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn greedy_block(&self) -> Result<&GreedyBlock> {
        self.greedy.as_ref().ok_or_else(|| CliError::Config("missing [greedy] block".into()))
    }

    pub fn optim_block(&self) -> Result<&OptimBlock> {
        self.optim.as_ref().ok_or_else(|| CliError::Config("missing [optim] block".into()))
    }

    pub fn greedy_config(&self) -> Result<GreedyConfig> {
        let g = self.greedy_block()?;
        let bounds = self.bounds()?;
        let start = g.initial_mu.map(Parameter).unwrap_or_else(|| bounds.center());
        Ok(GreedyConfig::new(g.tol, g.max_basis, bounds.grid(g.grid_per_dim), start))
    }

    pub fn cost(&self) -> Result<CostConfig> {
        let o = self.optim_block()?;
        Ok(CostConfig { alpha_j: o.alpha_j, lambda: o.lambda, mu_ref: Parameter(o.mu_ref) })
    }

    pub fn tr_config(&self) -> Result<TrConfig> {
        let o = self.optim_block()?;
        Ok(TrConfig { eps_tr: o.eps_tr, max_iterations: o.max_iterations, initial_radius: o.initial_radius, ..TrConfig::default() })
    }

    /// Reference optimizer uses the same stopping tolerance as the trust-region loop.
    pub fn bfgs_options(&self) -> Result<BfgsOptions> {
        let o = self.optim_block()?;
        Ok(BfgsOptions { tol: o.eps_tr, ..BfgsOptions::default() })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
