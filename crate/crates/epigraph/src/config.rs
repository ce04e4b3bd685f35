//! Scenario, sweep and fit configuration files.

use std::path::{Path, PathBuf};

use epigraph_core::calibrate::FitSpec;
use epigraph_core::graph::LaplacianKind;
use epigraph_core::ode::Schedule;
use epigraph_core::sim::{AgentParams, ModelParams};
use epigraph_core::verify::NodeSetup;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sir,
    Sei,
    Delay,
    Groups,
    Agents,
    Ode,
    Forecast,
}

impl Mode {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Mode::Ode | Mode::Forecast)
    }
}

/// A scalar shared by all nodes or one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Scalar(f64),
    PerNode(Vec<f64>),
}

impl Rate {
    pub fn expand(&self, n: usize, what: &str) -> CliResult<Vec<f64>> {
        match self {
            Rate::Scalar(v) => Ok(vec![*v; n]),
            Rate::PerNode(v) if v.len() == n => Ok(v.clone()),
            Rate::PerNode(v) => Err(CliError::validation(format!("{what} has {} entries for {n} nodes", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    /// Incidence per unit time and per infectious individual.
    #[serde(default)]
    pub lambda: Option<Rate>,
    /// Incidence scaled by a reference population: `λ = lambda_n / reference_population`.
    #[serde(default)]
    pub lambda_n: Option<Rate>,
    /// Defaults to the total initial population.
    #[serde(default)]
    pub reference_population: Option<Rate>,
    pub gamma: Rate,
    /// When absent, chains use the graph's own multiplicity and ODEs use ε = 0.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "unit")]
    pub h: f64,
    #[serde(default)]
    pub delay_t0: f64,
}

fn unit() -> f64 {
    1.0
}

impl ParamsConfig {
    pub fn resolve(&self, n: usize, total_population: f64) -> CliResult<ModelParams> {
        let lambda = match (&self.lambda, &self.lambda_n) {
            (Some(l), None) => l.expand(n, "lambda")?,
            (None, Some(ln)) => {
                let refs = self
                    .reference_population
                    .clone()
                    .unwrap_or(Rate::Scalar(total_population))
                    .expand(n, "reference_population")?;
                let ln = ln.expand(n, "lambda_n")?;
                if refs.iter().any(|r| !(*r > 0.0)) {
                    return Err(CliError::validation("reference_population must be > 0"));
                }
                ln.iter().zip(&refs).map(|(a, b)| a / b).collect()
            }
            (Some(_), Some(_)) => return Err(CliError::validation("give either lambda or lambda_n, not both")),
            (None, None) => return Err(CliError::validation("one of lambda or lambda_n is required")),
        };
        let p = ModelParams {
            lambda,
            gamma: self.gamma.expand(n, "gamma")?,
            epsilon: self.epsilon.unwrap_or(0.0),
            h: self.h,
            delay_t0: self.delay_t0,
        };
        p.validate(n)?;
        Ok(p)
    }
}

/// Per-node counts of one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub s: Vec<f64>,
    #[serde(default)]
    pub e: Option<Vec<f64>>,
    pub i: Vec<f64>,
    #[serde(default)]
    pub r: Option<Vec<f64>>,
}

impl Counts {
    pub fn n_nodes(&self) -> usize {
        self.s.len()
    }

    pub fn population(&self) -> f64 {
        let opt = |v: &Option<Vec<f64>>| v.as_ref().map_or(0.0, |v| v.iter().sum::<f64>());
        self.s.iter().sum::<f64>() + self.i.iter().sum::<f64>() + opt(&self.e) + opt(&self.r)
    }

    pub fn check(&self, n: usize) -> CliResult<()> {
        let lens = [
            Some(self.s.len()),
            Some(self.i.len()),
            self.e.as_ref().map(Vec::len),
            self.r.as_ref().map(Vec::len),
        ];
        if lens.iter().flatten().any(|&l| l != n) {
            return Err(CliError::validation(format!("initial count vectors must all have {n} entries")));
        }
        let all = self.s.iter().chain(&self.i).chain(self.e.iter().flatten()).chain(self.r.iter().flatten());
        for v in all {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(CliError::validation(format!("initial count {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Initial {
    Groups(Vec<Counts>),
    Single(Counts),
}

impl Initial {
    pub fn groups(&self) -> Vec<Counts> {
        match self {
            Initial::Groups(g) => g.clone(),
            Initial::Single(c) => vec![c.clone()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeKind {
    Single,
    Graph,
    Approx,
    Delay,
    Groups,
    Sei,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    #[serde(default)]
    pub system: Option<OdeKind>,
    #[serde(default)]
    pub laplacian: LaplacianKind,
    #[serde(default)]
    pub lambda_schedule: Schedule,
    #[serde(default)]
    pub epsilon_schedule: Schedule,
    /// Keep every k-th integration step in the output.
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentsConfig {
    #[serde(flatten)]
    pub params: AgentParams,
    /// Infection age of initially infected agents; defaults to one past the
    /// latency so they are contagious from the first step.
    #[serde(default)]
    pub initial_infection_age: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub q: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    /// Graph JSON, relative to the config file.
    #[serde(default)]
    pub graph: Option<PathBuf>,
    /// Explicit one-step movement matrix, instead of a graph.
    #[serde(default)]
    pub transition: Option<TransitionConfig>,
    /// Rates for every mode except agents.
    #[serde(default)]
    pub params: Option<ParamsConfig>,
    pub initial: Initial,
    /// Number of steps for chains and forecasts.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Final time for ODE integration.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ode: OdeConfig,
    #[serde(default)]
    pub agents: Option<AgentsConfig>,
}

impl ScenarioConfig {
    pub fn graph_path(&self, base: &Path) -> Option<PathBuf> {
        self.graph.as_ref().map(|g| base.join(g))
    }
}

/// Which statistical check a sweep file runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    Variance {
        n: Vec<u64>,
        h: Vec<f64>,
        t: Vec<f64>,
        #[serde(flatten)]
        setup: NodeSetup,
        replicas: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Covariance {
        n: Vec<u64>,
        h: f64,
        t: Vec<f64>,
        #[serde(flatten)]
        setup: NodeSetup,
        replicas: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Martingale {
        s0: u64,
        i0: u64,
        lambda_n: f64,
        gamma: f64,
        h: f64,
        k_max: usize,
        restarts: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Concentration {
        n: Vec<u64>,
        h: f64,
        t: f64,
        #[serde(flatten)]
        setup: NodeSetup,
        replicas: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl SweepConfig {
    pub fn seed(&self) -> Option<u64> {
        match self {
            SweepConfig::Variance { seed, .. }
            | SweepConfig::Covariance { seed, .. }
            | SweepConfig::Martingale { seed, .. }
            | SweepConfig::Concentration { seed, .. } => *seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(flatten)]
    pub spec: FitSpec,
    pub restarts: usize,
    /// Case CSV, relative to the config file; `--data` overrides it.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// `--seed` wins over the config's seed; with neither, stochastic work is refused.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    flag.or(config)
        .ok_or_else(|| CliError::validation("a seed is required: pass --seed or set \"seed\" in the config"))
}
