//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use epigraph_core::graph::{diffusion_generator, laplacian, occupancy, transition_matrix, l1_distance};
use epigraph_core::rng::stream;
use epigraph_core::verify::{
    check_cov_bound, check_martingale, check_variance_bound, concentration_sweep, BoundReport, ConcentrationReport,
    MartingaleReport,
};
use epigraph_core::sim::NodeState;
use epigraph_core::{calibrate, GraphSpec, TransitionMatrix};
use serde::Serialize;

use crate::config::{resolve_seed, FitConfig, ScenarioConfig, SweepConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_case_csv, read_graph, read_json, write_json, write_matrix_csv, write_replicas_csv, write_series_csv, GraphFile};
use crate::plot::infectious_svg;
use crate::scenario::run_scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
    Svg,
}

/// Flags shared by every command.
#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out_dir: PathBuf,
    pub format: Format,
    pub data: Option<PathBuf>,
}

impl Options {
    fn base(&self) -> &Path {
        self.config.parent().unwrap_or(Path::new("."))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| CliError::write(&self.out_dir, e))
    }
}

/// Walk length for the occupancy check.
pub const OCCUPANCY_STEPS: u64 = 1_000_000;

#[derive(Debug, Serialize)]
struct Occupancy {
    steps: u64,
    frequencies: Vec<f64>,
    pi: Vec<f64>,
    l1: f64,
}

#[derive(Debug, Serialize)]
struct ChainDiagnostics {
    group: usize,
    nodes: usize,
    row_sum_residual: f64,
    reversibility_residual: f64,
    stationarity_residual: f64,
    laplacian_row_sum_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    occupancy: Option<Occupancy>,
}

fn diagnose(opts: &Options, spec: &GraphSpec, group: usize, suffix: &str) -> CliResult<ChainDiagnostics> {
    let q = transition_matrix(spec)?;
    let delta = laplacian(spec)?;
    let generator = diffusion_generator(spec)?;
    write_matrix_csv(&opts.out(&format!("Q{suffix}.csv")), q.matrix())?;
    write_matrix_csv(&opts.out(&format!("laplacian{suffix}.csv")), &delta.delta)?;
    write_matrix_csv(&opts.out(&format!("generator{suffix}.csv")), &generator.delta)?;
    let occupancy = opts.seed.map(|seed| occupancy_check(&q, seed, group as u64));
    Ok(ChainDiagnostics {
        group,
        nodes: q.node_count(),
        row_sum_residual: q.row_sum_residual(),
        reversibility_residual: q.reversibility_residual(),
        stationarity_residual: q.stationarity_residual(),
        laplacian_row_sum_residual: delta.row_sum_residual(),
        occupancy,
    })
}

fn occupancy_check(q: &TransitionMatrix, seed: u64, group: u64) -> Occupancy {
    let frequencies = occupancy(q, 0, OCCUPANCY_STEPS, &mut stream(seed, group));
    let l1 = l1_distance(&frequencies, q.pi());
    Occupancy {
        steps: OCCUPANCY_STEPS,
        frequencies,
        pi: q.pi().to_vec(),
        l1,
    }
}

/// Builds the chain(s) of a graph file: matrices as CSV plus `diagnostics.json`.
/// The occupancy walk runs only when a seed is given.
pub fn mcmc(opts: &Options) -> CliResult<()> {
    let graph = read_graph(&opts.config)?;
    opts.prepare()?;
    let chains = match &graph {
        GraphFile::Single(g) => vec![diagnose(opts, g, 0, "")?],
        GraphFile::Groups(gg) => gg
            .groups
            .iter()
            .enumerate()
            .map(|(k, g)| diagnose(opts, &g.local_graph(), k, &format!("_group{k}")))
            .collect::<CliResult<_>>()?,
    };
    write_json(&opts.out("diagnostics.json"), &serde_json::json!({ "chains": chains, "seed": opts.seed }))
}

#[derive(Debug, Serialize)]
struct RunSummary {
    mode: crate::config::Mode,
    seed: Option<u64>,
    replicas: usize,
    records: usize,
    nodes: usize,
    groups: usize,
    initial_population: f64,
    final_population: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    clamp_events: Vec<u64>,
}

pub fn run(opts: &Options) -> CliResult<()> {
    let cfg: ScenarioConfig = read_json(&opts.config)?;
    let seed = if cfg.mode.is_stochastic() { Some(resolve_seed(opts.seed, cfg.seed)?) } else { None };
    let replicas = opts.replicas.unwrap_or(1);
    let out = run_scenario(&cfg, opts.base(), seed, replicas)?;
    opts.prepare()?;
    let ts = &out.series;
    match opts.format {
        Format::Json => write_json(&opts.out("timeseries.json"), ts)?,
        Format::Csv | Format::Svg => write_series_csv(&opts.out("timeseries.csv"), ts)?,
    }
    if opts.format == Format::Svg {
        let path = opts.out("plot.svg");
        fs::write(&path, infectious_svg(ts)).map_err(|e| CliError::write(&path, e))?;
    }
    if out.replicas.len() > 1 {
        write_replicas_csv(&opts.out("replicas.csv"), &out.replicas)?;
    }
    if cfg.mode == crate::config::Mode::Agents {
        write_events(&opts.out("events.csv"), &out.events)?;
    }
    let last = ts.len().saturating_sub(1);
    write_json(
        &opts.out("summary.json"),
        &RunSummary {
            mode: cfg.mode,
            seed: out.seed,
            replicas: out.replicas.len().max(1),
            records: ts.len(),
            nodes: ts.n_nodes,
            groups: ts.n_groups,
            initial_population: ts.population(0),
            final_population: ts.population(last),
            clamp_events: out.clamp_events,
        },
    )
}

fn write_events(path: &Path, events: &[(usize, epigraph_core::sim::agents::AgentEvent)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
    w.write_record(["replica", "step", "agent", "node", "kind"]).map_err(|e| CliError::write(path, e))?;
    for (r, ev) in events {
        let kind = format!("{:?}", ev.kind).to_lowercase();
        w.write_record([r.to_string(), ev.step.to_string(), ev.agent.to_string(), ev.node.to_string(), kind])
            .map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

#[derive(Debug, Serialize)]
#[serde(tag = "check", rename_all = "snake_case")]
enum VerifyReport {
    Variance { seed: u64, all_pass: bool, report: BoundReport },
    Covariance { seed: u64, all_pass: bool, report: BoundReport },
    Martingale { seed: u64, all_pass: bool, report: MartingaleReport },
    Concentration { seed: u64, report: ConcentrationReport },
}

fn flatten_bound(path: &Path, r: &BoundReport) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
    w.write_record(["n", "h", "t", "statistic", "std_error", "bound", "pass", "conservation_residual"])
        .map_err(|e| CliError::write(path, e))?;
    for p in &r.points {
        w.write_record([
            p.n.to_string(),
            p.h.to_string(),
            p.t.to_string(),
            p.statistic.to_string(),
            p.std_error.to_string(),
            p.bound.to_string(),
            p.pass.to_string(),
            p.conservation_residual.to_string(),
        ])
        .map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

fn flatten_martingale(path: &Path, r: &MartingaleReport) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
    w.write_record(["k", "residual_i", "residual_s", "std_error_i", "std_error_s", "condition", "pass"])
        .map_err(|e| CliError::write(path, e))?;
    for p in &r.points {
        w.write_record([
            p.k.to_string(),
            p.residual[0].to_string(),
            p.residual[1].to_string(),
            p.std_error[0].to_string(),
            p.std_error[1].to_string(),
            p.condition.to_string(),
            p.pass.to_string(),
        ])
        .map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

fn flatten_concentration(path: &Path, r: &ConcentrationReport) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
    w.write_record(["n", "variance"]).map_err(|e| CliError::write(path, e))?;
    for (n, v) in r.n.iter().zip(&r.variance) {
        w.write_record([n.to_string(), v.to_string()]).map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

/// Runs a statistical sweep and writes `report.json` plus a flat `report.csv`.
pub fn verify(opts: &Options) -> CliResult<()> {
    let sweep: SweepConfig = read_json(&opts.config)?;
    let seed = resolve_seed(opts.seed, sweep.seed())?;
    let csv_path = opts.out("report.csv");
    let report = match sweep {
        SweepConfig::Variance { n, h, t, setup, replicas, .. } => {
            let report = check_variance_bound(&n, &h, &t, &setup, replicas, seed)?;
            VerifyReport::Variance { seed, all_pass: report.all_pass(), report }
        }
        SweepConfig::Covariance { n, h, t, setup, replicas, .. } => {
            let report = check_cov_bound(&n, h, &t, &setup, replicas, seed)?;
            VerifyReport::Covariance { seed, all_pass: report.all_pass(), report }
        }
        SweepConfig::Martingale { s0, i0, lambda_n, gamma, h, k_max, restarts, .. } => {
            let n = s0 + i0;
            if n == 0 {
                return Err(CliError::validation("martingale check needs a positive population"));
            }
            let report = check_martingale(n, NodeState::new(s0, i0, 0), lambda_n / n as f64, gamma, h, k_max, restarts, seed)?;
            VerifyReport::Martingale { seed, all_pass: report.all_pass(), report }
        }
        SweepConfig::Concentration { n, h, t, setup, replicas, .. } => {
            let report = concentration_sweep(&n, &setup, h, t, replicas, seed)?;
            VerifyReport::Concentration { seed, report }
        }
    };
    opts.prepare()?;
    match &report {
        VerifyReport::Variance { report, .. } | VerifyReport::Covariance { report, .. } => flatten_bound(&csv_path, report)?,
        VerifyReport::Martingale { report, .. } => flatten_martingale(&csv_path, report)?,
        VerifyReport::Concentration { report, .. } => flatten_concentration(&csv_path, report)?,
    }
    write_json(&opts.out("report.json"), &report)
}

#[derive(Debug, Serialize)]
struct FitOutput {
    seed: u64,
    restarts: usize,
    #[serde(flatten)]
    result: calibrate::FitResult,
}

/// Fits a case series; data comes from `--data` or the config's `data` path.
pub fn fit(opts: &Options) -> CliResult<()> {
    let cfg: FitConfig = read_json(&opts.config)?;
    if cfg.restarts == 0 {
        return Err(CliError::validation("restarts must be at least 1"));
    }
    let data_path = match (&opts.data, &cfg.data) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => opts.base().join(p),
        (None, None) => return Err(CliError::validation("no case data: pass --data or set \"data\" in the config")),
    };
    let seed = resolve_seed(opts.seed, cfg.seed)?;
    let data = read_case_csv(&data_path)?;
    cfg.spec.validate(data.len())?;
    let result = calibrate::fit(&data, &cfg.spec, seed, cfg.restarts)?;
    opts.prepare()?;
    write_json(&opts.out("fit.json"), &FitOutput { seed, restarts: cfg.restarts, result })
}
