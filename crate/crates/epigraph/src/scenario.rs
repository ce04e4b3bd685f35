//! Turning a scenario config into trajectories.

use std::path::Path;

use epigraph_core::forecast::{iterate_forecast, ExpectationState};
use epigraph_core::graph::{calibrated_multiplicity, laplacian_of_kind, step_matrix, transition_matrix};
use epigraph_core::ode::{integrate, SeiApprox, SirDelay, SirGraph, SirGraphApprox, SirSingle};
use epigraph_core::rng::stream;
use epigraph_core::sim::agents::{simulate_agents, Agent, AgentEvent, AgentParams};
use epigraph_core::sim::{ChainMode, ChainModel, EpidemicState, ModelParams, NodeState};
use epigraph_core::{GraphSpec, Laplacian, Matrix, TimeSeries, TransitionMatrix};
use rayon::prelude::*;

use crate::config::{Counts, Mode, OdeKind, ScenarioConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_graph, GraphFile};

/// Everything a `run` produces before it is written out.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Replica mean, or the single trajectory.
    pub series: TimeSeries,
    /// Individual replicas of a stochastic run, in replica order.
    pub replicas: Vec<TimeSeries>,
    pub clamp_events: Vec<u64>,
    /// `(replica, event)` for agent runs.
    pub events: Vec<(usize, AgentEvent)>,
    pub seed: Option<u64>,
}

impl RunOutput {
    fn deterministic(series: TimeSeries) -> Self {
        RunOutput {
            series,
            replicas: Vec::new(),
            clamp_events: Vec::new(),
            events: Vec::new(),
            seed: None,
        }
    }
}

enum Topology {
    None,
    Single(GraphSpec),
    Groups(epigraph_core::GroupGraph),
    Explicit(TransitionMatrix),
}

fn topology(cfg: &ScenarioConfig, base: &Path) -> CliResult<Topology> {
    match (cfg.graph_path(base), &cfg.transition) {
        (Some(_), Some(_)) => Err(CliError::validation("give either graph or transition, not both")),
        (Some(p), None) => Ok(match read_graph(&p)? {
            GraphFile::Single(g) => Topology::Single(g),
            GraphFile::Groups(g) => Topology::Groups(g),
        }),
        (None, Some(t)) => {
            let q = Matrix::from_rows(&t.q)?;
            Ok(Topology::Explicit(TransitionMatrix::from_parts(q, t.pi.clone())?))
        }
        (None, None) => Ok(Topology::None),
    }
}

fn to_count(v: f64) -> CliResult<u64> {
    if v.fract() != 0.0 {
        return Err(CliError::validation(format!("stochastic modes need integer counts, got {v}")));
    }
    Ok(v as u64)
}

fn node_states(c: &Counts) -> CliResult<Vec<NodeState>> {
    (0..c.n_nodes())
        .map(|j| {
            Ok(NodeState {
                s: to_count(c.s[j])?,
                e: to_count(c.e.as_ref().map_or(0.0, |e| e[j]))?,
                i: to_count(c.i[j])?,
                r: to_count(c.r.as_ref().map_or(0.0, |r| r[j]))?,
            })
        })
        .collect()
}

/// Checks shapes and returns (nodes, groups, total population).
fn initial_shape(cfg: &ScenarioConfig) -> CliResult<(Vec<Counts>, usize, f64)> {
    let groups = cfg.initial.groups();
    let n = groups.first().map_or(0, Counts::n_nodes);
    if n == 0 {
        return Err(CliError::validation("initial counts must cover at least one node"));
    }
    for g in &groups {
        g.check(n)?;
    }
    let total = groups.iter().map(Counts::population).sum();
    Ok((groups, n, total))
}

fn require<T: Copy>(v: Option<T>, what: &str, mode: Mode) -> CliResult<T> {
    v.ok_or_else(|| CliError::validation(format!("mode {mode:?} requires \"{what}\"")))
}

/// Movement matrix for single-chain modes.
fn single_movement(topo: &Topology, n: usize, params: &ModelParams, calibrate: bool) -> CliResult<TransitionMatrix> {
    let q = match topo {
        Topology::None if n == 1 => TransitionMatrix::identity(1),
        Topology::None => return Err(CliError::validation("a graph or transition is required for more than one node")),
        Topology::Single(g) if calibrate => step_matrix(g, params.epsilon, params.h)?,
        Topology::Single(g) => transition_matrix(g)?,
        Topology::Explicit(q) => q.clone(),
        Topology::Groups(_) => return Err(CliError::validation("a group graph needs mode groups, agents or ode/groups")),
    };
    if q.node_count() != n {
        return Err(CliError::validation(format!("graph has {} nodes, initial counts {n}", q.node_count())));
    }
    Ok(q)
}

fn group_movements(topo: &Topology, n: usize, params: &ModelParams, calibrate: bool) -> CliResult<Vec<TransitionMatrix>> {
    match topo {
        Topology::Groups(g) => {
            if g.node_count != n {
                return Err(CliError::validation(format!("graph has {} nodes, initial counts {n}", g.node_count)));
            }
            g.validate()?;
            let qs = g
                .groups
                .iter()
                .map(|s| if calibrate { s.step_matrix(n, params.epsilon, params.h) } else { s.transition(n) })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(qs)
        }
        other => Ok(vec![single_movement(other, n, params, calibrate)?]),
    }
}

fn replicate<F>(replicas: usize, f: F) -> CliResult<Vec<(TimeSeries, u64, Vec<AgentEvent>)>>
where
    F: Fn(usize) -> CliResult<(TimeSeries, u64, Vec<AgentEvent>)> + Sync + Send,
{
    // collect() keeps replica order regardless of scheduling
    (0..replicas).into_par_iter().map(f).collect()
}

fn finish(runs: Vec<(TimeSeries, u64, Vec<AgentEvent>)>, seed: u64) -> CliResult<RunOutput> {
    let mut replicas = Vec::with_capacity(runs.len());
    let mut clamp_events = Vec::with_capacity(runs.len());
    let mut events = Vec::new();
    for (k, (ts, c, ev)) in runs.into_iter().enumerate() {
        replicas.push(ts);
        clamp_events.push(c);
        events.extend(ev.into_iter().map(|e| (k, e)));
    }
    let series = if replicas.len() == 1 { replicas[0].clone() } else { TimeSeries::mean(&replicas)? };
    Ok(RunOutput {
        series,
        replicas,
        clamp_events,
        events,
        seed: Some(seed),
    })
}

/// Runs a scenario; `base` resolves relative paths, `seed` is the resolved seed
/// (ignored by deterministic modes).
pub fn run_scenario(cfg: &ScenarioConfig, base: &Path, seed: Option<u64>, replicas: usize) -> CliResult<RunOutput> {
    let (groups, n, total) = initial_shape(cfg)?;
    let topo = topology(cfg, base)?;
    if cfg.mode == Mode::Agents {
        let seed = seed.ok_or_else(|| CliError::validation("stochastic modes need a seed"))?;
        let steps = require(cfg.steps, "steps", cfg.mode)?;
        if replicas == 0 {
            return Err(CliError::validation("replicas must be at least 1"));
        }
        return run_agents_mode(cfg, &topo, &groups, n, steps, seed, replicas);
    }
    let pc = cfg
        .params
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("mode {:?} requires \"params\"", cfg.mode)))?;
    let params = pc.resolve(n, total)?;
    let calibrate = pc.epsilon.is_some();
    if cfg.mode.is_stochastic() {
        if replicas == 0 {
            return Err(CliError::validation("replicas must be at least 1"));
        }
        let seed = seed.ok_or_else(|| CliError::validation("stochastic modes need a seed"))?;
        let steps = require(cfg.steps, "steps", cfg.mode)?;
        let mode = cfg.mode;
        let movement = match mode {
            Mode::Groups => group_movements(&topo, n, &params, calibrate)?,
            _ => {
                if groups.len() != 1 {
                    return Err(CliError::validation(format!("mode {mode:?} takes a single group of counts")));
                }
                vec![single_movement(&topo, n, &params, calibrate)?]
            }
        };
        if movement.len() != groups.len() {
            return Err(CliError::validation(format!(
                "graph has {} groups, initial counts {}",
                movement.len(),
                groups.len()
            )));
        }
        if mode == Mode::Delay && !(params.delay_t0 > 0.0) {
            return Err(CliError::validation("mode delay requires params.delay_t0 > 0"));
        }
        if mode != Mode::Delay && params.delay_t0 != 0.0 {
            return Err(CliError::validation("delay_t0 is only used by mode delay"));
        }
        let chain_mode = if mode == Mode::Sei { ChainMode::Sei } else { ChainMode::Sir };
        let model = ChainModel::new(movement, params, chain_mode)?;
        let init = EpidemicState {
            groups: groups.iter().map(node_states).collect::<CliResult<_>>()?,
        };
        let runs = replicate(replicas, |k| {
            let run = model.simulate(&init, steps, &mut stream(seed, k as u64))?;
            Ok((run.series, run.clamp_events, Vec::new()))
        })?;
        return finish(runs, seed);
    }
    if groups.len() != 1 && !matches!(cfg.ode.system, Some(OdeKind::Groups)) {
        return Err(CliError::validation("per-group counts are only accepted by ode system groups"));
    }
    match cfg.mode {
        Mode::Forecast => {
            let steps = require(cfg.steps, "steps", cfg.mode)?;
            let q = single_movement(&topo, n, &params, calibrate)?;
            let c = &groups[0];
            let mut init = ExpectationState::new(c.s.clone(), c.i.clone());
            if let Some(r) = &c.r {
                init.r = r.clone();
            }
            if let Some(e) = &c.e {
                init = init.with_exposed(e.clone());
            }
            Ok(RunOutput::deterministic(iterate_forecast(&init, &params, &q, steps)?))
        }
        Mode::Ode => run_ode(cfg, &topo, &groups, n, &params).map(RunOutput::deterministic),
        _ => unreachable!(),
    }
}

fn run_agents_mode(
    cfg: &ScenarioConfig,
    topo: &Topology,
    groups: &[Counts],
    n: usize,
    steps: usize,
    seed: u64,
    replicas: usize,
) -> CliResult<RunOutput> {
    let agent_cfg = cfg.agents.clone();
    let params: AgentParams = agent_cfg.as_ref().map(|a| a.params.clone()).unwrap_or_default();
    let age0 = agent_cfg
        .and_then(|a| a.initial_infection_age)
        .unwrap_or(params.latency_steps + 1);
    // agents ignore ε: each step is one move of the group's own chain
    let movement = match topo {
        Topology::Groups(g) if g.node_count == n => g.transitions()?,
        Topology::Groups(g) => {
            return Err(CliError::validation(format!("graph has {} nodes, initial counts {n}", g.node_count)))
        }
        other => vec![single_movement(other, n, &ModelParams::uniform(n, 0.0, 0.0, 1.0), false)?],
    };
    if movement.len() != groups.len() {
        return Err(CliError::validation(format!(
            "graph has {} groups, initial counts {}",
            movement.len(),
            groups.len()
        )));
    }
    let mut agents = Vec::new();
    for (g, c) in groups.iter().enumerate() {
        if c.e.as_ref().is_some_and(|e| e.iter().any(|&v| v != 0.0)) {
            return Err(CliError::validation("agent mode takes S, I and R counts only"));
        }
        for (j, st) in node_states(c)?.into_iter().enumerate() {
            agents.extend((0..st.s).map(|_| Agent::susceptible(j, g)));
            agents.extend((0..st.i).map(|_| Agent::infected(j, g, age0)));
            agents.extend((0..st.r).map(|_| Agent {
                state: epigraph_core::sim::agents::HealthState::R,
                infection_age: 0,
                node: j,
                group: g,
            }));
        }
    }
    let runs = replicate(replicas, |k| {
        let run = simulate_agents(&movement, &params, agents.clone(), steps, &mut stream(seed, k as u64))?;
        Ok((run.series, 0, run.events))
    })?;
    finish(runs, seed)
}

fn ode_laplacian(topo: &Topology, n: usize, kind: epigraph_core::graph::LaplacianKind) -> CliResult<Laplacian> {
    match topo {
        Topology::None if n == 1 => Ok(Laplacian::zero(1)),
        Topology::Single(g) => Ok(laplacian_of_kind(g, kind)?),
        Topology::Explicit(q) => {
            // Id − Q for an explicit one-step matrix
            let delta = Matrix::identity(n).sub(q.matrix());
            Ok(Laplacian { delta })
        }
        _ => Err(CliError::validation("ode system graph needs a single graph or transition")),
    }
}

/// `P_ε`: the chain whose multiplicity is calibrated to `ε` with unit step.
fn approx_matrix(topo: &Topology, n: usize, epsilon: f64) -> CliResult<TransitionMatrix> {
    match topo {
        Topology::None if n == 1 => Ok(TransitionMatrix::identity(1)),
        Topology::Single(g) => match calibrated_multiplicity(epsilon, 1.0)? {
            Some(m) => Ok(transition_matrix(&g.clone().with_multiplicity(m))?),
            None => Ok(TransitionMatrix::identity(g.node_count)),
        },
        Topology::Explicit(q) => Ok(q.clone()),
        _ => Err(CliError::validation("approximate systems need a single graph or transition")),
    }
}

fn run_ode(cfg: &ScenarioConfig, topo: &Topology, groups: &[Counts], n: usize, params: &ModelParams) -> CliResult<TimeSeries> {
    let horizon = require(cfg.horizon, "horizon", Mode::Ode)?;
    let dt = cfg.dt.unwrap_or(0.1);
    let ode = &cfg.ode;
    let system = ode.system.unwrap_or(if n == 1 && matches!(topo, Topology::None) { OdeKind::Single } else { OdeKind::Graph });
    let c = &groups[0];
    let zeros = vec![0.0; n];
    let r0 = c.r.clone().unwrap_or_else(|| zeros.clone());
    let series = match system {
        OdeKind::Single | OdeKind::Delay if n != 1 => {
            return Err(CliError::validation("ode systems single and delay take one node"));
        }
        OdeKind::Single => {
            let mut sys = SirSingle::new(params.lambda[0], params.gamma[0]);
            sys.lambda_schedule = ode.lambda_schedule.clone();
            integrate(&sys, &[c.s[0], c.i[0], r0[0]], horizon, dt)?
        }
        OdeKind::Delay => {
            if !ode.lambda_schedule.changes.is_empty() {
                return Err(CliError::validation("ode system delay does not take a lambda schedule"));
            }
            let sys = SirDelay {
                lambda: params.lambda[0],
                gamma: params.gamma[0],
                t0: params.delay_t0,
            };
            sys.integrate([c.s[0], c.i[0], r0[0]], horizon, dt)?
        }
        OdeKind::Graph => {
            let delta = ode_laplacian(topo, n, ode.laplacian)?;
            let sys = SirGraph::new(params.lambda.clone(), params.gamma.clone(), params.epsilon, delta)?
                .with_schedules(ode.lambda_schedule.clone(), ode.epsilon_schedule.clone());
            integrate(&sys, &[c.s.clone(), c.i.clone(), r0].concat(), horizon, dt)?
        }
        OdeKind::Groups => {
            let Topology::Groups(g) = topo else {
                return Err(CliError::validation("ode system groups needs a group graph"));
            };
            if g.groups.len() != groups.len() || g.node_count != n {
                return Err(CliError::validation("group graph and initial counts disagree in shape"));
            }
            let deltas = g
                .groups
                .iter()
                .map(|s| s.laplacian(n, ode.laplacian))
                .collect::<Result<Vec<_>, _>>()?;
            let sys = SirGraph::groups(params.lambda.clone(), params.gamma.clone(), params.epsilon, deltas)?
                .with_schedules(ode.lambda_schedule.clone(), ode.epsilon_schedule.clone());
            let y0: Vec<f64> = groups
                .iter()
                .flat_map(|c| {
                    let r = c.r.clone().unwrap_or_else(|| zeros.clone());
                    [c.s.clone(), c.i.clone(), r].concat()
                })
                .collect();
            integrate(&sys, &y0, horizon, dt)?
        }
        OdeKind::Approx => {
            let p = approx_matrix(topo, n, params.epsilon)?;
            let mut sys = SirGraphApprox::new(params.lambda.clone(), params.gamma.clone(), p)?;
            sys.lambda_schedule = ode.lambda_schedule.clone();
            integrate(&sys, &[c.s.clone(), c.i.clone(), r0].concat(), horizon, dt)?
        }
        OdeKind::Sei => {
            let e = c.e.clone().unwrap_or_else(|| zeros.clone());
            let sys = SeiApprox {
                lambda: params.lambda.clone(),
                p: approx_matrix(topo, n, params.epsilon)?,
            };
            integrate(&sys, &[c.s.clone(), e, c.i.clone()].concat(), horizon, dt)?
        }
    };
    Ok(thin(series, ode.record_every.unwrap_or(1)))
}

/// Keeps every `k`-th record and the last one.
fn thin(ts: TimeSeries, k: usize) -> TimeSeries {
    if k <= 1 {
        return ts;
    }
    let mut out = TimeSeries::new(ts.n_nodes, ts.n_groups, ts.has_exposed);
    let last = ts.len().saturating_sub(1);
    for step in 0..ts.len() {
        if step % k == 0 || step == last {
            out.push(ts.times[step], ts.frame(step).clone());
        }
    }
    out
}

