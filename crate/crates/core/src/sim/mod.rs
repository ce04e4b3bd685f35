//! Chain-binomial epidemic processes on a graph.
//!
//! One step of length `h` first updates every node independently,
//!
//! ```text
//! new infections ~ Binomial(S, 1 − exp(−λ·I·h))
//! recoveries     ~ Binomial(I, 1 − exp(−γ·h))
//! ```
//!
//! and then moves every individual along its group's movement chain, which
//! splits each node's count of each compartment multinomially over the row of
//! the transition matrix. Variants: SEI (infections accumulate in E and
//! nobody recovers), a constant infection-to-contagiousness delay, and several
//! groups that share the infectious pressure of a node.

pub mod agents;

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{step_matrix, GraphSpec, TransitionMatrix};
use crate::rng::{stream, SimRng};
use crate::series::{Frame, TimeSeries};

pub use agents::{run_agents, Agent, AgentEvent, AgentParams, AgentRun, HealthState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Per-node incidence rate (per unit time and per infectious individual).
    pub lambda: Vec<f64>,
    /// Per-node recovery rate (per unit time).
    pub gamma: Vec<f64>,
    /// Movement frequency per unit time.
    #[serde(default)]
    pub epsilon: f64,
    /// Step length.
    pub h: f64,
    /// Constant delay between infection and contagiousness; 0 disables it.
    #[serde(default)]
    pub delay_t0: f64,
}

impl ModelParams {
    /// Same rates at every node.
    pub fn uniform(n_nodes: usize, lambda: f64, gamma: f64, h: f64) -> Self {
        ModelParams {
            lambda: vec![lambda; n_nodes],
            gamma: vec![gamma; n_nodes],
            epsilon: 0.0,
            h,
            delay_t0: 0.0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_delay(mut self, t0: f64) -> Self {
        self.delay_t0 = t0;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.lambda.len() != n_nodes {
            return Err(Error::dim("lambda length", n_nodes, self.lambda.len()));
        }
        if self.gamma.len() != n_nodes {
            return Err(Error::dim("gamma length", n_nodes, self.gamma.len()));
        }
        for (name, v) in self
            .lambda
            .iter()
            .map(|v| ("lambda", *v))
            .chain(self.gamma.iter().map(|v| ("gamma", *v)))
            .chain([("epsilon", self.epsilon), ("delay_t0", self.delay_t0)])
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Parameter(format!("h = {} must be finite and > 0", self.h)));
        }
        self.delay_steps().map(|_| ())
    }

    /// `t0 / h`, which must be an integer.
    pub fn delay_steps(&self) -> Result<usize> {
        let ratio = self.delay_t0 / self.h;
        let k = libm::round(ratio);
        if libm::fabs(ratio - k) > 1e-9 * ratio.max(1.0) {
            return Err(Error::Parameter(format!(
                "delay t0 = {} is not a multiple of h = {}",
                self.delay_t0, self.h
            )));
        }
        Ok(k as usize)
    }

    /// Movement chain for one step of length `h` on `graph`.
    pub fn movement(&self, graph: &GraphSpec) -> Result<TransitionMatrix> {
        step_matrix(graph, self.epsilon, self.h)
    }

    pub fn infection_probability(&self, node: usize, infectious: f64) -> f64 {
        -libm::expm1(-self.lambda[node] * infectious * self.h)
    }

    pub fn recovery_probability(&self, node: usize) -> f64 {
        -libm::expm1(-self.gamma[node] * self.h)
    }
}

/// Compartment counts of one node (E is unused outside SEI mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeState {
    pub s: u64,
    #[serde(default)]
    pub e: u64,
    pub i: u64,
    #[serde(default)]
    pub r: u64,
}

impl NodeState {
    pub fn new(s: u64, i: u64, r: u64) -> Self {
        NodeState { s, e: 0, i, r }
    }

    pub fn total(&self) -> u64 {
        self.s + self.e + self.i + self.r
    }
}

/// Per-group, per-node counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpidemicState {
    pub groups: Vec<Vec<NodeState>>,
}

impl EpidemicState {
    pub fn single_group(nodes: Vec<NodeState>) -> Self {
        EpidemicState { groups: vec![nodes] }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    pub fn population(&self) -> u64 {
        self.groups.iter().flatten().map(NodeState::total).sum()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::Parameter("initial state has no nodes".into()));
        }
        for g in &self.groups {
            if g.len() != n {
                return Err(Error::dim("nodes per group", n, g.len()));
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> Frame {
        self.groups
            .iter()
            .flatten()
            .map(|c| [c.s as f64, c.e as f64, c.i as f64, c.r as f64])
            .collect()
    }

    fn infectious(&self, group: usize) -> Vec<u64> {
        self.groups[group].iter().map(|c| c.i).collect()
    }
}

pub(crate) fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability in (0, 1)").sample(rng)
}

/// One chain-binomial SIR update of a single node, without movement.
pub fn local_step<R: Rng + ?Sized>(state: NodeState, lambda: f64, gamma: f64, h: f64, rng: &mut R) -> NodeState {
    let p_inf = -libm::expm1(-lambda * state.i as f64 * h);
    let p_rec = -libm::expm1(-gamma * h);
    let new_inf = binomial(state.s, p_inf, rng);
    let rec = binomial(state.i, p_rec, rng);
    NodeState {
        s: state.s - new_inf,
        e: state.e,
        i: state.i + new_inf - rec,
        r: state.r + rec,
    }
}

/// Multinomial redistribution of per-node counts along the rows of `q`.
pub fn diffuse<R: Rng + ?Sized>(counts: &[u64], q: &TransitionMatrix, rng: &mut R) -> Result<Vec<u64>> {
    let n = q.node_count();
    if counts.len() != n {
        return Err(Error::dim("count vector length", n, counts.len()));
    }
    let mut out = vec![0u64; n];
    diffuse_into(counts, q, rng, &mut out);
    Ok(out)
}

fn diffuse_into<R: Rng + ?Sized>(counts: &[u64], q: &TransitionMatrix, rng: &mut R, out: &mut [u64]) {
    out.iter_mut().for_each(|o| *o = 0);
    for (from, &count) in counts.iter().enumerate() {
        let row = q.row(from);
        let last = match row.iter().rposition(|&p| p > 0.0) {
            Some(l) => l,
            None => {
                out[from] += count;
                continue;
            }
        };
        let mut remaining = count;
        let mut mass = 1.0;
        for (to, &p) in row.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if p <= 0.0 {
                continue;
            }
            let moved = if to == last {
                remaining
            } else {
                binomial(remaining, (p / mass).min(1.0), rng)
            };
            out[to] += moved;
            remaining -= moved;
            mass -= p;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    Sir,
    /// New infections go to E; no recovery and no E→I transition.
    Sei,
}

/// Output of a chain run together with bookkeeping events.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub series: TimeSeries,
    /// Steps where delayed recoveries exceeded the current infectious count
    /// and were clamped.
    pub clamp_events: u64,
}

/// Chain-binomial model on `n` nodes with one movement chain per group.
#[derive(Debug, Clone)]
pub struct ChainModel {
    pub movement: Vec<TransitionMatrix>,
    pub params: ModelParams,
    pub mode: ChainMode,
}

impl ChainModel {
    pub fn new(movement: Vec<TransitionMatrix>, params: ModelParams, mode: ChainMode) -> Result<Self> {
        let first = movement
            .first()
            .ok_or_else(|| Error::Parameter("at least one movement matrix is required".into()))?;
        let n = first.node_count();
        for q in &movement {
            if q.node_count() != n {
                return Err(Error::dim("movement matrix size", n, q.node_count()));
            }
        }
        params.validate(n)?;
        Ok(ChainModel { movement, params, mode })
    }

    pub fn n_nodes(&self) -> usize {
        self.movement[0].node_count()
    }

    pub fn simulate<R: Rng + ?Sized>(&self, init: &EpidemicState, n_steps: usize, rng: &mut R) -> Result<ChainRun> {
        init.validate()?;
        let n = self.n_nodes();
        if init.n_nodes() != n {
            return Err(Error::dim("initial state nodes", n, init.n_nodes()));
        }
        if init.n_groups() != self.movement.len() {
            return Err(Error::dim("initial state groups", self.movement.len(), init.n_groups()));
        }
        let k_groups = init.n_groups();
        let delay = self.params.delay_steps()?;
        let h = self.params.h;

        let mut history: Vec<VecDeque<Vec<u64>>> = (0..k_groups)
            .map(|g| {
                let i0 = init.infectious(g);
                (0..delay).map(|_| i0.clone()).collect()
            })
            .collect();

        let mut state = init.clone();
        let mut series = TimeSeries::new(n, k_groups, self.mode == ChainMode::Sei);
        series.push(0.0, state.frame());
        let mut clamp_events = 0u64;
        let p_rec: Vec<f64> = (0..n).map(|j| self.params.recovery_probability(j)).collect();
        let mut scratch = vec![0u64; n];
        let mut moved = vec![0u64; n];

        for step in 0..n_steps {
            // I_{t-t0} per group (the current I when there is no delay)
            let delayed: Vec<Vec<u64>> = (0..k_groups)
                .map(|g| match history[g].front() {
                    Some(v) => v.clone(),
                    None => state.infectious(g),
                })
                .collect();
            let pressure: Vec<f64> = (0..n)
                .map(|j| delayed.iter().map(|v| v[j] as f64).sum())
                .collect();
            let p_inf: Vec<f64> = (0..n)
                .map(|j| self.params.infection_probability(j, pressure[j]))
                .collect();

            let pre_step: Vec<Vec<u64>> = (0..k_groups).map(|g| state.infectious(g)).collect();

            for j in 0..n {
                for g in 0..k_groups {
                    let c = &mut state.groups[g][j];
                    let new_inf = binomial(c.s, p_inf[j], rng);
                    c.s -= new_inf;
                    match self.mode {
                        ChainMode::Sei => c.e += new_inf,
                        ChainMode::Sir => {
                            let mut rec = binomial(delayed[g][j], p_rec[j], rng);
                            let available = c.i + new_inf;
                            if rec > available {
                                rec = available;
                                clamp_events += 1;
                            }
                            c.i = available - rec;
                            c.r += rec;
                        }
                    }
                }
            }

            for (g, q) in self.movement.iter().enumerate() {
                for comp in 0..4 {
                    for j in 0..n {
                        scratch[j] = get(&state.groups[g][j], comp);
                    }
                    diffuse_into(&scratch, q, rng, &mut moved);
                    for j in 0..n {
                        set(&mut state.groups[g][j], comp, moved[j]);
                    }
                }
            }

            if delay > 0 {
                for (g, i_prev) in pre_step.into_iter().enumerate() {
                    history[g].pop_front();
                    history[g].push_back(i_prev);
                }
            }
            series.push((step + 1) as f64 * h, state.frame());
        }
        Ok(ChainRun { series, clamp_events })
    }
}

fn get(c: &NodeState, comp: usize) -> u64 {
    match comp {
        0 => c.s,
        1 => c.e,
        2 => c.i,
        _ => c.r,
    }
}

fn set(c: &mut NodeState, comp: usize, v: u64) {
    match comp {
        0 => c.s = v,
        1 => c.e = v,
        2 => c.i = v,
        _ => c.r = v,
    }
}

fn seeded(seed: u64) -> SimRng {
    stream(seed, 0)
}

/// Single-group SIR chain with movement `q`.
pub fn run_sir(q: &TransitionMatrix, params: &ModelParams, init: &[NodeState], n_steps: usize, seed: u64) -> Result<TimeSeries> {
    let params = ModelParams {
        delay_t0: 0.0,
        ..params.clone()
    };
    let model = ChainModel::new(vec![q.clone()], params, ChainMode::Sir)?;
    let init = EpidemicState::single_group(init.to_vec());
    Ok(model.simulate(&init, n_steps, &mut seeded(seed))?.series)
}

/// Single-group SEI chain: infections accumulate in E, no recovery.
pub fn run_sei(q: &TransitionMatrix, params: &ModelParams, init: &[NodeState], n_steps: usize, seed: u64) -> Result<TimeSeries> {
    let params = ModelParams {
        delay_t0: 0.0,
        ..params.clone()
    };
    let model = ChainModel::new(vec![q.clone()], params, ChainMode::Sei)?;
    let init = EpidemicState::single_group(init.to_vec());
    Ok(model.simulate(&init, n_steps, &mut seeded(seed))?.series)
}

/// SIR chain where infection pressure and recoveries use `I(t − t0)`.
pub fn run_delayed(q: &TransitionMatrix, params: &ModelParams, init: &[NodeState], n_steps: usize, seed: u64) -> Result<ChainRun> {
    let model = ChainModel::new(vec![q.clone()], params.clone(), ChainMode::Sir)?;
    let init = EpidemicState::single_group(init.to_vec());
    model.simulate(&init, n_steps, &mut seeded(seed))
}

/// `K` groups sharing the nodes; group `k` moves along `movement[k]`.
pub fn run_groups(movement: &[TransitionMatrix], params: &ModelParams, init: &EpidemicState, n_steps: usize, seed: u64) -> Result<TimeSeries> {
    let params = ModelParams {
        delay_t0: 0.0,
        ..params.clone()
    };
    let model = ChainModel::new(movement.to_vec(), params, ChainMode::Sir)?;
    Ok(model.simulate(init, n_steps, &mut seeded(seed))?.series)
}
