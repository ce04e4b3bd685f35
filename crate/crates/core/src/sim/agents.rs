//! Individual-level simulation with per-agent infection age.
//!
//! Each step: susceptible agents at a node with `n` contagious agents are
//! infected with probability `1 − exp(−rate · w_node · n)`; agents that were
//! already infected recover once their age exceeds the maximum, otherwise with
//! a fixed probability; ages of infected agents advance; then every agent takes
//! one step of its group's movement chain. An infected agent is contagious
//! once its age exceeds the latency.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TransitionMatrix;
use crate::rng::stream;
use crate::series::TimeSeries;

pub const MAX_AGENTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HealthState {
    S,
    I,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub state: HealthState,
    #[serde(default)]
    pub infection_age: u32,
    pub node: usize,
    #[serde(default)]
    pub group: usize,
}

impl Agent {
    pub fn susceptible(node: usize, group: usize) -> Self {
        Agent {
            state: HealthState::S,
            infection_age: 0,
            node,
            group,
        }
    }

    pub fn infected(node: usize, group: usize, age: u32) -> Self {
        Agent {
            state: HealthState::I,
            infection_age: age,
            node,
            group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub infection_rate: f64,
    /// Steps after infection before an agent becomes contagious.
    pub latency_steps: u32,
    pub recovery_prob: f64,
    /// Age beyond which an infected agent recovers for sure; `None` disables it.
    pub max_infection_age: Option<u32>,
    /// Per-node multiplier of the infection rate (all ones if empty).
    #[serde(default)]
    pub node_weights: Vec<f64>,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            infection_rate: 0.01,
            latency_steps: 5,
            recovery_prob: 0.05,
            max_infection_age: Some(20),
            node_weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Infected,
    Recovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub step: usize,
    pub agent: usize,
    pub node: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    /// Counts per group and node; the E column holds infected agents that are
    /// not yet contagious.
    pub series: TimeSeries,
    pub events: Vec<AgentEvent>,
    pub agents: Vec<Agent>,
}

fn validate(movement: &[TransitionMatrix], params: &AgentParams, agents: &[Agent]) -> Result<usize> {
    let n = movement
        .first()
        .ok_or_else(|| Error::Parameter("at least one movement matrix is required".into()))?
        .node_count();
    if movement.iter().any(|q| q.node_count() != n) {
        return Err(Error::Parameter("movement matrices differ in size".into()));
    }
    if agents.len() > MAX_AGENTS {
        return Err(Error::Parameter(format!("{} agents exceed the limit of {MAX_AGENTS}", agents.len())));
    }
    if !params.node_weights.is_empty() && params.node_weights.len() != n {
        return Err(Error::dim("node weights", n, params.node_weights.len()));
    }
    if !(params.infection_rate >= 0.0) || !(0.0..=1.0).contains(&params.recovery_prob) {
        return Err(Error::Parameter("infection rate must be >= 0 and recovery probability in [0, 1]".into()));
    }
    for (k, a) in agents.iter().enumerate() {
        if a.node >= n || a.group >= movement.len() {
            return Err(Error::Parameter(format!("agent {k} has node {} / group {} out of range", a.node, a.group)));
        }
    }
    Ok(n)
}

fn frame(agents: &[Agent], n: usize, groups: usize, latency: u32) -> Vec<[f64; 4]> {
    let mut f = vec![[0.0; 4]; n * groups];
    for a in agents {
        let c = match a.state {
            HealthState::S => 0,
            HealthState::I if a.infection_age <= latency => 1,
            HealthState::I => 2,
            HealthState::R => 3,
        };
        f[a.group * n + a.node][c] += 1.0;
    }
    f
}

pub fn simulate_agents<R: Rng + ?Sized>(
    movement: &[TransitionMatrix],
    params: &AgentParams,
    mut agents: Vec<Agent>,
    n_steps: usize,
    rng: &mut R,
) -> Result<AgentRun> {
    let n = validate(movement, params, &agents)?;
    let k = movement.len();
    let lat = params.latency_steps;
    let mut series = TimeSeries::new(n, k, true);
    series.push(0.0, frame(&agents, n, k, lat));
    let mut events = Vec::new();
    let mut contagious = vec![0u32; n];

    for step in 0..n_steps {
        contagious.iter_mut().for_each(|c| *c = 0);
        for a in &agents {
            if a.state == HealthState::I && a.infection_age > lat {
                contagious[a.node] += 1;
            }
        }
        for (idx, a) in agents.iter_mut().enumerate() {
            match a.state {
                HealthState::S => {
                    let w = params.node_weights.get(a.node).copied().unwrap_or(1.0);
                    let p = -libm::expm1(-params.infection_rate * w * contagious[a.node] as f64);
                    if p > 0.0 && rng.random::<f64>() < p {
                        a.state = HealthState::I;
                        a.infection_age = 0;
                        events.push(AgentEvent { step, agent: idx, node: a.node, kind: EventKind::Infected });
                    }
                }
                HealthState::I if a.infection_age > 0 => {
                    let expired = params.max_infection_age.is_some_and(|m| a.infection_age > m);
                    if expired || rng.random::<f64>() < params.recovery_prob {
                        a.state = HealthState::R;
                        events.push(AgentEvent { step, agent: idx, node: a.node, kind: EventKind::Recovered });
                    }
                }
                _ => {}
            }
        }
        for a in agents.iter_mut() {
            if a.state == HealthState::I {
                a.infection_age += 1;
            }
            a.node = movement[a.group].next_node(a.node, rng.random::<f64>());
        }
        series.push((step + 1) as f64, frame(&agents, n, k, lat));
    }
    Ok(AgentRun { series, events, agents })
}

/// Agent run with `stream(seed, 0)`.
pub fn run_agents(movement: &[TransitionMatrix], params: &AgentParams, agents: Vec<Agent>, n_steps: usize, seed: u64) -> Result<AgentRun> {
    simulate_agents(movement, params, agents, n_steps, &mut stream(seed, 0))
}
