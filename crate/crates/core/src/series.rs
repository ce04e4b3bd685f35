//! Trajectories of per-node, per-group compartment counts.
//!
//! The same container carries integer counts from the stochastic chains,
//! expectations from the forecast map and densities or counts from the ODE
//! integrator, so the values are stored as `f64`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compartment {
    S,
    E,
    I,
    R,
}

impl Compartment {
    pub const ALL: [Compartment; 4] = [Compartment::S, Compartment::E, Compartment::I, Compartment::R];

    pub fn index(self) -> usize {
        match self {
            Compartment::S => 0,
            Compartment::E => 1,
            Compartment::I => 2,
            Compartment::R => 3,
        }
    }
}

/// One `[S, E, I, R]` record per (group, node), group-major.
pub type Frame = Vec<[f64; 4]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub n_nodes: usize,
    pub n_groups: usize,
    /// Whether the E column carries a modelled compartment.
    pub has_exposed: bool,
    pub times: Vec<f64>,
    frames: Vec<Frame>,
}

impl TimeSeries {
    pub fn new(n_nodes: usize, n_groups: usize, has_exposed: bool) -> Self {
        TimeSeries {
            n_nodes,
            n_groups,
            has_exposed,
            times: Vec::new(),
            frames: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, frame: Frame) {
        debug_assert_eq!(frame.len(), self.n_nodes * self.n_groups);
        self.times.push(t);
        self.frames.push(frame);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame(&self, step: usize) -> &Frame {
        &self.frames[step]
    }

    pub fn record(&self, step: usize, group: usize, node: usize) -> [f64; 4] {
        self.frames[step][group * self.n_nodes + node]
    }

    pub fn value(&self, step: usize, group: usize, node: usize, c: Compartment) -> f64 {
        self.record(step, group, node)[c.index()]
    }

    /// Compartment `c` at `node`, summed over groups.
    pub fn node_value(&self, step: usize, node: usize, c: Compartment) -> f64 {
        (0..self.n_groups).map(|g| self.value(step, g, node, c)).sum()
    }

    pub fn total(&self, step: usize, c: Compartment) -> f64 {
        self.frames[step].iter().map(|r| r[c.index()]).sum()
    }

    pub fn population(&self, step: usize) -> f64 {
        self.frames[step].iter().map(|r| r.iter().sum::<f64>()).sum()
    }

    pub fn total_series(&self, c: Compartment) -> Vec<f64> {
        (0..self.len()).map(|k| self.total(k, c)).collect()
    }

    pub fn node_series(&self, node: usize, c: Compartment) -> Vec<f64> {
        (0..self.len()).map(|k| self.node_value(k, node, c)).collect()
    }

    /// Pointwise mean of several trajectories on the same grid.
    pub fn mean(runs: &[TimeSeries]) -> Result<TimeSeries> {
        let first = runs.first().ok_or_else(|| Error::Parameter("mean of zero trajectories".into()))?;
        for r in runs {
            if r.len() != first.len() || r.n_nodes != first.n_nodes || r.n_groups != first.n_groups {
                return Err(Error::dim("trajectory shape", first.len(), r.len()));
            }
        }
        let m = runs.len() as f64;
        let mut out = TimeSeries::new(first.n_nodes, first.n_groups, first.has_exposed);
        for k in 0..first.len() {
            let mut frame = vec![[0.0; 4]; first.frames[k].len()];
            for r in runs {
                for (acc, rec) in frame.iter_mut().zip(&r.frames[k]) {
                    for c in 0..4 {
                        acc[c] += rec[c];
                    }
                }
            }
            for rec in &mut frame {
                for v in rec.iter_mut() {
                    *v /= m;
                }
            }
            out.push(first.times[k], frame);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_mean() {
        let mut a = TimeSeries::new(2, 1, false);
        a.push(0.0, vec![[1.0, 0.0, 2.0, 0.0], [3.0, 0.0, 4.0, 1.0]]);
        let mut b = a.clone();
        b.frames[0][0][2] = 4.0;
        assert_eq!(a.total(0, Compartment::I), 6.0);
        assert_eq!(a.population(0), 11.0);
        let m = TimeSeries::mean(&[a, b]).unwrap();
        assert_eq!(m.value(0, 0, 0, Compartment::I), 3.0);
    }
}
