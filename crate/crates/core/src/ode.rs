//! Deterministic limits of the chain, integrated with fixed-step RK4.
//!
//! State vectors are laid out per group as `[s(n), i(n), r(n)]` (SEI: `[s, e, i]`),
//! groups concatenated. Movement enters through a Laplacian `Δ` as
//! `−ε Δᵀ x`; `Δ` has zero row sums, so total population is conserved for
//! any (not necessarily symmetric) `Δ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Laplacian, TransitionMatrix};
use crate::series::{Frame, TimeSeries};

/// Piecewise-constant multiplier: `factor` applies from `from` onwards, 1 before
/// the first change.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub changes: Vec<Change>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub from: f64,
    pub factor: f64,
}

impl Schedule {
    pub fn constant() -> Self {
        Schedule::default()
    }

    /// `factor` on `[0, until)`, 1 afterwards.
    pub fn until(until: f64, factor: f64) -> Self {
        Schedule {
            changes: vec![Change { from: f64::NEG_INFINITY, factor }, Change { from: until, factor: 1.0 }],
        }
    }

    pub fn factor(&self, t: f64) -> f64 {
        self.changes.iter().filter(|c| t >= c.from).last().map_or(1.0, |c| c.factor)
    }
}

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    fn n_nodes(&self) -> usize;
    fn n_groups(&self) -> usize {
        1
    }
    fn has_exposed(&self) -> bool {
        false
    }
    /// Map a state vector to `[S, E, I, R]` records, group-major.
    fn frame(&self, y: &[f64]) -> Frame {
        let n = self.n_nodes();
        (0..self.n_groups())
            .flat_map(|g| {
                let b = &y[3 * n * g..3 * n * (g + 1)];
                (0..n).map(move |j| [b[j], 0.0, b[n + j], b[2 * n + j]])
            })
            .collect()
    }
}

/// `(ds, di)` of the basic SIR system.
pub fn rhs_sir_single(s: f64, i: f64, lambda: f64, gamma: f64) -> (f64, f64) {
    (-lambda * s * i, lambda * s * i - gamma * i)
}

/// Aggregate incidence `⟨λ∘s | i⟩` (unnormalized inner product), equal to
/// `−Σ ds_j/dt` of the graph system.
pub fn aggregate_incidence(lambda: &[f64], s: &[f64], i: &[f64]) -> f64 {
    lambda.iter().zip(s).zip(i).map(|((l, s), i)| l * s * i).sum()
}

#[derive(Debug, Clone)]
pub struct SirSingle {
    pub lambda: f64,
    pub gamma: f64,
    pub lambda_schedule: Schedule,
}

impl SirSingle {
    pub fn new(lambda: f64, gamma: f64) -> Self {
        SirSingle {
            lambda,
            gamma,
            lambda_schedule: Schedule::constant(),
        }
    }
}

impl OdeSystem for SirSingle {
    fn dim(&self) -> usize {
        3
    }
    fn n_nodes(&self) -> usize {
        1
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let l = self.lambda * self.lambda_schedule.factor(t);
        let (ds, di) = rhs_sir_single(y[0], y[1], l, self.gamma);
        dy[0] = ds;
        dy[1] = di;
        dy[2] = self.gamma * y[1];
    }
}

/// Multi-node SIR coupled through `−ε Δᵀ`; with several groups, infection at
/// a node uses the infectious count summed over groups and each group moves
/// under its own Laplacian.
#[derive(Debug, Clone)]
pub struct SirGraph {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon: f64,
    /// One Laplacian per group.
    pub deltas: Vec<Laplacian>,
    pub lambda_schedule: Schedule,
    pub epsilon_schedule: Schedule,
    delta_t: Vec<crate::Matrix>,
}

impl SirGraph {
    pub fn new(lambda: Vec<f64>, gamma: Vec<f64>, epsilon: f64, delta: Laplacian) -> Result<Self> {
        Self::groups(lambda, gamma, epsilon, vec![delta])
    }

    pub fn groups(lambda: Vec<f64>, gamma: Vec<f64>, epsilon: f64, deltas: Vec<Laplacian>) -> Result<Self> {
        let n = deltas
            .first()
            .ok_or_else(|| Error::Parameter("at least one Laplacian is required".into()))?
            .node_count();
        for d in &deltas {
            if d.node_count() != n {
                return Err(Error::dim("Laplacian size", n, d.node_count()));
            }
        }
        check_rates(&lambda, &gamma, n)?;
        let delta_t = deltas.iter().map(|d| d.delta.transpose()).collect();
        Ok(SirGraph {
            lambda,
            gamma,
            epsilon,
            deltas,
            lambda_schedule: Schedule::constant(),
            epsilon_schedule: Schedule::constant(),
            delta_t,
        })
    }

    pub fn with_schedules(mut self, lambda: Schedule, epsilon: Schedule) -> Self {
        self.lambda_schedule = lambda;
        self.epsilon_schedule = epsilon;
        self
    }
}

fn check_rates(lambda: &[f64], gamma: &[f64], n: usize) -> Result<()> {
    if lambda.len() != n {
        return Err(Error::dim("lambda length", n, lambda.len()));
    }
    if gamma.len() != n {
        return Err(Error::dim("gamma length", n, gamma.len()));
    }
    Ok(())
}

impl OdeSystem for SirGraph {
    fn dim(&self) -> usize {
        3 * self.n_nodes() * self.n_groups()
    }
    fn n_nodes(&self) -> usize {
        self.lambda.len()
    }
    fn n_groups(&self) -> usize {
        self.deltas.len()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n_nodes();
        let lf = self.lambda_schedule.factor(t);
        let eps = self.epsilon * self.epsilon_schedule.factor(t);
        let mut i_tot = vec![0.0; n];
        for g in 0..self.n_groups() {
            for j in 0..n {
                i_tot[j] += y[3 * n * g + n + j];
            }
        }
        let mut mv = vec![0.0; n];
        for (g, dt) in self.delta_t.iter().enumerate() {
            let b = 3 * n * g;
            for j in 0..n {
                let inc = self.lambda[j] * lf * y[b + j] * i_tot[j];
                let rec = self.gamma[j] * y[b + n + j];
                dy[b + j] = -inc;
                dy[b + n + j] = inc - rec;
                dy[b + 2 * n + j] = rec;
            }
            if eps != 0.0 {
                for c in 0..3 {
                    let block = b + c * n;
                    mv.copy_from_slice(&dt.mul_vec(&y[block..block + n]));
                    for j in 0..n {
                        dy[block + j] -= eps * mv[j];
                    }
                }
            }
        }
    }
}

/// Reaction terms pushed through `Pᵀ`: `ds = Pᵀ(−λ s i)`, `di = Pᵀ(λ s i − γ i)`,
/// `dr = Pᵀ(γ i)`.
#[derive(Debug, Clone)]
pub struct SirGraphApprox {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub p: TransitionMatrix,
    pub lambda_schedule: Schedule,
}

impl SirGraphApprox {
    pub fn new(lambda: Vec<f64>, gamma: Vec<f64>, p: TransitionMatrix) -> Result<Self> {
        check_rates(&lambda, &gamma, p.node_count())?;
        Ok(SirGraphApprox {
            lambda,
            gamma,
            p,
            lambda_schedule: Schedule::constant(),
        })
    }
}

impl OdeSystem for SirGraphApprox {
    fn dim(&self) -> usize {
        3 * self.n_nodes()
    }
    fn n_nodes(&self) -> usize {
        self.lambda.len()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n_nodes();
        let lf = self.lambda_schedule.factor(t);
        let mut ds = vec![0.0; n];
        let mut di = vec![0.0; n];
        let mut dr = vec![0.0; n];
        for j in 0..n {
            let inc = self.lambda[j] * lf * y[j] * y[n + j];
            let rec = self.gamma[j] * y[n + j];
            ds[j] = -inc;
            di[j] = inc - rec;
            dr[j] = rec;
        }
        let q = self.p.matrix();
        q.tr_mul_vec_into(&ds, &mut dy[..n]);
        q.tr_mul_vec_into(&di, &mut dy[n..2 * n]);
        q.tr_mul_vec_into(&dr, &mut dy[2 * n..3 * n]);
    }
}

/// SEI flow: `ds = Pᵀ(−λ s i)`, `de = Pᵀ(λ s i)`, `i` constant. Layout `[s, e, i]`.
#[derive(Debug, Clone)]
pub struct SeiApprox {
    pub lambda: Vec<f64>,
    pub p: TransitionMatrix,
}

impl OdeSystem for SeiApprox {
    fn dim(&self) -> usize {
        3 * self.n_nodes()
    }
    fn n_nodes(&self) -> usize {
        self.lambda.len()
    }
    fn has_exposed(&self) -> bool {
        true
    }
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n_nodes();
        let inc: Vec<f64> = (0..n).map(|j| self.lambda[j] * y[j] * y[2 * n + j]).collect();
        let q = self.p.matrix();
        q.tr_mul_vec_into(&inc, &mut dy[n..2 * n]);
        for j in 0..n {
            dy[j] = -dy[n + j];
            dy[2 * n + j] = 0.0;
        }
    }
    fn frame(&self, y: &[f64]) -> Frame {
        let n = self.n_nodes();
        (0..n).map(|j| [y[j], y[n + j], y[2 * n + j], 0.0]).collect()
    }
}

/// Integrated states on the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Solution {
    pub fn to_series<S: OdeSystem + ?Sized>(&self, sys: &S) -> TimeSeries {
        let mut ts = TimeSeries::new(sys.n_nodes(), sys.n_groups(), sys.has_exposed());
        for (t, y) in self.times.iter().zip(&self.states) {
            ts.push(*t, sys.frame(y));
        }
        ts
    }

    /// Component `k` along the trajectory.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|y| y[k]).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("solution holds the initial state")
    }
}

fn grid(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt = {dt} must be finite and > 0")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Parameter(format!("t_end = {t_end} must be finite and >= 0")));
    }
    // tolerate grids like 0.1 * 3 != 0.3
    Ok(libm::ceil(t_end / dt - 1e-9) as usize)
}

/// Classical RK4 with step `dt`; the last step is shortened to land on `t_end`.
pub fn solve<S: OdeSystem + ?Sized>(sys: &S, y0: &[f64], t_end: f64, dt: f64) -> Result<Solution> {
    if y0.len() != sys.dim() {
        return Err(Error::dim("initial state", sys.dim(), y0.len()));
    }
    let steps = grid(t_end, dt)?;
    let d = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut sol = Solution {
        times: vec![0.0],
        states: vec![y.clone()],
    };
    for step in 0..steps {
        let t = step as f64 * dt;
        let h = if step + 1 == steps { t_end - t } else { dt };
        sys.rhs(t, &y, &mut k1);
        axpy(&y, h / 2.0, &k1, &mut tmp);
        sys.rhs(t + h / 2.0, &tmp, &mut k2);
        axpy(&y, h / 2.0, &k2, &mut tmp);
        sys.rhs(t + h / 2.0, &tmp, &mut k3);
        axpy(&y, h, &k3, &mut tmp);
        sys.rhs(t + h, &tmp, &mut k4);
        for k in 0..d {
            y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
        sol.times.push(if step + 1 == steps { t_end } else { t + h });
        sol.states.push(y.clone());
    }
    Ok(sol)
}

fn axpy(y: &[f64], a: f64, x: &[f64], out: &mut [f64]) {
    for ((o, y), x) in out.iter_mut().zip(y).zip(x) {
        *o = y + a * x;
    }
}

pub fn integrate<S: OdeSystem + ?Sized>(sys: &S, y0: &[f64], t_end: f64, dt: f64) -> Result<TimeSeries> {
    Ok(solve(sys, y0, t_end, dt)?.to_series(sys))
}

/// Delayed single-node SIR:
/// `ds = −λ s(t) i(t−t0)`, `di = λ s(t) i(t−t0) − γ i(t−t0)`, `dr = γ i(t−t0)`,
/// with `i ≡ i(0)` on `[−t0, 0]`.
#[derive(Debug, Clone)]
pub struct SirDelay {
    pub lambda: f64,
    pub gamma: f64,
    pub t0: f64,
}

impl SirDelay {
    /// Fixed-step RK4 on `[s, i, r]` with linearly interpolated history;
    /// `dt` must divide `t0`.
    pub fn solve(&self, y0: [f64; 3], t_end: f64, dt: f64) -> Result<Solution> {
        let steps = grid(t_end, dt)?;
        let lag = if self.t0 == 0.0 {
            0
        } else {
            let r = self.t0 / dt;
            let k = libm::round(r);
            if k < 1.0 || libm::fabs(r - k) > 1e-9 * r {
                return Err(Error::Parameter(format!("dt = {dt} does not divide t0 = {}", self.t0)));
            }
            k as usize
        };
        let mut sol = Solution {
            times: vec![0.0],
            states: vec![y0.to_vec()],
        };
        let mut y = y0;
        for step in 0..steps {
            let t = step as f64 * dt;
            let h = if step + 1 == steps { t_end - t } else { dt };
            let hist = |tau: f64, cur_i: f64| -> Result<f64> {
                if lag == 0 {
                    return Ok(cur_i);
                }
                self.history(&sol, tau - self.t0, dt)
            };
            let f = |s: f64, lagged: f64| -> [f64; 3] {
                let inc = self.lambda * s * lagged;
                [-inc, inc - self.gamma * lagged, self.gamma * lagged]
            };
            let k1 = f(y[0], hist(t, y[1])?);
            let y2 = add(y, h / 2.0, k1);
            let k2 = f(y2[0], hist(t + h / 2.0, y2[1])?);
            let y3 = add(y, h / 2.0, k2);
            let k3 = f(y3[0], hist(t + h / 2.0, y3[1])?);
            let y4 = add(y, h, k3);
            let k4 = f(y4[0], hist(t + h, y4[1])?);
            for c in 0..3 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: step + 1 });
            }
            sol.times.push(if step + 1 == steps { t_end } else { t + h });
            sol.states.push(y.to_vec());
        }
        Ok(sol)
    }

    fn history(&self, sol: &Solution, tau: f64, dt: f64) -> Result<f64> {
        if tau <= 0.0 {
            return Ok(sol.states[0][1]);
        }
        let pos = tau / dt;
        let k = libm::floor(pos + 1e-9) as usize;
        let last = sol.states.len() - 1;
        if k > last || (k == last && pos - k as f64 > 1e-9) {
            return Err(Error::History { t: tau });
        }
        if k == last {
            return Ok(sol.states[k][1]);
        }
        let w = (pos - k as f64).clamp(0.0, 1.0);
        Ok((1.0 - w) * sol.states[k][1] + w * sol.states[k + 1][1])
    }

    pub fn integrate(&self, y0: [f64; 3], t_end: f64, dt: f64) -> Result<TimeSeries> {
        let sol = self.solve(y0, t_end, dt)?;
        Ok(sol.to_series(&SirSingle::new(self.lambda, self.gamma)))
    }
}

fn add(y: [f64; 3], a: f64, k: [f64; 3]) -> [f64; 3] {
    [y[0] + a * k[0], y[1] + a * k[1], y[2] + a * k[2]]
}
