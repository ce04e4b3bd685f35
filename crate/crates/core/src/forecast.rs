//! Exact propagation of expectations of the chain-binomial model.
//!
//! Conditioning on the state at step `t`, the expected next state is
//!
//! ```text
//! s' = s·e^{−λ i h}
//! i' = i + s(1 − e^{−λ i h}) − i(1 − e^{−γ h})
//! ```
//!
//! per node, followed by the movement chain acting on each compartment
//! vector as `Qᵀ x`. Because the map is evaluated at the expected `i`, the
//! single-node iterates coincide with the unconditional expectations only to
//! the extent that the chain concentrates; the matrix form `N(x)` makes the
//! linearity in `(i, s)` at fixed `x` explicit.
//!
//! Arguments always come in the order `s` first, `i` second; [`StepMatrix`]
//! is the exception and acts on `(i, s)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TransitionMatrix;
use crate::series::TimeSeries;
use crate::sim::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationState {
    pub s: Vec<f64>,
    /// Exposed compartment; empty outside SEI mode.
    #[serde(default)]
    pub e: Vec<f64>,
    pub i: Vec<f64>,
    #[serde(default)]
    pub r: Vec<f64>,
}

impl ExpectationState {
    pub fn new(s: Vec<f64>, i: Vec<f64>) -> Self {
        let r = vec![0.0; s.len()];
        ExpectationState { s, e: Vec::new(), i, r }
    }

    pub fn single(s: f64, i: f64) -> Self {
        Self::new(vec![s], vec![i])
    }

    pub fn with_exposed(mut self, e: Vec<f64>) -> Self {
        self.e = e;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.s.len()
    }

    pub fn is_sei(&self) -> bool {
        !self.e.is_empty()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.s.len() != n || self.i.len() != n {
            return Err(Error::dim("expectation state nodes", n, self.s.len().min(self.i.len())));
        }
        if !self.r.is_empty() && self.r.len() != n {
            return Err(Error::dim("expectation state r", n, self.r.len()));
        }
        if self.is_sei() && self.e.len() != n {
            return Err(Error::dim("expectation state e", n, self.e.len()));
        }
        Ok(())
    }

    fn frame(&self) -> Vec<[f64; 4]> {
        (0..self.n_nodes())
            .map(|j| {
                [
                    self.s[j],
                    self.e.get(j).copied().unwrap_or(0.0),
                    self.i[j],
                    self.r.get(j).copied().unwrap_or(0.0),
                ]
            })
            .collect()
    }
}

/// The 2×2 matrix `N(x)` acting on `(i, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMatrix(pub [[f64; 2]; 2]);

impl StepMatrix {
    pub fn new(x: f64, lambda: f64, gamma: f64, h: f64) -> Self {
        let stay = libm::exp(-lambda * x * h);
        StepMatrix([[libm::exp(-gamma * h), -libm::expm1(-lambda * x * h)], [0.0, stay]])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Inverse of the upper-triangular matrix; `det = e^{−(γ+λx)h} > 0`.
    pub fn inverse(&self) -> StepMatrix {
        let [[a, b], [_, d]] = self.0;
        StepMatrix([[1.0 / a, -b / (a * d)], [0.0, 1.0 / d]])
    }

    pub fn mul(&self, o: &StepMatrix) -> StepMatrix {
        let (a, b) = (&self.0, &o.0);
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        StepMatrix(out)
    }

    /// Condition number in the max-row-sum norm.
    pub fn condition(&self) -> f64 {
        norm_inf(self) * norm_inf(&self.inverse())
    }
}

fn norm_inf(m: &StepMatrix) -> f64 {
    m.0.iter().map(|r| libm::fabs(r[0]) + libm::fabs(r[1])).fold(0.0, f64::max)
}

/// Local (pre-movement) part of the map at one node, returning `(s', i', recovered)`.
fn local(s: f64, i: f64, lambda: f64, gamma: f64, h: f64) -> (f64, f64, f64) {
    let p_inf = -libm::expm1(-lambda * i * h);
    let p_rec = -libm::expm1(-gamma * h);
    let infected = s * p_inf;
    let recovered = i * p_rec;
    (s - infected, i + infected - recovered, recovered)
}

fn check(state: &ExpectationState, params: &ModelParams, q: &TransitionMatrix) -> Result<usize> {
    let n = q.node_count();
    state.validate(n)?;
    if params.lambda.len() != n || params.gamma.len() != n {
        return Err(Error::dim("rate vectors", n, params.lambda.len().min(params.gamma.len())));
    }
    Ok(n)
}

/// One step of the forecast map followed by movement along `q`.
pub fn forecast_step(state: &ExpectationState, params: &ModelParams, q: &TransitionMatrix) -> Result<ExpectationState> {
    let n = check(state, params, q)?;
    let mut s = vec![0.0; n];
    let mut i = vec![0.0; n];
    let mut r = vec![0.0; n];
    for j in 0..n {
        let (sj, ij, rec) = local(state.s[j], state.i[j], params.lambda[j], params.gamma[j], params.h);
        s[j] = sj;
        i[j] = ij;
        r[j] = state.r.get(j).copied().unwrap_or(0.0) + rec;
    }
    let qm = q.matrix();
    Ok(ExpectationState {
        s: qm.tr_mul_vec(&s),
        e: if state.is_sei() { qm.tr_mul_vec(&state.e) } else { Vec::new() },
        i: qm.tr_mul_vec(&i),
        r: qm.tr_mul_vec(&r),
    })
}

/// SEI variant: `s·(1 − e^{−λ i h})` moves from S to E, I is untouched by
/// the epidemic step, and all three vectors then move along `q`.
pub fn sei_forecast_step(state: &ExpectationState, params: &ModelParams, q: &TransitionMatrix) -> Result<ExpectationState> {
    let n = check(state, params, q)?;
    if !state.is_sei() {
        return Err(Error::Parameter("SEI forecast needs an exposed compartment".into()));
    }
    let mut s = vec![0.0; n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        let new = state.s[j] * -libm::expm1(-params.lambda[j] * state.i[j] * params.h);
        s[j] = state.s[j] - new;
        e[j] = state.e[j] + new;
    }
    let qm = q.matrix();
    Ok(ExpectationState {
        s: qm.tr_mul_vec(&s),
        e: qm.tr_mul_vec(&e),
        i: qm.tr_mul_vec(&state.i),
        r: if state.r.is_empty() { Vec::new() } else { qm.tr_mul_vec(&state.r) },
    })
}

/// `k` iterates of the forecast map (SEI map if the state carries E).
pub fn iterate_forecast(initial: &ExpectationState, params: &ModelParams, q: &TransitionMatrix, k: usize) -> Result<TimeSeries> {
    let n = check(initial, params, q)?;
    let mut ts = TimeSeries::new(n, 1, initial.is_sei());
    let mut x = initial.clone();
    if x.r.is_empty() {
        x.r = vec![0.0; n];
    }
    ts.push(0.0, x.frame());
    for step in 0..k {
        x = if x.is_sei() {
            sei_forecast_step(&x, params, q)?
        } else {
            forecast_step(&x, params, q)?
        };
        ts.push((step + 1) as f64 * params.h, x.frame());
    }
    Ok(ts)
}

/// Inverse of the single-node local map: given `(s', i')` and the `i` at
/// which the step was evaluated, recover `(s, i)`.
pub fn invert_step(s_next: f64, i_next: f64, i_prev: f64, lambda: f64, gamma: f64, h: f64) -> (f64, f64) {
    let m = StepMatrix::new(i_prev, lambda, gamma, h).inverse();
    let [i, s] = m.apply([i_next, s_next]);
    (s, i)
}

/// Exact conditional variance of the next `I` at each node:
/// `S p(1−p) + I q(1−q)` with `p = 1 − e^{−λIh}` and `q = 1 − e^{−γh}`.
pub fn conditional_variance(s: &[f64], i: &[f64], params: &ModelParams) -> Vec<f64> {
    s.iter()
        .zip(i)
        .enumerate()
        .map(|(j, (&sj, &ij))| {
            let p = -libm::expm1(-params.lambda[j] * ij * params.h);
            let q = -libm::expm1(-params.gamma[j] * params.h);
            sj * p * (1.0 - p) + ij * q * (1.0 - q)
        })
        .collect()
}

/// First-order expression `S(1 − e^{−λIh}) + I(1 − e^{−γh})`, which bounds
/// [`conditional_variance`] from above.
pub fn conditional_variance_upper(s: &[f64], i: &[f64], params: &ModelParams) -> Vec<f64> {
    s.iter()
        .zip(i)
        .enumerate()
        .map(|(j, (&sj, &ij))| {
            sj * -libm::expm1(-params.lambda[j] * ij * params.h) + ij * -libm::expm1(-params.gamma[j] * params.h)
        })
        .collect()
}

/// `‖F_h(x) − F_{h/k}^{(k)}(x)‖_∞` for the single-node local map.
pub fn rescaling_residual(s: f64, i: f64, lambda: f64, gamma: f64, h: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("rescaling factor k must be >= 1".into()));
    }
    let (s1, i1, _) = local(s, i, lambda, gamma, h);
    let (mut sk, mut ik) = (s, i);
    let hk = h / k as f64;
    for _ in 0..k {
        let (a, b, _) = local(sk, ik, lambda, gamma, hk);
        sk = a;
        ik = b;
    }
    Ok(libm::fabs(s1 - sk).max(libm::fabs(i1 - ik)))
}
