//! Monte Carlo checks of the single-node chain's variance, covariance,
//! martingale and concentration properties.
//!
//! Every comparison carries a Monte Carlo allowance: a bound only fails when
//! the empirical statistic exceeds it by more than four standard errors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::StepMatrix;
use crate::rng::{derive_seed, stream};
use crate::sim::{local_step, NodeState};
use crate::stats;

pub const SIGMAS: f64 = 4.0;

/// Single-node setup with `λ = λN / N` and `I₀ = round(fraction · N)` (at least 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSetup {
    pub lambda_n: f64,
    pub gamma: f64,
    pub initial_infected_fraction: f64,
}

impl NodeSetup {
    pub fn initial(&self, n: u64) -> NodeState {
        let i0 = if self.initial_infected_fraction > 0.0 {
            (libm::round(self.initial_infected_fraction * n as f64) as u64).clamp(1, n)
        } else {
            0
        };
        NodeState::new(n - i0, i0, 0)
    }

    pub fn lambda(&self, n: u64) -> f64 {
        self.lambda_n / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub n: u64,
    pub h: f64,
    pub t: f64,
    pub statistic: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
    /// `V(R) − V(S) − V(I) − 2 Cov(S, I)`, zero up to rounding.
    pub conservation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: &'static str,
    pub replicas: usize,
    pub points: Vec<BoundPoint>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.points.iter().all(|p| p.pass)
    }
}

fn steps_for(t: f64, h: f64) -> Result<usize> {
    let r = t / h;
    let k = libm::round(r);
    if t < 0.0 || libm::fabs(r - k) > 1e-9 * r.max(1.0) {
        return Err(Error::Parameter(format!("t = {t} is not a nonnegative multiple of h = {h}")));
    }
    Ok(k as usize)
}

/// Samples of `(S, I, R)` at each requested step over `replicas` runs.
fn sample(setup: &NodeSetup, n: u64, h: f64, steps: &[usize], replicas: usize, seed: u64) -> Vec<Vec<NodeState>> {
    let max = steps.iter().copied().max().unwrap_or(0);
    let lambda = setup.lambda(n);
    let mut out = vec![Vec::with_capacity(replicas); steps.len()];
    for rep in 0..replicas {
        let mut rng = stream(seed, rep as u64);
        let mut x = setup.initial(n);
        for k in 0..=max {
            for (slot, &want) in steps.iter().enumerate() {
                if want == k {
                    out[slot].push(x);
                }
            }
            if k < max {
                x = local_step(x, lambda, setup.gamma, h, &mut rng);
            }
        }
    }
    out
}

fn column(xs: &[NodeState], n: u64, f: fn(&NodeState) -> u64) -> Vec<f64> {
    xs.iter().map(|x| f(x) as f64 / n as f64).collect()
}

fn conservation_residual(xs: &[NodeState]) -> f64 {
    let s: Vec<f64> = xs.iter().map(|x| x.s as f64).collect();
    let i: Vec<f64> = xs.iter().map(|x| x.i as f64).collect();
    let r: Vec<f64> = xs.iter().map(|x| x.r as f64).collect();
    stats::variance(&r) - stats::variance(&s) - stats::variance(&i) - 2.0 * stats::covariance(&s, &i)
}

/// `V(R_t / N) ≤ γt/N + 2γ²t²/√N + t·h`, requiring `h ≤ min(1, 1/γ)`.
pub fn variance_bound(n: u64, gamma: f64, h: f64, t: f64) -> f64 {
    let nf = n as f64;
    gamma * t / nf + 2.0 * gamma * gamma * t * t / libm::sqrt(nf) + t * h
}

pub fn check_variance_bound(
    n_list: &[u64],
    h_list: &[f64],
    t_list: &[f64],
    setup: &NodeSetup,
    replicas: usize,
    seed: u64,
) -> Result<BoundReport> {
    for &h in h_list {
        let limit = if setup.gamma > 0.0 { 1.0f64.min(1.0 / setup.gamma) } else { 1.0 };
        if !(h > 0.0) || h > limit {
            return Err(Error::Parameter(format!("h = {h} violates 0 < h <= min(1, 1/gamma) = {limit}")));
        }
    }
    let mut points = Vec::new();
    for (a, &n) in n_list.iter().enumerate() {
        for (b, &h) in h_list.iter().enumerate() {
            let steps: Vec<usize> = t_list.iter().map(|&t| steps_for(t, h)).collect::<Result<_>>()?;
            let s = sample(setup, n, h, &steps, replicas, derive_seed(seed, (a * h_list.len() + b) as u64));
            for (k, &t) in t_list.iter().enumerate() {
                let r = column(&s[k], n, |x| x.r);
                let v = stats::variance(&r);
                let se = stats::variance_std_error(&r);
                let bound = variance_bound(n, setup.gamma, h, t);
                points.push(BoundPoint {
                    n,
                    h,
                    t,
                    statistic: v,
                    std_error: se,
                    bound,
                    pass: v - SIGMAS * se <= bound,
                    conservation_residual: conservation_residual(&s[k]),
                });
            }
        }
    }
    Ok(BoundReport {
        name: "variance_of_recovered",
        replicas,
        points,
    })
}

/// `Cov(S, I) ≤ N³λ²(3t + h)` for the counts at time `t + h`; zero at time 0.
pub fn cov_bound(n: u64, lambda: f64, h: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    nf * nf * nf * lambda * lambda * (3.0 * (tau - h) + h)
}

pub fn check_cov_bound(n_list: &[u64], h: f64, t_list: &[f64], setup: &NodeSetup, replicas: usize, seed: u64) -> Result<BoundReport> {
    let steps: Vec<usize> = t_list.iter().map(|&t| steps_for(t, h)).collect::<Result<_>>()?;
    let mut points = Vec::new();
    for (a, &n) in n_list.iter().enumerate() {
        let s = sample(setup, n, h, &steps, replicas, derive_seed(seed, a as u64));
        for (k, &t) in t_list.iter().enumerate() {
            let sv: Vec<f64> = s[k].iter().map(|x| x.s as f64).collect();
            let iv: Vec<f64> = s[k].iter().map(|x| x.i as f64).collect();
            let c = stats::covariance(&sv, &iv);
            let se = stats::covariance_std_error(&sv, &iv);
            let bound = cov_bound(n, setup.lambda(n), h, t);
            points.push(BoundPoint {
                n,
                h,
                t,
                statistic: c,
                std_error: se,
                bound,
                pass: c - SIGMAS * se <= bound,
                conservation_residual: conservation_residual(&s[k]),
            });
        }
    }
    Ok(BoundReport {
        name: "covariance_s_i",
        replicas,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePoint {
    pub k: usize,
    /// Mean of `A_{k+1}` over restarts minus `A_k`, components `(I, S)`.
    pub residual: [f64; 2],
    pub std_error: [f64; 2],
    /// Condition number of the accumulated inverse product.
    pub condition: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub points: Vec<MartingalePoint>,
    /// Largest |residual| / std_error over all points.
    pub max_z: f64,
    /// Depth at which the inverse product stopped being finite, if it did.
    pub truncated_at: Option<usize>,
}

impl MartingaleReport {
    pub fn all_pass(&self) -> bool {
        self.points.iter().all(|p| p.pass)
    }
}

/// Conditional Monte Carlo check of `A_k = M_0⁻¹ ⋯ M_{k−1}⁻¹ (I_k, S_k)` being a
/// martingale: along one base path, restart one step `restarts` times from
/// each frozen state and compare the mean of `A_{k+1}` with `A_k`.
pub fn check_martingale(
    n: u64,
    initial: NodeState,
    lambda: f64,
    gamma: f64,
    h: f64,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    if initial.total() != n {
        return Err(Error::Parameter("initial state does not sum to N".into()));
    }
    let mut base_rng = stream(seed, 0);
    let mut path = vec![initial];
    for _ in 0..k_max {
        let x = *path.last().expect("nonempty");
        path.push(local_step(x, lambda, gamma, h, &mut base_rng));
    }

    let mut product = StepMatrix([[1.0, 0.0], [0.0, 1.0]]);
    let mut points = Vec::new();
    let mut truncated_at = None;
    let mut max_z: f64 = 0.0;
    for (k, x) in path.iter().enumerate().take(k_max + 1) {
        let a_k = product.apply([x.i as f64, x.s as f64]);
        let next = product.mul(&StepMatrix::new(x.i as f64, lambda, gamma, h).inverse());
        if next.0.iter().flatten().any(|v| !v.is_finite()) || a_k.iter().any(|v| !v.is_finite()) {
            truncated_at = Some(k);
            break;
        }
        let mut rng = stream(derive_seed(seed, k as u64 + 1), 0);
        let mut comps = [Vec::with_capacity(restarts), Vec::with_capacity(restarts)];
        for _ in 0..restarts {
            let y = local_step(*x, lambda, gamma, h, &mut rng);
            let a = next.apply([y.i as f64, y.s as f64]);
            comps[0].push(a[0]);
            comps[1].push(a[1]);
        }
        let residual = [stats::mean(&comps[0]) - a_k[0], stats::mean(&comps[1]) - a_k[1]];
        let std_error = [stats::mean_std_error(&comps[0]), stats::mean_std_error(&comps[1])];
        let mut pass = true;
        for c in 0..2 {
            let scale = libm::fabs(a_k[c]).max(1.0);
            if std_error[c] > 0.0 {
                let z = libm::fabs(residual[c]) / std_error[c];
                max_z = max_z.max(z);
                pass &= z <= SIGMAS;
            } else {
                pass &= libm::fabs(residual[c]) <= 1e-9 * scale;
            }
        }
        points.push(MartingalePoint {
            k,
            residual,
            std_error,
            condition: product.condition(),
            pass,
        });
        product = next;
    }
    Ok(MartingaleReport {
        points,
        max_z,
        truncated_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub t: f64,
    pub n: Vec<u64>,
    /// `Var(I_t / N)` per population size.
    pub variance: Vec<f64>,
    pub slope: f64,
    pub slope_std_error: f64,
    pub pass: bool,
}

/// Log-log slope of `Var(I_t/N)` against `N`; passes when the slope is at most
/// −0.5 within two standard errors of the fit.
pub fn concentration_sweep(n_list: &[u64], setup: &NodeSetup, h: f64, t: f64, replicas: usize, seed: u64) -> Result<ConcentrationReport> {
    let k = steps_for(t, h)?;
    let mut variance = Vec::with_capacity(n_list.len());
    for (a, &n) in n_list.iter().enumerate() {
        let s = sample(setup, n, h, &[k], replicas, derive_seed(seed, a as u64));
        variance.push(stats::variance(&column(&s[0], n, |x| x.i)));
    }
    let positive = variance.iter().all(|&v| v > 0.0);
    let (slope, slope_std_error, pass) = if positive && n_list.len() >= 2 {
        let ns: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
        let fit = stats::log_log_slope(&ns, &variance);
        (fit.slope, fit.slope_std_error, fit.slope - 2.0 * fit.slope_std_error <= -0.5)
    } else {
        // degenerate: no fluctuations to fit
        (f64::NEG_INFINITY, 0.0, variance.iter().all(|&v| v == 0.0))
    };
    Ok(ConcentrationReport {
        t,
        n: n_list.to_vec(),
        variance,
        slope,
        slope_std_error,
        pass,
    })
}
