//! Least-squares calibration against active-case series.
//!
//! The model curve is the total expected number of infectious individuals
//! across nodes; the data side is `detection_rate · (cases − recovered)`.
//! The global search perturbs the incumbent inside the box and polishes with
//! a bounded Nelder–Mead simplex.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{iterate_forecast, ExpectationState};
use crate::graph::{diffusion_generator, step_matrix, GraphSpec, Laplacian, TransitionMatrix};
use crate::ode::{solve, SirGraph};
use crate::rng::stream;
use crate::series::Compartment;
use crate::sim::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    pub dates: Vec<i64>,
    pub cumulative_cases: Vec<u64>,
    pub cumulative_recovered: Vec<u64>,
}

impl CaseData {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        if self.cumulative_cases.len() != n || self.cumulative_recovered.len() != n {
            return Err(Error::Data("columns have different lengths".into()));
        }
        if self.dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        for (name, col) in [("cumulative_cases", &self.cumulative_cases), ("cumulative_recovered", &self.cumulative_recovered)] {
            if let Some(k) = col.windows(2).position(|w| w[1] < w[0]) {
                return Err(Error::Data(format!("{name} decreases at row {}", k + 1)));
            }
        }
        Ok(())
    }
}

/// Cumulative cases minus cumulative recovered.
pub fn active_cases(data: &CaseData) -> Result<Vec<f64>> {
    data.validate()?;
    data.cumulative_cases
        .iter()
        .zip(&data.cumulative_recovered)
        .enumerate()
        .map(|(k, (&c, &r))| {
            if r > c {
                Err(Error::Data(format!("recovered {r} exceeds cases {c} at row {k}")))
            } else {
                Ok((c - r) as f64)
            }
        })
        .collect()
}

/// A parameter with a starting value; it is free when `bounds` is present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: f64,
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
}

impl Param {
    pub fn fixed(value: f64) -> Self {
        Param { value, bounds: None }
    }

    pub fn free(value: f64, lo: f64, hi: f64) -> Self {
        Param {
            value,
            bounds: Some([lo, hi]),
        }
    }
}

impl Default for Param {
    fn default() -> Self {
        Param::fixed(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Ode { dt: f64 },
    Forecast { h: f64 },
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Ode { dt: 0.1 }
    }
}

fn one() -> usize {
    1
}

/// Model and search space. With more than one node the nodes form a complete
/// graph whose stationary law is the population split; `split` is the share
/// of node 0 and the rest is spread evenly. Incidence is `λN / total_population`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub total_population: f64,
    /// Initially infectious individuals, all in node 0 (kept fixed).
    pub initial_infected: f64,
    #[serde(default = "one")]
    pub nodes: usize,
    /// One entry shared by all nodes, or one per node.
    pub lambda_n: Vec<Param>,
    pub gamma: Param,
    #[serde(default)]
    pub epsilon: Param,
    pub detection_rate: Param,
    #[serde(default)]
    pub split: Option<Param>,
    /// Rows `0..train_until` are used for fitting.
    pub train_until: usize,
    #[serde(default)]
    pub backend: Backend,
}

/// Concrete parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub lambda_n: Vec<f64>,
    pub gamma: f64,
    pub epsilon: f64,
    pub detection_rate: f64,
    pub split: Option<f64>,
}

impl FitSpec {
    fn slots(&self) -> Vec<(String, Param)> {
        let mut v: Vec<(String, Param)> = self
            .lambda_n
            .iter()
            .enumerate()
            .map(|(k, p)| (format!("lambda_n[{k}]"), *p))
            .collect();
        v.push(("gamma".into(), self.gamma));
        v.push(("epsilon".into(), self.epsilon));
        v.push(("detection_rate".into(), self.detection_rate));
        if let Some(p) = self.split {
            v.push(("split".into(), p));
        }
        v
    }

    pub fn validate(&self, data_len: usize) -> Result<()> {
        if !(self.total_population > 0.0) || !(self.initial_infected >= 0.0) || self.initial_infected > self.total_population {
            return Err(Error::Parameter("population and initial infected must satisfy 0 <= I0 <= N, N > 0".into()));
        }
        if self.nodes == 0 {
            return Err(Error::Parameter("nodes must be >= 1".into()));
        }
        if self.lambda_n.len() != 1 && self.lambda_n.len() != self.nodes {
            return Err(Error::dim("lambda_n entries", self.nodes, self.lambda_n.len()));
        }
        if self.split.is_some() && self.nodes < 2 {
            return Err(Error::Parameter("split needs at least two nodes".into()));
        }
        if self.train_until == 0 || self.train_until > data_len {
            return Err(Error::Parameter(format!("train_until = {} outside 1..={data_len}", self.train_until)));
        }
        for (name, p) in self.slots() {
            if !p.value.is_finite() {
                return Err(Error::Parameter(format!("{name} start value is not finite")));
            }
            if let Some([lo, hi]) = p.bounds {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(Error::Parameter(format!("{name} bounds [{lo}, {hi}] are invalid")));
                }
                if p.value < lo || p.value > hi {
                    return Err(Error::Parameter(format!("{name} start {} is outside [{lo}, {hi}]", p.value)));
                }
            }
        }
        let det = self.detection_rate;
        let (lo, hi) = det.bounds.map_or((det.value, det.value), |[l, h]| (l, h));
        if !(lo > 0.0) || hi > 1.0 {
            return Err(Error::Parameter("detection rate must lie in (0, 1]".into()));
        }
        if let Some(s) = self.split {
            let (lo, hi) = s.bounds.map_or((s.value, s.value), |[l, h]| (l, h));
            if !(lo > 0.0) || !(hi < 1.0) {
                return Err(Error::Parameter("split must lie in (0, 1)".into()));
            }
        }
        match self.backend {
            Backend::Ode { dt } if !(dt > 0.0) || dt > 1.0 => Err(Error::Parameter("ODE dt must lie in (0, 1]".into())),
            Backend::Forecast { h } if !(h > 0.0) || h > 1.0 => Err(Error::Parameter("forecast h must lie in (0, 1]".into())),
            _ => Ok(()),
        }
    }

    pub fn start(&self) -> FitParams {
        self.params_from(&self.slots().iter().map(|(_, p)| p.value).collect::<Vec<_>>())
    }

    fn params_from(&self, all: &[f64]) -> FitParams {
        let k = self.lambda_n.len();
        FitParams {
            lambda_n: all[..k].to_vec(),
            gamma: all[k],
            epsilon: all[k + 1],
            detection_rate: all[k + 2],
            split: self.split.map(|_| all[k + 3]),
        }
    }

    fn free_indices(&self) -> Vec<(usize, f64, f64)> {
        self.slots()
            .iter()
            .enumerate()
            .filter_map(|(k, (_, p))| p.bounds.map(|[lo, hi]| (k, lo, hi)))
            .collect()
    }

    fn populations(&self, p: &FitParams) -> Vec<f64> {
        let n = self.nodes;
        if n == 1 {
            return vec![self.total_population];
        }
        let first = p.split.unwrap_or(1.0 / n as f64);
        let rest = (1.0 - first) / (n - 1) as f64;
        (0..n)
            .map(|j| self.total_population * if j == 0 { first } else { rest })
            .collect()
    }

    fn lambdas(&self, p: &FitParams) -> Vec<f64> {
        (0..self.nodes)
            .map(|j| p.lambda_n[if p.lambda_n.len() == 1 { 0 } else { j }] / self.total_population)
            .collect()
    }

    fn graph(&self, p: &FitParams) -> Result<GraphSpec> {
        let pops = self.populations(p);
        let total: f64 = pops.iter().sum();
        Ok(GraphSpec::complete(self.nodes).with_pi(pops.iter().map(|v| v / total).collect()))
    }

    /// Total expected infectious at each day offset `0..=days`.
    pub fn model_curve(&self, p: &FitParams, days: usize) -> Result<Vec<f64>> {
        Ok(self.model_totals(p, days)?.1)
    }

    /// Daily totals `(S, I)` over nodes.
    fn model_totals(&self, p: &FitParams, days: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.nodes;
        let lambda = self.lambdas(p);
        let gamma = vec![p.gamma; n];
        let mut s = self.populations(p);
        let mut i = vec![0.0; n];
        s[0] -= self.initial_infected;
        i[0] = self.initial_infected;
        match self.backend {
            Backend::Ode { dt } => {
                let delta = if n == 1 {
                    Laplacian::zero(1)
                } else {
                    diffusion_generator(&self.graph(p)?)?
                };
                let sys = SirGraph::new(lambda, gamma, p.epsilon, delta)?;
                let mut y0 = s;
                y0.extend_from_slice(&i);
                y0.extend(core::iter::repeat(0.0).take(n));
                let sol = solve(&sys, &y0, days as f64, dt)?;
                let at = |d: usize| {
                    let k = sol.times.partition_point(|&t| t < d as f64 - 1e-9 * dt);
                    &sol.states[k.min(sol.states.len() - 1)]
                };
                Ok((0..=days)
                    .map(|d| {
                        let y = at(d);
                        (y[..n].iter().sum::<f64>(), y[n..2 * n].iter().sum::<f64>())
                    })
                    .unzip())
            }
            Backend::Forecast { h } => {
                let q = if n == 1 {
                    TransitionMatrix::identity(1)
                } else {
                    step_matrix(&self.graph(p)?, p.epsilon, h)?
                };
                let params = ModelParams {
                    lambda,
                    gamma,
                    epsilon: p.epsilon,
                    h,
                    delay_t0: 0.0,
                };
                let per_day = libm::round(1.0 / h).max(1.0) as usize;
                let ts = iterate_forecast(&ExpectationState::new(s, i), &params, &q, days * per_day)?;
                Ok((0..=days)
                    .map(|d| (ts.total(d * per_day, Compartment::S), ts.total(d * per_day, Compartment::I)))
                    .unzip())
            }
        }
    }
}

/// Mean squared gap between detected active cases and the model curve over the
/// training rows; non-finite model output yields `+∞`.
pub fn loss(spec: &FitSpec, p: &FitParams, data: &CaseData) -> Result<f64> {
    let active = active_cases(data)?;
    Ok(loss_with(spec, p, data, &active))
}

fn loss_with(spec: &FitSpec, p: &FitParams, data: &CaseData, active: &[f64]) -> f64 {
    loss_rows(spec, p, data, active, 0..spec.train_until.min(data.len()))
}

fn loss_rows(spec: &FitSpec, p: &FitParams, data: &CaseData, active: &[f64], rows: core::ops::Range<usize>) -> f64 {
    if rows.is_empty() {
        return f64::INFINITY;
    }
    let t0 = data.dates[0];
    let days = (data.dates[rows.end - 1] - t0) as usize;
    let curve = match spec.model_curve(p, days) {
        Ok(c) => c,
        Err(_) => return f64::INFINITY,
    };
    let count = rows.len();
    let mut acc = 0.0;
    for k in rows {
        let m = curve[(data.dates[k] - t0) as usize];
        let d = p.detection_rate * active[k] - m;
        acc += d * d;
    }
    let v = acc / count as f64;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Initial simplex edge in normalized coordinates.
    pub step: f64,
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 600,
            step: 0.1,
            ftol: 1e-12,
            xtol: 1e-9,
        }
    }
}

/// Nelder–Mead on the unit box (points are clamped into `[0, 1]^d`).
/// Returns the best point, its value and the number of evaluations.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, start: &[f64], opts: SimplexOptions) -> (Vec<f64>, f64, usize) {
    let d = start.len();
    let clamp = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if d == 0 {
        let v = eval(start, &mut evals);
        return (Vec::new(), v, evals);
    }
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut first = start.to_vec();
    clamp(&mut first);
    pts.push(first.clone());
    for k in 0..d {
        let mut p = first.clone();
        p[k] = if p[k] + opts.step <= 1.0 { p[k] + opts.step } else { p[k] - opts.step };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();

    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&k| pts[k].clone()).collect();
        vals = order.iter().map(|&k| vals[k]).collect();

        let spread = pts
            .iter()
            .skip(1)
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| libm::fabs(a - b)))
            .fold(0.0, f64::max);
        let fspread = libm::fabs(vals[d] - vals[0]);
        if spread < opts.xtol || (vals[0].is_finite() && fspread <= opts.ftol * (libm::fabs(vals[0]) + 1e-300)) {
            break;
        }

        let centroid: Vec<f64> = (0..d).map(|k| pts[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid.iter().zip(&pts[d]).map(|(c, w)| c + t * (c - w)).collect();
            x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            x
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                for k in 1..=d {
                    let x: Vec<f64> = pts[0].iter().zip(&pts[k]).map(|(b, p)| b + 0.5 * (p - b)).collect();
                    vals[k] = eval(&x, &mut evals);
                    pts[k] = x;
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("nonempty simplex");
    (pts[best].clone(), vals[best], evals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub loss: f64,
    pub best_so_far: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    pub loss: f64,
    /// Loss on rows from `train_until` onwards (absent when there are none).
    pub test_loss: Option<f64>,
    pub train_until: usize,
    pub bounds: Vec<(String, [f64; 2])>,
    pub trace: Vec<RestartRecord>,
}

/// Random-restart search: restart 0 starts at the spec's values, later ones
/// from the incumbent perturbed uniformly by up to `perturbation` (normalized
/// units) in every free coordinate; each is polished with [`nelder_mead`].
pub fn fit(data: &CaseData, spec: &FitSpec, seed: u64, restarts: usize) -> Result<FitResult> {
    fit_with(data, spec, seed, restarts, 0.3, SimplexOptions::default())
}

pub fn fit_with(
    data: &CaseData,
    spec: &FitSpec,
    seed: u64,
    restarts: usize,
    perturbation: f64,
    opts: SimplexOptions,
) -> Result<FitResult> {
    if restarts == 0 {
        return Err(Error::Parameter("restarts must be >= 1".into()));
    }
    let active = active_cases(data)?;
    spec.validate(data.len())?;
    let slots = spec.slots();
    let base: Vec<f64> = slots.iter().map(|(_, p)| p.value).collect();
    let free = spec.free_indices();
    let to_full = |u: &[f64]| -> Vec<f64> {
        let mut x = base.clone();
        for (&(k, lo, hi), &v) in free.iter().zip(u) {
            x[k] = lo + v.clamp(0.0, 1.0) * (hi - lo);
        }
        x
    };
    let objective = |u: &[f64]| loss_with(spec, &spec.params_from(&to_full(u)), data, &active);

    let start: Vec<f64> = free
        .iter()
        .map(|&(k, lo, hi)| if hi > lo { (base[k] - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let mut rng = stream(seed, 0);
    let mut best_u = start.clone();
    let mut best = f64::INFINITY;
    let mut trace = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let u0: Vec<f64> = if r == 0 {
            start.clone()
        } else {
            best_u
                .iter()
                .map(|v| (v + perturbation * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0))
                .collect()
        };
        let (u, v, evals) = nelder_mead(objective, &u0, opts);
        if v < best {
            best = v;
            best_u = u;
        }
        trace.push(RestartRecord {
            restart: r,
            loss: v,
            best_so_far: best,
            evaluations: evals,
        });
    }
    if !best.is_finite() {
        return Err(Error::Fit("every restart produced a non-finite loss".into()));
    }
    let params = spec.params_from(&to_full(&best_u));
    let test_loss = (spec.train_until < data.len()).then(|| loss_rows(spec, &params, data, &active, spec.train_until..data.len()));
    Ok(FitResult {
        params,
        loss: best,
        test_loss,
        train_until: spec.train_until,
        bounds: slots
            .iter()
            .filter_map(|(name, p)| p.bounds.map(|b| (name.clone(), b)))
            .collect(),
        trace,
    })
}

/// Case data generated from the model at `truth`: cumulative cases are
/// `(I + R) / detection_rate` and recovered `R / detection_rate`, rounded.
pub fn synthesize(spec: &FitSpec, truth: &FitParams, days: usize) -> Result<CaseData> {
    let (s, i) = spec.model_totals(truth, days)?;
    let d = truth.detection_rate;
    let mut cases: Vec<u64> = Vec::with_capacity(days + 1);
    let mut rec: Vec<u64> = Vec::with_capacity(days + 1);
    for k in 0..=days {
        let r = (spec.total_population - s[k] - i[k]).max(0.0);
        let c = (libm::round((i[k] + r) / d) as u64).max(cases.last().copied().unwrap_or(0));
        let rr = (libm::round(r / d) as u64).max(rec.last().copied().unwrap_or(0)).min(c);
        cases.push(c);
        rec.push(rr);
    }
    Ok(CaseData {
        dates: (0..=days as i64).collect(),
        cumulative_cases: cases,
        cumulative_recovered: rec,
    })
}
