//! Reversible movement chains on graphs.
//!
//! A chain is built in two stages: the adjacency matrix of the graph, with a
//! common self-loop weight `n` on the diagonal, is row-normalized into a base
//! matrix `B`; `B` is then Metropolized against the target occupancy law `π`,
//! which yields a chain that is reversible for `π` and hence leaves it
//! invariant. Self-loops are always present, so every chain is aperiodic.
//!
//! Raising `n` slows the walk down: away from the diagonal `Q_n` shrinks like
//! `1/n`. Two Laplacians are exposed: [`laplacian`] is `Id − Q₁`, and
//! [`diffusion_generator`] is the first-order coefficient `lim n (Id − Q_n)`,
//! which is the one that satisfies `Q_n = Id − Δ/n + O(1/n²)` on every graph.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance on row sums, reversibility and `Σπ = 1`.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(rename = "nodes")]
    pub node_count: usize,
    /// Unordered node pairs; self-loops are implicit and pairs `(i, i)` are ignored.
    pub edges: Vec<[usize; 2]>,
    pub pi: Vec<f64>,
    /// Diagonal weight of the adjacency matrix, shared by every node.
    #[serde(rename = "multiplicity")]
    pub multiplicity_n: u64,
}

impl GraphSpec {
    pub fn new(node_count: usize, edges: Vec<[usize; 2]>, pi: Vec<f64>, multiplicity_n: u64) -> Result<Self> {
        let spec = GraphSpec {
            node_count,
            edges,
            pi,
            multiplicity_n,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Path `0 – 1 – … – (n−1)` with uniform `π`.
    pub fn line(n: usize) -> Self {
        let edges = (1..n).map(|j| [j - 1, j]).collect();
        GraphSpec {
            node_count: n,
            edges,
            pi: vec![1.0 / n as f64; n],
            multiplicity_n: 1,
        }
    }

    /// Complete graph with uniform `π`.
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push([i, j]);
            }
        }
        GraphSpec {
            node_count: n,
            edges,
            pi: vec![1.0 / n as f64; n],
            multiplicity_n: 1,
        }
    }

    pub fn with_pi(mut self, pi: Vec<f64>) -> Self {
        self.pi = pi;
        self
    }

    pub fn with_multiplicity(mut self, n: u64) -> Self {
        self.multiplicity_n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        if self.multiplicity_n == 0 {
            return Err(Error::Graph("multiplicity must be a positive integer".into()));
        }
        for &[a, b] in &self.edges {
            if a >= self.node_count || b >= self.node_count {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) references a node outside 0..{}",
                    self.node_count
                )));
            }
        }
        validate_pi(&self.pi, self.node_count)?;
        if let Some(node) = self.unreachable_node() {
            return Err(Error::Disconnected { node });
        }
        Ok(())
    }

    /// 0/1 adjacency without the diagonal.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.node_count;
        let mut adj = vec![vec![false; n]; n];
        for &[a, b] in &self.edges {
            if a != b {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
        adj
    }

    fn unreachable_node(&self) -> Option<usize> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for (w, &linked) in adj[v].iter().enumerate() {
                if linked && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.iter().position(|s| !s)
    }
}

fn validate_pi(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::dim("pi length", n, pi.len()));
    }
    if let Some(i) = pi.iter().position(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::Graph(format!("pi[{i}] = {} is not strictly positive", pi[i])));
    }
    let sum: f64 = pi.iter().sum();
    if libm::fabs(sum - 1.0) > STOCHASTIC_TOL {
        return Err(Error::Graph(format!("pi sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Row-stochastic matrix together with the law it was built to preserve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    q: Matrix,
    pi: Vec<f64>,
}

impl TransitionMatrix {
    /// Wraps an explicit matrix, checking stochasticity and reversibility for `pi`.
    pub fn from_parts(q: Matrix, pi: Vec<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::dim("square transition matrix", q.rows(), q.cols()));
        }
        if pi.len() != q.rows() {
            return Err(Error::dim("pi length", q.rows(), pi.len()));
        }
        let tm = TransitionMatrix { q, pi };
        if tm.q.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Graph("transition probabilities must lie in [0, 1]".into()));
        }
        let rs = tm.row_sum_residual();
        if rs > STOCHASTIC_TOL {
            return Err(Error::Graph(format!("row sums deviate from 1 by {rs:e}")));
        }
        let rev = tm.reversibility_residual();
        if rev > STOCHASTIC_TOL {
            return Err(Error::Graph(format!("matrix is not reversible for pi (residual {rev:e})")));
        }
        Ok(tm)
    }

    pub fn identity(n: usize) -> Self {
        TransitionMatrix {
            q: Matrix::identity(n),
            pi: vec![1.0 / n as f64; n],
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn node_count(&self) -> usize {
        self.q.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.q.row(i)
    }

    pub fn row_sum_residual(&self) -> f64 {
        self.q
            .row_sums()
            .iter()
            .map(|s| libm::fabs(s - 1.0))
            .fold(0.0, f64::max)
    }

    /// `max |π_i q_ij − π_j q_ji|`.
    pub fn reversibility_residual(&self) -> f64 {
        let n = self.node_count();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r = libm::fabs(self.pi[i] * self.q[(i, j)] - self.pi[j] * self.q[(j, i)]);
                worst = worst.max(r);
            }
        }
        worst
    }

    /// `‖πQ − π‖∞`.
    pub fn stationarity_residual(&self) -> f64 {
        self.q
            .tr_mul_vec(&self.pi)
            .iter()
            .zip(&self.pi)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    /// Draws the next node from row `from` using a uniform variate in `[0, 1)`.
    pub fn next_node(&self, from: usize, u: f64) -> usize {
        let row = self.q.row(from);
        let mut acc = 0.0;
        let mut last = from;
        for (j, &p) in row.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
        // u fell in the rounding gap above the accumulated mass
        last
    }

    /// Lifts a chain on `support` into an `n`-node chain that holds every
    /// other node fixed.
    pub fn embed(&self, support: &[usize], n: usize) -> Result<TransitionMatrix> {
        if support.len() != self.node_count() {
            return Err(Error::dim("support length", self.node_count(), support.len()));
        }
        let mut q = Matrix::identity(n);
        let mut pi = vec![0.0; n];
        for (a, &ga) in support.iter().enumerate() {
            if ga >= n {
                return Err(Error::Graph(format!("support node {ga} outside 0..{n}")));
            }
            q[(ga, ga)] = 0.0;
            for (b, &gb) in support.iter().enumerate() {
                q[(ga, gb)] = self.q[(a, b)];
            }
            pi[ga] = self.pi[a];
        }
        Ok(TransitionMatrix { q, pi })
    }
}

/// Laplacian of a movement chain; every row sums to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Laplacian {
    pub delta: Matrix,
}

impl Laplacian {
    pub fn zero(n: usize) -> Self {
        Laplacian {
            delta: Matrix::zeros(n, n),
        }
    }

    pub fn node_count(&self) -> usize {
        self.delta.rows()
    }

    pub fn row_sum_residual(&self) -> f64 {
        self.delta.row_sums().iter().map(|s| libm::fabs(*s)).fold(0.0, f64::max)
    }
}

/// Which Laplacian drives the continuous-time diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `lim n (Id − Q_n)`: the generator matching [`step_matrix`].
    #[default]
    Generator,
    /// `Id − Q₁`.
    IdMinusQ1,
}

/// Row-normalized adjacency matrix with `multiplicity_n` on the diagonal.
pub fn normalize_adjacency(spec: &GraphSpec) -> Result<Matrix> {
    spec.validate()?;
    let n = spec.node_count;
    let adj = spec.adjacency();
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        let diag = spec.multiplicity_n as f64;
        let degree = adj[i].iter().filter(|&&x| x).count() as f64;
        let total = diag + degree;
        for j in 0..n {
            if i == j {
                b[(i, j)] = diag / total;
            } else if adj[i][j] {
                b[(i, j)] = 1.0 / total;
            }
        }
    }
    Ok(b)
}

/// Metropolis–Hastings correction of `b` so that the result is reversible for `pi`.
pub fn metropolize(b: &Matrix, pi: &[f64]) -> Result<TransitionMatrix> {
    if !b.is_square() {
        return Err(Error::dim("square base matrix", b.rows(), b.cols()));
    }
    let n = b.rows();
    if pi.len() != n {
        return Err(Error::dim("pi length", n, pi.len()));
    }
    if let Some(i) = pi.iter().position(|p| !(*p > 0.0)) {
        return Err(Error::Domain(format!("pi[{i}] = {} must be strictly positive", pi[i])));
    }
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let bij = b[(i, j)];
            let bji = b[(j, i)];
            if (bij == 0.0) != (bji == 0.0) {
                return Err(Error::Graph(format!("base matrix support is not symmetric at ({i}, {j})")));
            }
            if bij == 0.0 {
                continue;
            }
            let ratio = (pi[j] * bji) / (pi[i] * bij);
            let v = bij * ratio.min(1.0);
            q[(i, j)] = v;
            off += v;
        }
        q[(i, i)] = 1.0 - off;
    }
    Ok(TransitionMatrix { q, pi: pi.to_vec() })
}

/// Reversible chain `Q_n` for the spec's own multiplicity.
pub fn transition_matrix(spec: &GraphSpec) -> Result<TransitionMatrix> {
    let b = normalize_adjacency(spec)?;
    metropolize(&b, &spec.pi)
}

/// `Δ = Id − Q₁`, independent of the spec's multiplicity.
pub fn laplacian(spec: &GraphSpec) -> Result<Laplacian> {
    let q1 = transition_matrix(&spec.clone().with_multiplicity(1))?;
    let n = spec.node_count;
    Ok(Laplacian {
        delta: Matrix::identity(n).sub(q1.matrix()),
    })
}

/// `lim_{n→∞} n (Id − Q_n)`: off-diagonal entries `−min(1, π_j/π_i)` on edges.
pub fn diffusion_generator(spec: &GraphSpec) -> Result<Laplacian> {
    spec.validate()?;
    let n = spec.node_count;
    let adj = spec.adjacency();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        let mut out = 0.0;
        for j in 0..n {
            if adj[i][j] {
                let rate = (spec.pi[j] / spec.pi[i]).min(1.0);
                g[(i, j)] = -rate;
                out += rate;
            }
        }
        g[(i, i)] = out;
    }
    Ok(Laplacian { delta: g })
}

pub fn laplacian_of_kind(spec: &GraphSpec, kind: LaplacianKind) -> Result<Laplacian> {
    match kind {
        LaplacianKind::Generator => diffusion_generator(spec),
        LaplacianKind::IdMinusQ1 => laplacian(spec),
    }
}

/// Multiplicity `⌊1/(ε h)⌋` calibrated to a movement frequency `ε` per unit time.
pub fn calibrated_multiplicity(epsilon: f64, h: f64) -> Result<Option<u64>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!("diffusion scale {epsilon} must be finite and >= 0")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("time step {h} must be finite and > 0")));
    }
    if epsilon == 0.0 {
        return Ok(None);
    }
    let rate = epsilon * h;
    if rate > 1.0 {
        return Err(Error::Parameter(format!(
            "epsilon*h = {rate} exceeds 1: movement probability per step would exceed 1"
        )));
    }
    // Relative nudge keeps exact quotients such as 1/(1*0.1) from flooring to 9.
    let x = 1.0 / rate;
    Ok(Some(libm::floor(x * (1.0 + 1e-12)) as u64))
}

/// Per-step chain `Q^h` for diffusion scale `epsilon` and step length `h`.
///
/// `epsilon = 0` gives the identity (no movement).
pub fn step_matrix(spec: &GraphSpec, epsilon: f64, h: f64) -> Result<TransitionMatrix> {
    spec.validate()?;
    match calibrated_multiplicity(epsilon, h)? {
        None => Ok(TransitionMatrix {
            q: Matrix::identity(spec.node_count),
            pi: spec.pi.clone(),
        }),
        Some(n) => transition_matrix(&spec.clone().with_multiplicity(n)),
    }
}

/// Node-occupancy frequencies of a walk of `steps` moves started at `start`.
pub fn occupancy<R: Rng + ?Sized>(q: &TransitionMatrix, start: usize, steps: u64, rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0u64; q.node_count()];
    let mut at = start;
    for _ in 0..steps {
        at = q.next_node(at, rng.random::<f64>());
        counts[at] += 1;
    }
    counts.iter().map(|&c| c as f64 / steps as f64).collect()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum()
}

/// One group's chain: a graph on a subset of the global nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    /// Global node indices visited by the group, in local order.
    pub support: Vec<usize>,
    /// Edges in local indices.
    pub edges: Vec<[usize; 2]>,
    pub pi: Vec<f64>,
    #[serde(default = "one")]
    pub multiplicity: u64,
}

fn one() -> u64 {
    1
}

impl GroupSpec {
    pub fn local_graph(&self) -> GraphSpec {
        GraphSpec {
            node_count: self.support.len(),
            edges: self.edges.clone(),
            pi: self.pi.clone(),
            multiplicity_n: self.multiplicity,
        }
    }

    /// Group chain with the group's own multiplicity, lifted to `n` nodes.
    pub fn transition(&self, n: usize) -> Result<TransitionMatrix> {
        transition_matrix(&self.local_graph())?.embed(&self.support, n)
    }

    /// Group chain calibrated to `(epsilon, h)`, lifted to `n` nodes.
    pub fn step_matrix(&self, n: usize, epsilon: f64, h: f64) -> Result<TransitionMatrix> {
        step_matrix(&self.local_graph(), epsilon, h)?.embed(&self.support, n)
    }

    /// Generator (or `Id − Q₁`) of the group chain lifted to `n` nodes.
    pub fn laplacian(&self, n: usize, kind: LaplacianKind) -> Result<Laplacian> {
        let local = laplacian_of_kind(&self.local_graph(), kind)?;
        let mut delta = Matrix::zeros(n, n);
        for (a, &ga) in self.support.iter().enumerate() {
            for (b, &gb) in self.support.iter().enumerate() {
                delta[(ga, gb)] = local.delta[(a, b)];
            }
        }
        Ok(Laplacian { delta })
    }
}

/// Several groups sharing one set of nodes, each walking its own chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGraph {
    #[serde(rename = "nodes")]
    pub node_count: usize,
    pub groups: Vec<GroupSpec>,
}

impl GroupGraph {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Graph("at least one group is required".into()));
        }
        for g in &self.groups {
            let mut seen = vec![false; self.node_count];
            for &v in &g.support {
                if v >= self.node_count {
                    return Err(Error::Graph(format!("support node {v} outside 0..{}", self.node_count)));
                }
                if seen[v] {
                    return Err(Error::Graph(format!("support node {v} listed twice")));
                }
                seen[v] = true;
            }
            g.local_graph().validate()?;
        }
        Ok(())
    }

    pub fn transitions(&self) -> Result<Vec<TransitionMatrix>> {
        self.validate()?;
        self.groups.iter().map(|g| g.transition(self.node_count)).collect()
    }
}
