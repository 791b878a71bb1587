//! Communication graphs, doubly stochastic consensus matrices and gossip.
//!
//! Agent values are stacked as rows of an `N x p` matrix; one gossip round
//! is a left multiplication by the consensus matrix.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::StreamRng;

/// Row/column sums must equal one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Resampling cap when drawing a connected Erdős–Rényi graph.
const ERDOS_MAX_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
    Star,
    Complete,
    /// Erdős–Rényi with edge probability `p`, resampled until connected.
    Erdos(f64),
    Edges(Vec<(usize, usize)>),
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Ring => write!(f, "ring"),
            Topology::Star => write!(f, "star"),
            Topology::Complete => write!(f, "complete"),
            Topology::Erdos(p) => write!(f, "erdos({p})"),
            Topology::Edges(e) => write!(f, "edges({} edges)", e.len()),
        }
    }
}

/// Undirected graph on `n` nodes. Edges are stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("consensus.n_agents", "graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::config("consensus.topology", format!("edge ({i}, {j}) references a node >= {n}")));
            }
            if i != j {
                set.insert((i.min(j), i.max(j)));
            }
        }
        Ok(Self { n, edges: set })
    }

    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> = if n <= 1 { vec![] } else { (0..n).map(|i| (i, (i + 1) % n)).collect() };
        Self::new(n, edges)
    }

    /// Node 0 is the hub.
    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn erdos(n: usize, p: f64, rng: &mut StreamRng) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::config("consensus.topology", format!("erdos probability must lie in (0, 1], got {p}")));
        }
        for _ in 0..ERDOS_MAX_TRIES {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let g = Self::new(n, edges)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(Error::config(
            "consensus.topology",
            format!("no connected erdos({p}) graph on {n} nodes after {ERDOS_MAX_TRIES} draws"),
        ))
    }

    pub fn from_topology(topology: &Topology, n: usize, rng: &mut StreamRng) -> Result<Self> {
        match topology {
            Topology::Ring => Self::ring(n),
            Topology::Star => Self::star(n),
            Topology::Complete => Self::complete(n),
            Topology::Erdos(p) => Self::erdos(n, *p, rng),
            Topology::Edges(e) => Self::new(n, e.iter().copied()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        seen[0] = true;
        let mut q = VecDeque::from([0]);
        while let Some(u) = q.pop_front() {
            for &(a, b) in &self.edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// A constraint broken by a candidate consensus matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { rows: usize, cols: usize, expected: usize },
    RowSum { row: usize, sum: f64 },
    ColSum { col: usize, sum: f64 },
    Negative { row: usize, col: usize, value: f64 },
    OffGraph { row: usize, col: usize, value: f64 },
    /// A diagonal or on-graph entry that is not strictly positive.
    NoFloor { row: usize, col: usize, value: f64 },
    NonFinite { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { rows, cols, expected } => {
                write!(f, "matrix is {rows}x{cols}, graph has {expected} nodes")
            }
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            Violation::ColSum { col, sum } => write!(f, "column {col} sums to {sum}"),
            Violation::Negative { row, col, value } => write!(f, "entry ({row}, {col}) = {value} is negative"),
            Violation::OffGraph { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} but ({row}, {col}) is not an edge")
            }
            Violation::NoFloor { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} must be strictly positive")
            }
            Violation::NonFinite { row, col } => write!(f, "entry ({row}, {col}) is not finite"),
        }
    }
}

/// Checks every consensus-matrix constraint against `graph`. On success
/// returns the certified floor `eta`: the smallest diagonal or on-graph entry.
pub fn validate(a: &DMatrix<f64>, graph: &CommGraph) -> std::result::Result<f64, Vec<Violation>> {
    let n = graph.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(vec![Violation::Shape {
            rows: a.nrows(),
            cols: a.ncols(),
            expected: n,
        }]);
    }
    let mut v = Vec::new();
    let mut eta = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            if !x.is_finite() {
                v.push(Violation::NonFinite { row: i, col: j });
                continue;
            }
            if x < 0.0 {
                v.push(Violation::Negative { row: i, col: j, value: x });
            }
            if i == j || graph.has_edge(i, j) {
                if x <= 0.0 {
                    v.push(Violation::NoFloor { row: i, col: j, value: x });
                } else {
                    eta = eta.min(x);
                }
            } else if x != 0.0 {
                v.push(Violation::OffGraph { row: i, col: j, value: x });
            }
        }
    }
    for i in 0..n {
        let rs: f64 = a.row(i).iter().sum();
        if (rs - 1.0).abs() > STOCHASTIC_TOL {
            v.push(Violation::RowSum { row: i, sum: rs });
        }
        let cs: f64 = a.column(i).iter().sum();
        if (cs - 1.0).abs() > STOCHASTIC_TOL {
            v.push(Violation::ColSum { col: i, sum: cs });
        }
    }
    if v.is_empty() {
        Ok(eta)
    } else {
        Err(v)
    }
}

/// A validated doubly stochastic matrix together with its floor `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    a: DMatrix<f64>,
    eta: f64,
}

impl ConsensusMatrix {
    pub fn from_matrix(a: DMatrix<f64>, graph: &CommGraph) -> Result<Self> {
        match validate(&a, graph) {
            Ok(eta) => Ok(Self { a, eta }),
            Err(violations) => {
                let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                Err(Error::config("consensus.matrix_file", msgs.join("; ")))
            }
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// `(1 - eta^(N-1))`, the per-round contraction bound used by the
    /// analysis.
    pub fn contraction_bound(&self) -> f64 {
        1.0 - self.eta.powi(self.n() as i32 - 1)
    }

    /// Second-largest singular value of `A`.
    pub fn lambda2(&self) -> f64 {
        let mut s: Vec<f64> = self.a.clone().singular_values().iter().copied().collect();
        s.sort_by(|x, y| y.total_cmp(x));
        s.get(1).copied().unwrap_or(0.0)
    }

    /// `A^t` by `t` left multiplications.
    pub fn power(&self, t: usize) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.n(), self.n());
        for _ in 0..t {
            p = &self.a * p;
        }
        p
    }
}

/// Metropolis–Hastings weights `1 / (1 + max(deg i, deg j))` on edges, with
/// the remaining mass on the diagonal.
pub fn build_metropolis(graph: &CommGraph) -> Result<ConsensusMatrix> {
    if !graph.is_connected() {
        return Err(Error::config("consensus.topology", "communication graph is disconnected"));
    }
    let n = graph.n();
    let deg: Vec<usize> = (0..n).map(|i| graph.degree(i)).collect();
    let mut a = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let w = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    ConsensusMatrix::from_matrix(a, graph)
}

/// `A^t V` by `t` left multiplications; `t = 0` returns `V` unchanged.
pub fn gossip(a: &ConsensusMatrix, v: &DMatrix<f64>, rounds: usize) -> Result<DMatrix<f64>> {
    if v.nrows() != a.n() {
        return Err(Error::dim("gossip rows", a.n(), v.nrows()));
    }
    let mut out = v.clone();
    for _ in 0..rounds {
        out = a.matrix() * out;
    }
    Ok(out)
}

/// `max_i || V_i - mean_row(V) ||_2`.
pub fn disagreement(v: &DMatrix<f64>) -> f64 {
    if v.nrows() == 0 {
        return 0.0;
    }
    let mean = v.row_mean();
    v.row_iter().map(|r| (r - &mean).norm()).fold(0.0, f64::max)
}

/// Reads a square matrix from CSV (no header, comma separated).
pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("line {}: {e}", ln + 1)))?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(parse_err(format!("expected a square matrix, got {n} rows of lengths {:?}", rows.iter().map(Vec::len).collect::<Vec<_>>())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Per-round disagreement ratios over `rounds` gossip steps of `v`. Rounds
/// where the disagreement has already underflowed to zero report a ratio of 0.
pub fn decay_ratios(a: &ConsensusMatrix, v: &DMatrix<f64>, rounds: usize) -> Result<Vec<f64>> {
    let mut cur = v.clone();
    let mut prev = disagreement(&cur);
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        cur = gossip(a, &cur, 1)?;
        let d = disagreement(&cur);
        out.push(if prev > 0.0 { d / prev } else { 0.0 });
        prev = d;
    }
    Ok(out)
}
