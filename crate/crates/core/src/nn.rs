//! Fully connected ReLU network with a frozen input map and frozen output head.
//!
//! ```text
//! x(0) = H x
//! x(h) = ReLU(W(h) x(h-1)) / sqrt(m),   h = 1..D
//! y    = b x(D)
//! ```
//!
//! `H` is `m x d`, every `W(h)` is `m x m`, and `b` has one row per output
//! (a single row for the critic's value head, one row per local action for
//! the actor's policy head). Only the hidden stack `W` is trainable unless a
//! caller explicitly asks for [`TrainableSet::All`].
//!
//! # Flattening order
//!
//! Parameter vectors are laid out layer-major and row-major within a layer:
//! `W(1)[0,0], W(1)[0,1], ..., W(1)[m-1,m-1], W(2)[0,0], ...`. With
//! [`TrainableSet::All`] the layout is `H` (row-major), then the hidden stack
//! as above, then `b` (row-major). Gossip, norms and checkpoints all use this
//! order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance on `||x||_2 = 1` for network inputs.
pub const UNIT_NORM_TOL: f64 = 1e-9;

pub type HiddenStack = Vec<DMatrix<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    /// Hidden stack only; `H` and `b` stay frozen.
    #[default]
    Hidden,
    /// `H`, the hidden stack and `b`.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcNet {
    width: usize,
    depth: usize,
    input_dim: usize,
    seed: u64,
    input_map: DMatrix<f64>,
    hidden: HiddenStack,
    init_hidden: HiddenStack,
    head: DMatrix<f64>,
}

/// Gradient of one scalar output with respect to the hidden stack.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub layers: Vec<DMatrix<f64>>,
}

/// Gradient with respect to every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGradient {
    pub input_map: DMatrix<f64>,
    pub hidden: NetGradient,
    pub head: DMatrix<f64>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: DVector<f64>,
    /// `x(0) ..= x(D)`.
    pub activations: Vec<DVector<f64>>,
    /// `W(h) x(h-1)` for `h = 1..=D`.
    pub pre_activations: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, std_dev: f64, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, std_dev).expect("finite std");
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl FcNet {
    /// Draws `H` and every `W(h)` i.i.d. from `N(0, 2)` and `b` from `N(0, 1)`.
    /// The initial hidden stack is kept as the projection-ball centre.
    pub fn init(width: usize, depth: usize, input_dim: usize, head_rows: usize, seed: u64) -> Result<Self> {
        for (field, v) in [
            ("network.width", width),
            ("network.depth", depth),
            ("network.input_dim", input_dim),
            ("network.head_rows", head_rows),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sd = 2f64.sqrt();
        let input_map = gaussian_matrix(width, input_dim, sd, &mut rng);
        let hidden: HiddenStack = (0..depth)
            .map(|_| gaussian_matrix(width, width, sd, &mut rng))
            .collect();
        let head = gaussian_matrix(head_rows, width, 1.0, &mut rng);
        Ok(Self {
            width,
            depth,
            input_dim,
            seed,
            input_map,
            init_hidden: hidden.clone(),
            hidden,
            head,
        })
    }

    /// Assembles a network from explicit blocks. `init_hidden` is the
    /// projection centre.
    pub fn from_parts(
        input_map: DMatrix<f64>,
        init_hidden: HiddenStack,
        hidden: HiddenStack,
        head: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        let width = input_map.nrows();
        let input_dim = input_map.ncols();
        let depth = hidden.len();
        if width == 0 || input_dim == 0 || depth == 0 || head.nrows() == 0 {
            return Err(Error::config("network", "empty parameter block"));
        }
        if init_hidden.len() != depth {
            return Err(Error::dim("FcNet::from_parts init stack", depth, init_hidden.len()));
        }
        for w in hidden.iter().chain(init_hidden.iter()) {
            if w.shape() != (width, width) {
                return Err(Error::dim(
                    "FcNet::from_parts hidden layer",
                    format!("{width}x{width}"),
                    format!("{}x{}", w.nrows(), w.ncols()),
                ));
            }
        }
        if head.ncols() != width {
            return Err(Error::dim("FcNet::from_parts head", width, head.ncols()));
        }
        Ok(Self {
            width,
            depth,
            input_dim,
            seed,
            input_map,
            hidden,
            init_hidden,
            head,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn head_rows(&self) -> usize {
        self.head.nrows()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.input_map
    }
    pub fn hidden(&self) -> &HiddenStack {
        &self.hidden
    }
    pub fn init_hidden(&self) -> &HiddenStack {
        &self.init_hidden
    }
    pub fn head(&self) -> &DMatrix<f64> {
        &self.head
    }

    pub fn set_hidden(&mut self, hidden: HiddenStack) -> Result<()> {
        if hidden.len() != self.depth {
            return Err(Error::dim("FcNet::set_hidden depth", self.depth, hidden.len()));
        }
        for w in &hidden {
            if w.shape() != (self.width, self.width) {
                return Err(Error::dim(
                    "FcNet::set_hidden layer",
                    format!("{0}x{0}", self.width),
                    format!("{}x{}", w.nrows(), w.ncols()),
                ));
            }
        }
        self.hidden = hidden;
        Ok(())
    }

    /// Number of trainable scalars for `set`.
    pub fn param_count(&self, set: TrainableSet) -> usize {
        let hidden = self.depth * self.width * self.width;
        match set {
            TrainableSet::Hidden => hidden,
            TrainableSet::All => hidden + self.input_map.len() + self.head.len(),
        }
    }

    pub fn trainable_flat(&self, set: TrainableSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count(set));
        if set == TrainableSet::All {
            push_row_major(&mut out, &self.input_map);
        }
        for w in &self.hidden {
            push_row_major(&mut out, w);
        }
        if set == TrainableSet::All {
            push_row_major(&mut out, &self.head);
        }
        out
    }

    pub fn set_trainable_flat(&mut self, set: TrainableSet, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count(set) {
            return Err(Error::dim("FcNet::set_trainable_flat", self.param_count(set), flat.len()));
        }
        let mut cursor = 0;
        let mut take = |rows: usize, cols: usize| {
            let m = DMatrix::from_row_slice(rows, cols, &flat[cursor..cursor + rows * cols]);
            cursor += rows * cols;
            m
        };
        if set == TrainableSet::All {
            self.input_map = take(self.width, self.input_dim);
        }
        for h in 0..self.depth {
            self.hidden[h] = take(self.width, self.width);
        }
        if set == TrainableSet::All {
            let rows = self.head.nrows();
            self.head = take(rows, self.width);
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of `H` and `b`.
    pub fn frozen_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for m in [&self.input_map, &self.head] {
            let mut flat = Vec::new();
            push_row_major(&mut flat, m);
            for v in flat {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dim("FcNet input", self.input_dim, x.len()));
        }
        let n = x.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Domain(format!("network input must have unit norm, got {n}")));
        }
        Ok(())
    }

    pub fn trace(&self, x: &DVector<f64>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        Ok(self.trace_unchecked(x))
    }

    fn trace_unchecked(&self, x: &DVector<f64>) -> ForwardTrace {
        let scale = 1.0 / (self.width as f64).sqrt();
        let mut activations = Vec::with_capacity(self.depth + 1);
        let mut pre_activations = Vec::with_capacity(self.depth);
        activations.push(&self.input_map * x);
        for w in &self.hidden {
            let z = w * activations.last().expect("non-empty");
            let a = z.map(|v| relu(v) * scale);
            pre_activations.push(z);
            activations.push(a);
        }
        let output = &self.head * activations.last().expect("non-empty");
        ForwardTrace {
            input: x.clone(),
            activations,
            pre_activations,
            output,
        }
    }

    /// All outputs `b x(D)`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.trace(x)?.output)
    }

    /// First output row; the critic's `Q(x; W)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.forward(x)?[0])
    }

    /// Backpropagates `cotangent` (one weight per output row) through a
    /// recorded trace. Returns `d(cotangent . y)/dW(h)` for every layer and
    /// `d/dx(0)`.
    fn backprop_hidden(&self, trace: &ForwardTrace, cotangent: &DVector<f64>) -> (NetGradient, DVector<f64>) {
        let scale = 1.0 / (self.width as f64).sqrt();
        let mut layers = vec![DMatrix::zeros(self.width, self.width); self.depth];
        // d/dx(D)
        let mut upstream = self.head.tr_mul(cotangent);
        for h in (0..self.depth).rev() {
            let z = &trace.pre_activations[h];
            // ReLU sub-gradient at exactly zero is zero.
            let dz = DVector::from_fn(self.width, |i, _| if z[i] > 0.0 { upstream[i] * scale } else { 0.0 });
            layers[h] = &dz * trace.activations[h].transpose();
            upstream = self.hidden[h].tr_mul(&dz);
        }
        (NetGradient { layers }, upstream)
    }

    pub fn vjp(&self, trace: &ForwardTrace, cotangent: &DVector<f64>) -> Result<NetGradient> {
        if cotangent.len() != self.head_rows() {
            return Err(Error::dim("FcNet::vjp cotangent", self.head_rows(), cotangent.len()));
        }
        Ok(self.backprop_hidden(trace, cotangent).0)
    }

    pub fn vjp_full(&self, trace: &ForwardTrace, cotangent: &DVector<f64>) -> Result<FullGradient> {
        if cotangent.len() != self.head_rows() {
            return Err(Error::dim("FcNet::vjp_full cotangent", self.head_rows(), cotangent.len()));
        }
        let (hidden, d_x0) = self.backprop_hidden(trace, cotangent);
        Ok(FullGradient {
            input_map: &d_x0 * trace.input.transpose(),
            hidden,
            head: cotangent * trace.activations[self.depth].transpose(),
        })
    }

    /// Exact gradient of output `head_row` with respect to the hidden stack.
    pub fn grad_w(&self, x: &DVector<f64>, head_row: usize) -> Result<NetGradient> {
        if head_row >= self.head_rows() {
            return Err(Error::dim("FcNet::grad_w head_row", format!("< {}", self.head_rows()), head_row));
        }
        let trace = self.trace(x)?;
        let mut e = DVector::zeros(self.head_rows());
        e[head_row] = 1.0;
        self.vjp(&trace, &e)
    }

    /// Flattened gradient of `cotangent . y` in the layout of `set`.
    pub fn flat_vjp(&self, trace: &ForwardTrace, cotangent: &DVector<f64>, set: TrainableSet) -> Result<Vec<f64>> {
        match set {
            TrainableSet::Hidden => Ok(self.vjp(trace, cotangent)?.flatten()),
            TrainableSet::All => {
                let g = self.vjp_full(trace, cotangent)?;
                let mut out = Vec::with_capacity(self.param_count(set));
                push_row_major(&mut out, &g.input_map);
                for l in &g.hidden.layers {
                    push_row_major(&mut out, l);
                }
                push_row_major(&mut out, &g.head);
                Ok(out)
            }
        }
    }
}

impl NetGradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_stack(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.layers.iter().map(|l| l.norm_squared()).sum::<f64>().sqrt()
    }
}

pub(crate) fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

pub fn flatten_stack(stack: &[DMatrix<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(stack.iter().map(|m| m.len()).sum());
    for m in stack {
        push_row_major(&mut out, m);
    }
    out
}

/// Inverse of [`flatten_stack`] for `depth` square layers of size `width`.
pub fn unflatten_stack(flat: &[f64], width: usize, depth: usize) -> Result<HiddenStack> {
    if flat.len() != width * width * depth {
        return Err(Error::dim("unflatten_stack", width * width * depth, flat.len()));
    }
    Ok(flat
        .chunks_exact(width * width)
        .map(|c| DMatrix::from_row_slice(width, width, c))
        .collect())
}

/// Relative slack on the ball boundary. A radially projected layer lands on
/// the sphere only up to rounding, so layers within this slack count as
/// inside; this makes the projection exactly idempotent.
pub const PROJECTION_SLACK: f64 = 1e-12;

/// Euclidean projection onto `{W : ||W(h) - W0(h)||_F <= radius for every h}`.
///
/// The set is a product of per-layer balls, so each layer is projected on
/// its own: unchanged if inside, otherwise pulled radially onto the sphere.
pub fn project_ball(stack: &[DMatrix<f64>], center: &[DMatrix<f64>], radius: f64) -> Result<HiddenStack> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::config("network.radius", format!("projection radius must be positive, got {radius}")));
    }
    if stack.len() != center.len() {
        return Err(Error::dim("project_ball depth", center.len(), stack.len()));
    }
    stack
        .iter()
        .zip(center)
        .map(|(w, w0)| {
            if w.shape() != w0.shape() {
                return Err(Error::dim(
                    "project_ball layer",
                    format!("{}x{}", w0.nrows(), w0.ncols()),
                    format!("{}x{}", w.nrows(), w.ncols()),
                ));
            }
            let diff = w - w0;
            let dist = diff.norm();
            if dist <= radius * (1.0 + PROJECTION_SLACK) {
                Ok(w.clone())
            } else {
                Ok(w0 + diff * (radius / dist))
            }
        })
        .collect()
}

/// Per-layer Frobenius distances `||W(h) - W0(h)||_F`.
pub fn layer_distances(stack: &[DMatrix<f64>], center: &[DMatrix<f64>]) -> Vec<f64> {
    stack.iter().zip(center).map(|(w, w0)| (w - w0).norm()).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax policy over the actor network's logits at state features `x`.
pub fn policy_probs(actor: &FcNet, x: &DVector<f64>) -> Result<Vec<f64>> {
    let logits = actor.forward(x)?;
    Ok(softmax(logits.as_slice()))
}

/// Score function `grad log pi(a | s)` flattened in the layout of `set`.
///
/// When `cap` is set the vector is rescaled to norm 1 if it is longer.
pub fn score(actor: &FcNet, x: &DVector<f64>, action: usize, set: TrainableSet, cap: bool) -> Result<Vec<f64>> {
    let trace = actor.trace(x)?;
    score_from_trace(actor, &trace, action, set, cap)
}

pub fn score_from_trace(
    actor: &FcNet,
    trace: &ForwardTrace,
    action: usize,
    set: TrainableSet,
    cap: bool,
) -> Result<Vec<f64>> {
    let n = actor.head_rows();
    if action >= n {
        return Err(Error::Domain(format!("action {action} out of range for {n} actions")));
    }
    let probs = softmax(trace.output.as_slice());
    if !(probs[action] > 0.0) {
        return Err(Error::Domain(format!("action {action} has zero probability")));
    }
    // d log softmax_a / d logits = e_a - pi
    let cot = DVector::from_fn(n, |k, _| if k == action { 1.0 - probs[k] } else { -probs[k] });
    let mut g = actor.flat_vjp(trace, &cot, set)?;
    if cap {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            g.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(g)
}

/// `k` one-hot blocks concatenated and scaled by `1/sqrt(k)` so the result
/// has unit norm. Each entry is `(index, block_size)`.
pub fn one_hot_blocks(blocks: &[(usize, usize)]) -> DVector<f64> {
    let dim: usize = blocks.iter().map(|b| b.1).sum();
    let mut x = DVector::zeros(dim);
    let v = 1.0 / (blocks.len() as f64).sqrt();
    let mut offset = 0;
    for &(idx, size) in blocks {
        debug_assert!(idx < size);
        x[offset + idx] = v;
        offset += size;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let x = DVector::from_vec(v);
        let n = x.norm();
        x / n
    }

    fn random_unit(d: usize, rng: &mut impl Rng) -> DVector<f64> {
        unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn paper_default_shape() {
        let net = FcNet::init(20, 5, 140, 1, 42).unwrap();
        assert_eq!(net.hidden().len(), 5);
        assert!(net.hidden().iter().all(|w| w.shape() == (20, 20)));
        assert_eq!(net.input_map().shape(), (20, 140));
        assert_eq!(net.head().shape(), (1, 20));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(FcNet::init(0, 1, 1, 1, 0), Err(Error::Config { .. })));
        assert!(matches!(FcNet::init(1, 0, 1, 1, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn minimal_chain_matches_closed_form() {
        let net = FcNet::init(1, 1, 1, 1, 0).unwrap();
        let x = DVector::from_vec(vec![1.0]);
        let h = net.input_map()[(0, 0)];
        let w = net.hidden()[0][(0, 0)];
        let b = net.head()[(0, 0)];
        let expect = b * relu(w * h);
        assert_eq!(net.value(&x).unwrap(), expect);
    }

    #[test]
    fn init_variance_near_two() {
        let net = FcNet::init(512, 2, 1, 1, 3).unwrap();
        let all: Vec<f64> = flatten_stack(net.init_hidden());
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((1.8..=2.2).contains(&var), "variance {var}");
    }

    #[test]
    fn linear_regime_forward_and_gradient() {
        // Force every pre-activation positive: W = |W|, H x >= 0.
        let mut net = FcNet::init(4, 1, 3, 1, 11).unwrap();
        let h = net.input_map().map(|v| v.abs());
        let w = net.hidden()[0].map(|v| v.abs());
        net = FcNet::from_parts(h, vec![w.clone()], vec![w.clone()], net.head().clone(), 11).unwrap();
        let x = unit(vec![1.0, 2.0, 3.0]);
        let x0 = net.input_map() * &x;
        let m = 4f64.sqrt();
        let expect = (net.head() * (&w * &x0))[0] / m;
        assert!((net.value(&x).unwrap() - expect).abs() < 1e-12);
        let g = net.grad_w(&x, 0).unwrap();
        let closed = net.head().transpose() * x0.transpose() / m;
        assert!((&g.layers[0] - closed).norm() < 1e-12);
    }

    #[test]
    fn dead_unit_has_zero_gradient_row() {
        let mut net = FcNet::init(3, 1, 2, 1, 5).unwrap();
        let x = unit(vec![1.0, 0.0]);
        // make unit 1 dead: row 1 of W gives a negative pre-activation
        let x0 = net.input_map() * &x;
        let mut w = net.hidden()[0].clone();
        for j in 0..3 {
            w[(1, j)] = -x0[j].signum() * 0.5;
        }
        net.set_hidden(vec![w]).unwrap();
        let t = net.trace(&x).unwrap();
        assert!(t.pre_activations[0][1] < 0.0);
        let g = net.grad_w(&x, 0).unwrap();
        assert!(g.layers[0].row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for trial in 0..10 {
            let net = FcNet::init(5, 2, 4, 1, trial).unwrap();
            let x = random_unit(4, &mut rng);
            let g = net.grad_w(&x, 0).unwrap().flatten();
            let base = net.trainable_flat(TrainableSet::Hidden);
            let step = 1e-5;
            for (k, gk) in g.iter().enumerate() {
                let mut p = base.clone();
                p[k] += step;
                let mut up = net.clone();
                up.set_trainable_flat(TrainableSet::Hidden, &p).unwrap();
                p[k] -= 2.0 * step;
                let mut dn = net.clone();
                dn.set_trainable_flat(TrainableSet::Hidden, &p).unwrap();
                let fd = (up.value(&x).unwrap() - dn.value(&x).unwrap()) / (2.0 * step);
                assert!((fd - gk).abs() <= 1e-4 * fd.abs().max(1.0), "trial {trial} k {k}: {fd} vs {gk}");
            }
        }
    }

    #[test]
    fn positive_homogeneity() {
        let net = FcNet::init(8, 3, 5, 1, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = random_unit(5, &mut rng);
        let y = net.value(&x).unwrap();
        for c in [0.9, 0.97, 1.05, 1.1] {
            let mut scaled = net.clone();
            scaled.set_hidden(net.hidden().iter().map(|w| w * c).collect()).unwrap();
            let yc = scaled.value(&x).unwrap();
            let expect = c.powi(3) * y;
            assert!((yc - expect).abs() <= 1e-9 * expect.abs().max(1e-300));
        }
    }

    #[test]
    fn non_unit_input_rejected() {
        let net = FcNet::init(2, 1, 2, 1, 0).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(net.forward(&x), Err(Error::Domain(_))));
        let x = DVector::from_vec(vec![1.0]);
        assert!(matches!(net.forward(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn projection_cases() {
        let net = FcNet::init(3, 2, 2, 1, 0).unwrap();
        let w0 = net.init_hidden().clone();
        let inside: HiddenStack = w0.iter().map(|w| w.add_scalar(0.01)).collect();
        let p = project_ball(&inside, &w0, 1.0).unwrap();
        assert_eq!(p, inside);

        let dir = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let dir = &dir / dir.norm();
        let far: HiddenStack = w0.iter().map(|w| w + &dir * 2.0).collect();
        let p = project_ball(&far, &w0, 1.0).unwrap();
        for (ph, w0h) in p.iter().zip(&w0) {
            let d = ph - w0h;
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!((&d - &dir).norm() < 1e-12);
        }
        assert!(project_ball(&far, &w0, 0.0).is_err());
        assert!(project_ball(&far, &w0, -1.0).is_err());
    }

    #[test]
    fn softmax_identities() {
        let p = softmax(&[3.0; 5]);
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let a = softmax(&[0.1, -2.0, 5.0]);
        let b = softmax(&[100.1, 98.0, 105.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn policy_head_is_distribution() {
        let actor = FcNet::init(20, 5, 130, 5, 4).unwrap();
        let x = one_hot_blocks(&[(3, 65), (40, 65)]);
        let p = policy_probs(&actor, &x).unwrap();
        assert_eq!(p.len(), 5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn expected_score_is_zero() {
        let actor = FcNet::init(6, 2, 4, 3, 8).unwrap();
        let x = unit(vec![0.3, -0.2, 0.9, 0.1]);
        let p = policy_probs(&actor, &x).unwrap();
        let mut acc = vec![0.0; actor.param_count(TrainableSet::Hidden)];
        for (a, pa) in p.iter().enumerate() {
            let s = score(&actor, &x, a, TrainableSet::Hidden, false).unwrap();
            for (acc_k, s_k) in acc.iter_mut().zip(&s) {
                *acc_k += pa * s_k;
            }
        }
        assert!(acc.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn score_matches_finite_difference_of_log_policy() {
        let actor = FcNet::init(4, 2, 3, 3, 21).unwrap();
        let x = unit(vec![0.5, 0.5, -0.7]);
        for set in [TrainableSet::Hidden, TrainableSet::All] {
            let s = score(&actor, &x, 1, set, false).unwrap();
            let base = actor.trainable_flat(set);
            let logp = |p: &[f64]| {
                let mut n = actor.clone();
                n.set_trainable_flat(set, p).unwrap();
                policy_probs(&n, &x).unwrap()[1].ln()
            };
            for k in 0..base.len() {
                let mut p = base.clone();
                p[k] += 1e-5;
                let up = logp(&p);
                p[k] -= 2e-5;
                let dn = logp(&p);
                let fd = (up - dn) / 2e-5;
                assert!((fd - s[k]).abs() <= 1e-4 * fd.abs().max(1e-2), "{set:?} k={k}: {fd} vs {}", s[k]);
            }
        }
    }

    #[test]
    fn score_cap_bounds_norm() {
        let actor = FcNet::init(10, 3, 4, 5, 1).unwrap();
        let x = unit(vec![1.0, 0.0, 0.0, 0.0]);
        for a in 0..5 {
            let s = score(&actor, &x, a, TrainableSet::Hidden, true).unwrap();
            assert!(s.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        }
        assert!(matches!(score(&actor, &x, 5, TrainableSet::Hidden, false), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_probability_action_is_domain_error() {
        let mut actor = FcNet::init(1, 1, 1, 2, 0).unwrap();
        let head = DMatrix::from_row_slice(2, 1, &[1e6, -1e6]);
        actor = FcNet::from_parts(
            actor.input_map().map(|v| v.abs()),
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DMatrix::from_element(1, 1, 1.0)],
            head,
            0,
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0]);
        assert!(matches!(score(&actor, &x, 1, TrainableSet::Hidden, false), Err(Error::Domain(_))));
    }

    #[test]
    fn flat_roundtrip_preserves_layout() {
        let mut net = FcNet::init(3, 2, 2, 2, 6).unwrap();
        let flat = net.trainable_flat(TrainableSet::All);
        assert_eq!(flat.len(), net.param_count(TrainableSet::All));
        // H first, row-major
        assert_eq!(flat[1], net.input_map()[(0, 1)]);
        assert_eq!(flat[6 + 1], net.hidden()[0][(0, 1)]);
        let before = net.clone();
        net.set_trainable_flat(TrainableSet::All, &flat).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn frozen_fingerprint_ignores_hidden() {
        let mut net = FcNet::init(3, 2, 2, 1, 6).unwrap();
        let fp = net.frozen_fingerprint();
        net.set_hidden(net.hidden().iter().map(|w| w * 2.0).collect()).unwrap();
        assert_eq!(fp, net.frozen_fingerprint());
    }

    #[test]
    fn one_hot_blocks_unit_norm() {
        let x = one_hot_blocks(&[(2, 5), (0, 3), (4, 7)]);
        assert!((x.norm() - 1.0).abs() < 1e-15);
        assert_eq!(x.len(), 15);
    }
}
