use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParameterSet};
use super::Real;
use crate::error::{bail, Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Variable,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    MulConst(NodeId, Vec<T>),
    LayerNorm { x: NodeId, gain: NodeId, shift: NodeId, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Bce { logits: NodeId, targets: Vec<T> },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass recorded for reverse-mode differentiation.
///
/// Every node is a row-major `rows x cols` matrix; vectors are `1 x n` and
/// scalars `1 x 1`. A graph created with [`Graph::with_dropout`] samples
/// dropout masks from its own seeded stream; otherwise dropout is the
/// identity.
pub struct Graph<'p, T: Real> {
    params: &'p ParameterSet<T>,
    nodes: Vec<Node<T>>,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Result of [`Graph::backward`].
pub struct Backward<T> {
    pub params: Gradients<T>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Real> Backward<T> {
    /// Gradient of the loss with respect to any node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].as_deref()
    }
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let k = T::c(0.044715);
    let half = T::c(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * k * x * x);
    (y, dy)
}

pub(crate) fn gelu_value<T: Real>(x: T) -> T {
    gelu_parts(x).0
}

// out[r, c] = a[r, k] * b[k, c]
fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], rows: usize, inner: usize, cols: usize) {
    for i in 0..rows {
        let o = &mut out[i * cols..(i + 1) * cols];
        for (p, &av) in a[i * inner..(i + 1) * inner].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (ov, &bv) in o.iter_mut().zip(&b[p * cols..(p + 1) * cols]) {
                *ov = *ov + av * bv;
            }
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// Evaluation graph: dropout is disabled.
    pub fn new(params: &'p ParameterSet<T>) -> Self {
        Graph { params, nodes: Vec::with_capacity(256), dropout_rng: None }
    }

    /// Training graph whose dropout masks come from `seed`.
    pub fn with_dropout(params: &'p ParameterSet<T>, seed: u64) -> Self {
        Graph { params, nodes: Vec::with_capacity(256), dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn params(&self) -> &'p ParameterSet<T> {
        self.params
    }

    pub fn dropout_enabled(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        let n = &self.nodes[id.0];
        match n.op {
            Op::Param(p) => self.params.value(p),
            _ => &n.value,
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value produced by {:?}", op_name(&op));
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            bail!(Shape, "{}: shapes {:?} and {:?} differ", what, sa, sb);
        }
        Ok(sa)
    }

    /// Constant leaf.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<NodeId> {
        if data.len() != rows * cols {
            bail!(Shape, "input of {} values cannot have shape {}x{}", data.len(), rows, cols);
        }
        Ok(self.push(rows, cols, data, Op::Input, false))
    }

    /// Differentiable leaf that is not a parameter.
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<NodeId> {
        if data.len() != rows * cols {
            bail!(Shape, "variable of {} values cannot have shape {}x{}", data.len(), rows, cols);
        }
        Ok(self.push(rows, cols, data, Op::Variable, true))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let [rows, cols] = self.params.shape(id);
        self.push(rows, cols, Vec::new(), Op::Param(id), true)
    }

    /// `a[r, k] * b[k, c]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ((r, k), (k2, c)) = (self.shape(a), self.shape(b));
        if k != k2 {
            bail!(Shape, "matmul of {}x{} by {}x{}", r, k, k2, c);
        }
        let mut out = vec![T::zero(); r * c];
        matmul_into(self.value(a), self.value(b), &mut out, r, k, c);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::MatMul(a, b), ng))
    }

    /// `a[r, k] * b[c, k]^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ((r, k), (c, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            bail!(Shape, "matmul_nt of {}x{} by ({}x{})^T", r, k, c, k2);
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(dot(&av[i * k..(i + 1) * k], &bv[j * k..(j + 1) * k]));
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::MatMulNt(a, b), ng))
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let ((r, c), (br, bc)) = (self.shape(x), self.shape(bias));
        if br != 1 || bc != c {
            bail!(Shape, "bias of shape {}x{} for input {}x{}", br, bc, r, c);
        }
        let b = self.value(bias);
        let out: Vec<T> = self.value(x).chunks_exact(c).flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y)).collect();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(r, c, out, Op::AddBias(x, bias), ng))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, op, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Scale(x, s), ng)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if mask.len() != r * c {
            bail!(Shape, "constant of {} values for {}x{} input", mask.len(), r, c);
        }
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let ng = self.needs(x);
        Ok(self.push(r, c, out, Op::MulConst(x, mask), ng))
    }

    /// Multiplies whole rows by per-row constants.
    pub fn scale_rows(&mut self, x: NodeId, factors: &[T]) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if factors.len() != r {
            bail!(Shape, "{} row factors for {} rows", factors.len(), r);
        }
        let mask = factors.iter().flat_map(|&f| std::iter::repeat_n(f, c)).collect();
        self.mul_const(x, mask)
    }

    /// Inverted dropout; identity when the graph has no dropout stream or
    /// `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            bail!(Config, "dropout probability must lie in [0, 1), got {}", p);
        }
        if p == 0.0 || self.dropout_rng.is_none() {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let rng = self.dropout_rng.as_mut().expect("checked above");
        let keep = T::c(1.0 / (1.0 - p));
        let mask = (0..r * c).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        self.mul_const(x, mask)
    }

    /// Standardizes each row, then applies `gain` and `shift` (both `1 x c`).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if c == 0 {
            bail!(Shape, "layer norm over an empty axis");
        }
        if self.shape(gain) != (1, c) || self.shape(shift) != (1, c) {
            bail!(Shape, "layer norm affine params must be 1x{}", c);
        }
        let n = T::c(c as f64);
        let eps = T::c(eps);
        let (g, b) = (self.value(gain), self.value(shift));
        let mut out = Vec::with_capacity(r * c);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        for row in self.value(x).chunks_exact(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(shift);
        Ok(self.push(r, c, out, Op::LayerNorm { x, gain, shift, xhat, rstd }, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| gelu_parts(v).0).collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Sigmoid(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).chunks_exact(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut total = T::zero();
            for &v in row {
                let e = (v - max).exp();
                total = total + e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v = *v / total;
            }
        }
        let ng = self.needs(x);
        self.push(r, c, out, Op::Softmax(x), ng)
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if start + len > r {
            bail!(Shape, "row slice {}..{} of {} rows", start, start + len, r);
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let ng = self.needs(x);
        Ok(self.push(len, c, out, Op::SliceRows(x, start), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if start + len > c {
            bail!(Shape, "column slice {}..{} of {} columns", start, start + len, c);
        }
        let out = self.value(x).chunks_exact(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let ng = self.needs(x);
        Ok(self.push(r, len, out, Op::SliceCols(x, start), ng))
    }

    /// Stacks nodes with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            bail!(Shape, "concat of zero nodes");
        };
        let c = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != c {
                bail!(Shape, "concat_rows of widths {} and {}", c, pc);
            }
            rows += pr;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Joins nodes with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            bail!(Shape, "concat of zero nodes");
        };
        let r = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != r) {
            bail!(Shape, "concat_cols of heights {} and {}", r, self.shape(bad).0);
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(r, cols, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Mean binary cross-entropy of logits against 0/1 targets, in the fused
    /// `max(z, 0) - z t + ln(1 + e^{-|z|})` form.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[T]) -> Result<NodeId> {
        let (r, c) = self.shape(logits);
        if targets.len() != r * c {
            bail!(Shape, "{} targets for {} logits", targets.len(), r * c);
        }
        if r * c == 0 {
            bail!(Shape, "binary cross-entropy over zero elements");
        }
        if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
            bail!(Data, "binary cross-entropy targets must be 0 or 1");
        }
        let total = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<T>();
        let loss = total / T::c((r * c) as f64);
        let ng = self.needs(logits);
        Ok(self.push(1, 1, vec![loss], Op::Bce { logits, targets: targets.to_vec() }, ng))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).iter().copied().sum();
        let ng = self.needs(x);
        self.push(1, 1, vec![total], Op::Sum(x), ng)
    }

    /// Differentiates the `1 x 1` node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Backward<T>> {
        if self.shape(loss) != (1, 1) {
            bail!(Shape, "backward from a non-scalar node of shape {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = self.params.zero_gradients();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Ok(Backward { params, nodes: grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], params: &mut Gradients<T>) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Input | Op::Variable => {}
            Op::Param(p) => axpy(T::one(), g, &mut params.0[p.0]),
            Op::MatMul(a, b) => {
                let (k, c) = self.shape(*b);
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = grad_buf(grads, *a, rows * k);
                    for i in 0..rows {
                        let gi = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            ga[i * k + p] = ga[i * k + p] + dot(gi, &bv[p * c..(p + 1) * c]);
                        }
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = grad_buf(grads, *b, k * c);
                    for i in 0..rows {
                        let gi = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip != T::zero() {
                                axpy(a_ip, gi, &mut gb[p * c..(p + 1) * c]);
                            }
                        }
                    }
                }
            }
            Op::MatMulNt(a, b) => {
                let k = self.shape(*a).1;
                let c = cols;
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = grad_buf(grads, *a, rows * k);
                    for i in 0..rows {
                        for j in 0..c {
                            axpy(g[i * c + j], &bv[j * k..(j + 1) * k], &mut ga[i * k..(i + 1) * k]);
                        }
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = grad_buf(grads, *b, c * k);
                    for i in 0..rows {
                        for j in 0..c {
                            axpy(g[i * c + j], &av[i * k..(i + 1) * k], &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(*x) {
                    axpy(T::one(), g, grad_buf(grads, *x, rows * cols));
                }
                if self.needs(*bias) {
                    let gb = grad_buf(grads, *bias, cols);
                    for row in g.chunks_exact(cols) {
                        axpy(T::one(), row, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                for &t in [a, b] {
                    if self.needs(t) {
                        axpy(T::one(), g, grad_buf(grads, t, rows * cols));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    axpy(T::one(), g, grad_buf(grads, *a, rows * cols));
                }
                if self.needs(*b) {
                    axpy(-T::one(), g, grad_buf(grads, *b, rows * cols));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = grad_buf(grads, *a, rows * cols);
                    for ((x, &gv), &bv) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + gv * bv;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = grad_buf(grads, *b, rows * cols);
                    for ((x, &gv), &av) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + gv * av;
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.needs(*x) {
                    axpy(*s, g, grad_buf(grads, *x, rows * cols));
                }
            }
            Op::MulConst(x, mask) => {
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, rows * cols);
                    for ((v, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *v = *v + gv * m;
                    }
                }
            }
            Op::LayerNorm { x, gain, shift, xhat, rstd } => {
                let gain_v = self.value(*gain);
                if self.needs(*gain) {
                    let gg = grad_buf(grads, *gain, cols);
                    for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for ((acc, &gv), &h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *acc = *acc + gv * h;
                        }
                    }
                }
                if self.needs(*shift) {
                    let gs = grad_buf(grads, *shift, cols);
                    for grow in g.chunks_exact(cols) {
                        axpy(T::one(), grow, gs);
                    }
                }
                if self.needs(*x) {
                    let n = T::c(cols as f64);
                    let gx = grad_buf(grads, *x, rows * cols);
                    let mut dh = vec![T::zero(); cols];
                    for i in 0..rows {
                        let grow = &g[i * cols..(i + 1) * cols];
                        let hrow = &xhat[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            dh[j] = grow[j] * gain_v[j];
                        }
                        let sum_dh = dh.iter().copied().sum::<T>();
                        let sum_dh_h = dot(&dh, hrow);
                        let scale = rstd[i] / n;
                        for j in 0..cols {
                            let v = &mut gx[i * cols + j];
                            *v = *v + scale * (n * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let gx = grad_buf(grads, *x, rows * cols);
                    for ((v, &gv), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *v = *v + gv * gelu_parts(xi).1;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, rows * cols);
                    for ((v, &gv), &y) in gx.iter_mut().zip(g).zip(&node.value) {
                        *v = *v + gv * y * (T::one() - y);
                    }
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let gx = grad_buf(grads, *x, rows * cols);
                    for i in 0..rows {
                        let y = &node.value[i * cols..(i + 1) * cols];
                        let gi = &g[i * cols..(i + 1) * cols];
                        let inner = dot(gi, y);
                        for j in 0..cols {
                            let v = &mut gx[i * cols + j];
                            *v = *v + y[j] * (gi[j] - inner);
                        }
                    }
                }
            }
            Op::SliceRows(x, start) => {
                if self.needs(*x) {
                    let c = self.shape(*x).1;
                    let n = self.shape(*x).0 * c;
                    axpy(T::one(), g, &mut grad_buf(grads, *x, n)[start * c..(start + rows) * c]);
                }
            }
            Op::SliceCols(x, start) => {
                if self.needs(*x) {
                    let (r, c) = self.shape(*x);
                    let gx = grad_buf(grads, *x, r * c);
                    for i in 0..r {
                        axpy(T::one(), &g[i * cols..(i + 1) * cols], &mut gx[i * c + start..i * c + start + cols]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value_len(p);
                    if self.needs(p) {
                        axpy(T::one(), &g[offset..offset + n], grad_buf(grads, p, n));
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.needs(p) {
                        let gp = grad_buf(grads, p, pr * pc);
                        for i in 0..pr {
                            axpy(T::one(), &g[i * cols + col..i * cols + col + pc], &mut gp[i * pc..(i + 1) * pc]);
                        }
                    }
                    col += pc;
                }
            }
            Op::Bce { logits, targets } => {
                if self.needs(*logits) {
                    let zs = self.value(*logits);
                    let n = T::c(zs.len() as f64);
                    let gz = grad_buf(grads, *logits, zs.len());
                    for ((v, &z), &t) in gz.iter_mut().zip(zs).zip(targets) {
                        *v = *v + g[0] * (sigmoid(z) - t) / n;
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let n = self.value_len(*x);
                    for v in grad_buf(grads, *x, n).iter_mut() {
                        *v = *v + g[0];
                    }
                }
            }
        }
    }

    fn value_len(&self, id: NodeId) -> usize {
        let (r, c) = self.shape(id);
        r * c
    }

    /// Fails with a numerical error if any recorded value is NaN or infinite.
    pub fn check_finite(&self, id: NodeId) -> Result<()> {
        if self.value(id).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical(format!("non-finite value in node {}", id.0)))
        }
    }
}

fn grad_buf<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Variable => "variable",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MulConst(..) => "mul_const",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu(_) => "gelu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softmax(_) => "softmax",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::Bce { .. } => "bce",
        Op::Sum(_) => "sum",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> ParameterSet<f64> {
        ParameterSet::from_named(vec![]).unwrap()
    }

    #[test]
    fn identity_weight_and_zero_input() {
        let p = ParameterSet::from_named(vec![
            ("b".into(), [1, 2], vec![0.5, -1.0]),
            ("w".into(), [2, 2], vec![1.0, 0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let mut g = Graph::new(&p);
        let x = g.input(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = g.param(p.id("w").unwrap());
        let y = g.matmul(x, w).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let z = g.input(2, 2, vec![0.0; 4]).unwrap();
        let zw = g.matmul(z, w).unwrap();
        let b = g.param(p.id("b").unwrap());
        let out = g.add_bias(zw, b).unwrap();
        assert_eq!(g.value(out), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn layer_norm_cases() {
        let p = ParameterSet::from_named(vec![("g".into(), [1, 2], vec![1.0, 1.0]), ("s".into(), [1, 2], vec![0.25, -3.0])]).unwrap();
        let mut g = Graph::new(&p);
        let gain = g.param(p.id("g").unwrap());
        let shift = g.param(p.id("s").unwrap());
        let x = g.input(2, 2, vec![7.0, 7.0, 1.0, -1.0]).unwrap();
        let y = g.layer_norm(x, gain, shift, 1e-5).unwrap();
        let v = g.value(y);
        assert_eq!(&v[..2], &[0.25, -3.0]);
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((v[2] - (expect + 0.25)).abs() < 1e-12);
        assert!((v[3] - (-expect - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn activations_at_zero() {
        let p = empty();
        let mut g = Graph::new(&p);
        let x = g.input(1, 1, vec![0.0]).unwrap();
        let a = g.gelu(x);
        let s = g.sigmoid(x);
        assert_eq!(g.scalar(a), 0.0);
        assert_eq!(g.scalar(s), 0.5);
    }

    #[test]
    fn dropout_behaviour() {
        let p = empty();
        let mut g = Graph::<f64>::with_dropout(&p, 3);
        let x = g.input(1, 1000, vec![1.0; 1000]).unwrap();
        assert_eq!(g.dropout(x, 0.0).unwrap(), x);
        let d = g.dropout(x, 0.5).unwrap();
        let v = g.value(d);
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        let kept = v.iter().filter(|&&e| e > 0.0).count();
        assert!((400..600).contains(&kept), "{}", kept);
        assert!(matches!(g.dropout(x, 1.0), Err(Error::Config(_))));
        assert!(matches!(g.dropout(x, -0.1), Err(Error::Config(_))));
        let mut eval = Graph::new(&p);
        let x = eval.input(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(eval.dropout(x, 0.5).unwrap(), x);
    }

    #[test]
    fn bce_reference_values() {
        let p = empty();
        let mut g = Graph::new(&p);
        let z = g.input(1, 1, vec![0.0]).unwrap();
        let l = g.bce_with_logits(z, &[1.0]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        let z = g.input(1, 1, vec![20.0]).unwrap();
        let l = g.bce_with_logits(z, &[1.0]).unwrap();
        assert!((g.scalar(l) - 2.061153618190204e-9).abs() < 1e-15);
        let z = g.input(1, 2, vec![800.0, -800.0]).unwrap();
        let l = g.bce_with_logits(z, &[0.0, 1.0]).unwrap();
        assert_eq!(g.scalar(l), 800.0);
        assert!(matches!(g.bce_with_logits(z, &[0.0, 0.5]), Err(Error::Data(_))));
        assert!(matches!(g.bce_with_logits(z, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_matches_naive_form() {
        let p = empty();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let z: Vec<f64> = (0..16).map(|_| rng.random_range(-8.0..8.0)).collect();
            let t: Vec<f64> = (0..16).map(|_| rng.random_range(0..2) as f64).collect();
            let naive = z
                .iter()
                .zip(&t)
                .map(|(&z, &t)| {
                    let s = 1.0 / (1.0 + (-z).exp());
                    -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
                })
                .sum::<f64>()
                / 16.0;
            let mut g = Graph::new(&p);
            let zn = g.input(4, 4, z).unwrap();
            let l = g.bce_with_logits(zn, &t).unwrap();
            assert!((g.scalar(l) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = empty();
        let mut g = Graph::new(&p);
        let x = g.input(2, 3, vec![1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]).unwrap();
        let s = g.softmax_rows(x);
        for row in g.value(s).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let p = empty();
        let mut g = Graph::new(&p);
        let a = g.input(2, 3, vec![0.0; 6]).unwrap();
        let b = g.input(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        assert!(g.matmul_nt(a, b).is_ok());
        assert!(matches!(g.slice_rows(a, 1, 2), Err(Error::Shape(_))));
        assert!(matches!(g.input(2, 2, vec![0.0]), Err(Error::Shape(_))));
        assert!(matches!(g.backward(a), Err(Error::Shape(_))));
    }
}
