use super::kernels::{self, dot, mm_acc, mm_nt_acc, mm_tn_acc, sigmoid};
use super::{dim_err, Result, Tensor, TensorError};

/// Lower bound applied to the argument of [`Graph::log`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used as a negative control for
/// gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    SigmoidBackward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Abs(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    AddRow { x: Var, bias: Var },
    MulRows { x: Var, s: Var },
    Reduce { x: Var, kind: ReduceKind, axis: Option<usize>, argmax: Vec<usize> },
    Softmax { x: Var, axis: usize },
    Reshape(Var),
    Narrow { x: Var, start: usize, len: usize },
    Concat(Vec<Var>),
    StackRows { parts: Vec<Var>, start: usize, len: usize },
    Row { x: Var, index: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    LstmCell { gx: Var, row: usize, state: Var, u: Var, saved: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic tape. Nodes are appended in execution order, so every node's
/// inputs precede it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<Fault>,
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn take_grad<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph whose backward pass deliberately miscomputes one rule.
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for `a[m×k]`, `b[n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(dim_err("matmul_nt", format!("{sa:?} x {sb:?}^T")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        mm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul_nt", Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dim_err("transpose", format!("rank {}", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", Tensor::from_parts(vec![c, r], out), Op::Transpose(a), &[a])
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(ta.shape().to_vec(), data)
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            Tensor::from_parts(tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(dim_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        };
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(name, value, op, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// Natural log of `max(x, LOG_CLAMP)`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.max(LOG_CLAMP).ln(), Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    /// Adds `bias[d]` to every row of `x[…×d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tb.numel();
        if tb.rank() != 1 || tx.rank() == 0 || tx.cols() != d {
            return Err(dim_err("add_row", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("add_row", value, Op::AddRow { x, bias }, &[x, bias])
    }

    /// Scales row `t` of `x[N×d]` by `s[t]`.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if tx.rank() != 2 || ts.rank() != 1 || tx.shape()[0] != ts.numel() {
            return Err(dim_err("mul_rows", format!("{:?} * {:?}", tx.shape(), ts.shape())));
        }
        let d = tx.shape()[1];
        let mut data = tx.data().to_vec();
        if d > 0 {
            for (row, &w) in data.chunks_mut(d).zip(ts.data()) {
                row.iter_mut().for_each(|v| *v *= w);
            }
        }
        let value = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("mul_rows", value, Op::MulRows { x, s }, &[x, s])
    }

    // ---- reductions ----

    fn reduce(&mut self, x: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let t = self.value(x);
        let name = match kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
        };
        let (outer, len, inner, out_shape) = match axis {
            None => (1, t.numel(), 1, vec![]),
            Some(ax) => {
                if ax >= t.rank() {
                    return Err(TensorError::Axis { axis: ax, rank: t.rank() });
                }
                let (o, l, i) = axis_split(t.shape(), ax);
                let mut s = t.shape().to_vec();
                s.remove(ax);
                (o, l, i, s)
            }
        };
        if len == 0 && kind != ReduceKind::Sum {
            return Err(dim_err(name, "empty reduction"));
        }
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| src[(o * len + l) * inner + i];
                out[o * inner + i] = match kind {
                    ReduceKind::Sum => (0..len).map(at).sum(),
                    ReduceKind::Mean => (0..len).map(at).sum::<f64>() / len as f64,
                    ReduceKind::Max => {
                        let mut best = 0;
                        for l in 1..len {
                            if at(l) > at(best) {
                                best = l;
                            }
                        }
                        argmax.push((o * len + best) * inner + i);
                        at(best)
                    }
                };
            }
        }
        let value = Tensor::from_parts(out_shape, out);
        self.push(name, value, Op::Reduce { x, kind, axis, argmax }, &[x])
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, ReduceKind::Sum, axis)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, ReduceKind::Mean, axis)
    }

    /// Maximum; the gradient is routed to the first maximal element.
    pub fn max(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, ReduceKind::Max, axis)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(TensorError::Axis { axis, rank: t.rank() });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        if len == 0 {
            return Err(dim_err("softmax", "empty axis"));
        }
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| src[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (src[idx(l)] - m).exp();
                    out[idx(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[idx(l)] /= z;
                }
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    // ---- structural ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 || start + len > t.cols() {
            return Err(dim_err("narrow", format!("{:?}[{start}..{}]", t.shape(), start + len)));
        }
        let c = t.cols();
        let rows = t.numel() / c.max(1);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.data()[r * c + start..r * c + start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push("narrow", Tensor::from_parts(shape, out), Op::Narrow { x, start, len }, &[x])
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err("concat", "no inputs"))?;
        let lead = {
            let s = self.shape(*first);
            if s.is_empty() {
                return Err(dim_err("concat", "scalar input"));
            }
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(dim_err("concat", format!("{s:?} vs leading {lead:?}")));
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push("concat", Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()), parts)
    }

    /// Builds `[parts.len() × len]` from the flat slice `[start, start+len)` of each part.
    pub fn stack_rows(&mut self, parts: &[Var], start: usize, len: usize) -> Result<Var> {
        let mut out = Vec::with_capacity(parts.len() * len);
        for p in parts {
            let t = self.value(*p);
            if start + len > t.numel() {
                return Err(dim_err("stack_rows", format!("{:?}[{start}..{}]", t.shape(), start + len)));
            }
            out.extend_from_slice(&t.data()[start..start + len]);
        }
        let value = Tensor::from_parts(vec![parts.len(), len], out);
        let op = Op::StackRows { parts: parts.to_vec(), start, len };
        self.push("stack_rows", value, op, parts)
    }

    /// Row `index` of a matrix as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || index >= t.shape()[0] {
            return Err(dim_err("row", format!("{:?}[{index}]", t.shape())));
        }
        let value = Tensor::from_parts(vec![t.cols()], t.row(index).to_vec());
        self.push("row", value, Op::Row { x, index }, &[x])
    }

    /// Normalizes each row of `x[…×d]` to zero mean, unit variance, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() == 0 {
            return Err(dim_err("layer_norm", "scalar input"));
        }
        let d = tx.cols();
        if tg.shape() != [d] || tb.shape() != [d] || d == 0 {
            return Err(dim_err("layer_norm", format!("{:?} with gain {:?}", tx.shape(), tg.shape())));
        }
        let rows = tx.numel() / d;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::from_parts(tx.shape().to_vec(), out);
        let op = Op::LayerNorm { x, gamma, beta, xhat, inv_std };
        self.push("layer_norm", value, op, &[x, gamma, beta])
    }

    /// One LSTM step. `gx` holds precomputed input projections `x·Wᵀ + b` (one
    /// `4H` row per time step, gate order i, f, o, g); `state` is `[h, c]` of
    /// length `2H`; `u` is the `[4H×H]` recurrent weight. Returns `[h_t, c_t]`.
    pub fn lstm_cell(&mut self, gx: Var, row: usize, state: Var, u: Var) -> Result<Var> {
        let (tg, ts, tu) = (self.value(gx), self.value(state), self.value(u));
        if tu.rank() != 2 || tu.shape()[0] != 4 * tu.shape()[1] {
            return Err(dim_err("lstm_cell", format!("recurrent weight {:?}", tu.shape())));
        }
        let h = tu.shape()[1];
        let gx_ok = match tg.rank() {
            1 => tg.numel() == 4 * h && row == 0,
            2 => tg.shape()[1] == 4 * h && row < tg.shape()[0],
            _ => false,
        };
        if !gx_ok || ts.shape() != [2 * h] {
            return Err(dim_err(
                "lstm_cell",
                format!("gx {:?} row {row}, state {:?}, H={h}", tg.shape(), ts.shape()),
            ));
        }
        let gxr = &tg.data()[row * 4 * h..(row + 1) * 4 * h];
        let (h_prev, c_prev) = ts.data().split_at(h);
        let ud = tu.data();
        let mut saved = vec![0.0; 5 * h];
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let z = |gate: usize| {
                let r = gate * h + j;
                gxr[r] + dot(&ud[r * h..(r + 1) * h], h_prev)
            };
            let i = sigmoid(z(0));
            let f = sigmoid(z(1));
            let o = sigmoid(z(2));
            let g = z(3).tanh();
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            saved[j] = i;
            saved[h + j] = f;
            saved[2 * h + j] = o;
            saved[3 * h + j] = g;
            saved[4 * h + j] = tc;
            out[j] = o * tc;
            out[h + j] = c;
        }
        let value = Tensor::from_parts(vec![2 * h], out);
        let op = Op::LstmCell { gx, row, state, u, saved };
        self.push("lstm_cell", value, op, &[gx, state, u])
    }

    // ---- backward ----

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        tmp[loss.0] = Some(vec![1.0]);
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = tmp[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let slot = self.grads[idx].get_or_insert_with(|| vec![0.0; g.len()]);
                slot.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            } else {
                self.backprop(idx, &g, &mut tmp);
            }
        }
        Ok(())
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = take_grad(grads, nodes, *a) {
                    mm_nt_acc(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = take_grad(grads, nodes, *b) {
                    mm_tn_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if let Some(ga) = take_grad(grads, nodes, *a) {
                    mm_acc(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = take_grad(grads, nodes, *b) {
                    mm_tn_acc(g, ta.data(), gb, m, n, k);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = take_grad(grads, nodes, *a) {
                    let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let op = &nodes[idx].op;
                let (ta, tb) = (val(*a), val(*b));
                let n = g.len();
                let at = |t: &Tensor, i: usize| if t.numel() == n { t.data()[i] } else { t.data()[0] };
                let da = |i: usize| match op {
                    Op::Mul(..) => g[i] * at(tb, i),
                    _ => g[i],
                };
                let db = |i: usize| match op {
                    Op::Mul(..) => g[i] * at(ta, i),
                    Op::Sub(..) => -g[i],
                    _ => g[i],
                };
                if let Some(ga) = take_grad(grads, nodes, *a) {
                    if ga.len() == n {
                        (0..n).for_each(|i| ga[i] += da(i));
                    } else {
                        ga[0] += (0..n).map(da).sum::<f64>();
                    }
                }
                if let Some(gb) = take_grad(grads, nodes, *b) {
                    if gb.len() == n {
                        (0..n).for_each(|i| gb[i] += db(i));
                    } else {
                        gb[0] += (0..n).map(db).sum::<f64>();
                    }
                }
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Clamp { x: a, .. } => {
                let op = &nodes[idx].op;
                let x = val(*a).data();
                let y = out.data();
                let sig_factor = if self.fault == Some(Fault::SigmoidBackward) { 1.1 } else { 1.0 };
                if let Some(ga) = take_grad(grads, nodes, *a) {
                    for i in 0..g.len() {
                        let local = match op {
                            Op::Neg(_) => -1.0,
                            Op::Scale(_, c) => *c,
                            Op::Sigmoid(_) => y[i] * (1.0 - y[i]) * sig_factor,
                            Op::Tanh(_) => 1.0 - y[i] * y[i],
                            Op::Exp(_) => y[i],
                            Op::Log(_) => {
                                if x[i] > LOG_CLAMP {
                                    1.0 / x[i]
                                } else {
                                    0.0
                                }
                            }
                            Op::Relu(_) => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Op::Abs(_) => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Op::Clamp { lo, hi, .. } => {
                                if x[i] >= *lo && x[i] <= *hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            _ => unreachable!(),
                        };
                        ga[i] += g[i] * local;
                    }
                }
            }
            Op::AddRow { x, bias } => {
                let d = val(*bias).numel();
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = take_grad(grads, nodes, *bias) {
                    if d > 0 {
                        for row in g.chunks(d) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::MulRows { x, s } => {
                let (tx, ts) = (val(*x), val(*s));
                let d = tx.shape()[1];
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    for (t, &w) in ts.data().iter().enumerate() {
                        for j in 0..d {
                            gx[t * d + j] += g[t * d + j] * w;
                        }
                    }
                }
                if let Some(gs) = take_grad(grads, nodes, *s) {
                    for t in 0..ts.numel() {
                        gs[t] += dot(&g[t * d..(t + 1) * d], tx.row(t));
                    }
                }
            }
            Op::Reduce { x, kind, axis, argmax } => {
                let tx = val(*x);
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    let (outer, len, inner) = match axis {
                        None => (1, tx.numel(), 1),
                        Some(ax) => axis_split(tx.shape(), *ax),
                    };
                    match kind {
                        ReduceKind::Max => {
                            for (slot, &pos) in argmax.iter().enumerate() {
                                gx[pos] += g[slot];
                            }
                        }
                        ReduceKind::Sum | ReduceKind::Mean => {
                            let f = if *kind == ReduceKind::Mean { 1.0 / len as f64 } else { 1.0 };
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        gx[(o * len + l) * inner + i] += g[o * inner + i] * f;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    let (outer, len, inner) = axis_split(out.shape(), *axis);
                    let y = out.data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let s: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] += y[idx(l)] * (g[idx(l)] - s);
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Narrow { x, start, len } => {
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    let c = val(*x).cols();
                    let rows = if *len == 0 { 0 } else { g.len() / len };
                    for r in 0..rows {
                        for j in 0..*len {
                            gx[r * c + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.numel().checked_div(total).unwrap_or(0);
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if let Some(gp) = take_grad(grads, nodes, *p) {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::StackRows { parts, start, len } => {
                for (r, p) in parts.iter().enumerate() {
                    if let Some(gp) = take_grad(grads, nodes, *p) {
                        for j in 0..*len {
                            gp[start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::Row { x, index } => {
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    let c = g.len();
                    gx[index * c..(index + 1) * c].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = val(*gamma).numel();
                let gam = val(*gamma).data();
                if let Some(gg) = take_grad(grads, nodes, *gamma) {
                    for (r, row) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] += row[j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = take_grad(grads, nodes, *beta) {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(gx) = take_grad(grads, nodes, *x) {
                    let df = d as f64;
                    for (r, row) in g.chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = (0..d).map(|j| row[j] * gam[j]).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] += inv_std[r] / df * (df * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::LstmCell { gx, row, state, u, saved } => {
                let tu = val(*u);
                let h = tu.shape()[1];
                let (h_prev, c_prev) = val(*state).data().split_at(h);
                let (dh, dc) = g.split_at(h);
                let (si, rest) = saved.split_at(h);
                let (sf, rest) = rest.split_at(h);
                let (so, rest) = rest.split_at(h);
                let (sg, stc) = rest.split_at(h);
                let mut dz = vec![0.0; 4 * h];
                let mut dc_prev = vec![0.0; h];
                for j in 0..h {
                    let dct = dc[j] + dh[j] * so[j] * (1.0 - stc[j] * stc[j]);
                    dz[j] = dct * sg[j] * si[j] * (1.0 - si[j]);
                    dz[h + j] = dct * c_prev[j] * sf[j] * (1.0 - sf[j]);
                    dz[2 * h + j] = dh[j] * stc[j] * so[j] * (1.0 - so[j]);
                    dz[3 * h + j] = dct * si[j] * (1.0 - sg[j] * sg[j]);
                    dc_prev[j] = dct * sf[j];
                }
                if let Some(ggx) = take_grad(grads, nodes, *gx) {
                    let dst = &mut ggx[row * 4 * h..(row + 1) * 4 * h];
                    dst.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                }
                if let Some(gs) = take_grad(grads, nodes, *state) {
                    // dh_prev = Uᵀ·dz
                    let (gh, gc) = gs.split_at_mut(h);
                    mm_acc(&dz, tu.data(), gh, 1, 4 * h, h);
                    gc.iter_mut().zip(&dc_prev).for_each(|(a, b)| *a += b);
                }
                if let Some(gu) = take_grad(grads, nodes, *u) {
                    for (r, &d) in dz.iter().enumerate() {
                        if d != 0.0 {
                            kernels::axpy(d, h_prev, &mut gu[r * h..(r + 1) * h]);
                        }
                    }
                }
            }
        }
    }
}
