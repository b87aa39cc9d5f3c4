//! The backward tape: op recording and reverse-mode gradient accumulation.

use super::{Element, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a tensor recorded on a tape. Only valid for the tape that
/// produced it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddBias { x: Var, bias: Var },
    Gelu { x: Var },
    Softmax { x: Var, axis: usize },
    CausalSoftmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Embedding { table: Var, ids: Vec<u32> },
    GatherRows { x: Var, idxs: Vec<usize> },
    ConcatRows { xs: Vec<Var> },
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols { xs: Vec<Var> },
    CrossEntropy { logits: Var, targets: Vec<u32> },
    SumAll { x: Var },
    Dropout { x: Var, mask: Vec<bool>, keep_scale: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::MatMulNT { .. } => "matmul_nt",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddBias { .. } => "add_bias",
            Op::Gelu { .. } => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::CausalSoftmax { .. } => "causal_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols { .. } => "concat_cols",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumAll { .. } => "sum_all",
            Op::Dropout { .. } => "dropout",
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op,
    requires_grad: bool,
}

/// Records one training step's forward graph. Dropped after `backward`.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), check_finite: true }
    }

    /// Disables the per-op NaN/Inf scan (used by benchmarks).
    pub fn without_finite_checks(mut self) -> Self {
        self.check_finite = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked input: receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, zeros if backward never reached it.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(op.name().into()));
        }
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, requires))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    /// `a[m,k] · b[k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.nodes[a.0].value.dims2()?;
        let (kb, n) = self.nodes[b.0].value.dims2()?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); m * n];
        mm(&mut out, self.data(a), self.data(b), m, ka, n);
        self.push_op(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, &[a, b])
    }

    /// `a[m,k] · b[n,k]ᵀ -> [m,n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.nodes[a.0].value.dims2()?;
        let (n, kb) = self.nodes[b.0].value.dims2()?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul_nt inner dims disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nt(&mut out, self.data(a), self.data(b), m, ka, n);
        self.push_op(Tensor::new(vec![m, n], out)?, Op::MatMulNT { a, b }, &[a, b])
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<T> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(Tensor::new(shape, data)?, Op::Add { a, b }, &[a, b])
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul shapes disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<T> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(Tensor::new(shape, data)?, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let cc = T::from_f64(c);
        let out = self.nodes[x.0].value.map(|v| v * cc);
        self.push_op(out, Op::Scale { x, c }, &[x])
    }

    /// Adds `bias[d]` to every row of `x[.., d]` (the only broadcast form).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().expect("nonempty shape");
        if self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let bias_data = self.data(bias).to_vec();
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            for (v, &b) in row.iter_mut().zip(&bias_data) {
                *v += b;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push_op(Tensor::new(shape, data)?, Op::AddBias { x, bias }, &[x, bias])
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].value.map(gelu_fwd);
        self.push_op(out, Op::Gelu { x }, &[x])
    }

    /// Normalized exponential along `axis`, stabilized by max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (pre, n, post) = lane_dims(&shape, axis);
        let mut data = self.data(x).to_vec();
        for i in 0..pre {
            for j in 0..post {
                let idx = |k: usize| (i * n + k) * post + j;
                let mut mx = data[idx(0)];
                for k in 1..n {
                    if data[idx(k)] > mx {
                        mx = data[idx(k)];
                    }
                }
                let mut sum = T::zero();
                for k in 0..n {
                    let e = (data[idx(k)] - mx).exp();
                    data[idx(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    data[idx(k)] /= sum;
                }
            }
        }
        self.push_op(Tensor::new(shape, data)?, Op::Softmax { x, axis }, &[x])
    }

    /// Row-wise softmax of a square score matrix where row `k` is normalized
    /// over columns `0..=k` only; later columns are exactly zero. This is the
    /// causal attention mask fused into the softmax.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.nodes[x.0].value.dims2()?;
        if r != c {
            return Err(Error::Shape(format!("causal_softmax wants square scores, got {r}x{c}")));
        }
        let src = self.data(x);
        let mut data = vec![T::zero(); r * c];
        for k in 0..r {
            let row = &src[k * c..k * c + k + 1];
            let mx = row.iter().cloned().fold(row[0], T::max);
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                data[k * c + j] = e;
                sum += e;
            }
            for j in 0..=k {
                data[k * c + j] /= sum;
            }
        }
        self.push_op(Tensor::new(vec![r, c], data)?, Op::CausalSoftmax { x }, &[x])
    }

    /// Per-row layer normalization of `x[r,d]` with learned `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (_, d) = self.nodes[x.0].value.dims2()?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm gamma/beta must be [{d}], got {:?}/{:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let g = self.data(gamma).to_vec();
        let b = self.data(beta).to_vec();
        let epst = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            let mean = row.iter().cloned().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = (var + epst).sqrt().recip();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push_op(
            Tensor::new(shape, data)?,
            Op::LayerNorm { x, gamma, beta, eps },
            &[x, gamma, beta],
        )
    }

    /// Row lookup: `out[i,:] = table[ids[i],:]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = self.nodes[table.0].value.dims2()?;
        if ids.is_empty() {
            return Err(Error::Shape("embedding of empty id sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::Index(format!("token id {bad} outside table of {v} rows")));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&src[id as usize * d..(id as usize + 1) * d]);
        }
        self.push_op(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding { table, ids: ids.to_vec() },
            &[table],
        )
    }

    /// Picks rows of `x` by index (duplicates allowed).
    pub fn gather_rows(&mut self, x: Var, idxs: &[usize]) -> Result<Var> {
        let (r, c) = self.nodes[x.0].value.dims2()?;
        if idxs.is_empty() {
            return Err(Error::Shape("gather_rows of empty index list".into()));
        }
        if let Some(&bad) = idxs.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} outside {r} rows")));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(idxs.len() * c);
        for &i in idxs {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push_op(
            Tensor::new(vec![idxs.len(), c], data)?,
            Op::GatherRows { x, idxs: idxs.to_vec() },
            &[x],
        )
    }

    /// Stacks 2-d tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat_rows of nothing".into()));
        }
        let (_, c) = self.nodes[xs[0].0].value.dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            let (r, cv) = self.nodes[v.0].value.dims2()?;
            if cv != c {
                return Err(Error::Shape(format!("concat_rows column mismatch: {cv} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.data(v));
        }
        self.push_op(
            Tensor::new(vec![rows, c], data)?,
            Op::ConcatRows { xs: xs.to_vec() },
            xs,
        )
    }

    /// Column slice `x[:, start..start+len]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.nodes[x.0].value.dims2()?;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} outside {c} columns",
                start + len
            )));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push_op(
            Tensor::new(vec![r, len], data)?,
            Op::SliceCols { x, start, len },
            &[x],
        )
    }

    /// Concatenates 2-d tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat_cols of nothing".into()));
        }
        let (r, _) = self.nodes[xs[0].0].value.dims2()?;
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let (rv, cv) = self.nodes[v.0].value.dims2()?;
                if rv != r {
                    return Err(Error::Shape(format!("concat_cols row mismatch: {rv} vs {r}")));
                }
                Ok(cv)
            })
            .collect::<Result<_>>()?;
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); r * total];
        let mut off = 0;
        for (&v, &w) in xs.iter().zip(&widths) {
            let src = self.data(v);
            for i in 0..r {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push_op(
            Tensor::new(vec![r, total], data)?,
            Op::ConcatCols { xs: xs.to_vec() },
            xs,
        )
    }

    /// Mean of `-log softmax(logits)[i, targets[i]]` over rows. Scalar output.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let (n, c) = self.nodes[logits.0].value.dims2()?;
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{n} logit rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= c) {
            return Err(Error::Index(format!("target class {bad} outside [0,{c})")));
        }
        let src = self.data(logits);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            total += -log_softmax_at(row, t as usize);
        }
        let loss = total / T::from_f64(n as f64);
        self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            &[logits],
        )
    }

    /// Sum of all elements. Scalar output.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().cloned().sum::<T>();
        self.push_op(Tensor::scalar(s), Op::SumAll { x }, &[x])
    }

    /// Inverted dropout: keeps each element with probability `1-rate` and
    /// scales survivors by `1/(1-rate)`. `rate == 0` is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let scale = T::from_f64(keep_scale);
        let mask: Vec<bool> = (0..self.data(x).len()).map(|_| rng.gen::<f64>() >= rate).collect();
        let data: Vec<T> = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push_op(
            Tensor::new(shape, data)?,
            Op::Dropout { x, mask, keep_scale },
            &[x],
        )
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Seeds `d root = 1` and accumulates `d root / d leaf` into every
    /// tracked node, visiting nodes once in reverse recording order.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.ensure_grad(root);
        self.nodes[root.0].grad.as_mut().expect("seeded")[0] = T::one();

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.step_backward(i);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, v: Var) {
        let node = &mut self.nodes[v.0];
        if node.grad.is_none() {
            node.grad = Some(vec![T::zero(); node.value.numel()]);
        }
    }

    fn wants_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Takes the output gradient of node `i` and adds each input's share.
    fn step_backward(&mut self, i: usize) {
        let gout = self.nodes[i].grad.take().expect("checked");
        // Put it back; `gout` is borrowed by value to appease the borrow
        // checker while we mutate input grads.
        self.nodes[i].grad = Some(gout.clone());

        macro_rules! acc {
            ($v:expr, $body:expr) => {
                if self.wants_grad($v) {
                    self.ensure_grad($v);
                    let mut g = self.nodes[$v.0].grad.take().expect("allocated");
                    #[allow(clippy::redundant_closure_call)]
                    ($body)(&mut g);
                    self.nodes[$v.0].grad = Some(g);
                }
            };
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b } => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("checked");
                let n = self.nodes[b.0].value.shape()[1];
                let bv = self.nodes[b.0].value.data().to_vec();
                let av = self.nodes[a.0].value.data().to_vec();
                acc!(a, |g: &mut Vec<T>| mm_nt(g, &gout, &bv, m, n, k));
                acc!(b, |g: &mut Vec<T>| mm_tn(g, &av, &gout, k, m, n));
            }
            &Op::MatMulNT { a, b } => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("checked");
                let n = self.nodes[b.0].value.shape()[0];
                let bv = self.nodes[b.0].value.data().to_vec();
                let av = self.nodes[a.0].value.data().to_vec();
                acc!(a, |g: &mut Vec<T>| mm(g, &gout, &bv, m, n, k));
                acc!(b, |g: &mut Vec<T>| mm_tn(g, &gout, &av, n, m, k));
            }
            &Op::Add { a, b } => {
                acc!(a, |g: &mut Vec<T>| axpy(g, T::one(), &gout));
                acc!(b, |g: &mut Vec<T>| axpy(g, T::one(), &gout));
            }
            &Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                acc!(a, |g: &mut Vec<T>| hadamard_acc(g, &gout, &bv));
                acc!(b, |g: &mut Vec<T>| hadamard_acc(g, &gout, &av));
            }
            &Op::Scale { x, c } => {
                acc!(x, |g: &mut Vec<T>| axpy(g, T::from_f64(c), &gout));
            }
            &Op::AddBias { x, bias } => {
                let d = self.nodes[bias.0].value.numel();
                acc!(x, |g: &mut Vec<T>| axpy(g, T::one(), &gout));
                acc!(bias, |g: &mut Vec<T>| {
                    for row in gout.chunks(d) {
                        for (gb, &gr) in g.iter_mut().zip(row) {
                            *gb += gr;
                        }
                    }
                });
            }
            &Op::Gelu { x } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                acc!(x, |g: &mut Vec<T>| {
                    for ((gx, &go), &v) in g.iter_mut().zip(&gout).zip(&xv) {
                        *gx += go * gelu_bwd(v);
                    }
                });
            }
            &Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data().to_vec();
                let (pre, n, post) = lane_dims(self.nodes[i].value.shape(), axis);
                acc!(x, |g: &mut Vec<T>| {
                    for a in 0..pre {
                        for b in 0..post {
                            let idx = |k: usize| (a * n + k) * post + b;
                            let mut dot = T::zero();
                            for k in 0..n {
                                dot += gout[idx(k)] * y[idx(k)];
                            }
                            for k in 0..n {
                                g[idx(k)] += y[idx(k)] * (gout[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            &Op::CausalSoftmax { x } => {
                let y = self.nodes[i].value.data().to_vec();
                let n = self.nodes[i].value.shape()[0];
                acc!(x, |g: &mut Vec<T>| {
                    for k in 0..n {
                        let row = k * n;
                        let mut dot = T::zero();
                        for j in 0..=k {
                            dot += gout[row + j] * y[row + j];
                        }
                        for j in 0..=k {
                            g[row + j] += y[row + j] * (gout[row + j] - dot);
                        }
                    }
                });
            }
            &Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let gv = self.nodes[gamma.0].value.data().to_vec();
                let d = gv.len();
                let rows = xv.len() / d;
                let dn = T::from_f64(d as f64);
                let epst = T::from_f64(eps);
                // Per-row normalized activations and inverse sigma, recomputed
                // from the stored input.
                let mut xhat = vec![T::zero(); xv.len()];
                let mut inv = vec![T::zero(); rows];
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let mean = row.iter().cloned().sum::<T>() / dn;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                    inv[r] = (var + epst).sqrt().recip();
                    for j in 0..d {
                        xhat[r * d + j] = (row[j] - mean) * inv[r];
                    }
                }
                acc!(gamma, |g: &mut Vec<T>| {
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gout[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc!(beta, |g: &mut Vec<T>| {
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gout[r * d + j];
                        }
                    }
                });
                acc!(x, |g: &mut Vec<T>| {
                    for r in 0..rows {
                        let mut mean_dyg = T::zero();
                        let mut mean_dyg_xhat = T::zero();
                        for j in 0..d {
                            let dyg = gout[r * d + j] * gv[j];
                            mean_dyg += dyg;
                            mean_dyg_xhat += dyg * xhat[r * d + j];
                        }
                        mean_dyg /= dn;
                        mean_dyg_xhat /= dn;
                        for j in 0..d {
                            let dyg = gout[r * d + j] * gv[j];
                            g[r * d + j] +=
                                inv[r] * (dyg - mean_dyg - xhat[r * d + j] * mean_dyg_xhat);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let d = self.nodes[table.0].value.shape()[1];
                acc!(table, |g: &mut Vec<T>| {
                    for (row, &id) in ids.iter().enumerate() {
                        let dst = id as usize * d;
                        for j in 0..d {
                            g[dst + j] += gout[row * d + j];
                        }
                    }
                });
            }
            Op::GatherRows { x, idxs } => {
                let x = *x;
                let idxs = idxs.clone();
                let c = self.nodes[i].value.shape()[1];
                acc!(x, |g: &mut Vec<T>| {
                    for (row, &src) in idxs.iter().enumerate() {
                        for j in 0..c {
                            g[src * c + j] += gout[row * c + j];
                        }
                    }
                });
            }
            Op::ConcatRows { xs } => {
                let xs = xs.clone();
                let mut offset = 0;
                for v in xs {
                    let len = self.nodes[v.0].value.numel();
                    acc!(v, |g: &mut Vec<T>| {
                        for j in 0..len {
                            g[j] += gout[offset + j];
                        }
                    });
                    offset += len;
                }
            }
            &Op::SliceCols { x, start, len } => {
                let c = self.nodes[x.0].value.shape()[1];
                let rows = self.nodes[i].value.shape()[0];
                acc!(x, |g: &mut Vec<T>| {
                    for r in 0..rows {
                        for j in 0..len {
                            g[r * c + start + j] += gout[r * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols { xs } => {
                let xs = xs.clone();
                let total = self.nodes[i].value.shape()[1];
                let rows = self.nodes[i].value.shape()[0];
                let mut offset = 0;
                for v in xs {
                    let w = self.nodes[v.0].value.shape()[1];
                    acc!(v, |g: &mut Vec<T>| {
                        for r in 0..rows {
                            for j in 0..w {
                                g[r * w + j] += gout[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let logits = *logits;
                let targets = targets.clone();
                let (n, c) = self.nodes[logits.0].value.dims2().expect("checked");
                let src = self.nodes[logits.0].value.data().to_vec();
                let scale = gout[0] / T::from_f64(n as f64);
                acc!(logits, |g: &mut Vec<T>| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &src[r * c..(r + 1) * c];
                        let mx = row.iter().cloned().fold(row[0], T::max);
                        let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / sum;
                            let ind = if j == t as usize { T::one() } else { T::zero() };
                            g[r * c + j] += (p - ind) * scale;
                        }
                    }
                });
            }
            &Op::SumAll { x } => {
                acc!(x, |g: &mut Vec<T>| {
                    for gx in g.iter_mut() {
                        *gx += gout[0];
                    }
                });
            }
            Op::Dropout { x, mask, keep_scale } => {
                let x = *x;
                let mask = mask.clone();
                let scale = T::from_f64(*keep_scale);
                acc!(x, |g: &mut Vec<T>| {
                    for ((gx, &go), &keep) in g.iter_mut().zip(&gout).zip(&mask) {
                        if keep {
                            *gx += go * scale;
                        }
                    }
                });
            }
        }
    }
}

// ── Kernels ─────────────────────────────────────────────────────────────

/// `dst[m,n] += a[m,k] · b[k,n]`
fn mm<T: Element>(dst: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut dst[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `dst[m,n] += a[m,k] · b[n,k]ᵀ`
fn mm_nt<T: Element>(dst: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut dst[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *cv += s;
        }
    }
}

/// `dst[m,n] += a[k,m]ᵀ · b[k,n]`
fn mm_tn<T: Element>(dst: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let crow = &mut dst[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

fn axpy<T: Element>(dst: &mut [T], a: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn hadamard_acc<T: Element>(dst: &mut [T], a: &[T], b: &[T]) {
    for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
        *d += x * y;
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let post: usize = shape[axis + 1..].iter().product();
    (pre, n, post)
}

fn gelu_fwd<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_bwd<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let three_k = T::from_f64(3.0 * 0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three_k * x * x)
}

fn log_softmax_at<T: Element>(row: &[T], target: usize) -> T {
    let mx = row.iter().cloned().fold(row[0], T::max);
    let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
    row[target] - mx - sum.ln()
}
