//! The computation tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and backward is a single reverse sweep.

use crate::error::{shape_err, Result, TensorError};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Probabilities below this are clamped inside `cross_entropy`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var, broadcast: bool },
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Concat { inputs: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    Conv1d { x: Var, w: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { probs: Var, target: Tensor },
    Rows { x: Var, start: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// An append-only tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamId)>,
    backward_done: bool,
    clamped: usize,
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| shape_err(op, format!("expected rank 1 or 2, got {:?}", t.shape())))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node so the graph can be reused for a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.backward_done = false;
        self.clamped = 0;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probabilities clamped at [`PROB_FLOOR`] by `cross_entropy`.
    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        assert!(t.is_finite(), "leaf tensors must be finite");
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Records a parameter from `store` as a leaf and remembers the mapping so
    /// gradients can be routed back with [`Graph::param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut t = store.get(id).clone();
        t.set_requires_grad(store.is_trainable(id));
        let v = self.leaf(t);
        self.params.push((v, id));
        v
    }

    /// Collects the gradients of every parameter leaf recorded with
    /// [`Graph::param`]. A parameter used twice gets the sum.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        let mut out = ParamGrads::default();
        for &(v, id) in &self.params {
            if let Some(g) = grads.get(v) {
                out.accumulate(id, g);
            }
        }
        out
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), Tensor::raw(vec![m, n], out), needs, "matmul")
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            return Ok(false);
        }
        let (_, n) = dims2(op, self.value(a))?;
        let (rb, nb) = dims2(op, self.value(b))?;
        if sa.len() == 2 && rb == 1 && nb == n {
            Ok(true)
        } else {
            Err(shape_err(op, format!("{sa:?} vs {sb:?}")))
        }
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_check("add", a, b)?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b, broadcast }, out, needs, "add")
    }

    /// Elementwise difference, with the same broadcasting rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_check("sub", a, b)?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Sub { a, b, broadcast }, out, needs, "sub")
    }

    /// Elementwise (Hadamard) product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err("mul", format!("{sa:?} vs {sb:?}")));
        }
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), out, needs, "mul")
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::raw(
            t.shape().to_vec(),
            t.data().iter().map(|v| scale * v + shift).collect(),
        );
        let needs = self.needs(x);
        self.push(Op::Affine { x, scale }, out, needs, "affine")
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} inputs, axis {axis}", inputs.len())));
        }
        let dims = inputs
            .iter()
            .map(|&v| dims2("concat", self.value(v)))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(shape_err("concat", format!("column counts differ: {dims:?}")));
            }
            (dims.iter().map(|d| d.0).sum(), c)
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(shape_err("concat", format!("row counts differ: {dims:?}")));
            }
            (r, dims.iter().map(|d| d.1).sum())
        };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &v in inputs {
                out.extend_from_slice(self.value(v).data());
            }
        } else {
            for r in 0..rows {
                for &v in inputs {
                    out.extend_from_slice(self.value(v).row_slice(r));
                }
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            Tensor::raw(vec![rows, cols], out),
            needs,
            "concat",
        )
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum(x), Tensor::scalar(s), needs, "sum")
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let needs = self.needs(x);
        self.push(Op::Mean(x), Tensor::scalar(s), needs, "mean")
    }

    /// Sums a rank-2 tensor along `axis`, keeping it as an extent of 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = dims2("sum_axis", self.value(x))?;
        let t = self.value(x);
        let out = match axis {
            0 => {
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for (a, v) in acc.iter_mut().zip(t.row_slice(i)) {
                        *a += v;
                    }
                }
                Tensor::raw(vec![1, c], acc)
            }
            1 => Tensor::raw(vec![r, 1], (0..r).map(|i| t.row_slice(i).iter().sum()).collect()),
            _ => return Err(shape_err("sum_axis", format!("axis {axis}"))),
        };
        let needs = self.needs(x);
        self.push(Op::SumAxis { x, axis }, out, needs, "sum_axis")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::raw(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        let needs = self.needs(x);
        self.push(op, out, needs, name)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    /// Numerically stable softmax of a rank-2 tensor along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = dims2("softmax", self.value(x))?;
        if axis > 1 {
            return Err(shape_err("softmax", format!("axis {axis}")));
        }
        let mut out = self.value(x).data().to_vec();
        let (lines, len, stride, step) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
        for line in 0..lines {
            let base = line * stride;
            let idx = |i: usize| base + i * step;
            let max = (0..len).map(|i| out[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..len {
                let e = (out[idx(i)] - max).exp();
                out[idx(i)] = e;
                z += e;
            }
            for i in 0..len {
                out[idx(i)] /= z;
            }
        }
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(Op::Softmax { x, axis }, Tensor::raw(shape, out), needs, "softmax")
    }

    /// Valid 1-D convolution over the rows of `x`.
    ///
    /// `x` is `[L, C_in]`, `w` is `[window, C_in, F]`; the result is
    /// `[L - window + 1, F]`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (len, cin) = dims2("conv1d", self.value(x))?;
        let ws = self.value(w).shape();
        let [window, wcin, filters] = ws else {
            return Err(shape_err("conv1d", format!("weight must be rank 3, got {ws:?}")));
        };
        let (window, filters) = (*window, *filters);
        if *wcin != cin || window > len {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, weight {ws:?}", self.value(x).shape()),
            ));
        }
        let out_len = len - window + 1;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; out_len * filters];
        for t in 0..out_len {
            let orow = &mut out[t * filters..(t + 1) * filters];
            // The window rows are contiguous in x, so this is one row of an
            // implicit im2col product.
            let patch = &xd[t * cin..(t + window) * cin];
            for (j, &xv) in patch.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[j * filters..(j + 1) * filters];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w);
        self.push(
            Op::Conv1d { x, w },
            Tensor::raw(vec![out_len, filters], out),
            needs,
            "conv1d",
        )
    }

    /// Non-overlapping max pooling over rows with window `width`.
    /// `[L, C] -> [floor(L / width), C]`. Ties go to the first maximum.
    pub fn maxpool1d(&mut self, x: Var, width: usize) -> Result<Var> {
        let (len, c) = dims2("maxpool1d", self.value(x))?;
        if width == 0 || len / width == 0 {
            return Err(shape_err(
                "maxpool1d",
                format!("length {len} is shorter than pool width {width}"),
            ));
        }
        let out_len = len / width;
        let t = self.value(x);
        let mut out = Vec::with_capacity(out_len * c);
        let mut argmax = Vec::with_capacity(out_len * c);
        for i in 0..out_len {
            for ch in 0..c {
                let mut best = i * width;
                for r in i * width + 1..(i + 1) * width {
                    if t.at(r, ch) > t.at(best, ch) {
                        best = r;
                    }
                }
                out.push(t.at(best, ch));
                argmax.push(best * c + ch);
            }
        }
        let needs = self.needs(x);
        self.push(
            Op::MaxPool { x, argmax },
            Tensor::raw(vec![out_len, c], out),
            needs,
            "maxpool1d",
        )
    }

    /// Max pooling along the columns of `[R, L]` down to exactly `out_len`
    /// columns. Window `i` spans `[floor(i L / out), ceil((i + 1) L / out))`,
    /// so uneven remainders are absorbed by slightly wider windows.
    pub fn adaptive_maxpool_cols(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let (r, len) = dims2("adaptive_maxpool", self.value(x))?;
        if out_len == 0 || out_len > len {
            return Err(shape_err(
                "adaptive_maxpool",
                format!("cannot pool width {len} to {out_len}"),
            ));
        }
        let t = self.value(x);
        let mut out = Vec::with_capacity(r * out_len);
        let mut argmax = Vec::with_capacity(r * out_len);
        for row in 0..r {
            for i in 0..out_len {
                let start = i * len / out_len;
                let end = ((i + 1) * len).div_ceil(out_len);
                let mut best = start;
                for col in start + 1..end {
                    if t.at(row, col) > t.at(row, best) {
                        best = col;
                    }
                }
                out.push(t.at(row, best));
                argmax.push(row * len + best);
            }
        }
        let needs = self.needs(x);
        self.push(
            Op::MaxPool { x, argmax },
            Tensor::raw(vec![r, out_len], out),
            needs,
            "adaptive_maxpool",
        )
    }

    /// Gathers rows of `table` (`[V, E]`) into `[ids.len(), E]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = dims2("embedding_lookup", self.value(table))?;
        if ids.is_empty() {
            return Err(shape_err("embedding_lookup", "no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("embedding_lookup", format!("id {bad} >= vocab {v}")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(t.row_slice(i));
        }
        let needs = self.needs(table);
        self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            Tensor::raw(vec![ids.len(), e], out),
            needs,
            "embedding_lookup",
        )
    }

    /// Mean over rows of `-sum_c y_c ln p_c`, with `p` clamped at [`PROB_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != target.shape() {
            return Err(shape_err(
                "cross_entropy",
                format!("{:?} vs target {:?}", p.shape(), target.shape()),
            ));
        }
        let (rows, _) = dims2("cross_entropy", p)?;
        let mut loss = 0.0;
        let mut clamped = 0;
        for (&pv, &y) in p.data().iter().zip(target.data()) {
            if y != 0.0 {
                if pv < PROB_FLOOR {
                    clamped += 1;
                }
                loss -= y * pv.max(PROB_FLOOR).ln();
            }
        }
        self.clamped += clamped;
        let needs = self.needs(probs);
        self.push(
            Op::CrossEntropy {
                probs,
                target: target.clone(),
            },
            Tensor::scalar(loss / rows as f64),
            needs,
            "cross_entropy",
        )
    }

    /// Rows `[start, start + count)` of a rank-2 tensor.
    pub fn rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (r, c) = dims2("rows", self.value(x))?;
        if count == 0 || start + count > r {
            return Err(shape_err("rows", format!("rows {start}..{} of {r}", start + count)));
        }
        let data = self.value(x).data()[start * c..(start + count) * c].to_vec();
        let needs = self.needs(x);
        self.push(Op::Rows { x, start }, Tensor::raw(vec![count, c], data), needs, "rows")
    }

    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        self.rows(x, index, 1)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self
            .value(x)
            .reshape(shape.to_vec())
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", self.value(x).shape())))?;
        let needs = self.needs(x);
        self.push(Op::Reshape(x), t, needs, "reshape")
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// May be called once per forward pass; call [`Graph::reset`] before
    /// recording the next one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (v, contrib) in self.local_grads(i, &g) {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let map = |f: &dyn Fn(usize, f64) -> f64| {
            Tensor::raw(
                g.shape().to_vec(),
                g.data().iter().enumerate().map(|(j, &gv)| f(j, gv)).collect(),
            )
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let (_, n) = val(*b).dims2().unwrap();
                let mut out = Vec::with_capacity(2);
                if self.needs(*a) {
                    // dA = G B^T
                    let bd = val(*b).data();
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    out.push((*a, Tensor::raw(val(*a).shape().to_vec(), da)));
                }
                if self.needs(*b) {
                    // dB = A^T G
                    let ad = val(*a).data();
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    out.push((*b, Tensor::raw(val(*b).shape().to_vec(), db)));
                }
                out
            }
            Op::Add { a, b, broadcast } => {
                vec![(*a, g.clone()), (*b, reduce_broadcast(g, val(*b), *broadcast))]
            }
            Op::Sub { a, b, broadcast } => {
                let neg = map(&|_, gv| -gv);
                vec![(*a, g.clone()), (*b, reduce_broadcast(&neg, val(*b), *broadcast))]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                vec![(*a, map(&|j, gv| gv * bv[j])), (*b, map(&|j, gv| gv * av[j]))]
            }
            Op::Affine { x, scale } => vec![(*x, map(&|_, gv| gv * scale))],
            Op::Concat { inputs, axis } => {
                let (rows, cols) = y.dims2().unwrap();
                let mut out = Vec::with_capacity(inputs.len());
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = val(v).dims2().unwrap();
                    let data = if *axis == 0 {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        offset += r;
                        d
                    } else {
                        let mut d = Vec::with_capacity(r * c);
                        for row in 0..rows {
                            d.extend_from_slice(&g.data()[row * cols + offset..row * cols + offset + c]);
                        }
                        offset += c;
                        d
                    };
                    out.push((v, Tensor::raw(val(v).shape().to_vec(), data)));
                }
                out
            }
            Op::Sum(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), g.item()))]
            }
            Op::Mean(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), g.item() / t.len() as f64))]
            }
            Op::SumAxis { x, axis } => {
                let t = val(*x);
                let (r, c) = t.dims2().unwrap();
                let data = (0..r * c)
                    .map(|j| if *axis == 0 { g.data()[j % c] } else { g.data()[j / c] })
                    .collect();
                vec![(*x, Tensor::raw(t.shape().to_vec(), data))]
            }
            Op::Tanh(x) => {
                let yd = y.data();
                vec![(*x, map(&|j, gv| gv * (1.0 - yd[j] * yd[j])))]
            }
            Op::Sigmoid(x) => {
                let yd = y.data();
                vec![(*x, map(&|j, gv| gv * yd[j] * (1.0 - yd[j])))]
            }
            Op::Relu(x) => {
                let xd = val(*x).data();
                vec![(*x, map(&|j, gv| if xd[j] > 0.0 { gv } else { 0.0 }))]
            }
            Op::Softmax { x, axis } => {
                let (r, c) = y.dims2().unwrap();
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![0.0; r * c];
                let (lines, len, stride, step) = if *axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                for line in 0..lines {
                    let base = line * stride;
                    let dot: f64 = (0..len).map(|i| yd[base + i * step] * gd[base + i * step]).sum();
                    for i in 0..len {
                        let j = base + i * step;
                        dx[j] = yd[j] * (gd[j] - dot);
                    }
                }
                vec![(*x, Tensor::raw(y.shape().to_vec(), dx))]
            }
            Op::Conv1d { x, w } => {
                let (len, cin) = val(*x).dims2().unwrap();
                let wt = val(*w);
                let (window, filters) = (wt.shape()[0], wt.shape()[2]);
                let out_len = len - window + 1;
                let (xd, wd, gd) = (val(*x).data(), wt.data(), g.data());
                let mut out = Vec::with_capacity(2);
                if self.needs(*w) {
                    let mut dw = vec![0.0; wt.len()];
                    for t in 0..out_len {
                        let grow = &gd[t * filters..(t + 1) * filters];
                        let patch = &xd[t * cin..(t + window) * cin];
                        for (j, &xv) in patch.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            for (d, gv) in dw[j * filters..(j + 1) * filters].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                    out.push((*w, Tensor::raw(wt.shape().to_vec(), dw)));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; len * cin];
                    for t in 0..out_len {
                        let grow = &gd[t * filters..(t + 1) * filters];
                        for j in 0..window * cin {
                            let wrow = &wd[j * filters..(j + 1) * filters];
                            dx[t * cin + j] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    out.push((*x, Tensor::raw(val(*x).shape().to_vec(), dx)));
                }
                out
            }
            Op::MaxPool { x, argmax } => {
                let t = val(*x);
                let mut dx = vec![0.0; t.len()];
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dx[src] += gv;
                }
                vec![(*x, Tensor::raw(t.shape().to_vec(), dx))]
            }
            Op::Embedding { table, ids } => {
                let t = val(*table);
                let e = t.dims2().unwrap().1;
                let mut dt = vec![0.0; t.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, gv) in dt[id * e..(id + 1) * e].iter_mut().zip(g.row_slice(r)) {
                        *d += gv;
                    }
                }
                vec![(*table, Tensor::raw(t.shape().to_vec(), dt))]
            }
            Op::CrossEntropy { probs, target } => {
                let p = val(*probs);
                let rows = p.dims2().unwrap().0 as f64;
                let scale = g.item() / rows;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&pv, &yv)| {
                        if yv == 0.0 || pv < PROB_FLOOR {
                            0.0
                        } else {
                            -scale * yv / pv
                        }
                    })
                    .collect();
                vec![(*probs, Tensor::raw(p.shape().to_vec(), data))]
            }
            Op::Rows { x, start } => {
                let t = val(*x);
                let c = t.dims2().unwrap().1;
                let mut dx = vec![0.0; t.len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g.data());
                vec![(*x, Tensor::raw(t.shape().to_vec(), dx))]
            }
            Op::Reshape(x) => {
                let t = val(*x);
                vec![(*x, Tensor::raw(t.shape().to_vec(), g.data().to_vec()))]
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let bd = b.data();
    let n = bd.len();
    Tensor::raw(
        a.shape().to_vec(),
        a.data().iter().enumerate().map(|(j, &x)| f(x, bd[j % n])).collect(),
    )
}

fn reduce_broadcast(g: &Tensor, target: &Tensor, broadcast: bool) -> Tensor {
    if !broadcast {
        return g.clone();
    }
    let n = target.len();
    let mut acc = vec![0.0; n];
    for (j, gv) in g.data().iter().enumerate() {
        acc[j % n] += gv;
    }
    Tensor::raw(target.shape().to_vec(), acc)
}
