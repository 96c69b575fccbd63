use std::borrow::Cow;

use super::kernels::{self, dot, matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{Tensor, TensorError, COSINE_EPS, SELU_ALPHA, SELU_LAMBDA};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The basic structural primitives, addressable by kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    ConcatCols,
    GatherRows(Vec<usize>),
    ScalarMul(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Selu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    CosineMatrix(Var, Var),
    MaxOverTime(Var, Vec<usize>),
    Pick(Var, usize),
    SumSquares(Var),
    Sum(Var),
    LstmStep(Box<LstmCache>),
}

#[derive(Debug)]
struct LstmCache {
    x: Var,
    h: Var,
    c: Var,
    weight: Var,
    bias: Var,
    // i, f, g, o activations, each `hidden` long.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Records a forward computation so that gradients of a scalar root can be
/// propagated back to every leaf.
///
/// Parameter leaves borrow their tensors; intermediate values are owned.
/// Nodes are appended in evaluation order, so parents always precede
/// children.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros when the leaf has no path to the root.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    /// Gradient of a leaf, or `None` if nothing reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Move a leaf gradient out without cloning.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that borrows an existing tensor (typically a model parameter).
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that owns its value.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].op, Op::Leaf)
    }

    /// Apply one of the structural primitives by kind.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var, TensorError> {
        let arity = |n: usize, name: &'static str| {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(TensorError::invalid(
                    name,
                    format!("expected {n} inputs, got {}", inputs.len()),
                ))
            }
        };
        match kind {
            Primitive::Add => {
                arity(2, "add")?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2, "sub")?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2, "mul")?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::MatMul => {
                arity(2, "matmul")?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Transpose => {
                arity(1, "transpose")?;
                self.transpose(inputs[0])
            }
            Primitive::ConcatCols => self.concat_cols(inputs),
            Primitive::GatherRows(ids) => {
                arity(1, "gather_rows")?;
                self.gather_rows(inputs[0], &ids)
            }
            Primitive::ScalarMul(k) => {
                arity(1, "scalar_mul")?;
                Ok(self.scale(inputs[0], k))
            }
        }
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| k * x);
        self.push(out, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a))
    }

    /// `m (T x d) + row (1 x d)` broadcast over rows.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var, TensorError> {
        let (tm, tr) = (self.value(m), self.value(row));
        let (r, c) = tm.dims2()?;
        let (rr, rc) = tr.dims2()?;
        if rr != 1 || rc != c {
            return Err(mismatch("add_row", tm, tr));
        }
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for (x, b) in data[i * c..(i + 1) * c].iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::matrix(r, c, data);
        Ok(self.push(out, Op::AddRow(m, row)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x W + b` for a row-major batch `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    /// Concatenate along the last axis; all inputs need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(mismatch("concat", self.value(*first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::matrix(rows, total, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stack inputs vertically; all inputs need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_rows", "no inputs"))?;
        let cols = self.value(*first).dims2()?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(mismatch("concat_rows", self.value(*first), self.value(p)));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let out = Tensor::matrix(rows, cols, data);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, m: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(m);
        let (r, c) = t.dims2()?;
        if ids.is_empty() {
            return Err(TensorError::invalid("gather_rows", "no row indices"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(TensorError::invalid(
                "gather_rows",
                format!("row {bad} out of range for {r} rows"),
            ));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(ids.len(), c, data);
        Ok(self.push(out, Op::GatherRows(m, ids.to_vec())))
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, m: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(m);
        let (r, c) = t.dims2()?;
        if len == 0 || start + len > c {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("range {start}..{} outside {c} columns", start + len),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::matrix(r, len, data);
        Ok(self.push(out, Op::SliceCols(m, start)))
    }

    /// Softmax over the last axis (each row independently).
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if !t.is_finite() {
            return Err(TensorError::invalid("softmax", "non-finite input"));
        }
        let mut data = t.data().to_vec();
        for i in 0..r {
            kernels::softmax_in_place(&mut data[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Row-wise `x - logsumexp(x)`, stable for large score gaps.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if !t.is_finite() {
            return Err(TensorError::invalid("log_softmax", "non-finite input"));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c).take(r) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::selu);
        self.push(out, Op::Selu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Natural log; every input must be positive.
    pub fn ln(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.data().iter().any(|&x| x <= 0.0) {
            return Err(TensorError::invalid("ln", "non-positive input"));
        }
        let out = t.map(f64::ln);
        Ok(self.push(out, Op::Ln(a)))
    }

    /// Row-wise cosine similarity matrix between `a` (M x d) and `b` (N x d).
    /// Pairs involving a row with norm below [`COSINE_EPS`] are 0.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, d) = ta.dims2()?;
        let (n, d2) = tb.dims2()?;
        if d != d2 {
            return Err(mismatch("cosine_matrix", ta, tb));
        }
        let na = row_norms(ta);
        let nb = row_norms(tb);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            if na[i] < COSINE_EPS {
                continue;
            }
            for j in 0..n {
                if nb[j] < COSINE_EPS {
                    continue;
                }
                data[i * n + j] = dot(ta.row_slice(i), tb.row_slice(j)) / (na[i] * nb[j]);
            }
        }
        let out = Tensor::matrix(m, n, data);
        Ok(self.push(out, Op::CosineMatrix(a, b)))
    }

    /// Column-wise max over rows (`T x d -> 1 x d`). Gradient flows to the
    /// first row attaining each maximum.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        let mut arg = vec![0usize; c];
        let mut best = t.row_slice(0).to_vec();
        for i in 1..r {
            for (j, &x) in t.row_slice(i).iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    arg[j] = i;
                }
            }
        }
        let out = Tensor::matrix(1, c, best);
        Ok(self.push(out, Op::MaxOverTime(a, arg)))
    }

    /// Single element (flat index) as a `1 x 1` tensor.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let v = *t.data().get(index).ok_or_else(|| {
            TensorError::invalid(
                "pick",
                format!("index {index} out of range for {:?}", t.shape()),
            )
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, index)))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_squares();
        self.push(Tensor::scalar(v), Op::SumSquares(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    /// One LSTM step. `x` is `1 x in`, `h` and `c` are `1 x hidden`, `weight`
    /// is `(in + hidden) x 4*hidden` with gate blocks ordered input, forget,
    /// candidate, output, and `bias` is `1 x 4*hidden`. Returns `1 x 2*hidden`
    /// holding `[h_next, c_next]`.
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        weight: Var,
        bias: Var,
    ) -> Result<Var, TensorError> {
        let (tx, th, tc, tw, tb) = (
            self.value(x),
            self.value(h),
            self.value(c),
            self.value(weight),
            self.value(bias),
        );
        let (xr, input) = tx.dims2()?;
        let (hr, hidden) = th.dims2()?;
        let (wr, wc) = tw.dims2()?;
        if xr != 1 || hr != 1 || tc.shape() != th.shape() {
            return Err(mismatch("lstm_step", tx, th));
        }
        if wr != input + hidden || wc != 4 * hidden {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step",
                lhs: vec![input + hidden, 4 * hidden],
                rhs: tw.shape().to_vec(),
            });
        }
        if tb.len() != 4 * hidden {
            return Err(mismatch("lstm_step", tw, tb));
        }
        let mut z = tb.data().to_vec();
        let w = tw.data();
        matmul_acc(tx.data(), &w[..input * wc], &mut z, 1, input, wc);
        matmul_acc(th.data(), &w[input * wc..], &mut z, 1, hidden, wc);
        let mut gates = z;
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if (2 * hidden..3 * hidden).contains(&k) {
                g.tanh()
            } else {
                kernels::sigmoid(*g)
            };
        }
        let mut out = vec![0.0; 2 * hidden];
        let mut tanh_c = vec![0.0; hidden];
        for j in 0..hidden {
            let (i_g, f_g, g_g, o_g) = (
                gates[j],
                gates[hidden + j],
                gates[2 * hidden + j],
                gates[3 * hidden + j],
            );
            let c_next = f_g * tc.data()[j] + i_g * g_g;
            tanh_c[j] = c_next.tanh();
            out[j] = o_g * tanh_c[j];
            out[hidden + j] = c_next;
        }
        let cache = LstmCache {
            x,
            h,
            c,
            weight,
            bias,
            gates,
            tanh_c,
        };
        Ok(self.push(Tensor::row(out), Op::LstmStep(Box::new(cache))))
    }

    /// Reverse-mode sweep from a scalar `root`. Gradients are kept for leaf
    /// nodes only.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let shapes = self.nodes[..n]
            .iter()
            .map(|node| node.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, self.value(*a), g.data());
                accumulate(grads, *b, self.value(*b), g.data());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, self.value(*a), g.data());
                let neg: Vec<f64> = g.data().iter().map(|x| -x).collect();
                accumulate(grads, *b, self.value(*b), &neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga: Vec<f64> = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, ta, &ga);
                accumulate(grads, *b, tb, &gb);
            }
            Op::Scale(a, k) => {
                let ga: Vec<f64> = g.data().iter().map(|x| k * x).collect();
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::AddScalar(a) => accumulate(grads, *a, self.value(*a), g.data()),
            Op::AddRow(m, row) => {
                accumulate(grads, *m, self.value(*m), g.data());
                let (r, c) = out.dims2().expect("rank-2 node");
                let mut gr = vec![0.0; c];
                for k in 0..r {
                    for (acc, x) in gr.iter_mut().zip(&g.data()[k * c..(k + 1) * c]) {
                        *acc += x;
                    }
                }
                accumulate(grads, *row, self.value(*row), &gr);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().expect("rank-2 node");
                let n = tb.dims2().expect("rank-2 node").1;
                let mut ga = vec![0.0; m * k];
                matmul_bt_acc(g.data(), tb.data(), &mut ga, m, n, k);
                accumulate(grads, *a, ta, &ga);
                let mut gb = vec![0.0; k * n];
                matmul_at_acc(ta.data(), g.data(), &mut gb, m, k, n);
                accumulate(grads, *b, tb, &gb);
            }
            Op::Transpose(a) => {
                let gt = g.transpose().expect("rank-2 node");
                accumulate(grads, *a, self.value(*a), gt.data());
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2().expect("rank-2 node");
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = tp.dims2().expect("rank-2 node").1;
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, tp, &gp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let len = tp.len();
                    accumulate(grads, p, tp, &g.data()[offset..offset + len]);
                    offset += len;
                }
            }
            Op::GatherRows(m, ids) => {
                let tm = self.value(*m);
                let c = tm.dims2().expect("rank-2 node").1;
                let slot = grads[m.0].get_or_insert_with(|| Tensor::zeros(tm.shape()));
                let dst = slot.data_mut();
                for (k, &row) in ids.iter().enumerate() {
                    for (d, s) in dst[row * c..(row + 1) * c]
                        .iter_mut()
                        .zip(&g.data()[k * c..(k + 1) * c])
                    {
                        *d += s;
                    }
                }
            }
            Op::SliceCols(m, start) => {
                let tm = self.value(*m);
                let (r, c) = tm.dims2().expect("rank-2 node");
                let len = out.dims2().expect("rank-2 node").1;
                let mut gm = vec![0.0; r * c];
                for k in 0..r {
                    gm[k * c + start..k * c + start + len]
                        .copy_from_slice(&g.data()[k * len..(k + 1) * len]);
                }
                accumulate(grads, *m, tm, &gm);
            }
            Op::Softmax(a) => {
                let (r, c) = out.dims2().expect("rank-2 node");
                let y = out.data();
                let mut ga = vec![0.0; r * c];
                for k in 0..r {
                    let span = k * c..(k + 1) * c;
                    let inner = dot(&g.data()[span.clone()], &y[span.clone()]);
                    for j in span {
                        ga[j] = y[j] * (g.data()[j] - inner);
                    }
                }
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::LogSoftmax(a) => {
                let (r, c) = out.dims2().expect("rank-2 node");
                let y = out.data();
                let mut ga = vec![0.0; r * c];
                for k in 0..r {
                    let span = k * c..(k + 1) * c;
                    let total: f64 = g.data()[span.clone()].iter().sum();
                    for j in span {
                        ga[j] = g.data()[j] - y[j].exp() * total;
                    }
                }
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::Selu(a) => {
                let x = self.value(*a);
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(out.data()))
                    .map(|(gv, (&xv, &yv))| {
                        if xv > 0.0 {
                            gv * SELU_LAMBDA
                        } else {
                            gv * (yv + SELU_LAMBDA * SELU_ALPHA)
                        }
                    })
                    .collect();
                accumulate(grads, *a, x, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| gv / xv)
                    .collect();
                accumulate(grads, *a, x, &ga);
            }
            Op::CosineMatrix(a, b) => self.cosine_backward(*a, *b, out, g, grads),
            Op::MaxOverTime(a, arg) => {
                let x = self.value(*a);
                let c = x.dims2().expect("rank-2 node").1;
                let mut ga = vec![0.0; x.len()];
                for (j, &row) in arg.iter().enumerate() {
                    ga[row * c + j] += g.data()[j];
                }
                accumulate(grads, *a, x, &ga);
            }
            Op::Pick(a, index) => {
                let x = self.value(*a);
                let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(x.shape()));
                slot.data_mut()[*index] += g.item();
            }
            Op::SumSquares(a) => {
                let x = self.value(*a);
                let k = 2.0 * g.item();
                let ga: Vec<f64> = x.data().iter().map(|v| k * v).collect();
                accumulate(grads, *a, x, &ga);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, x, &vec![g.item(); x.len()]);
            }
            Op::LstmStep(cache) => self.lstm_backward(cache, g, grads),
        }
    }

    fn cosine_backward(
        &self,
        a: Var,
        b: Var,
        sim: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, d) = ta.dims2().expect("rank-2 node");
        let n = tb.dims2().expect("rank-2 node").0;
        let na = row_norms(ta);
        let nb = row_norms(tb);
        let mut ga = vec![0.0; m * d];
        let mut gb = vec![0.0; n * d];
        for i in 0..m {
            if na[i] < COSINE_EPS {
                continue;
            }
            let ai = ta.row_slice(i);
            for j in 0..n {
                if nb[j] < COSINE_EPS {
                    continue;
                }
                let gij = g.data()[i * n + j];
                if gij == 0.0 {
                    continue;
                }
                let bj = tb.row_slice(j);
                let s = sim.data()[i * n + j];
                let inv = 1.0 / (na[i] * nb[j]);
                let sa = s / (na[i] * na[i]);
                let sb = s / (nb[j] * nb[j]);
                for k in 0..d {
                    ga[i * d + k] += gij * (bj[k] * inv - sa * ai[k]);
                    gb[j * d + k] += gij * (ai[k] * inv - sb * bj[k]);
                }
            }
        }
        accumulate(grads, a, ta, &ga);
        accumulate(grads, b, tb, &gb);
    }

    fn lstm_backward(&self, cache: &LstmCache, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let tx = self.value(cache.x);
        let th = self.value(cache.h);
        let tc = self.value(cache.c);
        let tw = self.value(cache.weight);
        let input = tx.len();
        let hidden = th.len();
        let gates = &cache.gates;
        let mut dz = vec![0.0; 4 * hidden];
        let mut dc_prev = vec![0.0; hidden];
        for j in 0..hidden {
            let (i_g, f_g, g_g, o_g) = (
                gates[j],
                gates[hidden + j],
                gates[2 * hidden + j],
                gates[3 * hidden + j],
            );
            let tcj = cache.tanh_c[j];
            let dh = g.data()[j];
            let dc = g.data()[hidden + j] + dh * o_g * (1.0 - tcj * tcj);
            dz[j] = dc * g_g * i_g * (1.0 - i_g);
            dz[hidden + j] = dc * tc.data()[j] * f_g * (1.0 - f_g);
            dz[2 * hidden + j] = dc * i_g * (1.0 - g_g * g_g);
            dz[3 * hidden + j] = dh * tcj * o_g * (1.0 - o_g);
            dc_prev[j] = dc * f_g;
        }
        let wc = 4 * hidden;
        // dW = [x, h]^T dz
        let mut gw = vec![0.0; (input + hidden) * wc];
        for (r, &u) in tx.data().iter().chain(th.data()).enumerate() {
            if u == 0.0 {
                continue;
            }
            for (dst, &d) in gw[r * wc..(r + 1) * wc].iter_mut().zip(&dz) {
                *dst += u * d;
            }
        }
        // d[x, h] = dz W^T
        let mut du = vec![0.0; input + hidden];
        matmul_bt_acc(&dz, tw.data(), &mut du, 1, wc, input + hidden);
        accumulate(grads, cache.x, tx, &du[..input]);
        accumulate(grads, cache.h, th, &du[input..]);
        accumulate(grads, cache.c, tc, &dc_prev);
        accumulate(grads, cache.weight, tw, &gw);
        accumulate(grads, cache.bias, self.value(cache.bias), &dz);
    }
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    let (r, _) = t.dims2().expect("rank-2 node");
    (0..r)
        .map(|i| dot(t.row_slice(i), t.row_slice(i)).sqrt())
        .collect()
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, like: &Tensor, delta: &[f64]) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(delta) {
                *d += s;
            }
        }
        slot @ None => {
            *slot =
                Some(Tensor::new(like.shape().to_vec(), delta.to_vec()).expect("gradient shape"));
        }
    }
}
