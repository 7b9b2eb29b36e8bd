//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every primitive application in creation order, which
//! is already a topological order. [`Graph::backward`] walks the tape once in
//! reverse, accumulating vector-Jacobian products into the inputs of every
//! node that depends on a trainable leaf.
//!
//! Every forward primitive rejects non-finite outputs.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::knn::NeighborGraph;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { requires_grad: bool },
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, bias: Var },
    MulCol { a: Var, w: Var },
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu { x: Var, slope: T },
    L2NormalizeRows { x: Var, scale: Vec<T>, clamped: Vec<bool> },
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    EdgeFeatures { x: Var, graph: Arc<NeighborGraph> },
    NeighborhoodMax { values: Var, argmax: Vec<u32> },
    MaxOverRows { x: Var, argmax: Vec<u32> },
    BroadcastRows(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Square(Var),
    ProximityMatrix(Var),
    NeighborWeights { ga: Var, graph: Arc<NeighborGraph>, sums: Vec<T> },
    BceWithLogits { logits: Var, labels: Vec<T> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `leaf`; `None` when the leaf is not trainable.
    pub fn get(&self, leaf: Var) -> Option<&Tensor<T>> {
        self.grads.get(leaf.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(leaf.0).and_then(Option::take)
    }
}

/// A tape of primitive applications.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn check_2d<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Adds a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf { requires_grad }, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product `a·b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul", self.value(a))?;
        let (kb, n) = check_2d("matmul", self.value(b))?;
        if k != kb {
            return Err(Error::dim("matmul", format!("{m}x{k} times {kb}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b: false }, &[a, b])
    }

    /// Matrix product `a·bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul_nt", self.value(a))?;
        let (n, kb) = check_2d("matmul_nt", self.value(b))?;
        if k != kb {
            return Err(Error::dim("matmul_nt", format!("{m}x{k} times ({n}x{kb})^T")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        self.push("matmul_nt", Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b: true }, &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = check_2d("add_row", self.value(a))?;
        let tb = self.value(bias);
        if tb.len() != n {
            return Err(Error::dim("add_row", format!("bias of {} for {n} columns", tb.len())));
        }
        let b = tb.data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &bb) in row.iter_mut().zip(b) {
                *x = *x + bb;
            }
        }
        self.push("add_row", Tensor::from_parts(vec![m, n], data), Op::AddRow { a, bias }, &[a, bias])
    }

    /// Scales every row `i` of `a` by `w[i]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (m, n) = check_2d("mul_col", self.value(a))?;
        let tw = self.value(w);
        if tw.len() != m {
            return Err(Error::dim("mul_col", format!("{} weights for {m} rows", tw.len())));
        }
        let mut data = self.value(a).data().to_vec();
        for (row, &s) in data.chunks_mut(n).zip(tw.data()) {
            for x in row {
                *x = *x * s;
            }
        }
        self.push("mul_col", Tensor::from_parts(vec![m, n], data), Op::MulCol { a, w }, &[a, w])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    /// `x` where `x >= 0`, `slope·x` otherwise. The subgradient at zero is
    /// `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::InvalidArgument(format!("leaky slope {slope} outside (0, 1)")));
        }
        let v = self.value(x).map(|v| if v >= T::zero() { v } else { slope * v });
        self.push("leaky_relu", v, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Divides each row by `max(‖row‖, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        let (m, n) = check_2d("l2_normalize_rows", self.value(x))?;
        let mut data = self.value(x).data().to_vec();
        let mut scale = Vec::with_capacity(m);
        let mut clamped = Vec::with_capacity(m);
        for row in data.chunks_mut(n) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let s = if norm >= eps { norm } else { eps };
            for v in row.iter_mut() {
                *v = *v / s;
            }
            scale.push(s);
            clamped.push(norm < eps);
        }
        self.push(
            "l2_normalize_rows",
            Tensor::from_parts(vec![m, n], data),
            Op::L2NormalizeRows { x, scale, clamped },
            &[x],
        )
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = softmax_rows_value(self.value(x))?;
        self.push("softmax_rows", v, Op::SoftmaxRows(x), &[x])
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let m = check_2d("concat_cols", self.value(first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = check_2d("concat_cols", self.value(p))?;
            if pm != m {
                return Err(Error::dim("concat_cols", format!("{pm} rows vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat_cols", Tensor::from_parts(vec![m, total], data), Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Edge features `concat(x_i, x_j − x_i)` for every neighbor slot, laid
    /// out as `[n·k, 2F]` with row `i·k + s` for slot `s` of point `i`.
    pub fn edge_features(&mut self, x: Var, graph: &Arc<NeighborGraph>) -> Result<Var> {
        let (n, f) = check_2d("edge_features", self.value(x))?;
        if graph.n() != n {
            return Err(Error::dim("edge_features", format!("graph over {} points, features for {n}", graph.n())));
        }
        if graph.k() == 0 {
            return Err(Error::EmptyNeighborhood);
        }
        let k = graph.k();
        let xv = self.value(x);
        let mut data = Vec::with_capacity(n * k * 2 * f);
        for i in 0..n {
            let xi = xv.row(i);
            for &j in graph.neighbors(i) {
                let xj = xv.row(j as usize);
                data.extend_from_slice(xi);
                data.extend(xj.iter().zip(xi).map(|(&b, &a)| b - a));
            }
        }
        let graph = Arc::clone(graph);
        self.push("edge_features", Tensor::from_parts(vec![n * k, 2 * f], data), Op::EdgeFeatures { x, graph }, &[x])
    }

    /// Channel-wise maximum over each point's `k` neighbor slots. Values are
    /// laid out as in [`Graph::edge_features`]; ties route the gradient to the
    /// lowest slot.
    pub fn neighborhood_max(&mut self, values: Var, graph: &NeighborGraph) -> Result<Var> {
        let (rows, c) = check_2d("neighborhood_max", self.value(values))?;
        let (n, k) = (graph.n(), graph.k());
        if k == 0 {
            return Err(Error::EmptyNeighborhood);
        }
        if rows != n * k {
            return Err(Error::dim("neighborhood_max", format!("{rows} rows for n={n}, k={k}")));
        }
        let v = self.value(values).data();
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for i in 0..n {
            let base = i * k;
            for ch in 0..c {
                let mut best = v[base * c + ch];
                let mut arg = 0u32;
                for s in 1..k {
                    let cand = v[(base + s) * c + ch];
                    if cand > best {
                        best = cand;
                        arg = s as u32;
                    }
                }
                out.push(best);
                argmax.push(arg);
            }
        }
        self.push(
            "neighborhood_max",
            Tensor::from_parts(vec![n, c], out),
            Op::NeighborhoodMax { values, argmax },
            &[values],
        )
    }

    /// Column-wise maximum over all rows, `[n, c] → [1, c]`.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (m, c) = check_2d("max_over_rows", self.value(x))?;
        let xv = self.value(x);
        let mut out = xv.row(0).to_vec();
        let mut argmax = vec![0u32; c];
        for i in 1..m {
            for (ch, &v) in xv.row(i).iter().enumerate() {
                if v > out[ch] {
                    out[ch] = v;
                    argmax[ch] = i as u32;
                }
            }
        }
        self.push("max_over_rows", Tensor::from_parts(vec![1, c], out), Op::MaxOverRows { x, argmax }, &[x])
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (m, c) = check_2d("broadcast_rows", self.value(x))?;
        if m != 1 || n == 0 {
            return Err(Error::dim("broadcast_rows", format!("need a 1x{c} row and n > 0")));
        }
        let row = self.value(x).data().to_vec();
        let data = row.repeat(n);
        self.push("broadcast_rows", Tensor::from_parts(vec![n, c], data), Op::BroadcastRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::from_usize(t.len()).unwrap();
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sums each row, `[m, n] → [m, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (m, _) = check_2d("row_sum", self.value(x))?;
        let t = self.value(x);
        let data = (0..m).map(|i| t.row(i).iter().copied().sum()).collect();
        self.push("row_sum", Tensor::from_parts(vec![m, 1], data), Op::RowSum(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|v| v * v);
        self.push("square", v, Op::Square(x), &[x])
    }

    /// Negative pairwise Euclidean distances between rows.
    pub fn proximity_matrix(&mut self, x: Var) -> Result<Var> {
        check_2d("proximity_matrix", self.value(x))?;
        let v = proximity_matrix_value(self.value(x));
        self.push("proximity_matrix", v, Op::ProximityMatrix(x), &[x])
    }

    /// Aggregation weights `k·ga[i, j_s] / Σ_s ga[i, j_s]` gathered at the
    /// graph's neighbor slots, laid out as `[n·k, 1]`.
    pub fn neighbor_weights(&mut self, ga: Var, graph: &Arc<NeighborGraph>) -> Result<Var> {
        let (n, m) = check_2d("neighbor_weights", self.value(ga))?;
        if n != m || graph.n() != n {
            return Err(Error::dim("neighbor_weights", format!("{n}x{m} scores for {} points", graph.n())));
        }
        let k = graph.k();
        if k == 0 {
            return Err(Error::EmptyNeighborhood);
        }
        let g = self.value(ga);
        let kk = T::from_usize(k).unwrap();
        let mut out = Vec::with_capacity(n * k);
        let mut sums = Vec::with_capacity(n);
        for i in 0..n {
            let row = g.row(i);
            let s: T = graph.neighbors(i).iter().map(|&j| row[j as usize]).sum();
            for &j in graph.neighbors(i) {
                out.push(kk * row[j as usize] / s);
            }
            sums.push(s);
        }
        let graph = Arc::clone(graph);
        self.push(
            "neighbor_weights",
            Tensor::from_parts(vec![n * k, 1], out),
            Op::NeighborWeights { ga, graph, sums },
            &[ga],
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 labels,
    /// in the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() {
            return Err(Error::dim("bce_with_logits", format!("{} logits, {} labels", z.len(), labels.len())));
        }
        let total: T = z.data().iter().zip(labels).map(|(&z, &y)| bce_term(z, y)).sum();
        let mean = total / T::from_usize(labels.len()).unwrap();
        self.push(
            "bce_with_logits",
            Tensor::scalar(mean),
            Op::BceWithLogits { logits, labels: labels.to_vec() },
            &[logits],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Back-propagates from a scalar node, returning gradients for every
    /// trainable leaf reachable from it (zero when unreached).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let seed = &self.nodes[loss.0].value;
        if !seed.is_scalar() {
            return Err(Error::NonScalarSeed { shape: seed.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        out.resize_with(loss.0 + 1, || None);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Leaf { requires_grad: true } = node.op {
                let g = grads[idx].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                out[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Runs `f` on the gradient buffer of `v` when `v` wants one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let target = &nodes[v.0];
            if !target.needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); target.value.len()]);
            f(buf);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = y.shape()[1];
                if *trans_b {
                    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                    acc(*a, &mut |da| T::gemm(m, n, k, g, false, tb.data(), false, da, true));
                    acc(*b, &mut |db| T::gemm(n, m, k, g, true, ta.data(), false, db, true));
                } else {
                    // C = A·B: dA = dC·Bᵀ, dB = Aᵀ·dC
                    acc(*a, &mut |da| T::gemm(m, n, k, g, false, tb.data(), true, da, true));
                    acc(*b, &mut |db| T::gemm(k, m, n, ta.data(), true, g, false, db, true));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d - g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |d| {
                    for ((d, &g), &o) in d.iter_mut().zip(g).zip(vb) {
                        *d = *d + g * o;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &g), &o) in d.iter_mut().zip(g).zip(va) {
                        *d = *d + g * o;
                    }
                });
            }
            Op::AddRow { a, bias } => {
                let n = y.cols();
                acc(*a, &mut |d| add_into(d, g));
                acc(*bias, &mut |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::MulCol { a, w } => {
                let n = y.cols();
                let (va, vw) = (nodes[a.0].value.data(), nodes[w.0].value.data());
                acc(*a, &mut |d| {
                    for ((drow, grow), &s) in d.chunks_mut(n).zip(g.chunks(n)).zip(vw) {
                        for (d, &g) in drow.iter_mut().zip(grow) {
                            *d = *d + g * s;
                        }
                    }
                });
                acc(*w, &mut |d| {
                    for ((dw, grow), arow) in d.iter_mut().zip(g.chunks(n)).zip(va.chunks(n)) {
                        *dw = *dw + grow.iter().zip(arow).map(|(&g, &a)| g * a).sum::<T>();
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g * *c)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::LeakyRelu { x, slope } => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d = *d + if x > T::zero() { g } else { g * *slope };
                    }
                });
            }
            Op::L2NormalizeRows { x, scale, clamped } => {
                let n = y.cols();
                acc(*x, &mut |d| {
                    for (i, ((drow, grow), yrow)) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n)).enumerate() {
                        let s = scale[i];
                        if clamped[i] {
                            for (d, &g) in drow.iter_mut().zip(grow) {
                                *d = *d + g / s;
                            }
                        } else {
                            let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                            for ((d, &g), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d = *d + (g - y * dot) / s;
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = y.cols();
                acc(*x, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                        for ((d, &g), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + y * (g - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(p, &mut |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::EdgeFeatures { x, graph } => {
                let f = nodes[x.0].value.cols();
                let k = graph.k();
                acc(*x, &mut |d| {
                    for i in 0..graph.n() {
                        for (s, &j) in graph.neighbors(i).iter().enumerate() {
                            let row = &g[(i * k + s) * 2 * f..(i * k + s + 1) * 2 * f];
                            let (gi, gd) = row.split_at(f);
                            let j = j as usize;
                            for c in 0..f {
                                d[i * f + c] = d[i * f + c] + gi[c] - gd[c];
                                d[j * f + c] = d[j * f + c] + gd[c];
                            }
                        }
                    }
                });
            }
            Op::NeighborhoodMax { values, argmax } => {
                let c = y.cols();
                let k = nodes[values.0].value.rows() / y.rows();
                acc(*values, &mut |d| {
                    for (idx, (&gv, &s)) in g.iter().zip(argmax).enumerate() {
                        let (i, ch) = (idx / c, idx % c);
                        let pos = (i * k + s as usize) * c + ch;
                        d[pos] = d[pos] + gv;
                    }
                });
            }
            Op::MaxOverRows { x, argmax } => {
                let c = y.cols();
                acc(*x, &mut |d| {
                    for (ch, (&gv, &i)) in g.iter().zip(argmax).enumerate() {
                        let pos = i as usize * c + ch;
                        d[pos] = d[pos] + gv;
                    }
                });
            }
            Op::BroadcastRows(x) => {
                let c = y.cols();
                acc(*x, &mut |d| {
                    for row in g.chunks(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::Mean(x) => {
                let len = T::from_usize(nodes[x.0].value.len()).unwrap();
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d = *d + g[0] / len));
            }
            Op::RowSum(x) => {
                let n = nodes[x.0].value.cols();
                acc(*x, &mut |d| {
                    for (drow, &gv) in d.chunks_mut(n).zip(g) {
                        drow.iter_mut().for_each(|d| *d = *d + gv);
                    }
                });
            }
            Op::Square(x) => {
                let xv = nodes[x.0].value.data();
                let two = T::one() + T::one();
                acc(*x, &mut |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d = *d + two * x * g;
                    }
                });
            }
            Op::ProximityMatrix(x) => {
                let xv = &nodes[x.0].value;
                let (n, f) = (xv.rows(), xv.cols());
                acc(*x, &mut |d| {
                    let mut diff = vec![T::zero(); f];
                    for i in 0..n {
                        for j in 0..n {
                            let dist = -y.data()[i * n + j];
                            if i == j || dist <= T::zero() {
                                continue;
                            }
                            let w = (g[i * n + j] + g[j * n + i]) / dist;
                            for (c, dc) in diff.iter_mut().enumerate() {
                                *dc = xv.data()[i * f + c] - xv.data()[j * f + c];
                            }
                            for c in 0..f {
                                d[i * f + c] = d[i * f + c] - w * diff[c];
                            }
                        }
                    }
                });
            }
            Op::NeighborWeights { ga, graph, sums } => {
                let n = graph.n();
                let k = graph.k();
                let kk = T::from_usize(k).unwrap();
                acc(*ga, &mut |d| {
                    for i in 0..n {
                        let gw = &g[i * k..(i + 1) * k];
                        let w = &y.data()[i * k..(i + 1) * k];
                        let inner: T = gw.iter().zip(w).map(|(&g, &w)| g * w).sum::<T>() / kk;
                        for (s, &j) in graph.neighbors(i).iter().enumerate() {
                            let pos = i * n + j as usize;
                            d[pos] = d[pos] + kk / sums[i] * (gw[s] - inner);
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, labels } => {
                let zv = nodes[logits.0].value.data();
                let len = T::from_usize(labels.len()).unwrap();
                acc(*logits, &mut |d| {
                    for ((d, &z), &lab) in d.iter_mut().zip(zv).zip(labels) {
                        *d = *d + g[0] * (sigmoid(z) - lab) / len;
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// One term of the logit-form binary cross-entropy:
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub(crate) fn bce_term<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows_value<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = check_2d("softmax_rows", x)?;
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], data))
}

/// Negative pairwise Euclidean distances between the rows of `x`; exactly
/// symmetric with a zero diagonal.
pub fn proximity_matrix_value<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.rows();
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let d2: T = xi.iter().zip(x.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let v = -d2.sqrt();
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Tensor::from_parts(vec![n, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul_and_selector() {
        let mut g = Graph::new();
        let i2 = g.constant(mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let m = g.constant(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let sel = g.constant(mat(&[vec![1.0, 0.0]]));
        let col = g.constant(mat(&[vec![7.5], vec![-2.0]]));
        let r = g.matmul(sel, col).unwrap();
        assert_eq!(g.value(r).data(), &[7.5]);
        let bad = g.constant(mat(&[vec![1.0, 2.0, 3.0]]));
        assert!(matches!(g.matmul(m, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let a = g.constant(mat(&[vec![0.0, 0.0], vec![0.0, 3f64.ln()], vec![1000.0, 1000.0]]));
        let s = g.softmax_rows(a).unwrap();
        let v = g.value(s).data();
        let expect = [0.5, 0.5, 0.25, 0.75, 0.5, 0.5];
        for (x, e) in v.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[vec![2.0, -3.0, 0.0]]));
        let y = g.leaky_relu(x, 0.01).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, -0.03, 0.0]);
        assert!(g.leaky_relu(x, 1.5).is_err());
    }

    #[test]
    fn leaky_relu_uses_slope_at_zero() {
        let mut g = Graph::new();
        let x = g.param(mat(&[vec![0.0]]));
        let y = g.leaky_relu(x, 0.25).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn l2_normalize_examples() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[vec![3.0, 4.0], vec![0.0, 1.0], vec![0.0, 0.0]]));
        let y = g.l2_normalize_rows(x, 1e-12).unwrap();
        assert_eq!(g.value(y).data(), &[0.6, 0.8, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn neighborhood_max_ties_route_to_first_slot() {
        let graph = NeighborGraph::new(4, 3, vec![1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 2]).unwrap();
        let mut g = Graph::new();
        let vals = g.param(Tensor::filled(&[12, 1], 2.0));
        let m = g.neighborhood_max(vals, &graph).unwrap();
        assert_eq!(g.value(m).data(), &[2.0; 4]);
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();
        let d = grads.get(vals).unwrap().data();
        for i in 0..4 {
            assert_eq!(&d[i * 3..i * 3 + 3], &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn neighborhood_max_single_slot_is_identity() {
        let graph = NeighborGraph::new(2, 1, vec![1, 0]).unwrap();
        let mut g = Graph::new();
        let vals = g.constant(mat(&[vec![1.0, -2.0], vec![3.0, 4.0]]));
        let m = g.neighborhood_max(vals, &graph).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, -2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let graph = NeighborGraph::new(2, 0, vec![]).unwrap();
        let mut g = Graph::new();
        let vals = g.constant(mat(&[vec![1.0], vec![2.0]]));
        assert!(matches!(g.neighborhood_max(vals, &graph), Err(Error::EmptyNeighborhood)));
        assert!(matches!(g.edge_features(vals, &Arc::new(graph)), Err(Error::EmptyNeighborhood)));
    }

    #[test]
    fn backward_simple_losses() {
        let mut g = Graph::new();
        let x = g.param(mat(&[vec![1.0, -2.0, 3.5]]));
        let s = g.sum(x).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        let sq = g.square(x).unwrap();
        let l = g.sum(sq).unwrap();
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), &[2.0, -4.0, 7.0]);
        assert!(matches!(g.backward(x), Err(Error::NonScalarSeed { .. })));
    }

    #[test]
    fn non_finite_forward_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[vec![f64::MAX, f64::MAX]]));
        assert!(matches!(g.add(x, x), Err(Error::NonFinite { op: "add" })));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(mat(&[vec![1.0]]));
        let y = g.param(mat(&[vec![2.0, 3.0]]));
        let l = g.sum(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn proximity_matrix_is_symmetric() {
        let x = mat(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]);
        let pm = proximity_matrix_value(&x);
        let s5 = -(5f64.sqrt());
        assert_eq!(pm.data(), &[0.0, -1.0, -2.0, -1.0, 0.0, s5, -2.0, s5, 0.0]);
    }
}
