//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value and
//! the ids of its parents. Nodes are appended in evaluation order, so the
//! tape is already topologically sorted and `backward` is a single reverse
//! sweep over it.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a · b`, or `a · bᵀ` when `trans_b` is set.
    MatMul { a: Var, b: Var, trans_b: bool },
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    PointwiseMix { maps: Vec<Var>, weights: Var, bias: Var },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    Reshape(Var),
    GroupCombine { weights: Var, feats: Var },
    WeakPerspective { joints: Var, camera: Var },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Grads {
    adjoints: Vec<Option<Tensor>>,
    dims: Vec<Vec<usize>>,
}

impl Grads {
    /// Adjoint of `v`; zeros when `v` does not influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.adjoints[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.dims[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.adjoints[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.dims[v.0]))
    }
}

fn matrix_dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf: adjoints are accumulated for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Same value as `v`, cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn check_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(Error::contract(op, format!("expected a matrix, got dims {:?}", t.dims())));
        }
        Ok(matrix_dims(t))
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da != db {
            return Err(Error::contract(op, format!("{da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.check_matrix("matmul", a)?;
        let (k2, c) = self.check_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::contract("matmul", format!("inner dims {k} vs {k2}")));
        }
        let mut out = Tensor::zeros(&[r, c]);
        gemm(self.value(a), false, self.value(b), false, &mut out, 0.0);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }, &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.check_matrix("matmul_t", a)?;
        let (c, k2) = self.check_matrix("matmul_t", b)?;
        if k != k2 {
            return Err(Error::contract("matmul_t", format!("inner dims {k} vs {k2}")));
        }
        let mut out = Tensor::zeros(&[r, c]);
        gemm(self.value(a), false, self.value(b), true, &mut out, 0.0);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.check_matrix("add_bias", x)?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(Error::contract(
                "add_bias",
                format!("bias of length {} for {c} columns", b.len()),
            ));
        }
        let mut out = self.value(x).clone();
        let bd = b.data().to_vec();
        for i in 0..r {
            for (o, bj) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&bd) {
                *o += bj;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// Affine map `x·w (+ b)` applied to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// Row-wise softmax with per-row max subtraction. Vectors are one row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Per-entry affine blend `Σ_i w_i·maps_i + b` of equally shaped maps.
    /// This is a 1×1 convolution from `maps.len()` channels to one.
    pub fn pointwise_mix(&mut self, maps: &[Var], weights: Var, bias: Var) -> Result<Var> {
        let first = *maps
            .first()
            .ok_or_else(|| Error::contract("pointwise_mix", "no input maps"))?;
        for &m in &maps[1..] {
            self.same_dims("pointwise_mix", first, m)?;
        }
        if self.value(weights).len() != maps.len() || self.value(bias).len() != 1 {
            return Err(Error::contract(
                "pointwise_mix",
                format!(
                    "{} maps need {} weights and 1 bias, got {} and {}",
                    maps.len(),
                    maps.len(),
                    self.value(weights).len(),
                    self.value(bias).len()
                ),
            ));
        }
        let b = self.value(bias).data()[0];
        let mut out = Tensor::filled(self.value(first).dims(), b);
        for (i, &m) in maps.iter().enumerate() {
            let w = self.value(weights).data()[i];
            for (o, x) in out.data_mut().iter_mut().zip(self.nodes[m.0].value.data()) {
                *o += w * x;
            }
        }
        let mut parents = maps.to_vec();
        parents.push(weights);
        parents.push(bias);
        Ok(self.push(
            out,
            Op::PointwiseMix {
                maps: maps.to_vec(),
                weights,
                bias,
            },
            &parents,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.check_matrix("concat_cols", parts[0])?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.check_matrix("concat_cols", p)?;
            if r != rows {
                return Err(Error::contract("concat_cols", format!("row counts {rows} vs {r}")));
            }
            total += c;
        }
        let mut out = Tensor::zeros(&[rows, total]);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for i in 0..rows {
                out.data_mut()[i * total + offset..i * total + offset + c].copy_from_slice(t.row(i));
            }
            offset += c;
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.check_matrix("concat_rows", parts[0])?.1;
        let mut data = Vec::new();
        for &p in parts {
            let (_, c) = self.check_matrix("concat_rows", p)?;
            if c != cols {
                return Err(Error::contract("concat_rows", format!("column counts {cols} vs {c}")));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.check_matrix("slice_cols", x)?;
        if start >= end || end > c {
            return Err(Error::contract("slice_cols", format!("range {start}..{end} of {c}")));
        }
        let w = end - start;
        let src = self.value(x);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let out = Tensor::new(vec![r, w], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Stacks the rows `index[0], index[1], …` of `x`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.check_matrix("gather_rows", x)?;
        if index.is_empty() {
            return Err(Error::contract("gather_rows", "empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::contract("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(dims)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Weighted sums over consecutive row groups: for `weights` of shape
    /// `n×k` and `feats` of shape `(n·k)×c`, row `r` of the result is
    /// `Σ_j weights[r,j] · feats[r·k + j]`.
    pub fn group_combine(&mut self, weights: Var, feats: Var) -> Result<Var> {
        let (n, k) = self.check_matrix("group_combine", weights)?;
        let (nk, c) = self.check_matrix("group_combine", feats)?;
        if n * k != nk {
            return Err(Error::contract(
                "group_combine",
                format!("{n}×{k} weights against {nk} feature rows"),
            ));
        }
        let w = self.value(weights);
        let f = self.value(feats);
        let mut out = Tensor::zeros(&[n, c]);
        for r in 0..n {
            let dst = &mut out.data_mut()[r * c..(r + 1) * c];
            for j in 0..k {
                let a = w.get(r, j);
                for (o, x) in dst.iter_mut().zip(f.row(r * k + j)) {
                    *o += a * x;
                }
            }
        }
        Ok(self.push(out, Op::GroupCombine { weights, feats }, &[weights, feats]))
    }

    /// Weak-perspective projection of flattened joints `N×3J` with per-row
    /// cameras `N×3` holding `(s, tx, ty)`. Output is `N×2J` with `(u, v)`
    /// pairs; depth is dropped.
    pub fn weak_perspective(&mut self, joints: Var, camera: Var) -> Result<Var> {
        let (n, c3) = self.check_matrix("weak_perspective", joints)?;
        let (n2, cc) = self.check_matrix("weak_perspective", camera)?;
        if c3 % 3 != 0 || n != n2 || cc != 3 {
            return Err(Error::contract(
                "weak_perspective",
                format!("joints {n}×{c3} with cameras {n2}×{cc}"),
            ));
        }
        let nj = c3 / 3;
        let jt = self.value(joints);
        let ct = self.value(camera);
        let mut out = Tensor::zeros(&[n, 2 * nj]);
        for i in 0..n {
            let (s, tx, ty) = (ct.get(i, 0), ct.get(i, 1), ct.get(i, 2));
            let row = jt.row(i);
            for j in 0..nj {
                let u = s * row[3 * j] + tx;
                let v = s * row[3 * j + 1] + ty;
                out.set(i, 2 * j, u);
                out.set(i, 2 * j + 1, v);
            }
        }
        Ok(self.push(out, Op::WeakPerspective { joints, camera }, &[joints, camera]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar seed.
    pub fn backward(&self, seed: Var) -> Result<Grads> {
        let seed_val = self.value(seed);
        if seed_val.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("seed must be scalar, has dims {:?}", seed_val.dims()),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[seed.0] = Some(Tensor::filled(seed_val.dims(), 1.0));

        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            self.propagate(node, &dy, &mut adj);
            adj[i] = Some(dy);
        }
        Ok(Grads {
            adjoints: adj,
            dims: self.nodes.iter().map(|n| n.value.dims().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, dy: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                adj[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.dims()))
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (a, b, trans_b) = (*a, *b, *trans_b);
                if self.wants(a) {
                    // out = A·B  => dA = dY·Bᵀ ; out = A·Bᵀ => dA = dY·B
                    gemm(dy, false, val(b), !trans_b, slot!(a), 1.0);
                }
                if self.wants(b) {
                    if trans_b {
                        gemm(dy, true, val(a), false, slot!(b), 1.0);
                    } else {
                        gemm(val(a), true, dy, false, slot!(b), 1.0);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if self.wants(*x) {
                    slot!(*x).add_assign(dy);
                }
                if self.wants(*bias) {
                    let c = dy.cols();
                    let g = slot!(*bias);
                    for r in 0..dy.rows() {
                        for (gj, d) in g.data_mut().iter_mut().zip(&dy.data()[r * c..(r + 1) * c]) {
                            *gj += d;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    slot!(*a).add_assign(dy);
                }
                if self.wants(*b) {
                    slot!(*b).add_assign(dy);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    slot!(*a).add_assign(dy);
                }
                if self.wants(*b) {
                    for (g, d) in slot!(*b).data_mut().iter_mut().zip(dy.data()) {
                        *g -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = val(*b).data();
                    for ((g, d), o) in slot!(*a).data_mut().iter_mut().zip(dy.data()).zip(other) {
                        *g += d * o;
                    }
                }
                if self.wants(*b) {
                    let other = val(*a).data();
                    for ((g, d), o) in slot!(*b).data_mut().iter_mut().zip(dy.data()).zip(other) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(a, f) => {
                for (g, d) in slot!(*a).data_mut().iter_mut().zip(dy.data()) {
                    *g += f * d;
                }
            }
            Op::Offset(a) | Op::Reshape(a) => slot!(*a).add_assign(dy),
            Op::Square(a) => {
                let x = val(*a).data();
                for ((g, d), xi) in slot!(*a).data_mut().iter_mut().zip(dy.data()).zip(x) {
                    *g += 2.0 * xi * d;
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for ((g, d), yi) in slot!(*a).data_mut().iter_mut().zip(dy.data()).zip(y) {
                    *g += d * (1.0 - yi * yi);
                }
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let c = s.cols();
                let g = slot!(*a);
                for r in 0..s.rows() {
                    let srow = &s.data()[r * c..(r + 1) * c];
                    let drow = &dy.data()[r * c..(r + 1) * c];
                    let dot: f64 = srow.iter().zip(drow).map(|(x, y)| x * y).sum();
                    for ((gj, sj), dj) in g.data_mut()[r * c..(r + 1) * c].iter_mut().zip(srow).zip(drow) {
                        *gj += sj * (dj - dot);
                    }
                }
            }
            Op::PointwiseMix { maps, weights, bias } => {
                let w = val(*weights).data().to_vec();
                for (i, &m) in maps.iter().enumerate() {
                    if self.wants(m) {
                        for (g, d) in slot!(m).data_mut().iter_mut().zip(dy.data()) {
                            *g += w[i] * d;
                        }
                    }
                }
                if self.wants(*weights) {
                    let grads: Vec<f64> = maps
                        .iter()
                        .map(|&m| val(m).data().iter().zip(dy.data()).map(|(x, d)| x * d).sum())
                        .collect();
                    for (g, v) in slot!(*weights).data_mut().iter_mut().zip(grads) {
                        *g += v;
                    }
                }
                if self.wants(*bias) {
                    slot!(*bias).data_mut()[0] += dy.sum();
                }
            }
            Op::ConcatCols(parts) => {
                let total = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if self.wants(p) {
                        let g = slot!(p);
                        for r in 0..dy.rows() {
                            let src = &dy.data()[r * total + offset..r * total + offset + c];
                            for (gj, d) in g.data_mut()[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *gj += d;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if self.wants(p) {
                        for (g, d) in slot!(p).data_mut().iter_mut().zip(&dy.data()[offset..offset + n]) {
                            *g += d;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let c = val(*x).cols();
                let w = dy.cols();
                let g = slot!(*x);
                for r in 0..dy.rows() {
                    for (gj, d) in g.data_mut()[r * c + start..r * c + start + w]
                        .iter_mut()
                        .zip(&dy.data()[r * w..(r + 1) * w])
                    {
                        *gj += d;
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let c = dy.cols();
                let g = slot!(*x);
                for (r, &src) in index.iter().enumerate() {
                    for (gj, d) in g.data_mut()[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(&dy.data()[r * c..(r + 1) * c])
                    {
                        *gj += d;
                    }
                }
            }
            Op::GroupCombine { weights, feats } => {
                let (n, k) = matrix_dims(val(*weights));
                let c = dy.cols();
                if self.wants(*weights) {
                    let f = val(*feats);
                    let g = slot!(*weights);
                    for r in 0..n {
                        let drow = &dy.data()[r * c..(r + 1) * c];
                        for j in 0..k {
                            let dot: f64 = f.row(r * k + j).iter().zip(drow).map(|(a, b)| a * b).sum();
                            g.data_mut()[r * k + j] += dot;
                        }
                    }
                }
                if self.wants(*feats) {
                    let w = val(*weights).data().to_vec();
                    let g = slot!(*feats);
                    for r in 0..n {
                        let drow = &dy.data()[r * c..(r + 1) * c];
                        for j in 0..k {
                            let a = w[r * k + j];
                            let dst = &mut g.data_mut()[(r * k + j) * c..(r * k + j + 1) * c];
                            for (gj, d) in dst.iter_mut().zip(drow) {
                                *gj += a * d;
                            }
                        }
                    }
                }
            }
            Op::WeakPerspective { joints, camera } => {
                let jt = val(*joints);
                let ct = val(*camera);
                let n = jt.rows();
                let nj = jt.cols() / 3;
                if self.wants(*joints) {
                    let g = slot!(*joints);
                    for i in 0..n {
                        let s = ct.get(i, 0);
                        for j in 0..nj {
                            g.data_mut()[i * 3 * nj + 3 * j] += s * dy.get(i, 2 * j);
                            g.data_mut()[i * 3 * nj + 3 * j + 1] += s * dy.get(i, 2 * j + 1);
                        }
                    }
                }
                if self.wants(*camera) {
                    let g = slot!(*camera);
                    for i in 0..n {
                        let row = jt.row(i);
                        let (mut ds, mut dtx, mut dty) = (0.0, 0.0, 0.0);
                        for j in 0..nj {
                            let (du, dv) = (dy.get(i, 2 * j), dy.get(i, 2 * j + 1));
                            ds += du * row[3 * j] + dv * row[3 * j + 1];
                            dtx += du;
                            dty += dv;
                        }
                        g.data_mut()[3 * i] += ds;
                        g.data_mut()[3 * i + 1] += dtx;
                        g.data_mut()[3 * i + 2] += dty;
                    }
                }
            }
            Op::Sum(a) => {
                let d = dy.data()[0];
                for g in slot!(*a).data_mut() {
                    *g += d;
                }
            }
            Op::Mean(a) => {
                let d = dy.data()[0] / val(*a).len() as f64;
                for g in slot!(*a).data_mut() {
                    *g += d;
                }
            }
        }
    }
}

/// Row-wise softmax on a plain tensor.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}
