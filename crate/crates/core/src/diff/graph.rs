//! Reverse-mode differentiation over 2-D values.
//!
//! A [`Graph`] is a Wengert list: every operation appends a node holding its
//! value and the indices of its inputs. Scalars are `1 x 1`, vectors are
//! `1 x n`. Parameters enter through [`Graph::param`], which snapshots the
//! current value; [`Graph::backward`] writes `d loss / d param` back into the
//! store.

use super::kernels::gemm;
use super::{DiffError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRow { x: Var, row: Var },
    MulRow { x: Var, row: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Min(Var, Var),
    Max(Var, Var),
    SumAll(Var),
    SumCols(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    dims: (usize, usize),
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims_of(t: &Tensor) -> Result<(usize, usize), DiffError> {
    match t.shape() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        other => Err(DiffError::NotMatrix(other.to_vec())),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, dims: (usize, usize), op: Op) -> Var {
        debug_assert_eq!(value.len(), dims.0 * dims.1);
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::MatMul { a, b, .. } => self.ng(*a) || self.ng(*b),
            Op::AddRow { x, row } | Op::MulRow { x, row } => self.ng(*x) || self.ng(*row),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Min(a, b) | Op::Max(a, b) => {
                self.ng(*a) || self.ng(*b)
            }
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Square(x)
            | Op::Clamp { x, .. }
            | Op::SumAll(x)
            | Op::SumCols(x)
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. } => self.ng(*x),
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.iter().any(|p| self.ng(*p)),
        };
        self.nodes.push(Node {
            value,
            dims,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].dims
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.dims(v), (1, 1));
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("node dims are positive")
    }

    /// Whether gradients flow from this node back to any parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn constant(&mut self, t: &Tensor) -> Result<Var, DiffError> {
        let dims = dims_of(t)?;
        Ok(self.push(t.data().to_vec(), dims, Op::Leaf))
    }

    pub fn constant_data(&mut self, data: Vec<f64>, dims: (usize, usize)) -> Result<Var, DiffError> {
        if data.len() != dims.0 * dims.1 || dims.0 == 0 || dims.1 == 0 {
            return Err(DiffError::DataLength {
                shape: vec![dims.0, dims.1],
                expected: dims.0 * dims.1,
                got: data.len(),
            });
        }
        Ok(self.push(data, dims, Op::Leaf))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, DiffError> {
        let t = store.get(id);
        let dims = dims_of(t)?;
        Ok(self.push(t.data().to_vec(), dims, Op::Param(id)))
    }

    /// Copy of `v` with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (value, dims) = (n.value.clone(), n.dims);
        self.push(value, dims, Op::Leaf)
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, DiffError> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        let (m, k) = if ta { (ad.1, ad.0) } else { ad };
        let (k2, n) = if tb { (bd.1, bd.0) } else { bd };
        if k != k2 {
            return Err(DiffError::Shape {
                op: "matmul",
                left: (m, k),
                right: (k2, n),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), ad, ta, self.value(b), bd, tb, 0.0, &mut out);
        Ok(self.push(out, (m, n), Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.matmul_t(a, false, b, false)
    }

    /// Add a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, DiffError> {
        let (xd, rd) = (self.dims(x), self.dims(row));
        if rd != (1, xd.1) {
            return Err(DiffError::Shape {
                op: "add_row",
                left: xd,
                right: rd,
            });
        }
        let r = self.value(row);
        let out: Vec<f64> = self
            .value(x)
            .chunks(xd.1)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        Ok(self.push(out, xd, Op::AddRow { x, row }))
    }

    /// Multiply every row of `x` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, DiffError> {
        let (xd, rd) = (self.dims(x), self.dims(row));
        if rd != (1, xd.1) {
            return Err(DiffError::Shape {
                op: "mul_row",
                left: xd,
                right: rd,
            });
        }
        let r = self.value(row);
        let out: Vec<f64> = self
            .value(x)
            .chunks(xd.1)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a * b))
            .collect();
        Ok(self.push(out, xd, Op::MulRow { x, row }))
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), DiffError> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad != bd {
            return Err(DiffError::Shape {
                op,
                left: ad,
                right: bd,
            });
        }
        Ok(ad)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect()
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(x).iter().map(|v| f(*v)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.same_dims("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, d, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.same_dims("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, d, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.same_dims("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, d, Op::Mul(a, b)))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.same_dims("minimum", a, b)?;
        let out = self.zip_with(a, b, |x, y| if y < x { y } else { x });
        Ok(self.push(out, d, Op::Min(a, b)))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.same_dims("maximum", a, b)?;
        let out = self.zip_with(a, b, |x, y| if y > x { y } else { x });
        Ok(self.push(out, d, Op::Max(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v * c);
        let d = self.dims(x);
        self.push(out, d, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v + c);
        let d = self.dims(x);
        self.push(out, d, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        let d = self.dims(x);
        self.push(out, d, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::exp);
        let d = self.dims(x);
        self.push(out, d, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        let d = self.dims(x);
        self.push(out, d, Op::Square(x))
    }

    /// Clamp into `[lo, hi]`; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.map(x, |v| v.clamp(lo, hi));
        let d = self.dims(x);
        self.push(out, d, Op::Clamp { x, lo, hi })
    }

    // ── reductions and reshaping ────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], (1, 1), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `r x c` to `r x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out: Vec<f64> = self.value(x).chunks(c).map(|row| row.iter().sum()).collect();
        self.push(out, (r, 1), Op::SumCols(x))
    }

    /// Row means: `r x c` to `r x 1`.
    pub fn mean_cols(&mut self, x: Var) -> Var {
        let c = self.dims(x).1 as f64;
        let s = self.sum_cols(x);
        self.scale(s, 1.0 / c)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(DiffError::Shape {
                op: "slice_rows",
                left: (r, c),
                right: (start, len),
            });
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        Ok(self.push(out, (len, c), Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(DiffError::Shape {
                op: "slice_cols",
                left: (r, c),
                right: (start, len),
            });
        }
        let out: Vec<f64> = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(out, (r, len), Op::SliceCols { x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::Contract("concat_rows of nothing".into()))?;
        let c = self.dims(*first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let d = self.dims(*p);
            if d.1 != c {
                return Err(DiffError::Shape {
                    op: "concat_rows",
                    left: (rows, c),
                    right: d,
                });
            }
            rows += d.0;
            out.extend_from_slice(self.value(*p));
        }
        Ok(self.push(out, (rows, c), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::Contract("concat_cols of nothing".into()))?;
        let r = self.dims(*first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let d = self.dims(*p);
            if d.0 != r {
                return Err(DiffError::Shape {
                    op: "concat_cols",
                    left: (r, widths.iter().sum()),
                    right: d,
                });
            }
            widths.push(d.1);
        }
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(out, (r, c), Op::ConcatCols(parts.to_vec())))
    }

    /// First non-finite node value, if any.
    pub fn check_finite(&self) -> Result<(), DiffError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(j) = n.value.iter().position(|v| !v.is_finite()) {
                return Err(DiffError::NonFinite {
                    what: format!("graph node {i}"),
                    index: j,
                    value: n.value[j],
                });
            }
        }
        Ok(())
    }

    // ── reverse pass ────────────────────────────────────────────────

    /// Gradient of a scalar `loss` with respect to every node.
    fn node_grads(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>, DiffError> {
        let ld = self.dims(loss);
        if ld != (1, 1) {
            return Err(DiffError::NonScalarLoss(ld));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            self.propagate(node, &up, &mut grads);
            grads[i] = Some(up);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ad, bd) = (self.dims(*a), self.dims(*b));
                let cd = node.dims;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    if *ta {
                        gemm(bv, bd, *tb, up, cd, true, 1.0, g);
                    } else {
                        gemm(up, cd, false, bv, bd, !*tb, 1.0, g);
                    }
                });
                acc(*b, &mut |g| {
                    if *tb {
                        gemm(up, cd, true, av, ad, *ta, 1.0, g);
                    } else {
                        gemm(av, ad, !*ta, up, cd, false, 1.0, g);
                    }
                });
            }
            Op::AddRow { x, row } => {
                let c = node.dims.1;
                acc(*x, &mut |g| add_into(g, up));
                acc(*row, &mut |g| {
                    for chunk in up.chunks(c) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::MulRow { x, row } => {
                let c = node.dims.1;
                let (xv, rv) = (self.value(*x), self.value(*row));
                acc(*x, &mut |g| {
                    for (i, (gi, u)) in g.iter_mut().zip(up).enumerate() {
                        *gi += u * rv[i % c];
                    }
                });
                acc(*row, &mut |g| {
                    for (i, (u, xi)) in up.iter().zip(xv).enumerate() {
                        g[i % c] += u * xi;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                acc(*b, &mut |g| add_into(g, up));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                acc(*b, &mut |g| g.iter_mut().zip(up).for_each(|(gi, u)| *gi -= u));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for ((gi, u), y) in g.iter_mut().zip(up).zip(bv) {
                        *gi += u * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, u), x) in g.iter_mut().zip(up).zip(av) {
                        *gi += u * x;
                    }
                });
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let out = &node.value;
                let av = self.value(*a);
                // The output equals `a` wherever `a` was selected (ties included).
                acc(*a, &mut |g| {
                    for ((gi, u), (o, x)) in g.iter_mut().zip(up).zip(out.iter().zip(av)) {
                        if o == x {
                            *gi += u;
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, u), (o, x)) in g.iter_mut().zip(up).zip(out.iter().zip(av)) {
                        if o != x {
                            *gi += u;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |g| {
                g.iter_mut().zip(up).for_each(|(gi, u)| *gi += c * u)
            }),
            Op::AddScalar(x) => acc(*x, &mut |g| add_into(g, up)),
            Op::Tanh(x) => {
                let out = &node.value;
                acc(*x, &mut |g| {
                    for ((gi, u), y) in g.iter_mut().zip(up).zip(out) {
                        *gi += u * (1.0 - y * y);
                    }
                });
            }
            Op::Exp(x) => {
                let out = &node.value;
                acc(*x, &mut |g| {
                    for ((gi, u), y) in g.iter_mut().zip(up).zip(out) {
                        *gi += u * y;
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |g| {
                    for ((gi, u), v) in g.iter_mut().zip(up).zip(xv) {
                        *gi += 2.0 * u * v;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                acc(*x, &mut |g| {
                    for ((gi, u), v) in g.iter_mut().zip(up).zip(xv) {
                        if *v >= *lo && *v <= *hi {
                            *gi += u;
                        }
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |g| g.iter_mut().for_each(|gi| *gi += up[0])),
            Op::SumCols(x) => {
                let c = self.dims(*x).1;
                acc(*x, &mut |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += up[i / c];
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = node.dims.1;
                acc(*x, &mut |g| add_into(&mut g[start * c..start * c + up.len()], up));
            }
            Op::SliceCols { x, start } => {
                let (r, w) = node.dims;
                let c = self.dims(*x).1;
                acc(*x, &mut |g| {
                    for i in 0..r {
                        add_into(&mut g[i * c + start..i * c + start + w], &up[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(*p, &mut |g| add_into(g, &up[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, c) = node.dims;
                let mut col = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    acc(*p, &mut |g| {
                        for i in 0..r {
                            add_into(&mut g[i * w..(i + 1) * w], &up[i * c + col..i * c + col + w]);
                        }
                    });
                    col += w;
                }
            }
        }
    }

    /// Write `d loss / d param` into the store's gradient slots.
    ///
    /// The store must have been zeroed since the previous backward pass.
    /// Parameters that do not reach `loss` keep a zero gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), DiffError> {
        let ld = self.dims(loss);
        if ld != (1, 1) {
            return Err(DiffError::NonScalarLoss(ld));
        }
        store.begin_backward()?;
        let grads = self.node_grads(loss)?;
        for (node, grad) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to an arbitrary node, without
    /// touching any parameter store.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>, DiffError> {
        let grads = self.node_grads(loss)?;
        Ok(grads
            .get(wrt.0)
            .cloned()
            .flatten()
            .unwrap_or_else(|| vec![0.0; self.nodes[wrt.0].value.len()]))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, t)| store.add(*n, "g", t.clone()))
            .collect();
        (store, ids)
    }

    #[test]
    fn linear_map_gradient_is_input() {
        // loss = sum(W x) with x fixed: dW[i][j] = x[j].
        let w = Tensor::from_rows(&[vec![0.3, -0.2, 0.5], vec![1.0, 2.0, -1.0]]).unwrap();
        let (mut store, ids) = store_with(&[("w", w)]);
        let mut g = Graph::new();
        let wv = g.param(&store, ids[0]).unwrap();
        let x = g.constant_data(vec![1.5, -2.0, 0.25], (3, 1)).unwrap();
        let y = g.matmul(wv, x).unwrap();
        let loss = g.sum(y);
        store.zero_grad();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad().unwrap(), &[1.5, -2.0, 0.25, 1.5, -2.0, 0.25]);
    }

    #[test]
    fn tanh_squared_has_zero_gradient_at_origin() {
        let (mut store, ids) = store_with(&[("w", Tensor::scalar(0.0))]);
        let mut g = Graph::new();
        let w = g.param(&store, ids[0]).unwrap();
        let t = g.tanh(w);
        let loss = g.square(t);
        store.zero_grad();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_unzeroed() {
        let (mut store, ids) = store_with(&[("w", Tensor::zeros(&[2, 2]))]);
        let mut g = Graph::new();
        let w = g.param(&store, ids[0]).unwrap();
        store.zero_grad();
        assert_eq!(g.backward(w, &mut store), Err(DiffError::NonScalarLoss((2, 2))));
        let loss = g.sum(w);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(g.backward(loss, &mut store), Err(DiffError::GradNotZeroed));
        store.zero_grad();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad().unwrap(), &[1.0; 4]);
    }

    #[test]
    fn detach_cuts_the_gradient_path() {
        let (mut store, ids) = store_with(&[("w", Tensor::scalar(2.0))]);
        let mut g = Graph::new();
        let w = g.param(&store, ids[0]).unwrap();
        let d = g.detach(w);
        assert!(!g.requires_grad(d));
        let loss = g.square(d);
        store.zero_grad();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn min_max_clamp_route_gradients() {
        let mut g = Graph::new();
        let mut store = ParamStore::new();
        let id = store.add("x", "g", Tensor::from_rows(&[vec![0.5, 2.0, -3.0]]).unwrap());
        let x = g.param(&store, id).unwrap();
        let c = g.constant_data(vec![1.0, 1.0, 1.0], (1, 3)).unwrap();
        let lo = g.minimum(x, c).unwrap();
        let hi = g.maximum(x, c).unwrap();
        let cl = g.clamp(x, -1.0, 1.0);
        let s1 = g.sum(lo);
        let s2 = g.sum(hi);
        let s3 = g.sum(cl);
        assert_eq!(g.grad_of(s1, x).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(g.grad_of(s2, x).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(g.grad_of(s3, x).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn slicing_and_concat_round_trip_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("x", "g", Tensor::new(vec![3, 2], (0..6).map(f64::from).collect()).unwrap());
        let mut g = Graph::new();
        let x = g.param(&store, id).unwrap();
        let top = g.slice_rows(x, 0, 1).unwrap();
        let rest = g.slice_rows(x, 1, 2).unwrap();
        let back = g.concat_rows(&[rest, top]).unwrap();
        assert_eq!(g.value(back), &[2.0, 3.0, 4.0, 5.0, 0.0, 1.0]);
        let left = g.slice_cols(x, 0, 1).unwrap();
        let sq = g.square(left);
        let both = g.concat_cols(&[x, sq]).unwrap();
        assert_eq!(g.dims(both), (3, 3));
        let weights = g.constant_data((1..=9).map(f64::from).collect(), (3, 3)).unwrap();
        let prod = g.mul(both, weights).unwrap();
        let loss = g.sum(prod);
        // d/dx[i][0] = w[i][0] + 2 x[i][0] w[i][2]; d/dx[i][1] = w[i][1]
        let grad = g.grad_of(loss, x).unwrap();
        assert_eq!(grad, vec![1.0, 2.0, 4.0 + 2.0 * 2.0 * 6.0, 5.0, 7.0 + 2.0 * 4.0 * 9.0, 8.0]);
    }
}
