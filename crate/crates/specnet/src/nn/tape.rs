use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis};

use super::{ParamId, ParamStore, Scalar, SparseMatrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    /// Constant or parameter input. Parameter leaves remember their id so
    /// `backward_into` can route gradients back to the store.
    Leaf { param: Option<ParamId> },
    /// y = x * w^T + broadcast(b); x: (n,i), w: (o,i), b: (1,o).
    Linear { x: Var, w: Var, b: Var },
    /// y = a * b.
    Matmul { a: Var, b: Var },
    /// y = a * b^T.
    MatmulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddScalar { a: Var },
    MulScalar { a: Var, c: T },
    LeakyRelu { a: Var, slope: T },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Exp { a: Var },
    Ln { a: Var },
    Sqrt { a: Var },
    Neg { a: Var },
    Clamp { a: Var, lo: T, hi: T },
    /// Softmax over all entries, numerically stabilized by max-subtraction.
    Softmax { a: Var },
    /// Row-wise layer normalization; gamma/beta: (1, f).
    LayerNorm { x: Var, gamma: Var, beta: Var },
    /// y[i,:] = x[i,:] * s[i]; s: (n,1).
    ScaleRows { x: Var, s: Var },
    /// y = x / s where s is a (1,1) tape value.
    DivByScalar { x: Var, s: Var },
    /// (n,f) -> (1,f) mean over rows.
    MeanRows { x: Var },
    /// (n,f) -> (1,f) sum over rows.
    SumRows { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    ConcatCols { a: Var, b: Var },
    /// Stack equal-width parts vertically.
    ConcatRows { parts: Vec<Var> },
    SliceCols { x: Var, start: usize, len: usize },
    /// y[i,:] = x[indices[i],:]; backward scatter-adds.
    GatherRows { x: Var, indices: Vec<usize> },
    /// y = x with row `idx` replaced by `row` (1,f).
    SetRow { x: Var, row: Var, idx: usize },
    /// y = adj * x with fixed coefficients; gradient flows to x only.
    SpMM { adj: Rc<SparseMatrix<T>>, x: Var },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Reverse-mode operation graph for one forward pass.
///
/// Every operation validates shapes and evaluates its value eagerly; nothing
/// broadcasts implicitly. Nodes only reference earlier nodes, so reverse
/// insertion order is a topological order and the backward sweep is a single
/// deterministic pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Value of a (1,1) node as a plain scalar.
    pub fn scalar_value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Array2::zeros((rows, cols)))
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.leaf(Array2::from_elem((1, 1), v))
    }

    /// Enter a shared parameter as a leaf; its gradient is routed back to the
    /// store by [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, i) = self.dims(x);
        let (o, iw) = self.dims(w);
        let (rb, cb) = self.dims(b);
        if i != iw || rb != 1 || cb != o {
            return Err(Error::shape((n, i), ((o, iw), (rb, cb))));
        }
        let mut y = self.nodes[x.0].value.dot(&self.nodes[w.0].value.t());
        for mut row in y.rows_mut() {
            row += &self.nodes[b.0].value.row(0);
        }
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, k) = self.dims(a);
        let (kb, _) = self.dims(b);
        if k != kb {
            return Err(Error::shape(self.dims(a), self.dims(b)));
        }
        let y = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(y, Op::Matmul { a, b }))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, f) = self.dims(a);
        let (_, fb) = self.dims(b);
        if f != fb {
            return Err(Error::shape(self.dims(a), self.dims(b)));
        }
        let y = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        Ok(self.push(y, Op::MatmulNT { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let y = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let y = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(y, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let y = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| v + c);
        self.push(y, Op::AddScalar { a })
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| v * c);
        self.push(y, Op::MulScalar { a, c })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| if v > T::zero() { v } else { v * slope });
        self.push(y, Op::LeakyRelu { a, slope })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| v.tanh());
        self.push(y, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let y = self.nodes[a.0].value.mapv(|v| one / (one + (-v).exp()));
        self.push(y, Op::Sigmoid { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| v.exp());
        self.push(y, Op::Exp { a })
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| v.ln());
        self.push(y, Op::Ln { a })
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| v.sqrt());
        self.push(y, Op::Sqrt { a })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| -v);
        self.push(y, Op::Neg { a })
    }

    /// Elementwise clamp; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let y = self.nodes[a.0].value.mapv(|v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        });
        self.push(y, Op::Clamp { a, lo, hi })
    }

    pub fn clamp_max(&mut self, a: Var, hi: T) -> Var {
        self.clamp(a, T::neg_infinity(), hi)
    }

    /// Softmax over all entries of `a` (any shape), stabilized by
    /// max-subtraction; the result sums to one.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let max = x.iter().copied().fold(T::neg_infinity(), T::max);
        let mut y = x.mapv(|v| (v - max).exp());
        let sum: T = y.iter().copied().sum();
        y.mapv_inplace(|v| v / sum);
        self.push(y, Op::Softmax { a })
    }

    /// Row-wise layer normalization with learnable scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (_, f) = self.dims(x);
        if self.dims(gamma) != (1, f) || self.dims(beta) != (1, f) {
            return Err(Error::shape((1, f), (self.dims(gamma), self.dims(beta))));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let m = T::from_f64(f as f64);
        let mut y = self.nodes[x.0].value.clone();
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        for mut row in y.rows_mut() {
            let mean = row.iter().copied().sum::<T>() / m;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let inv = T::one() / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[(0, j)] + b[(0, j)];
            }
        }
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta }))
    }

    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, _) = self.dims(x);
        if self.dims(s) != (n, 1) {
            return Err(Error::shape((n, 1), self.dims(s)));
        }
        let mut y = self.nodes[x.0].value.clone();
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            let w = self.nodes[s.0].value[(i, 0)];
            row.mapv_inplace(|v| v * w);
        }
        Ok(self.push(y, Op::ScaleRows { x, s }))
    }

    pub fn div_by_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.dims(s) != (1, 1) {
            return Err(Error::shape((1, 1), self.dims(s)));
        }
        let d = self.nodes[s.0].value[(0, 0)];
        let y = self.nodes[x.0].value.mapv(|v| v / d);
        Ok(self.push(y, Op::DivByScalar { x, s }))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, f) = self.dims(x);
        let inv = T::one() / T::from_f64(n as f64);
        let mut y = Array2::zeros((1, f));
        for row in self.nodes[x.0].value.rows() {
            for (j, &v) in row.iter().enumerate() {
                y[(0, j)] += v * inv;
            }
        }
        self.push(y, Op::MeanRows { x })
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (_, f) = self.dims(x);
        let mut y = Array2::zeros((1, f));
        for row in self.nodes[x.0].value.rows() {
            for (j, &v) in row.iter().enumerate() {
                y[(0, j)] += v;
            }
        }
        self.push(y, Op::SumRows { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.nodes[x.0].value.iter().copied().sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let (n, f) = self.dims(x);
        let s: T = self.nodes[x.0].value.iter().copied().sum();
        let m = s / T::from_f64((n * f) as f64);
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll { x })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, _) = self.dims(a);
        let (nb, _) = self.dims(b);
        if na != nb {
            return Err(Error::shape(self.dims(a), self.dims(b)));
        }
        let y = concatenate(
            Axis(1),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .expect("column widths validated");
        Ok(self.push(y, Op::ConcatCols { a, b }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("at least one row part", "none"));
        }
        let f = self.dims(parts[0]).1;
        for &p in parts {
            if self.dims(p).1 != f {
                return Err(Error::shape((0, f), self.dims(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p.0].value.view()).collect();
        let y = concatenate(Axis(0), &views).expect("column widths validated");
        Ok(self.push(
            y,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (_, f) = self.dims(x);
        if start + len > f {
            return Err(Error::shape((0, f), (start, len)));
        }
        let y = self.nodes[x.0]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        Ok(self.push(y, Op::SliceCols { x, start, len }))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (n, f) = self.dims(x);
        if indices.iter().any(|&i| i >= n) {
            return Err(Error::shape((n, f), indices));
        }
        let mut y = Array2::zeros((indices.len(), f));
        for (k, &i) in indices.iter().enumerate() {
            y.row_mut(k).assign(&self.nodes[x.0].value.row(i));
        }
        Ok(self.push(
            y,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn set_row(&mut self, x: Var, row: Var, idx: usize) -> Result<Var> {
        let (n, f) = self.dims(x);
        if idx >= n || self.dims(row) != (1, f) {
            return Err(Error::shape((n, f), (idx, self.dims(row))));
        }
        let mut y = self.nodes[x.0].value.clone();
        y.row_mut(idx).assign(&self.nodes[row.0].value.row(0));
        Ok(self.push(y, Op::SetRow { x, row, idx }))
    }

    pub fn spmm(&mut self, adj: Rc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let (n, _) = self.dims(x);
        if adj.cols() != n {
            return Err(Error::shape(adj.cols(), n));
        }
        let y = adj.mul_dense(&self.nodes[x.0].value);
        Ok(self.push(y, Op::SpMM { adj, x }))
    }

    /// Gradients of a scalar-valued node with respect to every tape node.
    ///
    /// Returns one optional gradient per node; nodes the loss does not depend
    /// on stay `None`.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Array2<T>>>> {
        self.gradients_scaled(loss, T::one())
    }

    pub fn gradients_scaled(&self, loss: Var, seed: T) -> Result<Vec<Option<Array2<T>>>> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::shape((1, 1), self.dims(loss)));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), seed));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-inserted below so callers can still read leaf grads.
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Run backward from `loss` (seeded with `seed`) and add parameter-leaf
    /// gradients into the store, in leaf creation order.
    pub fn backward_into(&self, loss: Var, seed: T, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients_scaled(loss, seed)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads[i] {
                    store.accumulate_grad(id, g)?;
                }
            }
        }
        Ok(())
    }

    fn add_grad(&self, grads: &mut [Option<Array2<T>>], v: Var, delta: Array2<T>) {
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, i: usize, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Linear { x, w, b } => {
                self.add_grad(grads, *x, g.dot(&val(*w).view()));
                self.add_grad(grads, *w, g.t().dot(val(*x)));
                let mut gb = Array2::zeros((1, g.ncols()));
                for row in g.rows() {
                    for (j, &v) in row.iter().enumerate() {
                        gb[(0, j)] += v;
                    }
                }
                self.add_grad(grads, *b, gb);
            }
            Op::Matmul { a, b } => {
                self.add_grad(grads, *a, g.dot(&val(*b).t()));
                self.add_grad(grads, *b, val(*a).t().dot(g));
            }
            Op::MatmulNT { a, b } => {
                self.add_grad(grads, *a, g.dot(val(*b)));
                self.add_grad(grads, *b, g.t().dot(val(*a)));
            }
            Op::Add { a, b } => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul { a, b } => {
                self.add_grad(grads, *a, g * val(*b));
                self.add_grad(grads, *b, g * val(*a));
            }
            Op::AddScalar { a } => {
                self.add_grad(grads, *a, g.clone());
            }
            Op::MulScalar { a, c } => {
                self.add_grad(grads, *a, g.mapv(|v| v * *c));
            }
            Op::LeakyRelu { a, slope } => {
                let mut gx = g.clone();
                ndarray::Zip::from(&mut gx)
                    .and(val(*a))
                    .for_each(|gv, &xv| {
                        if xv <= T::zero() {
                            *gv *= *slope;
                        }
                    });
                self.add_grad(grads, *a, gx);
            }
            Op::Tanh { a } => {
                self.add_grad(grads, *a, g * &out.mapv(|y| T::one() - y * y));
            }
            Op::Sigmoid { a } => {
                self.add_grad(grads, *a, g * &out.mapv(|y| y * (T::one() - y)));
            }
            Op::Exp { a } => {
                self.add_grad(grads, *a, g * out);
            }
            Op::Ln { a } => {
                self.add_grad(grads, *a, g / val(*a));
            }
            Op::Sqrt { a } => {
                let half = T::from_f64(0.5);
                self.add_grad(grads, *a, g * &out.mapv(|y| half / y));
            }
            Op::Neg { a } => {
                self.add_grad(grads, *a, g.mapv(|v| -v));
            }
            Op::Clamp { a, lo, hi } => {
                let mut gx = g.clone();
                ndarray::Zip::from(&mut gx)
                    .and(val(*a))
                    .for_each(|gv, &xv| {
                        if xv <= *lo || xv >= *hi {
                            *gv = T::zero();
                        }
                    });
                self.add_grad(grads, *a, gx);
            }
            Op::Softmax { a } => {
                let dot: T = out.iter().zip(g.iter()).map(|(&y, &gy)| y * gy).sum();
                let gx = ndarray::Zip::from(out)
                    .and(g)
                    .map_collect(|&y, &gy| y * (gy - dot));
                self.add_grad(grads, *a, gx);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = val(*x);
                let gv = val(*gamma);
                let (n, f) = xv.dim();
                let m = T::from_f64(f as f64);
                let eps = T::from_f64(LAYER_NORM_EPS);
                let mut gx = Array2::zeros((n, f));
                let mut ggamma = Array2::zeros((1, f));
                let mut gbeta = Array2::zeros((1, f));
                for r in 0..n {
                    let row = xv.row(r);
                    let mean = row.iter().copied().sum::<T>() / m;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
                    let inv = T::one() / (var + eps).sqrt();
                    // x_hat and the two row means the gradient needs.
                    let mut mean_gxh = T::zero();
                    let mut mean_gxh_xh = T::zero();
                    let mut xh = vec![T::zero(); f];
                    let mut gxh = vec![T::zero(); f];
                    for j in 0..f {
                        xh[j] = (xv[(r, j)] - mean) * inv;
                        gxh[j] = g[(r, j)] * gv[(0, j)];
                        mean_gxh += gxh[j];
                        mean_gxh_xh += gxh[j] * xh[j];
                        ggamma[(0, j)] += g[(r, j)] * xh[j];
                        gbeta[(0, j)] += g[(r, j)];
                    }
                    mean_gxh /= m;
                    mean_gxh_xh /= m;
                    for j in 0..f {
                        gx[(r, j)] = (gxh[j] - mean_gxh - xh[j] * mean_gxh_xh) * inv;
                    }
                }
                self.add_grad(grads, *x, gx);
                self.add_grad(grads, *gamma, ggamma);
                self.add_grad(grads, *beta, gbeta);
            }
            Op::ScaleRows { x, s } => {
                let xv = val(*x);
                let sv = val(*s);
                let (n, f) = xv.dim();
                let mut gx = Array2::zeros((n, f));
                let mut gs = Array2::zeros((n, 1));
                for r in 0..n {
                    let w = sv[(r, 0)];
                    let mut acc = T::zero();
                    for j in 0..f {
                        gx[(r, j)] = g[(r, j)] * w;
                        acc += g[(r, j)] * xv[(r, j)];
                    }
                    gs[(r, 0)] = acc;
                }
                self.add_grad(grads, *x, gx);
                self.add_grad(grads, *s, gs);
            }
            Op::DivByScalar { x, s } => {
                let d = val(*s)[(0, 0)];
                self.add_grad(grads, *x, g.mapv(|v| v / d));
                let num: T = g
                    .iter()
                    .zip(val(*x).iter())
                    .map(|(&gy, &xv)| gy * xv)
                    .sum();
                let gs = Array2::from_elem((1, 1), -num / (d * d));
                self.add_grad(grads, *s, gs);
            }
            Op::MeanRows { x } => {
                let (n, f) = val(*x).dim();
                let inv = T::one() / T::from_f64(n as f64);
                let mut gx = Array2::zeros((n, f));
                for r in 0..n {
                    for j in 0..f {
                        gx[(r, j)] = g[(0, j)] * inv;
                    }
                }
                self.add_grad(grads, *x, gx);
            }
            Op::SumRows { x } => {
                let (n, f) = val(*x).dim();
                let mut gx = Array2::zeros((n, f));
                for r in 0..n {
                    for j in 0..f {
                        gx[(r, j)] = g[(0, j)];
                    }
                }
                self.add_grad(grads, *x, gx);
            }
            Op::SumAll { x } => {
                let s = g[(0, 0)];
                self.add_grad(grads, *x, Array2::from_elem(val(*x).raw_dim(), s));
            }
            Op::MeanAll { x } => {
                let (n, f) = val(*x).dim();
                let s = g[(0, 0)] / T::from_f64((n * f) as f64);
                self.add_grad(grads, *x, Array2::from_elem((n, f), s));
            }
            Op::ConcatCols { a, b } => {
                let fa = val(*a).ncols();
                self.add_grad(grads, *a, g.slice(ndarray::s![.., ..fa]).to_owned());
                self.add_grad(grads, *b, g.slice(ndarray::s![.., fa..]).to_owned());
            }
            Op::ConcatRows { parts } => {
                let mut start = 0;
                for &p in parts {
                    let rows = val(p).nrows();
                    self.add_grad(
                        grads,
                        p,
                        g.slice(ndarray::s![start..start + rows, ..]).to_owned(),
                    );
                    start += rows;
                }
            }
            Op::SliceCols { x, start, len } => {
                let mut gx = Array2::zeros(val(*x).raw_dim());
                gx.slice_mut(ndarray::s![.., *start..*start + *len])
                    .assign(g);
                self.add_grad(grads, *x, gx);
            }
            Op::GatherRows { x, indices } => {
                let mut gx = Array2::zeros(val(*x).raw_dim());
                for (k, &idx) in indices.iter().enumerate() {
                    let mut row = gx.row_mut(idx);
                    row += &g.row(k);
                }
                self.add_grad(grads, *x, gx);
            }
            Op::SetRow { x, row, idx } => {
                let mut gx = g.clone();
                gx.row_mut(*idx).fill(T::zero());
                self.add_grad(grads, *x, gx);
                let grow = g.row(*idx).to_owned().insert_axis(Axis(0));
                self.add_grad(grads, *row, grow);
            }
            Op::SpMM { adj, x } => {
                self.add_grad(grads, *x, adj.mul_dense_transposed(g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use ndarray::array;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_identity_and_1x1() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let w = tape.leaf(array![[1.0, 0.0], [0.0, 1.0]]);
        let b = tape.leaf(array![[0.0, 0.0]]);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y), &array![[1.0, 2.0], [3.0, 4.0]]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(array![[5.0]]);
        let w = tape.leaf(array![[2.0]]);
        let b = tape.leaf(array![[3.0]]);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y)[(0, 0)], 13.0);
    }

    #[test]
    fn linear_rejects_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        let w = tape.leaf(array![[1.0, 0.0, 3.0]]);
        let b = tape.leaf(array![[0.0]]);
        assert!(matches!(
            tape.linear(x, w, b),
            Err(crate::Error::Shape { .. })
        ));
        let a = tape.leaf(array![[1.0, 2.0]]);
        let c = tape.leaf(array![[1.0], [2.0]]);
        assert!(tape.add(a, c).is_err());
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let x = store.register("x", random_array(&mut rng, 4, 3));
        let w = store.register("w", random_array(&mut rng, 2, 3));
        let b = store.register("b", random_array(&mut rng, 1, 2));
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, x);
            let w = tape.param(store, w);
            let b = tape.param(store, b);
            let y = tape.linear(x, w, b)?;
            // Square so the loss actually depends on w and b curvature.
            let y2 = tape.mul(y, y)?;
            Ok(tape.sum_all(y2))
        })
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn leaky_relu_values_and_subgradient_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(array![[1.0, -1.0, 0.0]]);
        let y = tape.leaky_relu(x, 0.01);
        assert_eq!(tape.value(y), &array![[1.0, -0.01, 0.0]]);
        let s = tape.sum_all(y);
        let grads = tape.gradients(s).unwrap();
        // Subgradient at exactly zero is fixed to the slope.
        assert_eq!(grads[x.0].as_ref().unwrap(), &array![[1.0, 0.01, 0.01]]);
    }

    #[test]
    fn leaky_relu_gradient_away_from_kink() {
        let mut store = ParamStore::new();
        let x = store.register("x", array![[0.7, -0.9, 1.3, -2.1]]);
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, x);
            let y = tape.leaky_relu(x, 0.01);
            Ok(tape.sum_all(y))
        })
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn layer_norm_constant_row_is_zeroed_by_eps() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(array![[3.0, 3.0, 3.0, 3.0]]);
        let gamma = tape.leaf(array![[1.0, 1.0, 1.0, 1.0]]);
        let beta = tape.leaf(array![[0.0, 0.0, 0.0, 0.0]]);
        let y = tape.layer_norm(x, gamma, beta).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_unit_variance_pair() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(array![[1.0, -1.0]]);
        let gamma = tape.leaf(array![[1.0, 1.0]]);
        let beta = tape.leaf(array![[0.0, 0.0]]);
        let y = tape.layer_norm(x, gamma, beta).unwrap();
        // Closed form: (x - 0) / sqrt(1 + 1e-5).
        let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((tape.value(y)[(0, 0)] - expect).abs() < 1e-12);
        assert!((tape.value(y)[(0, 1)] + expect).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_output_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(random_array(&mut rng, 5, 32));
        let gamma = tape.leaf(Array2::from_elem((1, 32), 1.7));
        let beta = tape.leaf(Array2::from_elem((1, 32), 0.3));
        let y = tape.layer_norm(x, gamma, beta).unwrap();
        for row in tape.value(y).rows() {
            let mean = row.sum() / 32.0;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            assert!((mean - 0.3).abs() < 1e-6);
            assert!((var - 1.7 * 1.7).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let single = tape.leaf(array![[4.2]]);
        let y = tape.softmax(single);
        assert_eq!(tape.value(y)[(0, 0)], 1.0);

        let equal = tape.leaf(Array2::from_elem((4, 1), 0.77));
        let y = tape.softmax(equal);
        assert!(tape.value(y).iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let two = tape.leaf(array![[0.0], [3.0f64.ln()]]);
        let y = tape.softmax(two);
        assert!((tape.value(y)[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((tape.value(y)[(1, 0)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..7).map(|_| rng.random_range(-30.0..30.0)).collect();
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Array2::from_shape_vec((7, 1), scores.clone()).unwrap());
            let y = tape.softmax(x);
            let sum: f64 = tape.value(y).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);

            // Reversal permutation.
            let rev: Vec<f64> = scores.iter().rev().copied().collect();
            let mut tape2 = Tape::<f64>::new();
            let x2 = tape2.leaf(Array2::from_shape_vec((7, 1), rev).unwrap());
            let y2 = tape2.softmax(x2);
            for i in 0..7 {
                assert!((tape.value(y)[(i, 0)] - tape2.value(y2)[(6 - i, 0)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structural_ops_gradients_match_finite_differences() {
        // One composite touching gather/set-row/concat/scale/mean/div/spmm.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let x = store.register("x", random_array(&mut rng, 5, 3));
        let row = store.register("row", random_array(&mut rng, 1, 3));
        let s = store.register("s", random_array(&mut rng, 3, 1));
        let p = store.register("p", random_array(&mut rng, 1, 3));
        let adj = Rc::new(SparseMatrix::new(
            5,
            5,
            vec![
                (0, 1, 0.5),
                (1, 0, 0.5),
                (2, 2, 1.0),
                (3, 4, 0.25),
                (4, 3, 0.25),
                (0, 0, 1.0),
            ],
        ));
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, x);
            let row = tape.param(store, row);
            let s = tape.param(store, s);
            let p = tape.param(store, p);
            let x1 = tape.set_row(x, row, 2)?;
            let x2 = tape.spmm(adj.clone(), x1)?;
            let g = tape.gather_rows(x2, &[0, 2, 4])?;
            let gs = tape.scale_rows(g, s)?;
            let m = tape.mean_rows(gs);
            let c = tape.concat_cols(m, p)?;
            let sc = tape.slice_cols(c, 1, 3)?;
            let t = tape.tanh(sc);
            let sig = tape.sigmoid(t);
            let norm2 = tape.mul(p, p)?;
            let norm2 = tape.sum_all(norm2);
            let norm = tape.sqrt(norm2);
            let scores = tape.matmul_nt(sig, p)?;
            let scaled = tape.div_by_scalar(scores, norm)?;
            let e = tape.exp(scaled);
            let l = tape.ln(e);
            let sm = tape.softmax(l);
            let stacked = tape.concat_rows(&[sm, sm])?;
            Ok(tape.mean_all(stacked))
        })
        .unwrap();
        assert!(report.passes(1e-4), "report: {:?}", report.per_param);
    }

    #[test]
    fn grad_check_detects_corrupted_gradients() {
        // Negative control: the function changes between the analytic pass
        // and the FD re-evaluations, so the comparison must fail.
        use std::cell::Cell;
        let calls = Cell::new(0usize);
        let mut store = ParamStore::new();
        let w = store.register("w", array![[0.4, -0.8]]);
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let n = calls.get();
            calls.set(n + 1);
            let w = tape.param(store, w);
            let y = if n == 0 {
                tape.mul(w, w)?
            } else {
                let w2 = tape.mul(w, w)?;
                tape.mul(w2, w)?
            };
            Ok(tape.sum_all(y))
        })
        .unwrap();
        assert!(!report.passes(1e-4), "corruption must be detected");
    }

    #[test]
    fn backward_into_accumulates_across_samples() {
        let mut store = ParamStore::new();
        let w = store.register("w", array![[2.0]]);
        for _ in 0..3 {
            let mut tape = Tape::new();
            let wv = tape.param(&store, w);
            let y = tape.mul(wv, wv).unwrap();
            let loss = tape.sum_all(y);
            tape.backward_into(loss, 1.0, &mut store).unwrap();
        }
        // d(w^2)/dw = 2w = 4, accumulated three times.
        assert_eq!(store.grad(w)[(0, 0)], 12.0);
    }
}

