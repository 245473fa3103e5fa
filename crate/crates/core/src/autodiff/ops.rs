//! Primitive operations with registered adjoints.
//!
//! Elementwise binary ops accept identical shapes, or a single-element
//! operand against any tensor. Nothing else broadcasts; use
//! [`Var::expand_rows`] explicitly.

use std::rc::Rc;

use super::tensor::gemm;
use super::{AdError, BackwardArgs, Tensor, Var};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast, AdError> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if a.is_scalar_like() {
        Ok(Bcast::LhsScalar)
    } else if b.is_scalar_like() {
        Ok(Bcast::RhsScalar)
    } else {
        Err(AdError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// Shapes a per-element gradient back onto an operand that may have been a
/// broadcast scalar.
fn reduce_to(grad: Vec<f64>, like: &Tensor) -> Tensor {
    if grad.len() == like.len() {
        Tensor::new(like.shape().to_vec(), grad).expect("same length")
    } else {
        Tensor::full(like.shape(), grad.iter().sum())
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AdError {
    AdError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Sparse row-compressed matrix used as a fixed linear operator.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// `self · x` for a dense `cols × k` matrix stored row-major.
    pub fn apply(&self, x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * k];
        for r in 0..self.rows {
            let dst = &mut out[r * k..(r + 1) * k];
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[idx];
                let v = self.values[idx];
                for (d, s) in dst.iter_mut().zip(&x[c * k..(c + 1) * k]) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · g` for a dense `rows × k` matrix stored row-major.
    pub fn apply_transpose(&self, g: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * k];
        for r in 0..self.rows {
            let src = &g[r * k..(r + 1) * k];
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[idx];
                let v = self.values[idx];
                for (d, s) in out[c * k..(c + 1) * k].iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }
}

impl<'t> Var<'t> {
    fn binary(
        self,
        other: Var<'t>,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        partials: fn(f64, f64) -> (f64, f64),
    ) -> Result<Var<'t>, AdError> {
        let a = self.value();
        let b = other.value();
        let mode = broadcast(op, &a, &b)?;
        let (shape, data): (Vec<usize>, Vec<f64>) = match mode {
            Bcast::Same => (a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()),
            Bcast::LhsScalar => {
                let x = a.item();
                (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
            }
            Bcast::RhsScalar => {
                let y = b.item();
                (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
            }
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.tape.custom(op, &[self, other], value, move |args: &BackwardArgs<'_>| {
            let (a, b) = (args.inputs[0], args.inputs[1]);
            let n = args.grad.len();
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..n {
                let x = if mode == Bcast::LhsScalar { a.data()[0] } else { a.data()[i] };
                let y = if mode == Bcast::RhsScalar { b.data()[0] } else { b.data()[i] };
                let (da, db) = partials(x, y);
                ga[i] = args.grad.data()[i] * da;
                gb[i] = args.grad.data()[i] * db;
            }
            vec![
                args.needs[0].then(|| reduce_to(ga, a)),
                args.needs[1].then(|| reduce_to(gb, b)),
            ]
        }))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        if other.value().data().iter().any(|&y| y == 0.0) {
            return Err(AdError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    fn unary(
        self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let value = self.value().map(f);
        self.tape.custom(op, &[self], value, move |args: &BackwardArgs<'_>| {
            let x = args.inputs[0];
            let data = x
                .data()
                .iter()
                .zip(args.output.data())
                .zip(args.grad.data())
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(x.shape().to_vec(), data).expect("same shape"))]
        })
    }

    pub fn neg(self) -> Var<'t> {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        self.unary("mul_scalar", move |x| x * c, move |_, _| c)
    }

    pub fn square(self) -> Var<'t> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    /// Natural log; non-positive inputs are an error, not a NaN.
    pub fn ln(self) -> Result<Var<'t>, AdError> {
        if let Some(&bad) = self.value().data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(AdError::Domain {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        Ok(self.unary("log", f64::ln, |x, _| 1.0 / x))
    }

    /// Square root; negative inputs are an error. The derivative at 0 is infinite.
    pub fn sqrt(self) -> Result<Var<'t>, AdError> {
        if let Some(&bad) = self.value().data().iter().find(|&&x| x < 0.0 || x.is_nan()) {
            return Err(AdError::Domain {
                op: "sqrt",
                detail: format!("sqrt of negative value {bad}"),
            });
        }
        Ok(self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y))
    }

    /// `x^p`. Negative bases require an integer exponent.
    pub fn powf(self, p: f64) -> Result<Var<'t>, AdError> {
        if p.fract() != 0.0 {
            if let Some(&bad) = self.value().data().iter().find(|&&x| x < 0.0) {
                return Err(AdError::Domain {
                    op: "power",
                    detail: format!("{bad}^{p} is not real"),
                });
            }
        }
        Ok(self.unary("power", move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0)))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary("sin", f64::sin, |x, _| x.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.unary("cos", f64::cos, |x, _| -x.sin())
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    /// `max(0, x)` with a subgradient of 0 at the kink.
    pub fn relu(self) -> Var<'t> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// ELU with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise. C¹ everywhere.
    pub fn elu(self) -> Var<'t> {
        self.unary("elu", elu, |x, y| if x > 0.0 { 1.0 } else { y + 1.0 })
    }

    /// `max(x, c)` for a constant `c`; gradient 0 at and below `c`.
    pub fn max_const(self, c: f64) -> Var<'t> {
        self.unary("max_const", move |x| x.max(c), move |x, _| if x > c { 1.0 } else { 0.0 })
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.value();
        let value = Tensor::scalar(v.sum());
        self.tape.custom("sum", &[self], value, |args: &BackwardArgs<'_>| {
            vec![Some(Tensor::full(args.inputs[0].shape(), args.grad.item()))]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let n = v.len() as f64;
        let value = Tensor::scalar(v.sum() / n);
        self.tape.custom("mean", &[self], value, move |args: &BackwardArgs<'_>| {
            vec![Some(Tensor::full(args.inputs[0].shape(), args.grad.item() / n))]
        })
    }

    /// Inner product of two same-shaped tensors.
    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err("dot", a.shape(), b.shape()));
        }
        let value = Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum());
        Ok(self.tape.custom("dot", &[self, other], value, |args: &BackwardArgs<'_>| {
            let g = args.grad.item();
            vec![
                args.needs[0].then(|| args.inputs[1].scale(g)),
                args.needs[1].then(|| args.inputs[0].scale(g)),
            ]
        }))
    }

    /// Euclidean norm of all elements. The gradient at the zero vector is taken as 0.
    pub fn l2_norm(self) -> Var<'t> {
        let norm = self.value().data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.tape.custom("l2_norm", &[self], Tensor::scalar(norm), |args: &BackwardArgs<'_>| {
            let n = args.output.item();
            let g = args.grad.item();
            let x = args.inputs[0];
            if n == 0.0 {
                return vec![Some(Tensor::zeros_like(x))];
            }
            vec![Some(x.scale(g / n))]
        })
    }

    /// `x / ‖x‖` over all elements.
    pub fn normalize(self) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let norm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(AdError::Domain {
                op: "normalize",
                detail: "zero-length vector".into(),
            });
        }
        let value = v.scale(1.0 / norm);
        Ok(self.tape.custom("normalize", &[self], value, move |args: &BackwardArgs<'_>| {
            let y = args.output;
            let g = args.grad;
            let yg: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let data = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(&gi, &yi)| (gi - yi * yg) / norm)
                .collect();
            vec![Some(Tensor::new(y.shape().to_vec(), data).expect("same shape"))]
        }))
    }

    /// Normalizes each row of a rank-2 tensor.
    pub fn normalize_rows(self) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let (rows, cols) = v
            .dims2()
            .ok_or_else(|| shape_err("normalize_rows", v.shape(), &[]))?;
        let mut norms = Vec::with_capacity(rows);
        let mut out = v.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(AdError::Domain {
                    op: "normalize_rows",
                    detail: format!("row {r} has zero length"),
                });
            }
            row.iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.tape.custom("normalize_rows", &[self], value, move |args: &BackwardArgs<'_>| {
            let y = args.output.data();
            let g = args.grad.data();
            let mut out = vec![0.0; y.len()];
            for r in 0..rows {
                let span = r * cols..(r + 1) * cols;
                let yg: f64 = y[span.clone()].iter().zip(&g[span.clone()]).map(|(a, b)| a * b).sum();
                for i in span {
                    out[i] = (g[i] - y[i] * yg) / norms[r];
                }
            }
            vec![Some(Tensor::matrix(rows, cols, out).expect("same shape"))]
        }))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let a = self.value();
        let b = other.value();
        let value = a.matmul(&b)?;
        let (m, k) = a.dims2().expect("checked by matmul");
        let n = b.dims2().expect("checked by matmul").1;
        Ok(self.tape.custom("matmul", &[self, other], value, move |args: &BackwardArgs<'_>| {
            let g = args.grad.data();
            let ga = args.needs[0].then(|| {
                // dA = G · Bᵀ
                let mut out = vec![0.0; m * k];
                gemm(m, n, k, g, false, args.inputs[1].data(), true, &mut out);
                Tensor::matrix(m, k, out).expect("shape")
            });
            let gb = args.needs[1].then(|| {
                // dB = Aᵀ · G
                let mut out = vec![0.0; k * n];
                gemm(k, m, n, args.inputs[0].data(), true, g, false, &mut out);
                Tensor::matrix(k, n, out).expect("shape")
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(self) -> Result<Var<'t>, AdError> {
        let v = self.value();
        if v.dims2().is_none() {
            return Err(shape_err("transpose", v.shape(), &[]));
        }
        let value = v.transposed();
        Ok(self.tape.custom("transpose", &[self], value, |args: &BackwardArgs<'_>| {
            vec![Some(args.grad.transposed())]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let value = Tensor::clone(&v).reshaped(shape.to_vec())?;
        let original = v.shape().to_vec();
        Ok(self.tape.custom("reshape", &[self], value, move |args: &BackwardArgs<'_>| {
            vec![Some(args.grad.clone().reshaped(original.clone()).expect("same size"))]
        }))
    }

    /// Repeats a length-`c` vector (or `1×c` matrix) into `rows × c`.
    pub fn expand_rows(self, rows: usize) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let cols = match v.shape() {
            [c] => *c,
            [1, c] => *c,
            other => return Err(shape_err("expand_rows", other, &[rows])),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.tape.custom("expand_rows", &[self], value, move |args: &BackwardArgs<'_>| {
            let g = args.grad.data();
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, x) in out.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                    *o += x;
                }
            }
            vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), out).expect("shape"))]
        }))
    }

    /// Sub-range along `axis` of a rank-1 or rank-2 tensor.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let (rows, cols) = match v.shape() {
            [n] if axis == 0 => (*n, 1),
            [r, c] if axis < 2 => (*r, *c),
            other => return Err(shape_err("slice", other, &[axis, start, end])),
        };
        let extent = if axis == 0 { rows } else { cols };
        if start > end || end > extent {
            return Err(shape_err("slice", v.shape(), &[axis, start, end]));
        }
        let (out_rows, out_cols) = if axis == 0 { (end - start, cols) } else { (rows, end - start) };
        let mut data = Vec::with_capacity(out_rows * out_cols);
        for r in 0..out_rows {
            let src_r = if axis == 0 { r + start } else { r };
            let c0 = if axis == 0 { 0 } else { start };
            data.extend_from_slice(&v.data()[src_r * cols + c0..src_r * cols + c0 + out_cols]);
        }
        let shape = if v.rank() == 1 { vec![out_rows] } else { vec![out_rows, out_cols] };
        let value = Tensor::new(shape, data)?;
        let in_shape = v.shape().to_vec();
        Ok(self.tape.custom("slice", &[self], value, move |args: &BackwardArgs<'_>| {
            let g = args.grad.data();
            let mut out = vec![0.0; rows * cols];
            for r in 0..out_rows {
                let src_r = if axis == 0 { r + start } else { r };
                let c0 = if axis == 0 { 0 } else { start };
                out[src_r * cols + c0..src_r * cols + c0 + out_cols]
                    .copy_from_slice(&g[r * out_cols..(r + 1) * out_cols]);
            }
            vec![Some(Tensor::new(in_shape.clone(), out).expect("shape"))]
        }))
    }

    /// Concatenates rank-1 tensors (axis 0) or rank-2 tensors (axis 0 or 1).
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, AdError> {
        let first = parts.first().ok_or_else(|| shape_err("concat", &[], &[]))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let as2 = |t: &Tensor| -> Option<(usize, usize)> {
            match t.shape() {
                [n] if axis == 0 => Some((*n, 1)),
                [r, c] => Some((*r, *c)),
                _ => None,
            }
        };
        let dims: Vec<(usize, usize)> = values
            .iter()
            .map(|v| as2(v).ok_or_else(|| shape_err("concat", v.shape(), values[0].shape())))
            .collect::<Result<_, _>>()?;
        let rank = values[0].rank();
        for (v, d) in values.iter().zip(&dims) {
            let ok = v.rank() == rank
                && if axis == 0 { d.1 == dims[0].1 } else { axis == 1 && d.0 == dims[0].0 };
            if !ok {
                return Err(shape_err("concat", v.shape(), values[0].shape()));
            }
        }
        let (rows, cols) = if axis == 0 {
            (dims.iter().map(|d| d.0).sum::<usize>(), dims[0].1)
        } else {
            (dims[0].0, dims.iter().map(|d| d.1).sum::<usize>())
        };
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for (v, d) in values.iter().zip(&dims) {
            for r in 0..d.0 {
                let (dr, dc) = if axis == 0 { (r + offset, 0) } else { (r, offset) };
                data[dr * cols + dc..dr * cols + dc + d.1].copy_from_slice(&v.data()[r * d.1..(r + 1) * d.1]);
            }
            offset += if axis == 0 { d.0 } else { d.1 };
        }
        let shape = if rank == 1 { vec![rows] } else { vec![rows, cols] };
        let value = Tensor::new(shape, data)?;
        Ok(tape.custom("concat", parts, value, move |args: &BackwardArgs<'_>| {
            let g = args.grad.data();
            let mut grads = Vec::with_capacity(dims.len());
            let mut offset = 0;
            for (i, d) in dims.iter().enumerate() {
                let mut out = vec![0.0; d.0 * d.1];
                for r in 0..d.0 {
                    let (sr, sc) = if axis == 0 { (r + offset, 0) } else { (r, offset) };
                    out[r * d.1..(r + 1) * d.1].copy_from_slice(&g[sr * cols + sc..sr * cols + sc + d.1]);
                }
                offset += if axis == 0 { d.0 } else { d.1 };
                grads.push(Some(Tensor::new(args.inputs[i].shape().to_vec(), out).expect("shape")));
            }
            grads
        }))
    }

    /// Applies a fixed sparse operator: `A · X` with `X` of shape `cols × k`.
    pub fn spmm(self, matrix: Rc<CsrMatrix>) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let (r, k) = v.dims2().ok_or_else(|| shape_err("spmm", v.shape(), &[matrix.cols]))?;
        if r != matrix.cols {
            return Err(shape_err("spmm", v.shape(), &[matrix.rows, matrix.cols]));
        }
        let value = Tensor::matrix(matrix.rows, k, matrix.apply(v.data(), k))?;
        Ok(self.tape.custom("spmm", &[self], value, move |args: &BackwardArgs<'_>| {
            let out = matrix.apply_transpose(args.grad.data(), k);
            vec![Some(Tensor::matrix(matrix.cols, k, out).expect("shape"))]
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Runs a gradient check over `trials` random inputs; the function is
    /// reduced to a scalar through a fixed random weighting so every output
    /// element contributes a distinct upstream gradient.
    fn check_unary<F>(name: &str, shape: &[usize], lo: f64, hi: f64, tol: f64, f: F)
    where
        F: for<'t> Fn(Var<'t>) -> Result<Var<'t>, AdError>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let x = rand_tensor(&mut rng, shape, lo, hi);
            let probe_tape = Tape::new();
            let out_shape = f(probe_tape.constant(x.clone())).unwrap().shape();
            let w = rand_tensor(&mut rng, &out_shape, -1.0, 1.0);
            let r = grad_check(
                |tape, v| {
                    let y = f(v)?;
                    y.mul(tape.constant(w.clone()))?.sum().pipe(Ok)
                },
                &x,
                &GradCheckConfig::with_tol(tol),
            )
            .unwrap();
            assert!(r.passed(), "{name} trial {trial}: {:?}", r.failures);
        }
    }

    trait Pipe: Sized {
        fn pipe<T>(self, f: impl FnOnce(Self) -> T) -> T {
            f(self)
        }
    }
    impl<T> Pipe for T {}

    #[test]
    fn square_derivative_at_three() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        tape.backward(x.mul(x).unwrap()).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn relu_inactive_region() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        tape.backward(x.relu()).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 0.0);
    }

    #[test]
    fn mean_spreads_evenly() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 5.0, -2.0, 7.0]));
        tape.backward(x.mean()).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn sum_and_squared_norm() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        tape.backward(w.sum()).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0, 1.0]);
        tape.zero_grad();
        tape.backward(w.dot(w).unwrap()).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = w.sum();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match a.add(b) {
            Err(AdError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let m = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(m.matmul(m), Err(AdError::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn domain_errors_instead_of_nan() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -0.5]));
        assert!(matches!(x.ln(), Err(AdError::Domain { op: "log", .. })));
        assert!(matches!(x.sqrt(), Err(AdError::Domain { op: "sqrt", .. })));
        let z = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(x.div(z), Err(AdError::Domain { op: "div", .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -0.7, 1.1]));
        let y = x.sin().mul(x.exp()).unwrap().tanh();
        let zero = tape.constant(Tensor::scalar(0.0));
        tape.backward(y.sum().mul(zero).unwrap()).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let run = || {
            let tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let a = tape.leaf(rand_tensor(&mut rng, &[7, 5], -1.0, 1.0));
            let b = tape.leaf(rand_tensor(&mut rng, &[5, 4], -1.0, 1.0));
            let y = a.matmul(b).unwrap().elu().normalize_rows().unwrap().sigmoid().mean();
            tape.backward(y).unwrap();
            (tape.grad(a).unwrap(), tape.grad(b).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn elementwise_binary_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = rand_tensor(&mut rng, &[6], -2.0, 2.0);
            let b = rand_tensor(&mut rng, &[6], 0.5, 2.0);
            let s = Tensor::scalar(rng.random_range(0.5..2.0));
            let both = Tensor::vector(a.data().iter().chain(b.data()).copied().collect());
            for op in 0..4 {
                let r = grad_check(
                    |_, v| {
                        let x = v.slice(0, 0, 6)?;
                        let y = v.slice(0, 6, 12)?;
                        let z = match op {
                            0 => x.add(y)?,
                            1 => x.sub(y)?,
                            2 => x.mul(y)?,
                            _ => x.div(y)?,
                        };
                        Ok(z.square().sum())
                    },
                    &both,
                    &GradCheckConfig::default(),
                )
                .unwrap();
                assert!(r.passed(), "op {op}: {:?}", r.failures);
            }
            // scalar broadcast on either side
            let r = grad_check(
                |tape, v| {
                    let c = tape.constant(a.clone());
                    Ok(v.mul(c)?.add(c.div(v)?)?.square().sum())
                },
                &s,
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed(), "{:?}", r.failures);
        }
    }

    #[test]
    fn unary_gradients() {
        check_unary("neg", &[5], -2.0, 2.0, 1e-4, |x| Ok(x.neg()));
        check_unary("add_scalar", &[5], -2.0, 2.0, 1e-4, |x| Ok(x.add_scalar(0.7)));
        check_unary("mul_scalar", &[5], -2.0, 2.0, 1e-4, |x| Ok(x.mul_scalar(-1.3)));
        check_unary("exp", &[5], -2.0, 2.0, 1e-4, |x| Ok(x.exp()));
        check_unary("log", &[5], 0.2, 3.0, 1e-4, |x| x.ln());
        check_unary("sqrt", &[5], 0.2, 3.0, 1e-4, |x| x.sqrt());
        check_unary("power", &[5], 0.2, 3.0, 1e-4, |x| x.powf(2.7));
        check_unary("sin", &[5], -3.0, 3.0, 1e-4, |x| Ok(x.sin()));
        check_unary("cos", &[5], -3.0, 3.0, 1e-4, |x| Ok(x.cos()));
        check_unary("tanh", &[5], -2.0, 2.0, 1e-4, |x| Ok(x.tanh()));
        check_unary("sigmoid", &[5], -4.0, 4.0, 1e-4, |x| Ok(x.sigmoid()));
        check_unary("square", &[5], -2.0, 2.0, 1e-4, |x| Ok(x.square()));
    }

    #[test]
    fn kinked_gradients_away_from_kink() {
        let away = |lo: f64, hi: f64| move |x: f64| x < lo || x > hi;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cases: Vec<(&str, fn(Var<'_>) -> Var<'_>, f64)> = vec![
            ("relu", |x| x.relu(), 0.0),
            ("elu", |x| x.elu(), 0.0),
            ("max_const", |x| x.max_const(0.4), 0.4),
        ];
        for (name, f, kink) in cases {
            let ok = away(kink - 1e-3, kink + 1e-3);
            for _ in 0..100 {
                let data: Vec<f64> = (0..5)
                    .map(|_| loop {
                        let v = rng.random_range(-2.0..2.0);
                        if ok(v) {
                            break v;
                        }
                    })
                    .collect();
                let r = grad_check(|_, v| Ok(f(v).square().sum()), &Tensor::vector(data), &GradCheckConfig::with_tol(1e-3)).unwrap();
                assert!(r.passed(), "{name}: {:?}", r.failures);
            }
        }
        for _ in 0..100 {
            let data: Vec<f64> = (0..5)
                .map(|_| loop {
                    let v: f64 = rng.random_range(-2.0..2.0);
                    if (v + 0.5).abs() > 1e-3 && (v - 0.8).abs() > 1e-3 {
                        break v;
                    }
                })
                .collect();
            let r = grad_check(|_, v| Ok(v.clamp(-0.5, 0.8).square().sum()), &Tensor::vector(data), &GradCheckConfig::with_tol(1e-3)).unwrap();
            assert!(r.passed(), "clamp: {:?}", r.failures);
        }
    }

    #[test]
    fn reduction_and_norm_gradients() {
        check_unary("sum", &[3, 4], -2.0, 2.0, 1e-4, |x| Ok(x.sum()));
        check_unary("mean", &[3, 4], -2.0, 2.0, 1e-4, |x| Ok(x.mean()));
        check_unary("dot", &[6], -2.0, 2.0, 1e-4, |x| x.dot(x.sin()));
        check_unary("l2_norm", &[6], -2.0, 2.0, 1e-4, |x| Ok(x.l2_norm()));
        check_unary("normalize", &[6], -2.0, 2.0, 1e-4, |x| x.normalize());
        check_unary("normalize_rows", &[4, 3], -2.0, 2.0, 1e-4, |x| x.normalize_rows());
    }

    #[test]
    fn structural_gradients() {
        check_unary("matmul", &[4, 6], -1.0, 1.0, 1e-4, |x| {
            let a = x.slice(1, 0, 3)?;
            let b = x.slice(1, 3, 6)?.transpose()?;
            a.matmul(b)
        });
        check_unary("reshape", &[4, 6], -1.0, 1.0, 1e-4, |x| Ok(x.reshape(&[6, 4])?.sin()));
        check_unary("slice0", &[4, 6], -1.0, 1.0, 1e-4, |x| Ok(x.slice(0, 1, 3)?.exp()));
        check_unary("concat0", &[4, 6], -1.0, 1.0, 1e-4, |x| {
            Var::concat(&[x.slice(0, 2, 4)?, x.sin(), x.slice(0, 0, 1)?], 0)
        });
        check_unary("concat1", &[4, 6], -1.0, 1.0, 1e-4, |x| {
            Var::concat(&[x.slice(1, 4, 6)?.cos(), x], 1)
        });
        check_unary("concat_vec", &[5], -1.0, 1.0, 1e-4, |x| Var::concat(&[x, x.square()], 0));
        check_unary("expand_rows", &[3], -1.0, 1.0, 1e-4, |x| Ok(x.expand_rows(4)?.sin()));
        let lap = Rc::new(CsrMatrix::from_triplets(
            3,
            4,
            vec![(0, 0, 1.0), (0, 1, -0.5), (1, 2, 2.0), (2, 3, 1.5), (2, 0, -1.0), (2, 0, 0.25)],
        ));
        check_unary("spmm", &[4, 2], -1.0, 1.0, 1e-4, move |x| x.spmm(Rc::clone(&lap)));
    }

    #[test]
    fn csr_duplicates_sum() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(m.apply(&[1.0, 10.0], 1), vec![20.0, 4.0]);
        assert_eq!(m.apply_transpose(&[1.0, 10.0], 1), vec![40.0, 2.0]);
    }

    #[test]
    fn concat_vectors_value() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![3.0]));
        assert_eq!(Var::concat(&[a, b], 0).unwrap().value().data(), &[1.0, 2.0, 3.0]);
    }
}
