use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::ball::{ARTANH_MAX, MIN_NORM, TANH_MAX};
use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise functions with their derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Square,
    Sqrt,
    Exp,
    Ln,
    Recip,
    Abs,
    Cos,
    Sin,
    /// `tanh`, argument clamped to `[-40, 40]`.
    Tanh,
    /// `artanh`, argument clamped to `[-(1 - 1e-12), 1 - 1e-12]`.
    Artanh,
    /// `tanh(x)/x`, equal to 1 at 0.
    TanhOverX,
    /// `artanh(x)/x`, equal to 1 at 0.
    ArtanhOverX,
    LeakyRelu(f64),
    Softplus,
}

const SERIES_CUTOFF: f64 = 1e-4;

impl Unary {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Recip => 1.0 / x,
            Unary::Abs => x.abs(),
            Unary::Cos => x.cos(),
            Unary::Sin => x.sin(),
            Unary::Tanh => x.clamp(-TANH_MAX, TANH_MAX).tanh(),
            Unary::Artanh => {
                let x = x.clamp(-ARTANH_MAX, ARTANH_MAX);
                0.5 * ((1.0 + x) / (1.0 - x)).ln()
            }
            Unary::TanhOverX => {
                if x.abs() < SERIES_CUTOFF {
                    let x2 = x * x;
                    1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0
                } else {
                    x.clamp(-TANH_MAX, TANH_MAX).tanh() / x
                }
            }
            Unary::ArtanhOverX => {
                if x.abs() < SERIES_CUTOFF {
                    let x2 = x * x;
                    1.0 + x2 / 3.0 + x2 * x2 / 5.0
                } else {
                    Unary::Artanh.eval(x) / x
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative at `x` given the forward value `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Recip => -y * y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Cos => -x.sin(),
            Unary::Sin => x.cos(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Artanh => {
                let x = x.clamp(-ARTANH_MAX, ARTANH_MAX);
                1.0 / (1.0 - x * x)
            }
            Unary::TanhOverX => {
                if x.abs() < SERIES_CUTOFF {
                    -2.0 * x / 3.0 + 8.0 * x * x * x / 15.0
                } else {
                    let t = x.clamp(-TANH_MAX, TANH_MAX).tanh();
                    (1.0 - t * t) / x - t / (x * x)
                }
            }
            Unary::ArtanhOverX => {
                if x.abs() < SERIES_CUTOFF {
                    2.0 * x / 3.0 + 4.0 * x * x * x / 5.0
                } else {
                    Unary::Artanh.deriv(x, 0.0) / x - y / x
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    RowSum(Var),
    RowLogSumExp(Var),
    RowNorm(Var),
    ClampRowNorm(Var, Arc<[bool]>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RowScatter(Var, Arc<[(usize, usize, f64)]>),
    Pick(Var, Arc<[(usize, usize)]>),
    BatchMatVec(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation over 2-D `f64` arrays.
///
/// Binary elementwise operations broadcast dimensions of size 1. Nodes are
/// stored in creation order, so inputs always precede their consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamp_events: usize,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: Mat, shape: (usize, usize)) -> Mat {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn zip_broadcast(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let shape = broadcast_shape(a.dim(), b.dim());
    let av = a.broadcast(shape).expect("broadcast");
    let bv = b.broadcast(shape).expect("broadcast");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of rows rescaled by [`Tape::clamp_row_norm`] so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), f);
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(value, op, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let value = self.value(a).mapv(|x| f.eval(x));
        let g = self.grad_of(a);
        self.push(value, Op::Unary(a, f), g)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let k = self.scalar(s);
        self.add(a, k)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let k = self.scalar(s);
        self.mul(a, k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let g = self.grad_of(a) || self.grad_of(b);
        self.push(value, Op::MatMul(a, b), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().as_standard_layout().into_owned();
        let g = self.grad_of(a);
        self.push(value, Op::Transpose(a), g)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape size");
        let g = self.grad_of(a);
        self.push(value, Op::Reshape(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.grad_of(a);
        self.push(value, Op::Sum(a), g)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.grad_of(a);
        self.push(value, Op::RowSum(a), g)
    }

    /// Max-shifted `log Σ_j exp(a_ij)` per row.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Array2::zeros((x.nrows(), 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            value[[i, 0]] = m + s.ln();
        }
        let g = self.grad_of(a);
        self.push(value, Op::RowLogSumExp(a), g)
    }

    /// Euclidean norm of each row; the gradient at a zero row is zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        let g = self.grad_of(a);
        self.push(value, Op::RowNorm(a), g)
    }

    /// Rescales rows with norm `>= max_norm` onto that norm. Clamped rows pass
    /// no gradient; the others pass it unchanged.
    pub fn clamp_row_norm(&mut self, a: Var, max_norm: f64) -> Var {
        let mut value = self.value(a).clone();
        let mut clamped = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n >= max_norm {
                row.mapv_inplace(|v| v * max_norm / n);
                clamped.push(true);
            } else {
                clamped.push(false);
            }
        }
        self.clamp_events += clamped.iter().filter(|&&c| c).count();
        let g = self.grad_of(a);
        self.push(value, Op::ClampRowNorm(a, clamped.into()), g)
    }

    pub fn gather_rows(&mut self, a: Var, rows: impl Into<Arc<[usize]>>) -> Var {
        let rows = rows.into();
        let value = self.value(a).select(Axis(0), &rows);
        let g = self.grad_of(a);
        self.push(value, Op::GatherRows(a, rows), g)
    }

    /// `out[rows[k]] += a[k]`, with `out` having `out_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, rows: impl Into<Arc<[usize]>>, out_rows: usize) -> Var {
        let rows = rows.into();
        let x = self.value(a);
        assert_eq!(x.nrows(), rows.len());
        let mut value = Array2::zeros((out_rows, x.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = value.row_mut(r);
            dst += &x.row(k);
        }
        let g = self.grad_of(a);
        self.push(value, Op::ScatterAddRows(a, rows), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts match");
        let g = parts.iter().any(|&p| self.grad_of(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts match");
        let g = parts.iter().any(|&p| self.grad_of(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), g)
    }

    /// Per row: `out[dst] += sign * a[src]` for each `(src, dst, sign)`.
    pub fn row_scatter(
        &mut self,
        a: Var,
        layout: impl Into<Arc<[(usize, usize, f64)]>>,
        out_cols: usize,
    ) -> Var {
        let layout = layout.into();
        let x = self.value(a);
        let mut value = Array2::zeros((x.nrows(), out_cols));
        for (src, mut dst) in x.rows().into_iter().zip(value.rows_mut()) {
            for &(s, d, sign) in layout.iter() {
                dst[d] += sign * src[s];
            }
        }
        let g = self.grad_of(a);
        self.push(value, Op::RowScatter(a, layout), g)
    }

    /// Column vector of the selected `(row, col)` entries.
    pub fn pick(&mut self, a: Var, at: impl Into<Arc<[(usize, usize)]>>) -> Var {
        let at = at.into();
        let x = self.value(a);
        let value = Array2::from_shape_fn((at.len(), 1), |(k, _)| x[at[k]]);
        let g = self.grad_of(a);
        self.push(value, Op::Pick(a, at), g)
    }

    /// Row `b` of the output is `M_b x_b`, where row `b` of `mats` holds the
    /// row-major `n x n` matrix `M_b` and row `b` of `x` holds `x_b`.
    pub fn batch_matvec(&mut self, mats: Var, x: Var) -> Var {
        let m = self.value(mats);
        let xv = self.value(x);
        let n = xv.ncols();
        assert_eq!(m.ncols(), n * n);
        assert_eq!(m.nrows(), xv.nrows());
        let mut value = Array2::zeros(xv.dim());
        for ((mrow, xrow), mut out) in m.rows().into_iter().zip(xv.rows()).zip(value.rows_mut()) {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += mrow[i * n + j] * xrow[j];
                }
                out[i] = acc;
            }
        }
        let g = self.grad_of(mats) || self.grad_of(x);
        self.push(value, Op::BatchMatVec(mats, x), g)
    }

    /// Reverse sweep from a `1 x 1` output. Consumes the tape.
    pub fn backward(self, output: Var) -> Result<Gradients> {
        let (rows, cols) = self.shape(output);
        if (rows, cols) != (1, 1) {
            return Err(Error::NotScalar { rows, cols });
        }
        let mut adj: Vec<Option<Mat>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Array2::ones((1, 1)));

        fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                &Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut adj, a, reduce_to(g.clone(), val(a).dim()));
                    }
                    if wants(b) {
                        accumulate(&mut adj, b, reduce_to(g, val(b).dim()));
                    }
                }
                &Op::Sub(a, b) => {
                    if wants(a) {
                        accumulate(&mut adj, a, reduce_to(g.clone(), val(a).dim()));
                    }
                    if wants(b) {
                        accumulate(&mut adj, b, reduce_to(-g, val(b).dim()));
                    }
                }
                &Op::Mul(a, b) => {
                    if wants(a) {
                        let ga = zip_broadcast(&g, val(b), |x, y| x * y);
                        accumulate(&mut adj, a, reduce_to(ga, val(a).dim()));
                    }
                    if wants(b) {
                        let gb = zip_broadcast(&g, val(a), |x, y| x * y);
                        accumulate(&mut adj, b, reduce_to(gb, val(b).dim()));
                    }
                }
                &Op::Div(a, b) => {
                    if wants(a) {
                        let ga = zip_broadcast(&g, val(b), |x, y| x / y);
                        accumulate(&mut adj, a, reduce_to(ga, val(a).dim()));
                    }
                    if wants(b) {
                        // d(a/b)/db = -out / b
                        let t = zip_broadcast(&g, &node.value, |x, y| x * y);
                        let gb = zip_broadcast(&t, val(b), |x, y| -x / y);
                        accumulate(&mut adj, b, reduce_to(gb, val(b).dim()));
                    }
                }
                &Op::Unary(a, f) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(val(a))
                        .and(&node.value)
                        .for_each(|g, &x, &y| *g *= f.deriv(x, y));
                    accumulate(&mut adj, a, ga);
                }
                &Op::MatMul(a, b) => {
                    if wants(a) {
                        accumulate(&mut adj, a, g.dot(&val(b).t()));
                    }
                    if wants(b) {
                        accumulate(&mut adj, b, val(a).t().dot(&g));
                    }
                }
                &Op::Transpose(a) => {
                    accumulate(&mut adj, a, g.t().as_standard_layout().into_owned());
                }
                &Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let shaped = Array2::from_shape_vec(val(a).dim(), flat).expect("reshape");
                    accumulate(&mut adj, a, shaped);
                }
                &Op::Sum(a) => {
                    accumulate(&mut adj, a, Array2::from_elem(val(a).dim(), g[[0, 0]]));
                }
                &Op::RowSum(a) => {
                    let ga = g.broadcast(val(a).dim()).expect("broadcast").to_owned();
                    accumulate(&mut adj, a, ga);
                }
                &Op::RowLogSumExp(a) => {
                    let x = val(a);
                    let mut ga = Array2::zeros(x.dim());
                    Zip::from(ga.rows_mut())
                        .and(x.rows())
                        .and(node.value.rows())
                        .and(g.rows())
                        .for_each(|mut out, xr, lse, gr| {
                            let (l, gi) = (lse[0], gr[0]);
                            Zip::from(&mut out).and(&xr).for_each(|o, &v| *o = gi * (v - l).exp());
                        });
                    accumulate(&mut adj, a, ga);
                }
                &Op::RowNorm(a) => {
                    let x = val(a);
                    let mut ga = Array2::zeros(x.dim());
                    for (i, (mut out, xr)) in ga.rows_mut().into_iter().zip(x.rows()).enumerate() {
                        let n = node.value[[i, 0]];
                        if n >= MIN_NORM {
                            let s = g[[i, 0]] / n;
                            Zip::from(&mut out).and(&xr).for_each(|o, &v| *o = s * v);
                        }
                    }
                    accumulate(&mut adj, a, ga);
                }
                Op::ClampRowNorm(a, clamped) => {
                    let mut ga = g;
                    for (mut row, &cl) in ga.rows_mut().into_iter().zip(clamped.iter()) {
                        if cl {
                            row.fill(0.0);
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::GatherRows(a, rows) => {
                    let x = val(*a);
                    let mut ga = Array2::zeros(x.dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::ScatterAddRows(a, rows) => {
                    accumulate(&mut adj, *a, g.select(Axis(0), rows));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let r = val(p).nrows();
                        if wants(p) {
                            accumulate(&mut adj, p, g.slice(s![start..start + r, ..]).to_owned());
                        }
                        start += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let c = val(p).ncols();
                        if wants(p) {
                            accumulate(&mut adj, p, g.slice(s![.., start..start + c]).to_owned());
                        }
                        start += c;
                    }
                }
                Op::RowScatter(a, layout) => {
                    let x = val(*a);
                    let mut ga = Array2::zeros(x.dim());
                    for (mut out, grow) in ga.rows_mut().into_iter().zip(g.rows()) {
                        for &(s, d, sign) in layout.iter() {
                            out[s] += sign * grow[d];
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Pick(a, at) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    for (k, &pos) in at.iter().enumerate() {
                        ga[pos] += g[[k, 0]];
                    }
                    accumulate(&mut adj, *a, ga);
                }
                &Op::BatchMatVec(mats, x) => {
                    let m = val(mats);
                    let xv = val(x);
                    let n = xv.ncols();
                    if wants(mats) {
                        let mut gm = Array2::zeros(m.dim());
                        for ((mut out, xrow), grow) in
                            gm.rows_mut().into_iter().zip(xv.rows()).zip(g.rows())
                        {
                            for i in 0..n {
                                for j in 0..n {
                                    out[i * n + j] = grow[i] * xrow[j];
                                }
                            }
                        }
                        accumulate(&mut adj, mats, gm);
                    }
                    if wants(x) {
                        let mut gx = Array2::zeros(xv.dim());
                        for ((mut out, mrow), grow) in
                            gx.rows_mut().into_iter().zip(m.rows()).zip(g.rows())
                        {
                            for i in 0..n {
                                for j in 0..n {
                                    out[j] += mrow[i * n + j] * grow[i];
                                }
                            }
                        }
                        accumulate(&mut adj, x, gx);
                    }
                }
            }
        }

        // keep adjoints of leaves only
        for (slot, node) in adj.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { adj })
    }
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of a leaf, `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.adj.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when unreachable.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.adj.get_mut(v.0).and_then(|g| g.take())
    }
}
