//! Row-wise Poincaré-ball operations recorded on a [`Tape`].
//!
//! Every matrix argument holds one point per row; a `1 x n` argument
//! broadcasts against an `m x n` one.

use super::tape::{Tape, Unary, Var};
use crate::ball::{self, Curvature};

/// Curvature as tape nodes, so it can be a constant or a trainable leaf.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureVar {
    pub c: Var,
    pub sqrt_c: Var,
    pub c_sq: Var,
    /// Value of `c` when the nodes were built.
    pub value: f64,
}

impl CurvatureVar {
    pub fn constant(tape: &mut Tape, c: Curvature) -> Self {
        let cv = tape.scalar(c.get());
        Self::from_var(tape, cv)
    }

    pub fn from_var(tape: &mut Tape, c: Var) -> Self {
        let value = tape.value(c)[[0, 0]];
        let sqrt_c = tape.unary(c, Unary::Sqrt);
        let c_sq = tape.unary(c, Unary::Square);
        CurvatureVar {
            c,
            sqrt_c,
            c_sq,
            value,
        }
    }

    pub fn max_norm(&self) -> f64 {
        (1.0 - ball::BALL_EPS) / self.value.sqrt()
    }
}

pub fn row_dot(t: &mut Tape, a: Var, b: Var) -> Var {
    let p = t.mul(a, b);
    t.row_sum(p)
}

pub fn row_norm_sq(t: &mut Tape, a: Var) -> Var {
    row_dot(t, a, a)
}

/// `2 / (1 - c‖x‖²)` per row.
pub fn conformal_factor(t: &mut Tape, x: Var, k: &CurvatureVar) -> Var {
    let x2 = row_norm_sq(t, x);
    let cx2 = t.mul(k.c, x2);
    let one = t.scalar(1.0);
    let den = t.sub(one, cx2);
    let two = t.scalar(2.0);
    t.div(two, den)
}

pub fn exp0(t: &mut Tape, v: Var, k: &CurvatureVar) -> Var {
    let n = t.row_norm(v);
    let s = t.mul(k.sqrt_c, n);
    let f = t.unary(s, Unary::TanhOverX);
    t.mul(v, f)
}

pub fn log0(t: &mut Tape, y: Var, k: &CurvatureVar) -> Var {
    let n = t.row_norm(y);
    let s = t.mul(k.sqrt_c, n);
    let f = t.unary(s, Unary::ArtanhOverX);
    t.mul(y, f)
}

pub fn mobius_add(t: &mut Tape, x: Var, y: Var, k: &CurvatureVar) -> Var {
    let xy = row_dot(t, x, y);
    let x2 = row_norm_sq(t, x);
    let y2 = row_norm_sq(t, y);
    let two_c_xy = {
        let cxy = t.mul(k.c, xy);
        t.mul_scalar(cxy, 2.0)
    };
    let base = t.add_scalar(two_c_xy, 1.0);
    let cy2 = t.mul(k.c, y2);
    let a = t.add(base, cy2);
    let cx2 = t.mul(k.c, x2);
    let one = t.scalar(1.0);
    let b = t.sub(one, cx2);
    let x2y2 = t.mul(x2, y2);
    let c2x2y2 = t.mul(k.c_sq, x2y2);
    let den = t.add(base, c2x2y2);
    let ax = t.mul(a, x);
    let by = t.mul(b, y);
    let num = t.add(ax, by);
    t.div(num, den)
}

/// `r ⊗_c x` for a fixed real `r`.
pub fn mobius_scalar_mul(t: &mut Tape, r: f64, x: Var, k: &CurvatureVar) -> Var {
    // x · r · tanh(r·artanh(s))/(r·artanh(s)) · artanh(s)/s with s = √c‖x‖
    let n = t.row_norm(x);
    let s = t.mul(k.sqrt_c, n);
    let at = t.unary(s, Unary::Artanh);
    let rat = t.mul_scalar(at, r);
    let f1 = t.unary(rat, Unary::TanhOverX);
    let f2 = t.unary(s, Unary::ArtanhOverX);
    let f = t.mul(f1, f2);
    let f = t.mul_scalar(f, r);
    t.mul(x, f)
}

/// `M ⊗_c x` with one shared `n x n` matrix node `m`.
pub fn mobius_matvec(t: &mut Tape, m: Var, x: Var, k: &CurvatureVar) -> Var {
    let lx = log0(t, x, k);
    let mt = t.transpose(m);
    let y = t.matmul(lx, mt);
    exp0(t, y, k)
}

/// Row `b` is `M_b ⊗_c x_b`, with `mats` holding flattened matrices per row.
pub fn mobius_batch_matvec(t: &mut Tape, mats: Var, x: Var, k: &CurvatureVar) -> Var {
    let lx = log0(t, x, k);
    let y = t.batch_matvec(mats, lx);
    exp0(t, y, k)
}

pub fn project(t: &mut Tape, x: Var, k: &CurvatureVar) -> Var {
    t.clamp_row_norm(x, k.max_norm())
}

/// Pairwise hyperbolic inner products: `queries` is `b x n`, `table` is
/// `m x n`; the result is `b x m`.
pub fn pairwise_hin(t: &mut Tape, queries: Var, table: Var, k: &CurvatureVar) -> Var {
    let tt = t.transpose(table);
    let p = t.matmul(queries, tt);
    let q2 = row_norm_sq(t, queries);
    let e2 = {
        let e2 = row_norm_sq(t, table);
        t.transpose(e2)
    };
    let fq = {
        let v = t.mul(k.c_sq, q2);
        t.add_scalar(v, 1.0)
    };
    let fe = {
        let v = t.mul(k.c_sq, e2);
        t.add_scalar(v, 1.0)
    };
    let prod = t.mul(fq, fe);
    let cross = {
        let v = t.mul(k.c_sq, p);
        t.mul_scalar(v, 2.0)
    };
    let den = t.sub(prod, cross);
    t.div(p, den)
}

pub fn pairwise_dot(t: &mut Tape, queries: Var, table: Var) -> Var {
    let tt = t.transpose(table);
    t.matmul(queries, tt)
}

/// Pairwise `-‖q - e‖²`.
pub fn pairwise_neg_sq_euclidean(t: &mut Tape, queries: Var, table: Var) -> Var {
    let p = pairwise_dot(t, queries, table);
    let q2 = row_norm_sq(t, queries);
    let e2 = {
        let e2 = row_norm_sq(t, table);
        t.transpose(e2)
    };
    let two_p = t.mul_scalar(p, 2.0);
    let s = t.add(q2, e2);
    t.sub(two_p, s)
}

/// Pairwise `-d(q, e)²`, expanding `‖-q ⊕ e‖²` through dot products.
pub fn pairwise_neg_sq_distance(t: &mut Tape, queries: Var, table: Var, k: &CurvatureVar) -> Var {
    // with x = -q, y = e:  ‖x ⊕ y‖² = (A²‖x‖² + 2AB⟨x,y⟩ + B²‖y‖²) / D²
    let qe = pairwise_dot(t, queries, table);
    let xy = t.neg(qe);
    let x2 = row_norm_sq(t, queries);
    let y2 = {
        let e2 = row_norm_sq(t, table);
        t.transpose(e2)
    };
    let two_c_xy = {
        let v = t.mul(k.c, xy);
        t.mul_scalar(v, 2.0)
    };
    let base = t.add_scalar(two_c_xy, 1.0);
    let cy2 = t.mul(k.c, y2);
    let a = t.add(base, cy2);
    let cx2 = t.mul(k.c, x2);
    let one = t.scalar(1.0);
    let b = t.sub(one, cx2);
    let x2y2 = t.mul(x2, y2);
    let c2x2y2 = t.mul(k.c_sq, x2y2);
    let d = t.add(base, c2x2y2);

    let a2 = t.unary(a, Unary::Square);
    let term1 = t.mul(a2, x2);
    let ab = t.mul(a, b);
    let abxy = t.mul(ab, xy);
    let term2 = t.mul_scalar(abxy, 2.0);
    let b2 = t.unary(b, Unary::Square);
    let term3 = t.mul(b2, y2);
    let s12 = t.add(term1, term2);
    let num = t.add(s12, term3);
    let d2 = t.unary(d, Unary::Square);
    let norm_sq = t.div(num, d2);
    // clamp tiny negative rounding before the square root
    let norm_sq = t.unary(norm_sq, Unary::Abs);
    let eps = t.scalar(1e-30);
    let norm_sq = t.add(norm_sq, eps);
    let norm = t.unary(norm_sq, Unary::Sqrt);
    let arg = t.mul(k.sqrt_c, norm);
    let at = t.unary(arg, Unary::Artanh);
    let two_over_sc = {
        let r = t.unary(k.sqrt_c, Unary::Recip);
        t.mul_scalar(r, 2.0)
    };
    let dist = t.mul(two_over_sc, at);
    let d2 = t.unary(dist, Unary::Square);
    t.neg(d2)
}
