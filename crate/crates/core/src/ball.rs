//! Gyrovector numerics on the Poincaré ball of curvature `-c`.
//!
//! The free functions work on raw coordinate slices and are what the encoder,
//! decoders and evaluation loops call in their inner loops. [`BallPoint`] wraps
//! them with dimension, curvature and containment checks for callers that want
//! the validated surface.
//!
//! All arithmetic is `f64`. `artanh` arguments are clamped to `[0, 1 - 1e-12]`
//! and `tanh` arguments to `[-40, 40]`; zero-norm inputs take the analytic
//! limit instead of dividing by zero.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative margin kept between projected points and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;
/// Upper clamp for `artanh` arguments.
pub const ARTANH_MAX: f64 = 1.0 - 1e-12;
/// Symmetric clamp for `tanh` arguments.
pub const TANH_MAX: f64 = 40.0;
/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-15;

/// Positive curvature magnitude `c`; the ball has radius `1/sqrt(c)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub const ONE: Curvature = Curvature(1.0);

    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(Error::InvalidCurvature(c))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Ball radius `1/sqrt(c)`.
    #[inline]
    pub fn radius(self) -> f64 {
        1.0 / self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature::ONE
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;

    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

#[inline]
pub fn artanh(x: f64) -> f64 {
    let x = x.clamp(-ARTANH_MAX, ARTANH_MAX);
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.clamp(-TANH_MAX, TANH_MAX).tanh()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}

/// `λ_x = 2 / (1 - c‖x‖²)`.
#[inline]
pub fn conformal_factor(x: &[f64], c: Curvature) -> f64 {
    2.0 / (1.0 - c.get() * norm_sq(x))
}

/// Möbius addition `x ⊕_c y`.
pub fn mobius_add(x: &[f64], y: &[f64], c: Curvature) -> Vec<f64> {
    let c = c.get();
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    x.iter()
        .zip(y)
        .map(|(xi, yi)| (a * xi + b * yi) / den)
        .collect()
}

/// Möbius scalar multiplication `r ⊗_c x`.
pub fn mobius_scalar_mul(r: f64, x: &[f64], c: Curvature) -> Vec<f64> {
    let sc = c.sqrt();
    let n = norm(x);
    if n < MIN_NORM {
        return vec![0.0; x.len()];
    }
    let target = tanh(r * artanh(sc * n)) / sc;
    scaled(x, target / n)
}

/// Exponential map at the origin.
pub fn exp0(v: &[f64], c: Curvature) -> Vec<f64> {
    let sc = c.sqrt();
    let n = norm(v);
    if n < MIN_NORM {
        return vec![0.0; v.len()];
    }
    scaled(v, tanh(sc * n) / (sc * n))
}

/// Logarithmic map at the origin.
pub fn log0(y: &[f64], c: Curvature) -> Vec<f64> {
    let sc = c.sqrt();
    let n = norm(y);
    if n < MIN_NORM {
        return vec![0.0; y.len()];
    }
    scaled(y, artanh(sc * n) / (sc * n))
}

/// Exponential map at `x`.
pub fn exp_map(x: &[f64], v: &[f64], c: Curvature) -> Vec<f64> {
    let sc = c.sqrt();
    let n = norm(v);
    if n < MIN_NORM {
        return x.to_vec();
    }
    let lambda = conformal_factor(x, c);
    let step = scaled(v, tanh(sc * lambda * n / 2.0) / (sc * n));
    mobius_add(x, &step, c)
}

/// Logarithmic map at `x`.
pub fn log_map(x: &[f64], y: &[f64], c: Curvature) -> Vec<f64> {
    let sc = c.sqrt();
    let diff = mobius_add(&neg(x), y, c);
    let n = norm(&diff);
    if n < MIN_NORM {
        return vec![0.0; x.len()];
    }
    let lambda = conformal_factor(x, c);
    scaled(&diff, 2.0 / (sc * lambda) * artanh(sc * n) / n)
}

/// Möbius matrix-vector product `M ⊗_c x = exp0(M · log0(x))`.
pub fn mobius_matvec(m: ArrayView2<'_, f64>, x: &[f64], c: Curvature) -> Vec<f64> {
    let t = log0(x, c);
    let mt: Vec<f64> = m.rows().into_iter().map(|row| {
        row.iter().zip(&t).map(|(a, b)| a * b).sum()
    }).collect();
    exp0(&mt, c)
}

/// Geodesic distance `(2/√c) artanh(√c ‖-x ⊕ y‖)`.
pub fn distance(x: &[f64], y: &[f64], c: Curvature) -> f64 {
    let sc = c.sqrt();
    let diff = mobius_add(&neg(x), y, c);
    2.0 / sc * artanh(sc * norm(&diff))
}

/// Gyration `gyr[u, v] w = -(u ⊕ v) ⊕ (u ⊕ (v ⊕ w))`.
pub fn gyration(u: &[f64], v: &[f64], w: &[f64], c: Curvature) -> Vec<f64> {
    let uv = mobius_add(u, v, c);
    let vw = mobius_add(v, w, c);
    let u_vw = mobius_add(u, &vw, c);
    mobius_add(&neg(&uv), &u_vw, c)
}

/// Largest norm a projected point may have: `(1 - BALL_EPS)/√c`.
#[inline]
pub fn max_norm(c: Curvature) -> f64 {
    (1.0 - BALL_EPS) / c.sqrt()
}

/// Rescales `x` in place onto the `(1 - BALL_EPS)/√c` sphere when it sits at or
/// beyond it. Returns whether a clamp happened.
pub fn project_in_place(x: &mut [f64], c: Curvature) -> bool {
    let limit = max_norm(c);
    let n = norm(x);
    if n >= limit {
        let s = limit / n;
        x.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// Validated point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

/// Tangent vector; `base == None` marks the tangent space at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub coords: Vec<f64>,
    pub base: Option<BallPoint>,
}

impl TangentVector {
    pub fn at_origin(coords: Vec<f64>) -> Self {
        TangentVector { coords, base: None }
    }
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm_sq = norm_sq(&coords);
        let limit = 1.0 / curvature.get();
        if norm_sq >= limit {
            return Err(Error::OutsideBall { norm_sq, limit });
        }
        Ok(BallPoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        BallPoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    /// Clamps any finite vector into the ball.
    pub fn project(mut coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        project_in_place(&mut coords, curvature);
        Ok(BallPoint { coords, curvature })
    }

    // Results of closed-form maps that can round onto the boundary.
    fn settle(mut coords: Vec<f64>, curvature: Curvature) -> Self {
        project_in_place(&mut coords, curvature);
        BallPoint { coords, curvature }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    fn check_same_ball(&self, other: &BallPoint) -> Result<()> {
        if self.curvature != other.curvature {
            return Err(Error::CurvatureMismatch(
                self.curvature.get(),
                other.curvature.get(),
            ));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    pub fn conformal_factor(&self) -> f64 {
        conformal_factor(&self.coords, self.curvature)
    }

    pub fn neg(&self) -> BallPoint {
        BallPoint {
            coords: neg(&self.coords),
            curvature: self.curvature,
        }
    }

    pub fn mobius_add(&self, other: &BallPoint) -> Result<BallPoint> {
        self.check_same_ball(other)?;
        Ok(BallPoint {
            coords: mobius_add(&self.coords, &other.coords, self.curvature),
            curvature: self.curvature,
        })
    }

    pub fn scalar_mul(&self, r: f64) -> BallPoint {
        BallPoint::settle(
            mobius_scalar_mul(r, &self.coords, self.curvature),
            self.curvature,
        )
    }

    pub fn exp0(v: &TangentVector, curvature: Curvature) -> BallPoint {
        BallPoint::settle(exp0(&v.coords, curvature), curvature)
    }

    pub fn log0(&self) -> TangentVector {
        TangentVector::at_origin(log0(&self.coords, self.curvature))
    }

    pub fn exp_map(&self, v: &[f64]) -> Result<BallPoint> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(BallPoint::settle(
            exp_map(&self.coords, v, self.curvature),
            self.curvature,
        ))
    }

    pub fn log_map(&self, y: &BallPoint) -> Result<TangentVector> {
        self.check_same_ball(y)?;
        Ok(TangentVector {
            coords: log_map(&self.coords, &y.coords, self.curvature),
            base: Some(self.clone()),
        })
    }

    pub fn matvec(&self, m: ArrayView2<'_, f64>) -> Result<BallPoint> {
        if m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: m.ncols(),
            });
        }
        Ok(BallPoint::settle(
            mobius_matvec(m, &self.coords, self.curvature),
            self.curvature,
        ))
    }

    pub fn distance(&self, other: &BallPoint) -> Result<f64> {
        self.check_same_ball(other)?;
        Ok(distance(&self.coords, &other.coords, self.curvature))
    }

    pub fn gyration(u: &BallPoint, v: &BallPoint, w: &BallPoint) -> Result<BallPoint> {
        u.check_same_ball(v)?;
        u.check_same_ball(w)?;
        Ok(BallPoint {
            coords: gyration(&u.coords, &v.coords, &w.coords, u.curvature),
            curvature: u.curvature,
        })
    }
}
