//! Plausibility scores between a transformed head and a tail.

use serde::{Deserialize, Serialize};

use crate::ball::{self, BallPoint, Curvature, MIN_NORM};
use crate::decoders::RelationTransform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Hyperbolic inner product.
    Hin,
    EuclideanInner,
    /// Negated squared geodesic distance.
    HyperbolicDistance,
    /// Negated squared Euclidean distance.
    EuclideanDistance,
    /// Dot product of origin logarithms.
    TangentInner,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [
        ScoreKind::Hin,
        ScoreKind::EuclideanInner,
        ScoreKind::HyperbolicDistance,
        ScoreKind::EuclideanDistance,
        ScoreKind::TangentInner,
    ];

    /// Whether the score expects ball points (and Möbius relation transforms).
    pub fn is_hyperbolic(self) -> bool {
        matches!(
            self,
            ScoreKind::Hin | ScoreKind::HyperbolicDistance | ScoreKind::TangentInner
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Hin => "hin",
            ScoreKind::EuclideanInner => "euclidean_inner",
            ScoreKind::HyperbolicDistance => "hyperbolic_distance",
            ScoreKind::EuclideanDistance => "euclidean_distance",
            ScoreKind::TangentInner => "tangent_inner",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Unknown {
                kind: "score",
                name: name.to_string(),
            })
    }

    /// Score of an already transformed head against a tail.
    #[inline]
    pub fn score(self, head: &[f64], tail: &[f64], c: Curvature) -> f64 {
        match self {
            ScoreKind::Hin => hin(head, tail, c),
            ScoreKind::EuclideanInner => ball::dot(head, tail),
            ScoreKind::HyperbolicDistance => {
                let d = ball::distance(head, tail, c);
                -d * d
            }
            ScoreKind::EuclideanDistance => -head
                .iter()
                .zip(tail)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>(),
            ScoreKind::TangentInner => tangent_inner(head, tail, c),
        }
    }
}

/// Hyperbolic inner product of two ball points, seen from the origin.
///
/// With `A = x`, `B = y` and the angle at the origin equal to the Euclidean
/// one, `‖A‖‖B‖cos ψ = ⟨x, y⟩`, so
/// `Γ = ⟨x,y⟩ / ((1 + c²‖x‖²)(1 + c²‖y‖²) − 2c²⟨x,y⟩)`.
#[inline]
pub fn hin(x: &[f64], y: &[f64], c: Curvature) -> f64 {
    let x2 = ball::norm_sq(x);
    let y2 = ball::norm_sq(y);
    if x2 < MIN_NORM * MIN_NORM || y2 < MIN_NORM * MIN_NORM {
        return 0.0;
    }
    let c2 = c.get() * c.get();
    let p = ball::dot(x, y);
    p / ((1.0 + c2 * x2) * (1.0 + c2 * y2) - 2.0 * c2 * p)
}

pub fn hin_points(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    // distance() carries the same-ball checks
    x.distance(y)?;
    Ok(hin(x.coords(), y.coords(), x.curvature()))
}

/// `⟨log0(x), log0(y)⟩`.
#[inline]
pub fn tangent_inner(x: &[f64], y: &[f64], c: Curvature) -> f64 {
    let sc = c.sqrt();
    let nx = ball::norm(x);
    let ny = ball::norm(y);
    if nx < MIN_NORM || ny < MIN_NORM {
        return 0.0;
    }
    let fx = ball::artanh(sc * nx) / (sc * nx);
    let fy = ball::artanh(sc * ny) / (sc * ny);
    fx * fy * ball::dot(x, y)
}

/// `s(h, r, t)` for one triple.
pub fn score_triple(
    head: &[f64],
    transform: &RelationTransform,
    tail: &[f64],
    kind: ScoreKind,
    c: Curvature,
) -> Result<f64> {
    if tail.len() != transform.dim() {
        return Err(Error::DimensionMismatch {
            expected: transform.dim(),
            actual: tail.len(),
        });
    }
    let moved = if kind.is_hyperbolic() {
        transform.apply(head, c)?
    } else {
        transform.apply_euclidean(head)?
    };
    Ok(kind.score(&moved, tail, c))
}
