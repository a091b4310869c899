//! Relation transforms `M_r` of the four bilinear decoders.
//!
//! Every variant is stored as a flat parameter row and expands into a dense
//! `n x n` matrix through a fixed scatter layout, which the differentiable
//! path reuses so both routes see the same matrix.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ball::{self, Curvature};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// DistMult: `diag(p)`.
    Diagonal,
    /// ComplEx: 2x2 blocks `[[a, -b], [b, a]]`.
    Block2RotationScale,
    /// DualE without type constraints: general 2x2 blocks.
    Block2General,
    /// RESCAL: a full matrix.
    Full,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::Diagonal,
        TransformKind::Block2RotationScale,
        TransformKind::Block2General,
        TransformKind::Full,
    ];

    /// Model name used on the command line.
    pub fn model_name(self) -> &'static str {
        match self {
            TransformKind::Diagonal => "distmult",
            TransformKind::Block2RotationScale => "complex",
            TransformKind::Block2General => "duale",
            TransformKind::Full => "rescal",
        }
    }

    pub fn from_model_name(name: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.model_name() == name)
            .ok_or_else(|| Error::Unknown {
                kind: "model",
                name: name.to_string(),
            })
    }

    pub fn needs_even_dim(self) -> bool {
        matches!(
            self,
            TransformKind::Block2RotationScale | TransformKind::Block2General
        )
    }

    /// Number of raw parameters for dimension `n`.
    pub fn param_len(self, n: usize) -> usize {
        match self {
            TransformKind::Diagonal | TransformKind::Block2RotationScale => n,
            TransformKind::Block2General => 2 * n,
            TransformKind::Full => n * n,
        }
    }

    /// `(source param, flat destination in row-major n x n, sign)` triples.
    pub fn scatter_layout(self, n: usize) -> Vec<(usize, usize, f64)> {
        let at = |r: usize, c: usize| r * n + c;
        match self {
            TransformKind::Diagonal => (0..n).map(|i| (i, at(i, i), 1.0)).collect(),
            TransformKind::Block2RotationScale => (0..n / 2)
                .flat_map(|k| {
                    let (a, b) = (2 * k, 2 * k + 1);
                    let (r0, r1) = (2 * k, 2 * k + 1);
                    [
                        (a, at(r0, r0), 1.0),
                        (b, at(r0, r1), -1.0),
                        (b, at(r1, r0), 1.0),
                        (a, at(r1, r1), 1.0),
                    ]
                })
                .collect(),
            TransformKind::Block2General => (0..n / 2)
                .flat_map(|k| {
                    let p = 4 * k;
                    let (r0, r1) = (2 * k, 2 * k + 1);
                    [
                        (p, at(r0, r0), 1.0),
                        (p + 1, at(r0, r1), 1.0),
                        (p + 2, at(r1, r0), 1.0),
                        (p + 3, at(r1, r1), 1.0),
                    ]
                })
                .collect(),
            TransformKind::Full => (0..n * n).map(|i| (i, i, 1.0)).collect(),
        }
    }
}

/// One relation's transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTransform {
    kind: TransformKind,
    dim: usize,
    params: Vec<f64>,
}

impl RelationTransform {
    pub fn new(kind: TransformKind, dim: usize, params: Vec<f64>) -> Result<Self> {
        if kind.needs_even_dim() && !dim.is_multiple_of(2) {
            return Err(Error::OddDimension(dim));
        }
        let expected = kind.param_len(dim);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(RelationTransform { kind, dim, params })
    }

    pub fn identity(kind: TransformKind, dim: usize) -> Result<Self> {
        let params = match kind {
            TransformKind::Diagonal => vec![1.0; dim],
            TransformKind::Block2RotationScale => (0..dim).map(|i| ((i + 1) % 2) as f64).collect(),
            TransformKind::Block2General => (0..dim / 2).flat_map(|_| [1.0, 0.0, 0.0, 1.0]).collect(),
            TransformKind::Full => {
                let mut p = vec![0.0; dim * dim];
                (0..dim).for_each(|i| p[i * dim + i] = 1.0);
                p
            }
        };
        RelationTransform::new(kind, dim, params)
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn matrix(&self) -> Array2<f64> {
        let n = self.dim;
        let mut m = Array2::zeros((n, n));
        let flat = m.as_slice_mut().expect("standard layout");
        for (src, dst, sign) in self.kind.scatter_layout(n) {
            flat[dst] += sign * self.params[src];
        }
        m
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }

    /// `M_r ⊗_c e_h`.
    pub fn apply(&self, head: &[f64], c: Curvature) -> Result<Vec<f64>> {
        self.check_dim(head.len())?;
        Ok(apply_matrix(self.matrix().view(), head, c))
    }

    /// Plain `M_r · e_h` for the Euclidean baselines.
    pub fn apply_euclidean(&self, head: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(head.len())?;
        Ok(self.matrix().dot(&ndarray::aview1(head)).to_vec())
    }
}

/// Möbius matrix-vector product followed by the boundary settle.
pub fn apply_matrix(m: ArrayView2<'_, f64>, head: &[f64], c: Curvature) -> Vec<f64> {
    let mut out = ball::mobius_matvec(m, head, c);
    ball::project_in_place(&mut out, c);
    out
}
