//! FPM-GCN forward pass on the Poincaré ball, its Euclidean counterpart, and
//! the tangent-space (HGCN-style) ablation modules.
//!
//! This is the plain evaluation path. The trainable version in
//! [`crate::model`] records the same computation on a tape; the two are
//! checked against each other in tests.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ball::{self, Curvature};
use crate::data::Adjacency;
use crate::error::{Error, Result};

/// Below this `|Σ|v|(λ-1)|` (or `|Σ v|` for the tangent ablation) the
/// attention weights are replaced by uniform ones.
pub const DEGENERATE_WEIGHT_SUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Hyperbolic,
    Euclidean,
}

/// Which feature-transform/aggregation modules a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Gyrotranslation + block rotation, gyromidpoint aggregation.
    Fpm,
    /// Möbius matrix-vector transform, tangent-space mean aggregation.
    Hgcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub activation_slope: f64,
    pub space: Space,
    pub self_loops: bool,
    pub variant: EncoderVariant,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 1,
            num_heads: 1,
            activation_slope: 0.01,
            space: Space::Hyperbolic,
            self_loops: true,
            variant: EncoderVariant::Fpm,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidParameter("num_layers must be at least 1".into()));
        }
        if self.num_heads == 0 {
            return Err(Error::InvalidParameter("num_heads must be at least 1".into()));
        }
        if !(self.activation_slope > 0.0 && self.activation_slope < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "activation_slope must lie in (0, 1), got {}",
                self.activation_slope
            )));
        }
        Ok(())
    }
}

/// Per-relation feature transforms of one layer. Row `r` belongs to relation
/// `r`; the last row is the self-loop relation.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureTransform {
    /// `angles`: `(R+1) x n/2`; `biases`: `(R+1) x n`, ball points in
    /// hyperbolic space, plain vectors in Euclidean space.
    Rotation { angles: Array2<f64>, biases: Array2<f64> },
    /// `(R+1) x n²` row-major general matrices.
    General { weights: Array2<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    pub transform: FeatureTransform,
    /// `K x n`, one row per head.
    pub attn_head: Array2<f64>,
    /// `K x n`, one row per head.
    pub attn_tail: Array2<f64>,
}

impl GcnLayerParams {
    pub fn num_heads(&self) -> usize {
        self.attn_head.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub table: Array2<f64>,
    /// Times the boundary projection had to move a point.
    pub clamp_events: usize,
}

/// Block-diagonal rotation `diag(A(θ_1), ..., A(θ_{n/2}))`.
pub fn build_rotation(angles: &[f64], n: usize) -> Result<Array2<f64>> {
    if !n.is_multiple_of(2) {
        return Err(Error::OddDimension(n));
    }
    if angles.len() != n / 2 {
        return Err(Error::DimensionMismatch {
            expected: n / 2,
            actual: angles.len(),
        });
    }
    let mut w = Array2::zeros((n, n));
    for (k, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let i = 2 * k;
        w[[i, i]] = c;
        w[[i, i + 1]] = -s;
        w[[i + 1, i]] = s;
        w[[i + 1, i + 1]] = c;
    }
    Ok(w)
}

/// Applies the block rotation without materializing the matrix.
pub fn rotate(angles: &[f64], x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(2 * angles.len(), x.len());
    let mut out = vec![0.0; x.len()];
    for (k, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let (a, b) = (x[2 * k], x[2 * k + 1]);
        out[2 * k] = c * a - s * b;
        out[2 * k + 1] = s * a + c * b;
    }
    out
}

fn matvec(w: ArrayView2<'_, f64>, x: &[f64]) -> Vec<f64> {
    w.rows()
        .into_iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `b ⊕_c (W x)` for an orthogonal `W`.
pub fn feature_transform(x: &[f64], w: ArrayView2<'_, f64>, bias: &[f64], c: Curvature) -> Result<Vec<f64>> {
    if w.ncols() != x.len() || w.nrows() != bias.len() {
        return Err(Error::DimensionMismatch {
            expected: w.ncols(),
            actual: x.len(),
        });
    }
    Ok(ball::mobius_add(bias, &matvec(w, x), c))
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `LeakyReLU(a_hᵀ m_i + a_tᵀ m_j)` for every neighbor message `m_j`.
pub fn attention_weights<'a>(
    center: &[f64],
    neighbors: impl IntoIterator<Item = &'a [f64]>,
    attn_head: &[f64],
    attn_tail: &[f64],
    slope: f64,
) -> Vec<f64> {
    let h = ball::dot(attn_head, center);
    neighbors
        .into_iter()
        .map(|m| leaky_relu(h + ball::dot(attn_tail, m), slope))
        .collect()
}

/// Weighted Möbius gyromidpoint
/// `½ ⊗_c (Σ v_j λ_j m_j / Σ |v_j| (λ_j - 1))`.
pub fn gyromidpoint(points: &[&[f64]], weights: &[f64], c: Curvature) -> Result<Vec<f64>> {
    let first = points.first().ok_or(Error::Empty("gyromidpoint points"))?;
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: weights.len(),
        });
    }
    let n = first.len();
    let lambdas: Vec<f64> = points.iter().map(|p| ball::conformal_factor(p, c)).collect();
    let den: f64 = weights
        .iter()
        .zip(&lambdas)
        .map(|(v, l)| v.abs() * (l - 1.0))
        .sum();
    let uniform;
    let (weights, den) = if den.abs() < DEGENERATE_WEIGHT_SUM {
        uniform = vec![1.0; points.len()];
        let den = lambdas.iter().map(|l| l - 1.0).sum();
        (&uniform[..], den)
    } else {
        (weights, den)
    };
    let mut num = vec![0.0; n];
    for ((p, v), l) in points.iter().zip(weights).zip(&lambdas) {
        for (acc, x) in num.iter_mut().zip(p.iter()) {
            *acc += v * l * x;
        }
    }
    num.iter_mut().for_each(|x| *x /= den);
    Ok(ball::mobius_scalar_mul(0.5, &num, c))
}

/// Equal-weight gyromidpoint of the head outputs.
pub fn multi_head_combine(heads: &[&[f64]], c: Curvature) -> Result<Vec<f64>> {
    match heads {
        [] => Err(Error::Empty("multi_head_combine heads")),
        [one] => Ok(one.to_vec()),
        _ => gyromidpoint(heads, &vec![1.0; heads.len()], c),
    }
}

/// `(1/√c) σ(√c x)` with coordinatewise LeakyReLU.
pub fn hyperbolic_activation(x: &[f64], slope: f64, c: Curvature) -> Vec<f64> {
    let sc = c.sqrt();
    x.iter().map(|v| leaky_relu(sc * v, slope) / sc).collect()
}

/// Tangent-space ablation transform `W ⊗_c x` for a general matrix `W`.
pub fn hgcn_feature_transform(x: &[f64], w: ArrayView2<'_, f64>, c: Curvature) -> Result<Vec<f64>> {
    if w.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.ncols(),
            actual: x.len(),
        });
    }
    let mut out = ball::mobius_matvec(w, x, c);
    ball::project_in_place(&mut out, c);
    Ok(out)
}

/// Tangent-space ablation aggregation `exp0(Σ v_j log0(m_j) / Σ v_j)`.
pub fn hgcn_aggregate(messages: &[&[f64]], weights: &[f64], c: Curvature) -> Result<Vec<f64>> {
    let first = messages.first().ok_or(Error::Empty("hgcn_aggregate messages"))?;
    if weights.len() != messages.len() {
        return Err(Error::DimensionMismatch {
            expected: messages.len(),
            actual: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    let uniform;
    let (weights, total) = if total.abs() < DEGENERATE_WEIGHT_SUM {
        uniform = vec![1.0; messages.len()];
        (&uniform[..], messages.len() as f64)
    } else {
        (weights, total)
    };
    let mut acc = vec![0.0; first.len()];
    for (m, v) in messages.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(ball::log0(m, c)) {
            *a += v * x / total;
        }
    }
    let mut out = ball::exp0(&acc, c);
    ball::project_in_place(&mut out, c);
    Ok(out)
}

/// Edges entering entity `i`: the self-loop (relation `num_relations`) first
/// when enabled or when `i` has no other neighbor, then the outgoing edges
/// `(relation, neighbor)` of `i` in adjacency order.
pub fn neighborhood(adjacency: &Adjacency, i: usize, self_loops: bool) -> Vec<(usize, usize)> {
    let out = adjacency.neighbors(i);
    let mut edges = Vec::with_capacity(out.len() + 1);
    if self_loops || out.is_empty() {
        edges.push((adjacency.num_relations(), i));
    }
    edges.extend_from_slice(out);
    edges
}

struct LayerCtx<'a> {
    params: &'a GcnLayerParams,
    config: &'a EncoderConfig,
    c: Curvature,
    dim: usize,
}

impl LayerCtx<'_> {
    fn message(&self, x: &[f64], rel: usize, clamps: &mut usize) -> Vec<f64> {
        let hyperbolic = self.config.space == Space::Hyperbolic;
        match &self.params.transform {
            FeatureTransform::Rotation { angles, biases } => {
                let angles = angles.row(rel);
                let bias = biases.row(rel);
                let rotated = rotate(angles.as_slice().expect("contiguous"), x);
                let bias = bias.as_slice().expect("contiguous");
                if hyperbolic {
                    let mut m = ball::mobius_add(bias, &rotated, self.c);
                    *clamps += ball::project_in_place(&mut m, self.c) as usize;
                    m
                } else {
                    rotated.iter().zip(bias).map(|(a, b)| a + b).collect()
                }
            }
            FeatureTransform::General { weights } => {
                let w = weights.row(rel);
                let w = ArrayView2::from_shape((self.dim, self.dim), w.as_slice().expect("contiguous"))
                    .expect("n x n");
                if hyperbolic {
                    let mut m = ball::mobius_matvec(w, x, self.c);
                    *clamps += ball::project_in_place(&mut m, self.c) as usize;
                    m
                } else {
                    matvec(w, x)
                }
            }
        }
    }

    fn aggregate(&self, messages: &[&[f64]], weights: &[f64], clamps: &mut usize) -> Result<Vec<f64>> {
        match (self.config.space, self.config.variant) {
            (Space::Hyperbolic, EncoderVariant::Fpm) => {
                let mut out = gyromidpoint(messages, weights, self.c)?;
                *clamps += ball::project_in_place(&mut out, self.c) as usize;
                Ok(out)
            }
            (Space::Hyperbolic, EncoderVariant::Hgcn) => {
                let total: f64 = weights.iter().sum();
                let uniform;
                let (weights, total) = if total.abs() < DEGENERATE_WEIGHT_SUM {
                    uniform = vec![1.0; messages.len()];
                    (&uniform[..], messages.len() as f64)
                } else {
                    (weights, total)
                };
                let mut acc = vec![0.0; self.dim];
                for (m, v) in messages.iter().zip(weights) {
                    for (a, x) in acc.iter_mut().zip(ball::log0(m, self.c)) {
                        *a += v * x;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= total);
                let mut out = ball::exp0(&acc, self.c);
                *clamps += ball::project_in_place(&mut out, self.c) as usize;
                Ok(out)
            }
            (Space::Euclidean, variant) => {
                let total: f64 = match variant {
                    EncoderVariant::Fpm => weights.iter().map(|v| v.abs()).sum(),
                    EncoderVariant::Hgcn => weights.iter().sum(),
                };
                let uniform;
                let (weights, total) = if total.abs() < DEGENERATE_WEIGHT_SUM {
                    uniform = vec![1.0; messages.len()];
                    (&uniform[..], messages.len() as f64)
                } else {
                    (weights, total)
                };
                let mut acc = vec![0.0; self.dim];
                for (m, v) in messages.iter().zip(weights) {
                    for (a, x) in acc.iter_mut().zip(m.iter()) {
                        *a += v * x;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= total);
                Ok(acc)
            }
        }
    }

    fn combine_heads(&self, heads: &[Vec<f64>], clamps: &mut usize) -> Result<Vec<f64>> {
        if heads.len() == 1 {
            return Ok(heads[0].clone());
        }
        let refs: Vec<&[f64]> = heads.iter().map(|h| h.as_slice()).collect();
        match self.config.space {
            Space::Hyperbolic => {
                let mut out = multi_head_combine(&refs, self.c)?;
                *clamps += ball::project_in_place(&mut out, self.c) as usize;
                Ok(out)
            }
            Space::Euclidean => {
                let k = heads.len() as f64;
                Ok((0..self.dim)
                    .map(|j| heads.iter().map(|h| h[j]).sum::<f64>() / k)
                    .collect())
            }
        }
    }

    fn activate(&self, x: &[f64], clamps: &mut usize) -> Vec<f64> {
        let slope = self.config.activation_slope;
        match self.config.space {
            Space::Hyperbolic => {
                let mut out = hyperbolic_activation(x, slope, self.c);
                *clamps += ball::project_in_place(&mut out, self.c) as usize;
                out
            }
            Space::Euclidean => x.iter().map(|&v| leaky_relu(v, slope)).collect(),
        }
    }
}

fn check_layer(params: &GcnLayerParams, config: &EncoderConfig, n: usize, rel_slots: usize) -> Result<()> {
    let rows_ok = |m: &Array2<f64>, cols: usize| m.nrows() == rel_slots && m.ncols() == cols;
    match &params.transform {
        FeatureTransform::Rotation { angles, biases } => {
            if !n.is_multiple_of(2) {
                return Err(Error::OddDimension(n));
            }
            if !rows_ok(angles, n / 2) || !rows_ok(biases, n) {
                return Err(Error::InvalidParameter(format!(
                    "rotation layer expects {rel_slots} relation rows for dimension {n}"
                )));
            }
        }
        FeatureTransform::General { weights } => {
            if !rows_ok(weights, n * n) {
                return Err(Error::InvalidParameter(format!(
                    "general layer expects {rel_slots} rows of {} weights",
                    n * n
                )));
            }
        }
    }
    if params.attn_head.ncols() != n || params.attn_tail.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: params.attn_head.ncols(),
        });
    }
    if params.attn_head.nrows() != config.num_heads || params.attn_tail.nrows() != config.num_heads {
        return Err(Error::InvalidParameter(format!(
            "expected {} attention heads, got {}",
            config.num_heads,
            params.attn_head.nrows()
        )));
    }
    Ok(())
}

/// Runs every layer over the whole entity table.
///
/// `entities` holds one point per row (ball points in hyperbolic space).
pub fn fpmgcn_forward(
    entities: &Array2<f64>,
    adjacency: &Adjacency,
    layers: &[GcnLayerParams],
    config: &EncoderConfig,
    c: Curvature,
) -> Result<EncoderOutput> {
    config.validate()?;
    let (num_entities, n) = entities.dim();
    if adjacency.num_entities() != num_entities {
        return Err(Error::DimensionMismatch {
            expected: adjacency.num_entities(),
            actual: num_entities,
        });
    }
    let rel_slots = adjacency.num_relations() + 1;
    let neighborhoods: Vec<Vec<(usize, usize)>> = (0..num_entities)
        .map(|i| neighborhood(adjacency, i, config.self_loops))
        .collect();

    let mut clamps = 0usize;
    let mut current = entities.clone();
    for params in layers {
        check_layer(params, config, n, rel_slots)?;
        let ctx = LayerCtx { params, config, c, dim: n };
        let self_rel = adjacency.num_relations();
        let mut next = Array2::zeros((num_entities, n));
        for (i, edges) in neighborhoods.iter().enumerate() {
            let xi = current.row(i);
            let center = ctx.message(xi.as_slice().expect("contiguous"), self_rel, &mut clamps);
            let messages: Vec<Vec<f64>> = edges
                .iter()
                .map(|&(r, j)| ctx.message(current.row(j).as_slice().expect("contiguous"), r, &mut clamps))
                .collect();
            let refs: Vec<&[f64]> = messages.iter().map(|m| m.as_slice()).collect();
            let mut heads = Vec::with_capacity(config.num_heads);
            for k in 0..config.num_heads {
                let ah = params.attn_head.row(k);
                let at = params.attn_tail.row(k);
                let v = attention_weights(
                    &center,
                    refs.iter().copied(),
                    ah.as_slice().expect("contiguous"),
                    at.as_slice().expect("contiguous"),
                    config.activation_slope,
                );
                heads.push(ctx.aggregate(&refs, &v, &mut clamps)?);
            }
            let combined = ctx.combine_heads(&heads, &mut clamps)?;
            let out = ctx.activate(&combined, &mut clamps);
            next.row_mut(i).iter_mut().zip(out).for_each(|(d, v)| *d = v);
        }
        current = next;
    }
    Ok(EncoderOutput {
        table: current,
        clamp_events: clamps,
    })
}
