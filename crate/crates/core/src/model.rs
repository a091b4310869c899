//! Model parameters and the two forward paths over them.
//!
//! Parameters are stored as raw arrays: entity rows and encoder biases live in
//! the tangent space at the origin and are mapped onto the ball with `exp0`
//! when read, so an unconstrained optimizer can update them directly.
//! [`ModelParams::inference`] builds the plain scorer used for evaluation;
//! [`TapeForward`] records the same computation for training.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ball::{self, Curvature};
use crate::data::{Adjacency, Triple};
use crate::decoders::{self, TransformKind};
use crate::diff::geometry::{self as g, CurvatureVar};
use crate::diff::{Mat, Tape, Unary, Var};
use crate::encoder::{
    self, EncoderConfig, EncoderVariant, FeatureTransform, GcnLayerParams, Space, DEGENERATE_WEIGHT_SUM,
};
use crate::error::{Error, Result};
use crate::scoring::ScoreKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub transform: TransformKind,
    pub score: ScoreKind,
    pub use_gcn: bool,
    pub encoder: EncoderConfig,
    pub curvature: Curvature,
    pub trainable_curvature: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            transform: TransformKind::Full,
            score: ScoreKind::Hin,
            use_gcn: true,
            encoder: EncoderConfig::default(),
            curvature: Curvature::ONE,
            trainable_curvature: false,
        }
    }
}

impl ModelConfig {
    pub fn space(&self) -> Space {
        self.encoder.space
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.encoder.space == Space::Hyperbolic
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if self.score.is_hyperbolic() != self.is_hyperbolic() {
            return Err(Error::InvalidParameter(format!(
                "score {} does not match the {:?} space",
                self.score.name(),
                self.space()
            )));
        }
        let rotation_layers = self.use_gcn && self.encoder.variant == EncoderVariant::Fpm;
        if !self.dim.is_multiple_of(2) && (self.transform.needs_even_dim() || rotation_layers) {
            return Err(Error::OddDimension(self.dim));
        }
        if self.trainable_curvature && !self.is_hyperbolic() {
            return Err(Error::InvalidParameter(
                "trainable curvature needs the hyperbolic space".into(),
            ));
        }
        if self.use_gcn {
            self.encoder.validate()?;
        }
        Ok(())
    }
}

/// Position of each array inside [`ModelParams::arrays`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlots {
    transform: usize,
    bias: Option<usize>,
    attn_head: usize,
    attn_tail: usize,
}

/// All trainable arrays of a model, in a fixed declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    num_entities: usize,
    num_relations: usize,
    names: Vec<String>,
    arrays: Vec<Array2<f64>>,
}

const ENTITY: usize = 0;
const RELATION: usize = 1;

fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn softplus_inverse(y: f64) -> f64 {
    // log(exp(y) - 1), written to stay finite for large y
    y + (-(-y).exp_m1()).ln()
}

impl ModelParams {
    /// Xavier-uniform raw arrays, except that rotation angles and biases
    /// start at zero and general layer matrices at the identity, so the
    /// initial encoder layers only aggregate.
    ///
    /// `num_relations` counts every relation the decoder must handle,
    /// including reciprocals.
    pub fn init(config: ModelConfig, num_entities: usize, num_relations: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::Empty("model vocabulary"));
        }
        let n = config.dim;
        let mut names = vec!["entity".to_string(), "relation".to_string()];
        let mut arrays = vec![
            xavier_uniform(num_entities, n, rng),
            xavier_uniform(num_relations, config.transform.param_len(n), rng),
        ];
        if config.use_gcn {
            let slots = num_relations + 1;
            let k = config.encoder.num_heads;
            for l in 0..config.encoder.num_layers {
                match config.encoder.variant {
                    EncoderVariant::Fpm => {
                        names.push(format!("layer{l}.angles"));
                        arrays.push(Array2::zeros((slots, n / 2)));
                        names.push(format!("layer{l}.bias"));
                        arrays.push(Array2::zeros((slots, n)));
                    }
                    EncoderVariant::Hgcn => {
                        let eye = Array2::<f64>::eye(n).into_shape_with_order(n * n).expect("n*n");
                        let mut w = Array2::zeros((slots, n * n));
                        w.rows_mut().into_iter().for_each(|mut r| r.assign(&eye));
                        names.push(format!("layer{l}.weights"));
                        arrays.push(w);
                    }
                }
                names.push(format!("layer{l}.attn_head"));
                arrays.push(xavier_uniform(k, n, rng));
                names.push(format!("layer{l}.attn_tail"));
                arrays.push(xavier_uniform(k, n, rng));
            }
        }
        if config.trainable_curvature {
            names.push("curvature".to_string());
            arrays.push(Array2::from_elem((1, 1), softplus_inverse(config.curvature.get())));
        }
        Ok(ModelParams {
            config,
            num_entities,
            num_relations,
            names,
            arrays,
        })
    }

    /// Rebuilds parameters from named arrays, checking names and shapes
    /// against a fresh layout for `config`.
    pub fn from_arrays(
        config: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        arrays: Vec<(String, Array2<f64>)>,
    ) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let template = ModelParams::init(config, num_entities, num_relations, &mut rng)?;
        if template.arrays.len() != arrays.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameter arrays, found {}",
                template.arrays.len(),
                arrays.len()
            )));
        }
        let mut out = template;
        for (i, (name, a)) in arrays.into_iter().enumerate() {
            if name != out.names[i] || a.dim() != out.arrays[i].dim() {
                return Err(Error::InvalidParameter(format!(
                    "parameter {i}: expected {} {:?}, found {name} {:?}",
                    out.names[i],
                    out.arrays[i].dim(),
                    a.dim()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            out.arrays[i] = a;
        }
        if out.config.trainable_curvature {
            out.sync_curvature();
        }
        Ok(out)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array2<f64>] {
        &self.arrays
    }

    /// Mutable raw arrays. Call [`ModelParams::sync_curvature`] after editing
    /// a trainable curvature.
    pub fn arrays_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.arrays
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(Array2::len).sum()
    }

    /// Refreshes the stored curvature from its trainable raw value.
    pub fn sync_curvature(&mut self) {
        if let Some(raw) = self.curvature_slot().map(|i| self.arrays[i][[0, 0]]) {
            let c = Unary::Softplus.eval(raw).max(f64::MIN_POSITIVE);
            self.config.curvature = Curvature::new(c).unwrap_or(self.config.curvature);
        }
    }

    pub fn curvature(&self) -> Curvature {
        match self.curvature_slot() {
            Some(i) => Curvature::new(Unary::Softplus.eval(self.arrays[i][[0, 0]])).unwrap_or(self.config.curvature),
            None => self.config.curvature,
        }
    }

    fn curvature_slot(&self) -> Option<usize> {
        self.config.trainable_curvature.then(|| self.arrays.len() - 1)
    }

    fn layer_slots(&self, l: usize) -> LayerSlots {
        match self.config.encoder.variant {
            EncoderVariant::Fpm => {
                let base = 2 + 4 * l;
                LayerSlots {
                    transform: base,
                    bias: Some(base + 1),
                    attn_head: base + 2,
                    attn_tail: base + 3,
                }
            }
            EncoderVariant::Hgcn => {
                let base = 2 + 3 * l;
                LayerSlots {
                    transform: base,
                    bias: None,
                    attn_head: base + 1,
                    attn_tail: base + 2,
                }
            }
        }
    }

    fn num_layers(&self) -> usize {
        if self.config.use_gcn {
            self.config.encoder.num_layers
        } else {
            0
        }
    }

    /// Entity table before the encoder: `exp0` of the raw rows in hyperbolic
    /// space, the raw rows otherwise.
    pub fn base_table(&self) -> Array2<f64> {
        let raw = &self.arrays[ENTITY];
        if !self.config.is_hyperbolic() {
            return raw.clone();
        }
        let c = self.curvature();
        map_rows(raw, |row| {
            let mut p = ball::exp0(row, c);
            ball::project_in_place(&mut p, c);
            p
        })
    }

    /// Encoder parameters of layer `l`, with biases mapped onto the ball in
    /// hyperbolic space.
    pub fn layer(&self, l: usize) -> GcnLayerParams {
        let s = self.layer_slots(l);
        let transform = match s.bias {
            Some(b) => {
                let raw = &self.arrays[b];
                let biases = if self.config.is_hyperbolic() {
                    let c = self.curvature();
                    map_rows(raw, |row| ball::exp0(row, c))
                } else {
                    raw.clone()
                };
                FeatureTransform::Rotation {
                    angles: self.arrays[s.transform].clone(),
                    biases,
                }
            }
            None => FeatureTransform::General {
                weights: self.arrays[s.transform].clone(),
            },
        };
        GcnLayerParams {
            transform,
            attn_head: self.arrays[s.attn_head].clone(),
            attn_tail: self.arrays[s.attn_tail].clone(),
        }
    }

    /// Final entity table (after the encoder when enabled) and the number of
    /// boundary clamps it took.
    pub fn entity_table(&self, adjacency: &Adjacency) -> Result<(Array2<f64>, usize)> {
        let base = self.base_table();
        if !self.config.use_gcn {
            return Ok((base, 0));
        }
        self.check_adjacency(adjacency)?;
        let layers: Vec<GcnLayerParams> = (0..self.num_layers()).map(|l| self.layer(l)).collect();
        let out = encoder::fpmgcn_forward(&base, adjacency, &layers, &self.config.encoder, self.curvature())?;
        Ok((out.table, out.clamp_events))
    }

    fn check_adjacency(&self, adjacency: &Adjacency) -> Result<()> {
        if adjacency.num_entities() != self.num_entities {
            return Err(Error::DimensionMismatch {
                expected: self.num_entities,
                actual: adjacency.num_entities(),
            });
        }
        if adjacency.num_relations() != self.num_relations {
            return Err(Error::DimensionMismatch {
                expected: self.num_relations,
                actual: adjacency.num_relations(),
            });
        }
        Ok(())
    }

    /// Dense `n x n` matrix of relation `r`.
    pub fn relation_matrix(&self, r: usize) -> Array2<f64> {
        let n = self.config.dim;
        let row = self.arrays[RELATION].row(r);
        let mut m = Array2::zeros((n, n));
        let flat = m.as_slice_mut().expect("standard layout");
        for (src, dst, sign) in self.config.transform.scatter_layout(n) {
            flat[dst] += sign * row[src];
        }
        m
    }

    /// Plain scorer over the current parameters.
    pub fn inference(&self, adjacency: &Adjacency) -> Result<Inference> {
        let (table, _) = self.entity_table(adjacency)?;
        Ok(Inference {
            table,
            relations: (0..self.num_relations).map(|r| self.relation_matrix(r)).collect(),
            curvature: self.curvature(),
            score: self.config.score,
            hyperbolic: self.config.is_hyperbolic(),
        })
    }
}

fn map_rows(m: &Array2<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (src, mut dst) in m.rows().into_iter().zip(out.rows_mut()) {
        let v = f(src.as_slice().expect("contiguous row"));
        dst.iter_mut().zip(v).for_each(|(d, x)| *d = x);
    }
    out
}

/// Frozen entity table and relation matrices for scoring.
#[derive(Debug, Clone)]
pub struct Inference {
    table: Array2<f64>,
    relations: Vec<Array2<f64>>,
    curvature: Curvature,
    score: ScoreKind,
    hyperbolic: bool,
}

impl Inference {
    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn num_entities(&self) -> usize {
        self.table.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// `M_r ⊗_c e_h` (or `M_r e_h` in Euclidean space).
    pub fn transform_head(&self, head: usize, relation: usize) -> Result<Vec<f64>> {
        if head >= self.num_entities() {
            return Err(Error::IndexOutOfRange {
                index: head,
                len: self.num_entities(),
            });
        }
        let m = self.relations.get(relation).ok_or(Error::IndexOutOfRange {
            index: relation,
            len: self.relations.len(),
        })?;
        let h = self.table.row(head);
        let h = h.as_slice().expect("contiguous row");
        Ok(if self.hyperbolic {
            decoders::apply_matrix(m.view(), h, self.curvature)
        } else {
            m.dot(&ndarray::aview1(h)).to_vec()
        })
    }

    /// Scores of `(head, relation, e)` for every entity `e`.
    pub fn score_all(&self, head: usize, relation: usize) -> Result<Vec<f64>> {
        let moved = self.transform_head(head, relation)?;
        Ok(self
            .table
            .rows()
            .into_iter()
            .map(|t| self.score.score(&moved, t.as_slice().expect("contiguous row"), self.curvature))
            .collect())
    }

    pub fn score(&self, t: Triple) -> Result<f64> {
        let moved = self.transform_head(t.head, t.relation)?;
        let tail = self.table.row(t.tail);
        Ok(self.score.score(&moved, tail.as_slice().expect("contiguous row"), self.curvature))
    }
}

/// Encoder edges in a fixed order, grouped by relation for the batched
/// transforms.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    num_entities: usize,
    self_relation: usize,
    /// `(relation, sources, destinations)` per non-empty relation group.
    groups: Vec<(usize, Arc<[usize]>, Vec<usize>)>,
    dst: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn new(adjacency: &Adjacency, self_loops: bool) -> Self {
        let self_relation = adjacency.num_relations();
        let mut by_rel: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for i in 0..adjacency.num_entities() {
            for (r, j) in encoder::neighborhood(adjacency, i, self_loops) {
                let e = by_rel.entry(r).or_default();
                e.0.push(j);
                e.1.push(i);
            }
        }
        let mut dst = Vec::new();
        let groups = by_rel
            .into_iter()
            .map(|(r, (src, d))| {
                dst.extend_from_slice(&d);
                (r, Arc::from(src), d)
            })
            .collect();
        EdgeIndex {
            num_entities: adjacency.num_entities(),
            self_relation,
            groups,
            dst: dst.into(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.dst.len()
    }
}

/// Tape nodes for every parameter array plus the curvature in use.
pub struct TapeForward<'a> {
    params: &'a ModelParams,
    pub vars: Vec<Var>,
    pub curvature: CurvatureVar,
}

impl<'a> TapeForward<'a> {
    /// Records every array as a trainable leaf.
    pub fn new(tape: &mut Tape, params: &'a ModelParams) -> Self {
        let vars: Vec<Var> = params.arrays.iter().map(|a| tape.param(a.clone())).collect();
        let curvature = match params.curvature_slot() {
            Some(i) => {
                let c = tape.unary(vars[i], Unary::Softplus);
                CurvatureVar::from_var(tape, c)
            }
            None => CurvatureVar::constant(tape, params.config.curvature),
        };
        TapeForward {
            params,
            vars,
            curvature,
        }
    }

    fn hyperbolic(&self) -> bool {
        self.params.config.is_hyperbolic()
    }

    fn project(&self, tape: &mut Tape, x: Var) -> Var {
        if self.hyperbolic() {
            g::project(tape, x, &self.curvature)
        } else {
            x
        }
    }

    /// Entity table after the encoder, one row per entity.
    pub fn entity_table(&self, tape: &mut Tape, edges: Option<&EdgeIndex>) -> Result<Var> {
        let raw = self.vars[ENTITY];
        let mut x = if self.hyperbolic() {
            let e = g::exp0(tape, raw, &self.curvature);
            self.project(tape, e)
        } else {
            raw
        };
        if self.params.config.use_gcn {
            let edges = edges.ok_or_else(|| Error::InvalidParameter("encoder needs an edge index".into()))?;
            if edges.num_entities != self.params.num_entities || edges.self_relation != self.params.num_relations {
                return Err(Error::DimensionMismatch {
                    expected: self.params.num_entities,
                    actual: edges.num_entities,
                });
            }
            for l in 0..self.params.num_layers() {
                x = self.layer(tape, l, x, edges);
            }
        }
        Ok(x)
    }

    /// Messages `m = transform_r(x)` for one relation over the rows of `x`.
    fn messages(&self, tape: &mut Tape, l: usize, rel: usize, x: Var) -> Var {
        let n = self.params.config.dim;
        let s = self.params.layer_slots(l);
        let k = &self.curvature;
        match s.bias {
            Some(b) => {
                let angles = tape.gather_rows(self.vars[s.transform], vec![rel]);
                let cos = tape.unary(angles, Unary::Cos);
                let sin = tape.unary(angles, Unary::Sin);
                let cs = tape.concat_cols(&[cos, sin]);
                let half = n / 2;
                let at = |r: usize, c: usize| r * n + c;
                let layout: Vec<(usize, usize, f64)> = (0..half)
                    .flat_map(|q| {
                        let (r0, r1) = (2 * q, 2 * q + 1);
                        [
                            (q, at(r0, r0), 1.0),
                            (half + q, at(r0, r1), -1.0),
                            (half + q, at(r1, r0), 1.0),
                            (q, at(r1, r1), 1.0),
                        ]
                    })
                    .collect();
                let flat = tape.row_scatter(cs, layout, n * n);
                let w = tape.reshape(flat, n, n);
                let wt = tape.transpose(w);
                let rotated = tape.matmul(x, wt);
                let bias_raw = tape.gather_rows(self.vars[b], vec![rel]);
                if self.hyperbolic() {
                    let bias = g::exp0(tape, bias_raw, k);
                    let m = g::mobius_add(tape, bias, rotated, k);
                    g::project(tape, m, k)
                } else {
                    tape.add(rotated, bias_raw)
                }
            }
            None => {
                let row = tape.gather_rows(self.vars[s.transform], vec![rel]);
                let w = tape.reshape(row, n, n);
                if self.hyperbolic() {
                    let m = g::mobius_matvec(tape, w, x, k);
                    g::project(tape, m, k)
                } else {
                    let wt = tape.transpose(w);
                    tape.matmul(x, wt)
                }
            }
        }
    }

    fn layer(&self, tape: &mut Tape, l: usize, x: Var, edges: &EdgeIndex) -> Var {
        let cfg = &self.params.config.encoder;
        let s = self.params.layer_slots(l);
        let k = self.curvature;
        let n_ent = edges.num_entities;

        let center = self.messages(tape, l, edges.self_relation, x);
        let mut parts = Vec::with_capacity(edges.groups.len());
        for (rel, src, _) in &edges.groups {
            let xs = tape.gather_rows(x, src.clone());
            parts.push(self.messages(tape, l, *rel, xs));
        }
        let msgs = tape.concat_rows(&parts);
        let dst = edges.dst.clone();

        let ah = tape.transpose(self.vars[s.attn_head]);
        let at = tape.transpose(self.vars[s.attn_tail]);
        let h_att = tape.matmul(center, ah);
        let t_att = tape.matmul(msgs, at);
        let h_edge = tape.gather_rows(h_att, dst.clone());
        let pre = tape.add(h_edge, t_att);
        let v_all = tape.unary(pre, Unary::LeakyRelu(cfg.activation_slope));

        let hyperbolic = self.hyperbolic();
        let lambda = if hyperbolic && cfg.variant == EncoderVariant::Fpm {
            Some(g::conformal_factor(tape, msgs, &k))
        } else {
            None
        };
        let logs = if hyperbolic && cfg.variant == EncoderVariant::Hgcn {
            Some(g::log0(tape, msgs, &k))
        } else {
            None
        };

        let mut heads = Vec::with_capacity(cfg.num_heads);
        for head in 0..cfg.num_heads {
            let picks: Vec<(usize, usize)> = (0..edges.num_edges()).map(|e| (e, head)).collect();
            let v = tape.pick(v_all, picks);
            // (numerator weight, value rows, denominator weight) per edge
            let den_of = |tape: &mut Tape, v: Var| -> Var {
                let w = match (hyperbolic, cfg.variant) {
                    (true, EncoderVariant::Fpm) => {
                        let a = tape.unary(v, Unary::Abs);
                        let lm1 = tape.add_scalar(lambda.expect("fpm"), -1.0);
                        tape.mul(a, lm1)
                    }
                    (false, EncoderVariant::Fpm) => tape.unary(v, Unary::Abs),
                    (_, EncoderVariant::Hgcn) => v,
                };
                tape.scatter_add_rows(w, dst.clone(), n_ent)
            };
            let mut den = den_of(tape, v);
            let degenerate: Vec<bool> = tape
                .value(den)
                .column(0)
                .iter()
                .map(|d| d.abs() < DEGENERATE_WEIGHT_SUM)
                .collect();
            let v = if degenerate.iter().any(|&d| d) {
                let keep = Array2::from_shape_fn((edges.num_edges(), 1), |(e, _)| {
                    if degenerate[dst[e]] {
                        0.0
                    } else {
                        1.0
                    }
                });
                let fill = keep.mapv(|x| 1.0 - x);
                let keep = tape.constant(keep);
                let fill = tape.constant(fill);
                let kept = tape.mul(v, keep);
                let v = tape.add(kept, fill);
                den = den_of(tape, v);
                v
            } else {
                v
            };
            let values = match (hyperbolic, cfg.variant) {
                (true, EncoderVariant::Fpm) => {
                    let w = tape.mul(v, lambda.expect("fpm"));
                    tape.mul(w, msgs)
                }
                (true, EncoderVariant::Hgcn) => tape.mul(v, logs.expect("hgcn")),
                (false, _) => tape.mul(v, msgs),
            };
            let num = tape.scatter_add_rows(values, dst.clone(), n_ent);
            let mean = tape.div(num, den);
            let out = match (hyperbolic, cfg.variant) {
                (true, EncoderVariant::Fpm) => g::mobius_scalar_mul(tape, 0.5, mean, &k),
                (true, EncoderVariant::Hgcn) => g::exp0(tape, mean, &k),
                (false, _) => mean,
            };
            heads.push(self.project(tape, out));
        }

        let combined = if heads.len() == 1 {
            heads[0]
        } else if hyperbolic {
            let mut num = None;
            let mut den = None;
            for &h in &heads {
                let lam = g::conformal_factor(tape, h, &k);
                let wh = tape.mul(lam, h);
                let lm1 = tape.add_scalar(lam, -1.0);
                num = Some(match num {
                    None => wh,
                    Some(a) => tape.add(a, wh),
                });
                den = Some(match den {
                    None => lm1,
                    Some(a) => tape.add(a, lm1),
                });
            }
            let mean = tape.div(num.expect("heads"), den.expect("heads"));
            let mid = g::mobius_scalar_mul(tape, 0.5, mean, &k);
            g::project(tape, mid, &k)
        } else {
            let sum = heads[1..].iter().fold(heads[0], |a, &b| tape.add(a, b));
            tape.mul_scalar(sum, 1.0 / heads.len() as f64)
        };

        let slope = cfg.activation_slope;
        if hyperbolic {
            let scaled = tape.mul(combined, k.sqrt_c);
            let act = tape.unary(scaled, Unary::LeakyRelu(slope));
            let out = tape.div(act, k.sqrt_c);
            g::project(tape, out, &k)
        } else {
            tape.unary(combined, Unary::LeakyRelu(slope))
        }
    }

    /// `M_r ⊗_c e_h` for every row of `batch`.
    pub fn transformed_heads(&self, tape: &mut Tape, table: Var, batch: &[Triple]) -> Var {
        let n = self.params.config.dim;
        let heads: Vec<usize> = batch.iter().map(|t| t.head).collect();
        let rels: Vec<usize> = batch.iter().map(|t| t.relation).collect();
        let q = tape.gather_rows(table, heads);
        let raw = tape.gather_rows(self.vars[RELATION], rels);
        let mats = tape.row_scatter(raw, self.params.config.transform.scatter_layout(n), n * n);
        if self.hyperbolic() {
            let m = g::mobius_batch_matvec(tape, mats, q, &self.curvature);
            g::project(tape, m, &self.curvature)
        } else {
            tape.batch_matvec(mats, q)
        }
    }

    /// Scores of every transformed head against every table row.
    pub fn scores(&self, tape: &mut Tape, moved: Var, table: Var) -> Var {
        let k = &self.curvature;
        match self.params.config.score {
            ScoreKind::Hin => g::pairwise_hin(tape, moved, table, k),
            ScoreKind::EuclideanInner => g::pairwise_dot(tape, moved, table),
            ScoreKind::HyperbolicDistance => g::pairwise_neg_sq_distance(tape, moved, table, k),
            ScoreKind::EuclideanDistance => g::pairwise_neg_sq_euclidean(tape, moved, table),
            ScoreKind::TangentInner => {
                let a = g::log0(tape, moved, k);
                let b = g::log0(tape, table, k);
                g::pairwise_dot(tape, a, b)
            }
        }
    }

    /// Mean squared size of the transformed heads and the true tails: origin
    /// logarithms in hyperbolic space, plain norms otherwise.
    pub fn regularizer(&self, tape: &mut Tape, moved: Var, table: Var, batch: &[Triple]) -> Var {
        let tails: Vec<usize> = batch.iter().map(|t| t.tail).collect();
        let t = tape.gather_rows(table, tails);
        let (a, b) = if self.hyperbolic() {
            (g::log0(tape, moved, &self.curvature), g::log0(tape, t, &self.curvature))
        } else {
            (moved, t)
        };
        let na = g::row_norm_sq(tape, a);
        let nb = g::row_norm_sq(tape, b);
        let both = tape.add(na, nb);
        let total = tape.sum(both);
        tape.mul_scalar(total, 1.0 / batch.len() as f64)
    }

    /// Mean multiclass log-loss of the batch plus `reg_coeff` times the
    /// regularizer, as a `1 x 1` node.
    pub fn batch_loss(&self, tape: &mut Tape, table: Var, batch: &[Triple], reg_coeff: f64) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for t in batch {
            if t.head >= self.params.num_entities || t.tail >= self.params.num_entities {
                return Err(Error::IndexOutOfRange {
                    index: t.head.max(t.tail),
                    len: self.params.num_entities,
                });
            }
            if t.relation >= self.params.num_relations {
                return Err(Error::IndexOutOfRange {
                    index: t.relation,
                    len: self.params.num_relations,
                });
            }
        }
        let moved = self.transformed_heads(tape, table, batch);
        let s = self.scores(tape, moved, table);
        let lse = tape.row_logsumexp(s);
        let picks: Vec<(usize, usize)> = batch.iter().enumerate().map(|(i, t)| (i, t.tail)).collect();
        let truth = tape.pick(s, picks);
        let per_query = tape.sub(lse, truth);
        let total = tape.sum(per_query);
        let loss = tape.mul_scalar(total, 1.0 / batch.len() as f64);
        if reg_coeff == 0.0 {
            return Ok(loss);
        }
        let reg = self.regularizer(tape, moved, table, batch);
        let reg = tape.mul_scalar(reg, reg_coeff);
        Ok(tape.add(loss, reg))
    }
}

/// Loss, gradients (one per parameter array) and clamp count for a batch.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Vec<Mat>,
    pub clamp_events: usize,
}

pub fn loss_and_grad(
    params: &ModelParams,
    edges: Option<&EdgeIndex>,
    batch: &[Triple],
    reg_coeff: f64,
) -> Result<LossAndGrad> {
    let mut tape = Tape::new();
    let fwd = TapeForward::new(&mut tape, params);
    let table = fwd.entity_table(&mut tape, edges)?;
    let loss = fwd.batch_loss(&mut tape, table, batch, reg_coeff)?;
    let value = tape.value(loss)[[0, 0]];
    let clamp_events = tape.clamp_events();
    let vars = fwd.vars.clone();
    let mut grads = tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(&params.arrays)
        .map(|(&v, a)| grads.take(v).unwrap_or_else(|| Array2::zeros(a.dim())))
        .collect();
    Ok(LossAndGrad {
        loss: value,
        grads,
        clamp_events,
    })
}

/// Loss only, without recording a backward pass.
pub fn loss_value(params: &ModelParams, edges: Option<&EdgeIndex>, batch: &[Triple], reg_coeff: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let fwd = TapeForward::new(&mut tape, params);
    let table = fwd.entity_table(&mut tape, edges)?;
    let loss = fwd.batch_loss(&mut tape, table, batch, reg_coeff)?;
    Ok(tape.value(loss)[[0, 0]])
}
