//! Objective, Adagrad and the training loop with early stopping.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ball::{self, Curvature};
use crate::data::{Adjacency, FilterIndex, Split, Triple, TripleStore};
use crate::encoder::Space;
use crate::error::{Error, Result};
use crate::eval::{self, RankingReport};
use crate::model::{self, EdgeIndex, ModelConfig, ModelParams};

pub const ADAGRAD_EPS: f64 = 1e-10;

/// Values searched by the original grid; others are allowed but flagged.
pub const GRID_BATCH_SIZE: [usize; 5] = [100, 200, 500, 1000, 2000];
pub const GRID_LEARNING_RATE: [f64; 5] = [0.005, 0.01, 0.05, 0.1, 0.5];
pub const GRID_REG_COEFF: [f64; 5] = [0.005, 0.01, 0.05, 0.1, 0.5];
pub const GRID_HEADS: [usize; 4] = [1, 2, 4, 8];
pub const GRID_LAYERS: [usize; 2] = [1, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub reg_coeff: f64,
    pub max_epochs: usize,
    /// Non-improving validation rounds tolerated before stopping.
    pub patience: usize,
    /// Epochs between validation rounds.
    pub eval_every: usize,
    pub seed: u64,
    /// Scan the mapped entity table after every epoch and fail on any point
    /// outside the ball.
    pub check_ball: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1000,
            learning_rate: 0.1,
            reg_coeff: 0.05,
            max_epochs: 500,
            patience: 10,
            eval_every: 5,
            seed: 0,
            check_ball: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be finite and nonnegative".into()));
        }
        if !(self.reg_coeff >= 0.0 && self.reg_coeff.is_finite()) {
            return Err(Error::InvalidParameter("reg_coeff must be finite and nonnegative".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidParameter("eval_every must be positive".into()));
        }
        Ok(())
    }

    /// Settings outside the searched grid, as human-readable notes.
    pub fn off_grid(&self, model: &ModelConfig) -> Vec<String> {
        let mut notes = Vec::new();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        if !GRID_BATCH_SIZE.contains(&self.batch_size) {
            notes.push(format!("batch_size {} is outside the grid {GRID_BATCH_SIZE:?}", self.batch_size));
        }
        if !GRID_LEARNING_RATE.iter().any(|&g| close(self.learning_rate, g)) {
            notes.push(format!(
                "learning_rate {} is outside the grid {GRID_LEARNING_RATE:?}",
                self.learning_rate
            ));
        }
        if !GRID_REG_COEFF.iter().any(|&g| close(self.reg_coeff, g)) {
            notes.push(format!("reg_coeff {} is outside the grid {GRID_REG_COEFF:?}", self.reg_coeff));
        }
        if model.use_gcn {
            if !GRID_HEADS.contains(&model.encoder.num_heads) {
                notes.push(format!("heads {} is outside the grid {GRID_HEADS:?}", model.encoder.num_heads));
            }
            if !GRID_LAYERS.contains(&model.encoder.num_layers) {
                notes.push(format!("layers {} is outside the grid {GRID_LAYERS:?}", model.encoder.num_layers));
            }
        }
        notes
    }
}

/// `-s_target + log Σ exp(s)`, with the max shifted out.
pub fn multiclass_log_loss(scores: &[f64], target: usize) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite);
    }
    // ln Σ exp(s - m) = ln_1p(Σ_{j ≠ argmax} exp(s_j - m)) keeps precision
    // when one score dominates
    let (argmax, m) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, s)| (s - m).exp())
        .sum();
    Ok(((m - scores[target]) + rest.ln_1p()).max(0.0))
}

/// `reg_coeff · mean_b (‖log0(transformed_b)‖² + ‖log0(tail_b)‖²)`.
pub fn dura_regularizer(transformed: &[&[f64]], tails: &[&[f64]], reg_coeff: f64, c: Curvature) -> Result<f64> {
    if transformed.len() != tails.len() {
        return Err(Error::DimensionMismatch {
            expected: transformed.len(),
            actual: tails.len(),
        });
    }
    if transformed.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = transformed
        .iter()
        .zip(tails)
        .map(|(m, t)| ball::norm_sq(&ball::log0(m, c)) + ball::norm_sq(&ball::log0(t, c)))
        .sum();
    Ok(reg_coeff * total / transformed.len() as f64)
}

/// Adagrad sums of squared gradients, one array per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Array2<f64>>,
    /// Steps dropped because a gradient was not finite.
    pub skipped_steps: usize,
}

impl OptimizerState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        OptimizerState {
            accumulators: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            skipped_steps: 0,
        }
    }
}

/// `acc += g²; p -= lr · g / (√acc + ε)` on every array. A step with any
/// non-finite gradient is skipped entirely and counted; returns whether the
/// step was applied.
pub fn adagrad_step(params: &mut [Array2<f64>], grads: &[Array2<f64>], state: &mut OptimizerState, lr: f64) -> Result<bool> {
    if params.len() != grads.len() || params.len() != state.accumulators.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for ((p, g), a) in params.iter().zip(grads).zip(&state.accumulators) {
        if p.dim() != g.dim() || p.dim() != a.dim() {
            return Err(Error::InvalidParameter(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                g.dim(),
                p.dim()
            )));
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        state.skipped_steps += 1;
        log::warn!("non-finite gradient, step skipped ({} so far)", state.skipped_steps);
        return Ok(false);
    }
    for ((p, g), a) in params.iter_mut().zip(grads).zip(state.accumulators.iter_mut()) {
        ndarray::Zip::from(p).and(g).and(a).for_each(|p, &g, a| {
            *a += g * g;
            *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        });
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub clamp_events: usize,
    pub skipped_steps: usize,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
    pub wall_time: f64,
}

/// Model, optimizer and data needed to run epochs.
pub struct Trainer {
    params: ModelParams,
    store: TripleStore,
    adjacency: Adjacency,
    edges: Option<EdgeIndex>,
    filter: FilterIndex,
    config: TrainConfig,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// Initializes parameters from `config.seed`. `store` may be plain or
    /// already augmented.
    pub fn new(model: ModelConfig, config: TrainConfig, store: &TripleStore) -> Result<Self> {
        config.validate()?;
        let store = store.augment_reciprocal();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(model, store.num_entities(), store.num_relations(), &mut rng)?;
        Trainer::with_params(params, config, &store)
    }

    pub fn with_params(params: ModelParams, config: TrainConfig, store: &TripleStore) -> Result<Self> {
        config.validate()?;
        let store = store.augment_reciprocal();
        if params.num_entities() != store.num_entities() || params.num_relations() != store.num_relations() {
            return Err(Error::DimensionMismatch {
                expected: store.num_entities(),
                actual: params.num_entities(),
            });
        }
        let adjacency = Adjacency::from_store(&store)?;
        let edges = params
            .config()
            .use_gcn
            .then(|| EdgeIndex::new(&adjacency, params.config().encoder.self_loops));
        let filter = FilterIndex::build(&store);
        let optimizer = OptimizerState::new(params.arrays());
        // shuffling draws from its own stream so it does not depend on init
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
        Ok(Trainer {
            params,
            store,
            adjacency,
            edges,
            filter,
            config,
            optimizer,
            rng,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn store(&self) -> &TripleStore {
        &self.store
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One seeded-shuffle pass over the augmented training triples.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let mut order: Vec<Triple> = self.store.train().to_vec();
        order.shuffle(&mut self.rng);
        let mut weighted = 0.0;
        let mut clamps = 0;
        let skipped_before = self.optimizer.skipped_steps;
        for batch in order.chunks(self.config.batch_size) {
            let lg = model::loss_and_grad(&self.params, self.edges.as_ref(), batch, self.config.reg_coeff)?;
            weighted += lg.loss * batch.len() as f64;
            clamps += lg.clamp_events;
            adagrad_step(
                self.params.arrays_mut(),
                &lg.grads,
                &mut self.optimizer,
                self.config.learning_rate,
            )?;
            self.params.sync_curvature();
        }
        self.epoch += 1;
        if self.config.check_ball {
            self.check_ball()?;
        }
        Ok(EpochStats {
            epoch: self.epoch,
            loss: weighted / order.len() as f64,
            clamp_events: clamps,
            skipped_steps: self.optimizer.skipped_steps - skipped_before,
        })
    }

    fn check_ball(&self) -> Result<()> {
        if self.params.config().space() != Space::Hyperbolic {
            return Ok(());
        }
        let limit = self.params.curvature().radius();
        for row in self.params.base_table().rows() {
            let n2 = row.dot(&row);
            if !(n2.sqrt() < limit) {
                return Err(Error::OutsideBall {
                    norm_sq: n2,
                    limit: limit * limit,
                });
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, split: Split) -> Result<RankingReport> {
        let inference = self.params.inference(&self.adjacency)?;
        eval::evaluate_split(&inference, &self.store, &self.filter, split)
    }

    /// Trains with early stopping on validation MRR and returns the
    /// best-validation parameters (the final ones when there is no
    /// validation split). `on_record` sees every metrics record as it is
    /// produced.
    pub fn fit(&mut self, mut on_record: impl FnMut(&MetricsRecord, &ModelParams) -> Result<()>) -> Result<FitOutcome> {
        let start = Instant::now();
        let has_valid = !self.store.valid().is_empty();
        let mut best: Option<(f64, usize, ModelParams)> = None;
        let mut stale = 0usize;
        let mut history = Vec::new();
        while self.epoch < self.config.max_epochs {
            let stats = self.train_epoch()?;
            let due = has_valid && (stats.epoch % self.config.eval_every == 0 || stats.epoch == self.config.max_epochs);
            let valid_mrr = if due {
                Some(self.evaluate(Split::Valid)?.mrr)
            } else {
                None
            };
            let record = MetricsRecord {
                epoch: stats.epoch,
                loss: stats.loss,
                valid_mrr,
                wall_time: start.elapsed().as_secs_f64(),
            };
            on_record(&record, &self.params)?;
            history.push(record);
            if let Some(mrr) = valid_mrr {
                if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                    best = Some((mrr, stats.epoch, self.params.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.config.patience {
                        log::info!("early stop at epoch {} after {stale} stale evaluations", stats.epoch);
                        break;
                    }
                }
            }
        }
        let (best_valid_mrr, best_epoch, params) = match best {
            Some((m, e, p)) => (Some(m), e, p),
            None => (None, self.epoch, self.params.clone()),
        };
        Ok(FitOutcome {
            params,
            best_valid_mrr,
            best_epoch,
            epochs_run: self.epoch,
            history,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub best_valid_mrr: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<MetricsRecord>,
}
