//! Fixtures shared by the benchmarks.

use ffhr_core::data::{generate_synthetic_tree, Adjacency, TripleStore};
use ffhr_core::model::EdgeIndex;
use ffhr_core::{Curvature, ModelConfig, ModelParams, TrainConfig, TransformKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A point with norm below `0.9` of the ball radius.
pub fn ball_point(rng: &mut impl Rng, n: usize, c: Curvature) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = rng.random_range(0.0..0.9) * c.radius() / ffhr_core::ball::norm(&v).max(1e-12);
    v.into_iter().map(|x| x * scale).collect()
}

pub fn ball_table(rng: &mut impl Rng, rows: usize, n: usize, c: Curvature) -> Array2<f64> {
    let mut t = Array2::zeros((rows, n));
    for mut row in t.rows_mut() {
        row.assign(&ndarray::Array1::from(ball_point(rng, n, c)));
    }
    t
}

pub struct TreeSetup {
    pub store: TripleStore,
    pub adjacency: Adjacency,
    pub params: ModelParams,
    pub edges: Option<EdgeIndex>,
}

/// The reciprocal-augmented synthetic tree with a freshly initialized model.
pub fn tree_setup(depth: usize, dim: usize, use_gcn: bool) -> TreeSetup {
    let store = generate_synthetic_tree(depth, 2, 0).expect("tree").augment_reciprocal();
    let adjacency = Adjacency::from_store(&store).expect("adjacency");
    let config = ModelConfig {
        dim,
        transform: TransformKind::Full,
        use_gcn,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(config, store.num_entities(), store.num_relations(), &mut rng(1)).expect("init");
    let edges = use_gcn.then(|| EdgeIndex::new(&adjacency, params.config().encoder.self_loops));
    TreeSetup { store, adjacency, params, edges }
}

pub fn bench_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    }
}
