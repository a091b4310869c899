#![allow(dead_code)]

use std::collections::HashSet;

use ffhr_core::data::{generate_synthetic_tree, Split, Triple, TripleStore};
use ffhr_core::encoder::{EncoderConfig, EncoderVariant, Space};
use ffhr_core::model::{ModelConfig, ModelParams};
use ffhr_core::{ScoreKind, TrainConfig, Trainer, TransformKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction, norm uniform in `[0, max_norm]`.
pub fn ball_point(rng: &mut impl Rng, n: usize, max_norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            let r = rng.random_range(0.0..=max_norm);
            return v.iter().map(|x| x * r / norm).collect();
        }
    }
}

/// Random KG with every split non-empty and no repeated triple.
pub fn random_kg(rng: &mut impl Rng, max_entities: usize) -> TripleStore {
    let num_entities = rng.random_range(3..=max_entities);
    let num_relations = rng.random_range(1..=3);
    let total = rng.random_range(6..=3 * num_entities);
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for _ in 0..total * 4 {
        if all.len() == total {
            break;
        }
        let t = Triple::new(
            rng.random_range(0..num_entities),
            rng.random_range(0..num_relations),
            rng.random_range(0..num_entities),
        );
        if seen.insert(t) {
            all.push(t);
        }
    }
    let n_eval = (all.len() / 5).max(1);
    let test = all.split_off(all.len() - n_eval);
    let valid = all.split_off(all.len() - n_eval);
    TripleStore::from_ids(num_entities, num_relations, all, valid, test).unwrap()
}

/// Hand ranking: sorts candidates by score, then walks the list counting
/// everything that is not strictly below the answer and not another known
/// answer. `store` is the plain (non-augmented) store.
pub fn brute_force_ranks(store: &TripleStore, split: Split, score: impl Fn(usize, usize, bool) -> Vec<f64>) -> Vec<usize> {
    let all: Vec<Triple> = Split::ALL.iter().flat_map(|&s| store.split(s).to_vec()).collect();
    let mut ranks = Vec::new();
    for q in store.split(split) {
        for tail_side in [true, false] {
            let (anchor, answer) = if tail_side { (q.head, q.tail) } else { (q.tail, q.head) };
            let scores = score(anchor, q.relation, tail_side);
            let known: HashSet<usize> = all
                .iter()
                .filter(|t| t.relation == q.relation)
                .filter_map(|t| {
                    if tail_side {
                        (t.head == anchor).then_some(t.tail)
                    } else {
                        (t.tail == anchor).then_some(t.head)
                    }
                })
                .collect();
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
            let mut rank = 1;
            for e in order {
                if e != answer && !known.contains(&e) && scores[e] >= scores[answer] {
                    rank += 1;
                }
            }
            ranks.push(rank);
        }
    }
    ranks
}

pub fn mrr(ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn random_model(cfg: ModelConfig, store: &TripleStore, seed: u64) -> ModelParams {
    let mut r = rng(seed);
    let mut p = ModelParams::init(cfg, store.num_entities(), store.num_relations(), &mut r).unwrap();
    for a in p.arrays_mut() {
        a.mapv_inplace(|v| v + r.random_range(-0.5..0.5));
    }
    p
}

/// Settings of the synthetic hierarchy experiments, fixed before looking at
/// any result.
pub fn tree_model(space: Space, variant: EncoderVariant) -> ModelConfig {
    ModelConfig {
        dim: 8,
        transform: TransformKind::Full,
        score: match space {
            Space::Hyperbolic => ScoreKind::Hin,
            Space::Euclidean => ScoreKind::EuclideanInner,
        },
        use_gcn: true,
        encoder: EncoderConfig {
            num_layers: 1,
            num_heads: 1,
            space,
            variant,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

pub fn tree_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 100,
        learning_rate: 0.1,
        reg_coeff: 0.05,
        max_epochs: 300,
        patience: 10,
        eval_every: 5,
        seed,
        check_ball: false,
    }
}

/// Test MRR of the best-validation model on a 255-entity binary tree whose
/// split and initialization both derive from `seed`.
pub fn tree_test_mrr(space: Space, variant: EncoderVariant, seed: u64) -> f64 {
    let store = generate_synthetic_tree(8, 2, seed).unwrap();
    assert_eq!(store.num_entities(), 255);
    let mut trainer = Trainer::new(tree_model(space, variant), tree_train_config(seed), &store).unwrap();
    let out = trainer.fit(|_, _| Ok(())).unwrap();
    let best = Trainer::with_params(out.params, tree_train_config(seed), &store).unwrap();
    best.evaluate(Split::Test).unwrap().mrr
}
