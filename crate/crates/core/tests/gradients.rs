use ffhr_core::data::{Adjacency, Triple, TripleStore};
use ffhr_core::diff::check::{gradcheck_model, GradcheckOptions};
use ffhr_core::diff::geometry::{self as g, CurvatureVar};
use ffhr_core::diff::Tape;
use ffhr_core::encoder::{EncoderConfig, EncoderVariant, Space};
use ffhr_core::model::{EdgeIndex, ModelConfig, ModelParams};
use ffhr_core::{scoring, Curvature, ScoreKind, TransformKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_store(num_entities: usize, num_relations: usize, num_triples: usize, seed: u64) -> TripleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    while seen.len() < num_triples {
        let h = rng.random_range(0..num_entities);
        let t = rng.random_range(0..num_entities);
        if h != t {
            seen.insert(Triple::new(h, rng.random_range(0..num_relations), t));
        }
    }
    let mut train: Vec<Triple> = seen.into_iter().collect();
    train.sort();
    TripleStore::from_ids(num_entities, num_relations, train, vec![], vec![])
        .unwrap()
        .augment_reciprocal()
}

fn model(cfg: ModelConfig, store: &TripleStore, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(cfg, store.num_entities(), store.num_relations(), &mut rng).unwrap();
    // move off the symmetric zero/identity initialization
    for a in p.arrays_mut() {
        a.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    p
}

fn gcn_config(space: Space, variant: EncoderVariant, transform: TransformKind, score: ScoreKind, heads: usize) -> ModelConfig {
    ModelConfig {
        dim: 8,
        transform,
        score,
        use_gcn: true,
        encoder: EncoderConfig {
            num_layers: 2,
            num_heads: heads,
            space,
            variant,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn report(cfg: ModelConfig, reg: f64) -> ffhr_core::diff::GradReport {
    let store = toy_store(16, 2, 24, 7);
    let adj = Adjacency::from_store(&store).unwrap();
    let edges = EdgeIndex::new(&adj, cfg.encoder.self_loops);
    let p = model(cfg, &store, 3);
    let opts = GradcheckOptions {
        reg_coeff: reg,
        ..GradcheckOptions::default()
    };
    gradcheck_model(&p, Some(&edges), &store.train()[..12], opts).unwrap()
}

fn check(cfg: ModelConfig, reg: f64) {
    let r = report(cfg, reg);
    assert!(r.passed(), "{r}");
}

/// Like `check`, but tolerates entries whose gradient is so small that the
/// central difference itself is only accurate to about 1e-10 absolute.
fn check_above_noise(cfg: ModelConfig, reg: f64) {
    let r = report(cfg, reg);
    for p in &r.params {
        assert!(
            p.max_rel_error <= 1e-4 || (p.analytic - p.numeric).abs() <= 1e-9,
            "{r}"
        );
    }
}

#[test]
fn fpm_gcn_pipeline_with_each_decoder() {
    for kind in TransformKind::ALL {
        check(gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, kind, ScoreKind::Hin, 1), 0.05);
    }
}

#[test]
fn other_encoders_scores_and_heads() {
    check_above_noise(gcn_config(Space::Hyperbolic, EncoderVariant::Hgcn, TransformKind::Full, ScoreKind::Hin, 2), 0.05);
    check_above_noise(gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, TransformKind::Diagonal, ScoreKind::HyperbolicDistance, 2), 0.0);
    check_above_noise(gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, TransformKind::Block2General, ScoreKind::TangentInner, 1), 0.1);
    check_above_noise(gcn_config(Space::Euclidean, EncoderVariant::Fpm, TransformKind::Full, ScoreKind::EuclideanInner, 2), 0.05);
    check_above_noise(gcn_config(Space::Euclidean, EncoderVariant::Hgcn, TransformKind::Block2RotationScale, ScoreKind::EuclideanDistance, 1), 0.05);
}

#[test]
fn trainable_curvature_gradient() {
    let mut cfg = gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, TransformKind::Diagonal, ScoreKind::Hin, 1);
    cfg.trainable_curvature = true;
    cfg.curvature = Curvature::new(0.8).unwrap();
    check(cfg, 0.05);
}

#[test]
fn identity_decoder_without_encoder_matches_dot_product_gradient() {
    // Euclidean inner product with identity relation: dL/de is available in
    // closed form.
    let store = TripleStore::from_ids(3, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap();
    let cfg = ModelConfig {
        dim: 4,
        transform: TransformKind::Diagonal,
        score: ScoreKind::EuclideanInner,
        use_gcn: false,
        encoder: EncoderConfig {
            space: Space::Euclidean,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = ModelParams::init(cfg, 3, 1, &mut rng).unwrap();
    p.arrays_mut()[1].fill(1.0);
    let batch = store.train().to_vec();
    let lg = ffhr_core::model::loss_and_grad(&p, None, &batch, 0.0).unwrap();
    let e = p.arrays()[0].clone();
    let h = e.row(0);
    let scores: Vec<f64> = (0..3).map(|j| h.dot(&e.row(j))).collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let prob: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let mut expected = Array2::<f64>::zeros((3, 4));
    // L = -h·e1 + log Σ exp(h·e_j)
    for j in 0..3 {
        let mut row = expected.row_mut(j);
        row.scaled_add(prob[j], &h);
    }
    {
        let mut row0 = expected.row_mut(0);
        for j in 0..3 {
            row0.scaled_add(prob[j], &e.row(j));
        }
        row0.scaled_add(-1.0, &e.row(1));
    }
    {
        let mut row1 = expected.row_mut(1);
        row1.scaled_add(-1.0, &h);
    }
    let diff = (&lg.grads[0] - &expected).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
    assert!(diff <= 1e-12, "{diff}");
    let report = gradcheck_model(&p, None, &batch, GradcheckOptions::default()).unwrap();
    assert!(report.max_rel_error <= 1e-8, "{report}");
}

#[test]
fn corrupted_gradient_is_caught() {
    let store = toy_store(16, 2, 24, 7);
    let adj = Adjacency::from_store(&store).unwrap();
    let edges = EdgeIndex::new(&adj, true);
    let p = model(
        gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, TransformKind::Full, ScoreKind::Hin, 1),
        &store,
        3,
    );
    let opts = GradcheckOptions {
        corrupt: true,
        ..GradcheckOptions::default()
    };
    let report = gradcheck_model(&p, Some(&edges), &store.train()[..12], opts).unwrap();
    assert!(!report.passed());
}

#[test]
fn hin_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = Curvature::ONE;
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-0.35..0.35)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-0.35..0.35)).collect();
        let mut tape = Tape::new();
        let k = CurvatureVar::constant(&mut tape, c);
        let xv = tape.param(Array2::from_shape_vec((1, 5), x.clone()).unwrap());
        let yv = tape.constant(Array2::from_shape_vec((1, 5), y.clone()).unwrap());
        let s = g::pairwise_hin(&mut tape, xv, yv, &k);
        let grads = tape.backward(s).unwrap();
        let gx = grads.wrt(xv, (1, 5));
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-5;
            xm[i] -= 1e-5;
            let fd = (scoring::hin(&xp, &y, c) - scoring::hin(&xm, &y, c)) / 2e-5;
            let err = (gx[[0, i]] - fd).abs() / (gx[[0, i]].abs() + fd.abs()).max(1e-8);
            assert!(err <= 1e-6, "{err}");
        }
    }
}

#[test]
fn single_scalar_check() {
    // only the entity table varies; a 1-D difference per scalar
    let store = toy_store(5, 1, 4, 2);
    let cfg = ModelConfig {
        dim: 2,
        transform: TransformKind::Diagonal,
        use_gcn: false,
        ..ModelConfig::default()
    };
    let p = model(cfg, &store, 4);
    let batch = [store.train()[0]];
    let report = gradcheck_model(&p, None, &batch, GradcheckOptions::default()).unwrap();
    assert!(report.max_rel_error <= 1e-7, "{report}");
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let store = toy_store(10, 2, 14, 5);
    let adj = Adjacency::from_store(&store).unwrap();
    let edges = EdgeIndex::new(&adj, true);
    let p = model(
        gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, TransformKind::Full, ScoreKind::Hin, 1),
        &store,
        8,
    );
    let batch = store.train();
    let (a, b) = batch.split_at(batch.len() / 2);
    let ga = ffhr_core::model::loss_and_grad(&p, Some(&edges), a, 0.0).unwrap();
    let gb = ffhr_core::model::loss_and_grad(&p, Some(&edges), b, 0.0).unwrap();
    let gall = ffhr_core::model::loss_and_grad(&p, Some(&edges), batch, 0.0).unwrap();
    // batch losses are means, so weight by batch sizes
    let (na, nb, n) = (a.len() as f64, b.len() as f64, batch.len() as f64);
    for ((x, y), z) in ga.grads.iter().zip(&gb.grads).zip(&gall.grads) {
        let combined = (x * na + y * nb) / n;
        let diff = (&combined - z).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        assert!(diff <= 1e-12, "{diff}");
    }
}

#[test]
fn repeated_backward_is_bit_identical() {
    let store = toy_store(10, 2, 14, 5);
    let adj = Adjacency::from_store(&store).unwrap();
    let edges = EdgeIndex::new(&adj, true);
    let p = model(
        gcn_config(Space::Hyperbolic, EncoderVariant::Fpm, TransformKind::Full, ScoreKind::Hin, 2),
        &store,
        8,
    );
    let a = ffhr_core::model::loss_and_grad(&p, Some(&edges), store.train(), 0.1).unwrap();
    let b = ffhr_core::model::loss_and_grad(&p, Some(&edges), store.train(), 0.1).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.grads, b.grads);
}
