mod common;

use common::{ball_point, rng};
use ffhr_core::ball;
use ffhr_core::data::Adjacency;
use ffhr_core::encoder::{
    build_rotation, feature_transform, fpmgcn_forward, gyromidpoint, hgcn_feature_transform, EncoderConfig,
    EncoderVariant, FeatureTransform, GcnLayerParams, Space,
};
use ffhr_core::Curvature;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::Rng;

fn random_graph(r: &mut impl Rng, num_entities: usize, num_relations: usize, num_edges: usize) -> Adjacency {
    let edges: Vec<(usize, usize, usize)> = (0..num_edges)
        .map(|_| {
            (
                r.random_range(0..num_entities),
                r.random_range(0..num_relations),
                r.random_range(0..num_entities),
            )
        })
        .collect();
    Adjacency::from_edges(num_entities, num_relations, &edges)
}

fn random_layer(r: &mut impl Rng, n: usize, slots: usize, heads: usize, bias_norm: f64) -> GcnLayerParams {
    let angles = Array2::from_shape_fn((slots, n / 2), |_| r.random_range(-3.2..3.2));
    let mut biases = Array2::zeros((slots, n));
    for s in 0..slots {
        let b = ball_point(r, n, bias_norm);
        biases.row_mut(s).iter_mut().zip(b).for_each(|(d, v)| *d = v);
    }
    GcnLayerParams {
        transform: FeatureTransform::Rotation { angles, biases },
        attn_head: Array2::from_shape_fn((heads, n), |_| r.random_range(-1.0..1.0)),
        attn_tail: Array2::from_shape_fn((heads, n), |_| r.random_range(-1.0..1.0)),
    }
}

fn table(r: &mut impl Rng, rows: usize, n: usize, max_norm: f64) -> Array2<f64> {
    let mut t = Array2::zeros((rows, n));
    for i in 0..rows {
        let p = ball_point(r, n, max_norm);
        t.row_mut(i).iter_mut().zip(p).for_each(|(d, v)| *d = v);
    }
    t
}

#[test]
fn feature_transform_preserves_distances() {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for c in [0.5, 1.0, 2.0] {
        let c = Curvature::new(c).unwrap();
        let lim = 0.9 / c.sqrt();
        for _ in 0..20 {
            let angles: Vec<f64> = (0..3).map(|_| r.random_range(-3.2..3.2)).collect();
            let w = build_rotation(&angles, 6).unwrap();
            let b = ball_point(&mut r, 6, lim);
            for _ in 0..100 {
                let x = ball_point(&mut r, 6, lim);
                let y = ball_point(&mut r, 6, lim);
                let tx = feature_transform(&x, w.view(), &b, c).unwrap();
                let ty = feature_transform(&y, w.view(), &b, c).unwrap();
                worst = worst.max((ball::distance(&tx, &ty, c) - ball::distance(&x, &y, c)).abs());
            }
        }
    }
    assert!(worst <= 1e-7, "{worst}");
}

#[test]
fn general_matrix_transform_is_not_an_isometry() {
    let mut r = rng(2);
    let c = Curvature::ONE;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let w = Array2::from_shape_fn((4, 4), |_| r.random_range(-1.0..1.0));
        for _ in 0..20 {
            let x = ball_point(&mut r, 4, 0.9);
            let y = ball_point(&mut r, 4, 0.9);
            let tx = hgcn_feature_transform(&x, w.view(), c).unwrap();
            let ty = hgcn_feature_transform(&y, w.view(), c).unwrap();
            worst = worst.max((ball::distance(&tx, &ty, c) - ball::distance(&x, &y, c)).abs());
        }
    }
    assert!(worst > 1e-3, "{worst}");
}

#[test]
fn forward_stays_inside_ball_without_clamping() {
    let mut r = rng(3);
    for g in 0..100 {
        let c = Curvature::new([0.5, 1.0, 2.0][g % 3]).unwrap();
        let lim = 0.9 / c.sqrt();
        let adj = random_graph(&mut r, 50, 3, 150);
        let heads = [1, 2, 4][g % 3];
        let config = EncoderConfig {
            num_layers: 2,
            num_heads: heads,
            ..EncoderConfig::default()
        };
        let layers: Vec<GcnLayerParams> = (0..2).map(|_| random_layer(&mut r, 6, 4, heads, lim)).collect();
        let out = fpmgcn_forward(&table(&mut r, 50, 6, lim), &adj, &layers, &config, c).unwrap();
        assert_eq!(out.clamp_events, 0, "graph {g}");
        for row in out.table.rows() {
            assert!(row.dot(&row).sqrt() < c.radius());
        }
    }
}

/// Direct dense evaluation of the Euclidean encoder: for every relation,
/// messages `M_r = X Rᵀ + b_r` for all entities at once, then a masked
/// weighted mean over the dense adjacency tensor.
fn dense_euclidean(x0: &Array2<f64>, adj: &Array3<f64>, layers: &[(Vec<Array2<f64>>, Array2<f64>, Array2<f64>, Array2<f64>)], slope: f64) -> Array2<f64> {
    let (e, n) = x0.dim();
    let slots = adj.shape()[0];
    let lrelu = |v: f64| if v > 0.0 { v } else { slope * v };
    let mut x = x0.clone();
    for (rot, bias, ah, at) in layers {
        let msgs: Vec<Array2<f64>> = (0..slots)
            .map(|s| {
                let mut m = x.dot(&rot[s].t());
                for mut row in m.rows_mut() {
                    row += &bias.row(s);
                }
                m
            })
            .collect();
        let heads = ah.nrows();
        let mut next = Array2::<f64>::zeros((e, n));
        for i in 0..e {
            let center = msgs[slots - 1].row(i);
            let mut acc = ndarray::Array1::<f64>::zeros(n);
            for k in 0..heads {
                let mut num = ndarray::Array1::<f64>::zeros(n);
                let mut den = 0.0;
                let mut plain = ndarray::Array1::<f64>::zeros(n);
                let mut count = 0.0;
                for s in 0..slots {
                    for j in 0..e {
                        if adj[[s, i, j]] == 0.0 {
                            continue;
                        }
                        let m = msgs[s].row(j);
                        let v = lrelu(ah.row(k).dot(&center) + at.row(k).dot(&m));
                        num.scaled_add(v, &m);
                        den += v.abs();
                        plain += &m;
                        count += 1.0;
                    }
                }
                let head = if den.abs() < 1e-12 { plain / count } else { num / den };
                acc += &head;
            }
            let combined = acc / heads as f64;
            next.row_mut(i).assign(&combined.mapv(lrelu));
        }
        x = next;
    }
    x
}

#[test]
fn euclidean_forward_matches_dense_evaluation() {
    let mut r = rng(4);
    let (e, n, rels, heads) = (10, 4, 2, 2);
    let adj = random_graph(&mut r, e, rels, 18);
    let mut dense = Array3::zeros((rels + 1, e, e));
    for i in 0..e {
        for &(rel, j) in adj.neighbors(i) {
            dense[[rel, i, j]] = 1.0;
        }
        dense[[rels, i, i]] = 1.0;
    }
    let config = EncoderConfig {
        num_layers: 2,
        num_heads: heads,
        space: Space::Euclidean,
        variant: EncoderVariant::Fpm,
        ..EncoderConfig::default()
    };
    let layers: Vec<GcnLayerParams> = (0..2)
        .map(|_| {
            let mut l = random_layer(&mut r, n, rels + 1, heads, 0.9);
            if let FeatureTransform::Rotation { biases, .. } = &mut l.transform {
                biases.mapv_inplace(|v| 3.0 * v);
            }
            l
        })
        .collect();
    let oracle_layers: Vec<_> = layers
        .iter()
        .map(|l| match &l.transform {
            FeatureTransform::Rotation { angles, biases } => (
                (0..=rels)
                    .map(|s| build_rotation(angles.row(s).as_slice().unwrap(), n).unwrap())
                    .collect(),
                biases.clone(),
                l.attn_head.clone(),
                l.attn_tail.clone(),
            ),
            FeatureTransform::General { .. } => unreachable!(),
        })
        .collect();
    let x0 = Array2::from_shape_fn((e, n), |_| r.random_range(-2.0..2.0));
    let got = fpmgcn_forward(&x0, &adj, &layers, &config, Curvature::ONE).unwrap().table;
    let want = dense_euclidean(&x0, &dense, &oracle_layers, config.activation_slope);
    let diff = (&got - &want).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
    assert!(diff <= 1e-10, "{diff}");
}

#[test]
fn midpoint_of_one_point_and_of_symmetric_pair() {
    let mut r = rng(6);
    for _ in 0..200 {
        let c = Curvature::new(r.random_range(0.3..2.5)).unwrap();
        let x = ball_point(&mut r, 5, 0.9 / c.sqrt());
        let w = r.random_range(0.1..3.0);
        let m = gyromidpoint(&[&x], &[w], c).unwrap();
        assert!(m.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-10));
        let nx = ball::neg(&x);
        let o = gyromidpoint(&[&x, &nx], &[w, w], c).unwrap();
        assert!(ball::norm(&o) <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn midpoint_ignores_order_and_weight_scale(
        seed in 0u64..10_000,
        k in 2usize..7,
        scale in 0.01f64..100.0,
        shift in 0usize..7,
    ) {
        let mut r = rng(seed);
        let c = Curvature::ONE;
        let pts: Vec<Vec<f64>> = (0..k).map(|_| ball_point(&mut r, 4, 0.9)).collect();
        let w: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..2.0)).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let base = gyromidpoint(&refs, &w, c).unwrap();
        prop_assert!(ball::norm(&base) < c.radius());

        let rot: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
        let prefs: Vec<&[f64]> = rot.iter().map(|&i| refs[i]).collect();
        let pw: Vec<f64> = rot.iter().map(|&i| w[i]).collect();
        let permuted = gyromidpoint(&prefs, &pw, c).unwrap();
        let sw: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let scaled = gyromidpoint(&refs, &sw, c).unwrap();
        for i in 0..4 {
            prop_assert!((base[i] - permuted[i]).abs() <= 1e-12);
            prop_assert!((base[i] - scaled[i]).abs() <= 1e-12);
        }
    }
}
