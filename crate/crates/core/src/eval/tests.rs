use nalgebra::DMatrix;

use super::*;
use crate::encoder::{build_branch, BranchConfig};
use crate::error::Error;
use crate::numerics::Rng;

fn gaussian(n: usize, d: usize, rng: &mut Rng) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn synthetic_counts_and_labels() {
    let ds = make_synthetic_dataset(&SyntheticSpec::default(), &mut Rng::new(0, 0)).unwrap();
    assert_eq!(ds.indices(Split::Train).len(), 512);
    assert_eq!(ds.indices(Split::Val).len(), 256);
    for c in 0..8 {
        assert_eq!(ds.labels_of(Split::Train).iter().filter(|&&l| l == c).count(), 64);
    }
    assert!(ds.images.iter().all(|i| i.in_unit_range() && i.height() == 16));
    assert!(make_synthetic_dataset(&SyntheticSpec { classes: 1, ..Default::default() }, &mut Rng::new(0, 0)).is_err());
}

#[test]
fn zero_noise_makes_classes_constant() {
    let spec = SyntheticSpec {
        noise: 0.0,
        train_per_class: 3,
        val_per_class: 2,
        ..Default::default()
    };
    let ds = make_synthetic_dataset(&spec, &mut Rng::new(1, 0)).unwrap();
    for c in 0..8 {
        let imgs: Vec<_> = (0..ds.len()).filter(|&i| ds.labels[i] == c).map(|i| &ds.images[i]).collect();
        assert!(imgs.windows(2).all(|w| w[0] == w[1]));
    }
    assert_ne!(ds.images[0], ds.images[1]);
}

#[test]
fn seeds_give_different_pixels() {
    let spec = SyntheticSpec {
        train_per_class: 2,
        val_per_class: 0,
        ..Default::default()
    };
    let a = make_synthetic_dataset(&spec, &mut Rng::new(1, 0)).unwrap();
    let b = make_synthetic_dataset(&spec, &mut Rng::new(2, 0)).unwrap();
    let same = a.images[0].data().iter().zip(b.images[0].data()).filter(|(x, y)| x == y).count();
    // only clamped pixels can coincide
    let clamped = a.images[0].data().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
    assert!(same <= clamped);
    assert_eq!(a, make_synthetic_dataset(&spec, &mut Rng::new(1, 0)).unwrap());
}

#[test]
fn one_hot_features_are_perfectly_classified() {
    let labels: Vec<usize> = (0..64).map(|i| i % 4).collect();
    let mut x = Tensor::zeros(&[64, 4]);
    for (i, &l) in labels.iter().enumerate() {
        x.row_mut(i)[l] = 1.0;
    }
    let r = train_linear_classifier(&x, &labels, &x, &labels, 4, &ProbeConfig::default()).unwrap();
    assert_eq!(r.top1, 1.0);
    assert_eq!(r.train_top1, 1.0);
}

#[test]
fn cross_entropy_gradient_matches_fd() {
    let mut rng = Rng::new(3, 0);
    let z = gaussian(5, 4, &mut rng);
    let y = vec![0, 3, 1, 1, 2];
    let (_, g) = softmax_cross_entropy(&z, &y);
    let fd = crate::numerics::finite_diff_grad(|t| softmax_cross_entropy(t, &y).0, &z, 1e-6).unwrap();
    assert!(g.sub(&fd).unwrap().norm() <= 1e-6 * fd.norm());
}

fn tiny_backbone(seed: u64) -> (crate::encoder::Encoder, crate::encoder::EncoderParams) {
    let cfg = BranchConfig {
        input_dim: 3 * 8 * 8,
        backbone_widths: vec![32],
        projector_hidden: 8,
        projector_out: 4,
        projector_hidden_bn: true,
        predictor: false,
    };
    let (branch, params) = build_branch(&cfg, &mut Rng::new(seed, 0)).unwrap();
    (branch.backbone(), params)
}

#[test]
fn probe_is_frozen_and_deterministic() {
    let spec = SyntheticSpec {
        side: 8,
        train_per_class: 8,
        val_per_class: 4,
        ..Default::default()
    };
    let ds = make_synthetic_dataset(&spec, &mut Rng::new(4, 0)).unwrap();
    let (enc, params) = tiny_backbone(4);
    let before = params.clone();
    let cfg = ProbeConfig {
        epochs: 5,
        ..Default::default()
    };
    let a = linear_probe(&enc, &params, &ds, &cfg).unwrap();
    let b = linear_probe(&enc, &params, &ds, &cfg).unwrap();
    assert_eq!(params, before);
    assert_eq!(a, b);
}

#[test]
fn probe_reports_collapsed_features() {
    let spec = SyntheticSpec {
        side: 8,
        train_per_class: 4,
        val_per_class: 2,
        ..Default::default()
    };
    let ds = make_synthetic_dataset(&spec, &mut Rng::new(5, 0)).unwrap();
    let (enc, mut params) = tiny_backbone(5);
    for (name, p) in params.iter_mut() {
        if name.ends_with(".gain") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let err = linear_probe(&enc, &params, &ds, &ProbeConfig::default()).unwrap_err();
    assert!(matches!(err, Error::FeatureCollapse(_)), "{err:?}");
}

#[test]
fn collapse_metrics_extremes() {
    let same = Tensor::from_rows(&vec![vec![0.3, -1.0, 2.0]; 10]).unwrap();
    let m = collapse_metrics(&same);
    assert_eq!(m.per_dim_std_mean, 0.0);
    assert!((m.effective_rank - 1.0).abs() < 1e-9);

    let eye = Tensor::eye(6);
    let m = collapse_metrics(&eye);
    assert!((m.effective_rank - 6.0).abs() <= 1e-6);
}

#[test]
fn collapse_metrics_invariances() {
    let mut rng = Rng::new(6, 0);
    let x = gaussian(40, 5, &mut rng);
    let base = collapse_metrics(&x);
    let perm = rng.permutation(40);
    let p = collapse_metrics(&x.select_rows(&perm));
    assert!((p.per_dim_std_mean - base.per_dim_std_mean).abs() < 1e-12);
    assert!((p.effective_rank - base.effective_rank).abs() < 1e-9);
    let q = DMatrix::from_fn(5, 5, |_, _| rng.normal()).qr().q();
    let q = Tensor::new(vec![5, 5], (0..25).map(|k| q[(k / 5, k % 5)]).collect()).unwrap();
    let r = collapse_metrics(&x.matmul(&q).unwrap());
    assert!((r.effective_rank - base.effective_rank).abs() < 1e-9);
}

#[test]
fn isotropic_features_hit_reference() {
    let mut rng = Rng::new(7, 0);
    let x = gaussian(20_000, 16, &mut rng);
    let m = collapse_metrics(&x);
    assert!((m.per_dim_std_mean / isotropic_reference(16) - 1.0).abs() < 0.02);
}
