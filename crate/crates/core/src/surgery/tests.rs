use nalgebra::DMatrix;

use super::*;
use crate::encoder::{build_branch, BranchConfig};
use crate::numerics::Rng;

fn gaussian(n: usize, d: usize, rng: &mut Rng) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
fn random_orthogonal(d: usize, rng: &mut Rng) -> Tensor {
    let m = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let q = m.qr().q();
    Tensor::new(vec![d, d], (0..d * d).map(|k| q[(k / d, k % d)]).collect()).unwrap()
}

fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    a.dot(b).unwrap() / (a.norm() * b.norm())
}

fn small_params(seed: u64) -> EncoderParams {
    let cfg = BranchConfig {
        input_dim: 6,
        backbone_widths: vec![5, 4],
        projector_hidden: 4,
        projector_out: 3,
        projector_hidden_bn: true,
        predictor: true,
    };
    build_branch(&cfg, &mut Rng::new(seed, 0)).unwrap().1
}

#[test]
fn rescale_three_four_five() {
    let w = Tensor::vector(vec![3.0, 4.0]);
    assert_eq!(rescale_to_norm(&w, 1.0).unwrap().data(), &[0.6, 0.8]);
    assert!(rescale_to_norm(&Tensor::zeros(&[2]), 1.0).is_none());
}

#[test]
fn rescale_to_self_is_identity() {
    let p = small_params(1);
    let (out, report) = norm_rescale(&p, &Anchor::Checkpoint(&p), &RescaleOptions::default()).unwrap();
    for ((_, a), (_, b)) in out.iter().zip(p.iter()) {
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }
    // batch-norm shifts start at zero and have no direction to keep
    assert_eq!(report.touched.len() + report.skipped_zero.len(), p.len());
    assert!(report.skipped_zero.iter().all(|n| n.ends_with(".shift")));
    assert!(report.unmatched.is_empty());
}

#[test]
fn rescale_contract_against_anchor() {
    let large = {
        let mut p = small_params(2);
        for (_, q) in p.iter_mut() {
            q.value = q.value.scale(7.5);
        }
        p
    };
    let anchor = small_params(3);
    let opts = RescaleOptions::default();
    let (out, report) = norm_rescale(&large, &Anchor::Checkpoint(&anchor), &opts).unwrap();
    for t in &report.touched {
        let w = out.tensor(&t.name).unwrap();
        let target = anchor.tensor(&t.name).unwrap().norm();
        assert!((w.norm() - target).abs() <= 1e-9 * target);
        assert!((cosine(w, large.tensor(&t.name).unwrap()) - 1.0).abs() <= 1e-12);
    }
    // idempotent
    let (again, _) = norm_rescale(&out, &Anchor::Checkpoint(&anchor), &opts).unwrap();
    for ((_, a), (_, b)) in again.iter().zip(out.iter()) {
        assert!(a.value.sub(&b.value).unwrap().norm() <= 1e-12 * b.value.norm().max(1.0));
    }
    // running statistics are left alone
    for ((_, a), (_, b)) in out.buffers().zip(large.buffers()) {
        assert_eq!(a, b);
    }
}

#[test]
fn constant_anchor_scales_all_norms() {
    let p = small_params(4);
    let (out, report) = norm_rescale(&p, &Anchor::Constant(0.1), &RescaleOptions::default()).unwrap();
    assert_eq!(report.touched.len(), p.len());
    for (name, q) in p.iter() {
        let n = out.tensor(name).unwrap().norm();
        assert!((n - 0.1 * q.value.norm()).abs() <= 1e-12 * q.value.norm().max(1.0));
    }
    assert!(norm_rescale(&p, &Anchor::Constant(0.0), &RescaleOptions::default()).is_err());
    assert!(norm_rescale(&p, &Anchor::Constant(-1.0), &RescaleOptions::default()).is_err());
}

#[test]
fn rescale_reports_unmatched_zero_and_excluded() {
    let mut p = EncoderParams::new();
    p.insert("a.weight", Role::Weight, Tensor::vector(vec![3.0, 4.0]));
    p.insert("b.weight", Role::Weight, Tensor::zeros(&[2]));
    p.insert("c.weight", Role::Weight, Tensor::vector(vec![1.0]));
    p.insert("d.gain", Role::NormGain, Tensor::vector(vec![2.0]));
    let mut anchor = EncoderParams::new();
    anchor.insert("a.weight", Role::Weight, Tensor::vector(vec![1.0, 0.0]));
    anchor.insert("b.weight", Role::Weight, Tensor::vector(vec![1.0, 0.0]));
    anchor.insert("d.gain", Role::NormGain, Tensor::vector(vec![5.0]));
    let opts = RescaleOptions {
        roles: [Role::Weight].into(),
        running_stats: false,
    };
    let (out, report) = norm_rescale(&p, &Anchor::Checkpoint(&anchor), &opts).unwrap();
    assert_eq!(out.tensor("a.weight").unwrap().data(), &[0.6, 0.8]);
    assert_eq!(report.skipped_zero, vec!["b.weight".to_string()]);
    assert_eq!(report.unmatched, vec!["c.weight".to_string()]);
    assert_eq!(report.untouched, vec!["d.gain".to_string()]);
    assert_eq!(out.tensor("d.gain").unwrap().data(), &[2.0]);
}

#[test]
fn cka_self_scale_and_rotation() {
    for seed in 0..10 {
        let mut rng = Rng::new(seed, 0);
        let x = gaussian(30, 6, &mut rng);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
        assert!((linear_cka(&x, &x.scale(-3.7)).unwrap() - 1.0).abs() <= 1e-9);
        let q = random_orthogonal(6, &mut rng);
        let qtq = q.matmul_tn(&q).unwrap();
        assert!(qtq.sub(&Tensor::eye(6)).unwrap().norm() < 1e-12);
        assert!((linear_cka(&x, &x.matmul(&q).unwrap()).unwrap() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn cka_symmetric_bounded_and_translation_invariant() {
    for seed in 0..10 {
        let mut rng = Rng::new(seed, 1);
        let x = gaussian(25, 5, &mut rng);
        let y = gaussian(25, 3, &mut rng).add(&x.matmul(&gaussian(5, 3, &mut rng)).unwrap()).unwrap();
        let xy = linear_cka(&x, &y).unwrap();
        let yx = linear_cka(&y, &x).unwrap();
        assert!((xy - yx).abs() <= 1e-12);
        assert!((0.0..=1.0 + 1e-12).contains(&xy));
        let mut shifted = x.clone();
        let offset: Vec<f64> = (0..5).map(|_| 10.0 * rng.normal()).collect();
        for i in 0..25 {
            for (v, o) in shifted.row_mut(i).iter_mut().zip(&offset) {
                *v += o;
            }
        }
        assert!((linear_cka(&shifted, &y).unwrap() - xy).abs() <= 1e-9);
    }
}

#[test]
fn cka_rejects_constant_representation() {
    let x = gaussian(10, 3, &mut Rng::new(0, 0));
    let c = Tensor::full(&[10, 3], 2.0);
    assert!(matches!(linear_cka(&x, &c), Err(Error::DegenerateRepresentation(_))));
    assert!(linear_cka(&x, &gaussian(9, 3, &mut Rng::new(1, 0))).is_err());
}

#[test]
fn stagewise_self_comparison_is_one() {
    let cfg = BranchConfig {
        input_dim: 6,
        backbone_widths: vec![5, 4],
        projector_hidden: 4,
        projector_out: 3,
        projector_hidden_bn: true,
        predictor: false,
    };
    let (branch, params) = build_branch(&cfg, &mut Rng::new(5, 0)).unwrap();
    let probe = gaussian(20, 6, &mut Rng::new(6, 0));
    let stages = stagewise_cka(&branch.encoder, &params, &branch.encoder, &params, &probe).unwrap();
    let names: Vec<&str> = stages.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, vec!["block1", "block2", "projector"]);
    for (_, v) in stages {
        assert!((v - 1.0).abs() <= 1e-9);
    }
    let other = build_branch(&BranchConfig { predictor: true, ..cfg }, &mut Rng::new(5, 0)).unwrap();
    assert!(stagewise_cka(&branch.encoder, &params, &other.0.encoder, &other.1, &probe).is_err());
}
