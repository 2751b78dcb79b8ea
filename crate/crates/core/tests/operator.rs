use cfs_core::linalg::{self, CMat};
use cfs_core::operator::*;
use cfs_core::{CfsError, Operator};
use nalgebra::Schur;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Nonzero eigenvalues of the dense `d × d` product, sorted by modulus.
fn dense_product_eigs(x: &Operator, y: &Operator) -> Vec<Complex64> {
    let m = x.mat() * y.mat();
    let scale = linalg::spectral_norm(&m).max(1e-300);
    let (_, t) = Schur::new(m).unpack();
    let mut v: Vec<Complex64> = t.diagonal().iter().copied().filter(|z| z.norm() > 1e-9 * scale).collect();
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    v
}

/// Largest distance from an entry of `a` to its nearest unused entry of `b`.
fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for z in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, w)| (k, (z - w).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn thin_spectrum_matches_dense_product() {
    let params = SystemParams::new(6, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x: Operator = random_full_operator(&params, &mut rng);
        let y: Operator = random_full_operator(&params, &mut rng);
        let thin = product_spectrum(&x, &y).unwrap();
        let dense = dense_product_eigs(&x, &y);
        assert_eq!(thin.rank, dense.len());
        assert!(multiset_distance(&thin.lambdas[..thin.rank], &dense) < 1e-9);
    }
}

#[test]
fn spin_two_lightlike_pair_exists() {
    let params = SystemParams::new(4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut found = None;
    for _ in 0..2000 {
        let x: Operator = random_full_operator(&params, &mut rng);
        let y: Operator = random_full_operator(&params, &mut rng);
        if classify_causal(&x, &y, &params).unwrap().kind == CausalKind::Lightlike {
            found = Some((x, y));
            break;
        }
    }
    let (x, y) = found.expect("a lightlike pair among random (2,2) pairs");
    let dense = dense_product_eigs(&x, &y);
    let maxmod = dense[0].norm();
    assert!(dense.iter().any(|z| z.im.abs() > 1e-6 * maxmod));
    assert!(dense.iter().any(|z| (z.norm() - maxmod).abs() > 1e-6 * maxmod));
}

#[test]
fn classification_from_spectrum_examples() {
    let c = |v: &[Complex64]| classify_from_spectrum(&ProductSpectrum::from_eigenvalues(v.to_vec(), 1), 1e-8).unwrap().kind;
    let r = |x: f64| Complex64::new(x, 0.0);
    assert_eq!(c(&[r(1.0), r(1.0)]), CausalKind::Spacelike);
    assert_eq!(c(&[r(2.0), r(1.0)]), CausalKind::Timelike);
    assert_eq!(c(&[Complex64::new(0.0, 1.0), r(2.0)]), CausalKind::Lightlike);
    assert!(matches!(
        classify_from_spectrum(&ProductSpectrum::<f64>::from_eigenvalues(vec![], 1), 1e-8),
        Err(CfsError::DegenerateScale(_))
    ));
}

#[test]
fn diagonal_examples() {
    let p = SystemParams::new(2, 1);
    let d = |v: &[f64]| validate_operator(&linalg::from_real_diag(v), &p).unwrap();
    let rel = classify_causal(&d(&[2.0, -1.0]), &d(&[1.0, -1.0]), &p).unwrap();
    assert_eq!(rel.kind, CausalKind::Timelike);
    // commuting diagonal operators have vanishing 𝒞
    assert_eq!(rel.direction, TimeDirection::Undirected);
    assert_eq!(classify_causal(&d(&[1.0, -1.0]), &d(&[1.0, -1.0]), &p).unwrap().kind, CausalKind::Spacelike);
    assert!((lagrangian(&d(&[2.0, 0.0]), &d(&[1.0, 0.0])).unwrap() - 2.0).abs() < 1e-14);
    let sp = spin_projection(&d(&[2.0, 0.0]));
    assert_eq!(sp.rank, 1);
    assert!((sp.proj - linalg::from_real_diag(&[1.0, 0.0])).norm() < 1e-15);
    assert_eq!(spin_projection(&validate_operator(&CMat::<f64>::zeros(2, 2), &p).unwrap()).rank, 0);
}

#[test]
fn record_json_shape() {
    let p = SystemParams::new(3, 1);
    let x: Operator = random_operator(&p, &mut ChaCha8Rng::seed_from_u64(2));
    let json = serde_json::to_value(x.to_record()).unwrap();
    assert_eq!(json["d"], 3);
    assert_eq!(json["n"], 1);
    assert_eq!(json["re"].as_array().unwrap().len(), 9);
    let back: OperatorRecord = serde_json::from_value(json).unwrap();
    let y: Operator = back.to_operator(&p).unwrap();
    assert!((y.mat() - x.mat()).norm() < 1e-15);
    let s = validate_operator(&linalg::from_real_diag(&[1.0, -1.0, 0.0]), &p).unwrap();
    let rel = serde_json::to_value(classify_causal(&s, &s, &p).unwrap()).unwrap();
    assert_eq!(rel["kind"], "Spacelike");
    assert_eq!(rel["direction"], "None");
}

fn pair(seed: u64, d: usize, n: usize) -> (Operator, Operator, SystemParams, ChaCha8Rng) {
    let p = SystemParams::new(d, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_operator(&p, &mut rng);
    let y = random_operator(&p, &mut rng);
    (x, y, p, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unitary_covariance(seed in any::<u64>(), d in 2usize..7, n in 1usize..3) {
        let (x, y, p, mut rng) = pair(seed, d, n);
        let u = linalg::random_unitary::<f64, _>(d, &mut rng);
        prop_assume!(x.rank() > 0 && y.rank() > 0);
        let a = classify_causal(&x, &y, &p).unwrap();
        let b = classify_causal(&x.conjugate(&u), &y.conjugate(&u), &p).unwrap();
        prop_assert!((a.margin_mod - b.margin_mod).abs() < 1e-8);
        // away from the decision boundary the kind must agree
        if a.margin_mod > 1e-6 && a.margin_im > 1e-6 || a.margin_mod > 1e-6 && a.margin_im < 1e-10 {
            prop_assert_eq!(a.kind, b.kind);
        }
        let l1 = lagrangian(&x, &y).unwrap();
        let l2 = lagrangian(&x.conjugate(&u), &y.conjugate(&u)).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-10 * l1.max(1.0));
    }

    #[test]
    fn symmetry_and_antisymmetry(seed in any::<u64>(), d in 2usize..7, n in 1usize..3) {
        let (x, y, _, _) = pair(seed, d, n);
        let lxy = lagrangian(&x, &y).unwrap();
        prop_assert!(lxy >= 0.0);
        prop_assert!((lxy - lagrangian(&y, &x).unwrap()).abs() <= 1e-10 * lxy.max(1.0));
        let c = time_direction(&x, &y).unwrap() + time_direction(&y, &x).unwrap();
        prop_assert!(c.abs() <= 1e-10);
        prop_assert!(time_direction(&x, &x).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn spin_one_never_lightlike(seed in any::<u64>(), d in 2usize..7) {
        let (x, y, p, _) = pair(seed, d, 1);
        match classify_causal(&x, &y, &p) {
            Ok(rel) => prop_assert_ne!(rel.kind, CausalKind::Lightlike),
            Err(e) => prop_assert!(matches!(e, CfsError::DegenerateScale(_))),
        }
    }

    #[test]
    fn scaling(seed in any::<u64>(), c in 0.1f64..10.0) {
        let (x, y, p, _) = pair(seed, 5, 2);
        let a = product_spectrum(&x, &y).unwrap();
        let b = product_spectrum(&x.scaled(c), &y).unwrap();
        let scaled: Vec<Complex64> = a.lambdas.iter().map(|u| u * c).collect();
        prop_assert!(multiset_distance(&scaled, &b.lambdas) <= 1e-9 * (1.0 + b.max_modulus()));
        if let (Ok(k1), Ok(k2)) = (classify_causal(&x, &y, &p), classify_causal(&x.scaled(c), &y.scaled(c), &p)) {
            if k1.margin_mod > 1e-6 {
                prop_assert_eq!(k1.kind, k2.kind);
            }
        }
    }

    #[test]
    fn spacelike_has_small_lagrangian(seed in any::<u64>()) {
        let (x, _, p, _) = pair(seed, 4, 1);
        let rel = classify_causal(&x, &x.scaled(2.0), &p);
        if let Ok(rel) = rel {
            if rel.kind == CausalKind::Spacelike {
                let spec = product_spectrum(&x, &x.scaled(2.0)).unwrap();
                let bound = 2.0 * (p.class_tol * spec.max_modulus()).powi(2);
                prop_assert!(lagrangian(&x, &x.scaled(2.0)).unwrap() <= bound);
            }
        }
    }
}
