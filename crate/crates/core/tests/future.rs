use cfs_core::dirac_box::{BoxParams, LatticePoint};
use cfs_core::future::{
    commutator_sweep, cone_probe_sweep, future_set, log_sweep, pdp_probe, smear, Factor, FutureFlavor, Monomial,
    PdpSpec, WeightMap,
};
use cfs_core::linalg;
use cfs_core::{BoxModel, CfsError};
use num_complex::Complex64;
use std::sync::OnceLock;

fn small() -> BoxParams {
    BoxParams { modes: 16, nt: 16, nx: 16, eps: 0.05, ..BoxParams::default() }
}

fn small_sys() -> &'static BoxModel {
    static SYS: OnceLock<BoxModel> = OnceLock::new();
    SYS.get_or_init(|| BoxModel::build(small()).unwrap())
}

#[test]
fn future_set_membership_rules() {
    let sys = &BoxModel::build(BoxParams { modes: 48, ..small() }).unwrap();
    let p = LatticePoint::new(0, 8);
    let fut = future_set(p, sys, FutureFlavor::RestrictedTimelike).unwrap();
    // self-pair is timelike with vanishing 𝒞
    assert!(fut.contains(p));
    assert!(fut.contains(LatticePoint::new(12, 8)));
    assert!(!fut.contains(LatticePoint::new(0, 4)));
    let global = future_set(p, sys, FutureFlavor::GlobalTimelike).unwrap();
    assert_eq!(global.members, fut.members);
    let causal = future_set(p, sys, FutureFlavor::GlobalCausal).unwrap();
    assert!(fut.is_subset(&causal));
}

#[test]
fn minkowski_cone_counts() {
    let sys = BoxModel::build(BoxParams { modes: 4, ..BoxParams::default() }).unwrap();
    let a = future_set(LatticePoint::new(18, 16), &sys, FutureFlavor::MinkowskiCone).unwrap();
    let b = future_set(LatticePoint::new(22, 16), &sys, FutureFlavor::MinkowskiCone).unwrap();
    assert_eq!((a.len(), b.len()), (169, 81));
    assert!(b.is_subset(&a));
    assert!(!a.contains(LatticePoint::new(18, 16)));
}

#[test]
fn smearing_is_linear_and_hermitian() {
    let sys = small_sys();
    let p = LatticePoint::new(3, 4);
    let one = smear(&WeightMap::indicator(p), sys).unwrap().op;
    let want = sys.local_correlation(p).unwrap().mat() * Complex64::new(sys.params().cell_volume(), 0.0);
    assert!((one - &want).norm() < 1e-14);
    let f = WeightMap::bump(sys.params(), 2.0, 3.0, 1.0);
    let g = WeightMap::bump(sys.params(), 3.0, 2.0, 0.8).scale(Complex64::new(0.5, -1.0));
    let af = smear(&f, sys).unwrap().op;
    let ag = smear(&g, sys).unwrap().op;
    let afg = smear(&f.add(&g), sys).unwrap().op;
    assert!((afg - (&af + &ag)).norm() < 1e-14 * af.norm().max(1.0));
    assert!(linalg::hermiticity_deviation(&af) == 0.0);
}

#[test]
fn commutator_sweep_contracts() {
    let params = small();
    let base = LatticePoint::new(0, 8);
    let f = WeightMap::bump(&params, 2.5, params.length / 2.0, 0.8);
    let probes = vec![
        Monomial::new("base^2", vec![Factor::Base, Factor::Base]),
        Monomial::power("A", &f, 1),
        Monomial::power("A^2", &f, 2),
    ];
    let eps = log_sweep(0.02, 0.2, 3);
    let tab = commutator_sweep(base, &probes, &eps, &params, 0.3).unwrap();
    for r in &tab.rows {
        if r.probe_id == "base^2" {
            assert!(r.value < 1e-12, "{r:?}");
        }
        assert!(r.value <= 2.0 * r.aux * (1.0 + 1e-12));
    }
    assert_eq!(tab.fits.len(), 3);

    let past = Monomial::power("past", &WeightMap::indicator(LatticePoint::new(0, 2)), 1);
    assert!(matches!(commutator_sweep(base, &[past], &eps, &params, 0.0), Err(CfsError::ProbeNotInFuture(_))));
    assert!(commutator_sweep(base, &probes, &[0.05, 0.1], &params, 0.3).is_err());
}

#[test]
fn cone_probe_of_zero_smearing_vanishes() {
    let params = small();
    let o = Complex64::new(1.0, 0.0);
    let z = Complex64::new(0.0, 0.0);
    let tab = cone_probe_sweep(LatticePoint::new(0, 8), &WeightMap::default(), &WeightMap::default(), [o, z], [z, o], &[0.05], &params)
        .unwrap();
    assert!(tab.rows.iter().all(|r| r.value == 0.0));
}

#[test]
fn pdp_without_strict_inclusion_has_no_witness() {
    let params = small();
    let spec = PdpSpec {
        p: LatticePoint::new(6, 8),
        ptilde: LatticePoint::new(6, 8),
        witnesses: vec![LatticePoint::new(10, 10)],
        diamond: vec![],
        ..PdpSpec::default()
    };
    let rep = pdp_probe(&spec, &[0.05], &params).unwrap();
    assert!(!rep.strict);
    assert!(rep.witnesses.is_empty());
    assert_eq!(rep.witness_min(), None);
}

#[test]
fn smaller_future_gives_smaller_algebra() {
    let params = small();
    let spec = PdpSpec {
        p: LatticePoint::new(8, 8),
        ptilde: LatticePoint::new(10, 8),
        witnesses: vec![LatticePoint::new(12, 10)],
        diamond: vec![LatticePoint::new(9, 8)],
        ..PdpSpec::default()
    };
    let rep = pdp_probe(&spec, &[0.05, 0.1], &params).unwrap();
    assert!(rep.strict);
    for r in &rep.rows {
        assert!(r.inclusion_residual <= 1e-9);
        assert!(r.algebra_ptilde.dimension < r.algebra_p.dimension);
        assert!(r.witness_distance[0] > 0.0);
    }
}

#[test]
fn weight_map_json_roundtrip() {
    let f = WeightMap::bump(&small(), 2.0, 3.0, 1.0).scale(Complex64::new(0.0, 2.0));
    let s = serde_json::to_string(&f).unwrap();
    let back: WeightMap = serde_json::from_str(&s).unwrap();
    assert_eq!(back, f);
}
