//! Future sets, smeared operators and future algebras on the box model, with
//! the ε-sweeps probing commutator decay, light-cone singularities and strict
//! shrinking of future algebras.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{generate_truncated, AlgebraSummary, MatrixAlgebra};
use crate::dirac_box::{fold, BoxParams, BoxSystem, LatticePoint};
use crate::error::{CfsError, Result};
use crate::fit::{power_law, PowerFit};
use crate::linalg::{self, CMat};
use crate::operator::{classify_causal, CausalKind, TimeDirection};
use crate::scalar::{cplx, lit, Real, C};
use crate::BoxModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutureFlavor {
    /// Timelike with `𝒞 ≥ 0`, over every lattice operator.
    GlobalTimelike,
    /// Timelike or lightlike with `𝒞 ≥ 0`.
    GlobalCausal,
    /// Timelike with `𝒞 ≥ 0`, over the support of the measure.
    RestrictedTimelike,
    /// Geometric forward light cone of the periodic box, `0 < Δt`, `|Δx| < Δt`.
    MinkowskiCone,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FutureSet {
    pub base: LatticePoint,
    pub flavor: FutureFlavor,
    /// Sorted members.
    pub members: Vec<LatticePoint>,
}

impl FutureSet {
    pub fn contains(&self, q: LatticePoint) -> bool {
        self.members.binary_search(&q).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_subset(&self, other: &FutureSet) -> bool {
        self.members.iter().all(|q| other.contains(*q))
    }
}

/// `Δt − |Δx|` from `p` to `q`, with `Δx` periodic; positive inside the
/// forward cone.
pub fn cone_margin(params: &BoxParams, p: LatticePoint, q: LatticePoint) -> f64 {
    let dt = (q.it as f64 - p.it as f64) * params.dt();
    let dx = fold((q.ix as f64 - p.ix as f64) * params.dx(), params.length);
    dt - dx.abs()
}

/// Strictly inside the forward cone of `p` by at least `margin`.
pub fn in_forward_cone(params: &BoxParams, p: LatticePoint, q: LatticePoint, margin: f64) -> bool {
    let slack = 1e-12 * params.length;
    let m = cone_margin(params, p, q);
    q.it > p.it && m > slack && m >= margin - slack
}

pub fn future_set<T: Real>(p: LatticePoint, sys: &BoxSystem<T>, flavor: FutureFlavor) -> Result<FutureSet> {
    let x = sys.local_correlation(p)?;
    let all: Vec<LatticePoint> = sys.points().collect();
    let keep: Vec<Result<bool>> = all
        .par_iter()
        .map(|&q| {
            if flavor == FutureFlavor::MinkowskiCone {
                return Ok(in_forward_cone(sys.params(), p, q, 0.0));
            }
            let rel = classify_causal(x, sys.local_correlation(q)?, sys.system_params())?;
            let causal = match flavor {
                FutureFlavor::GlobalCausal => rel.kind != CausalKind::Spacelike,
                _ => rel.kind == CausalKind::Timelike,
            };
            Ok(causal && rel.direction != TimeDirection::Past)
        })
        .collect();
    let mut members = Vec::new();
    for (q, k) in all.into_iter().zip(keep) {
        if k? {
            members.push(q);
        }
    }
    members.sort();
    Ok(FutureSet { base: p, flavor, members })
}

/// Complex weights on lattice points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<WeightEntry>", into = "Vec<WeightEntry>")]
pub struct WeightMap {
    entries: BTreeMap<LatticePoint, C<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub it: usize,
    pub ix: usize,
    pub re: f64,
    pub im: f64,
}

impl From<Vec<WeightEntry>> for WeightMap {
    fn from(v: Vec<WeightEntry>) -> Self {
        Self::from_entries(v.into_iter().map(|e| (LatticePoint::new(e.it, e.ix), C::new(e.re, e.im))))
    }
}

impl From<WeightMap> for Vec<WeightEntry> {
    fn from(w: WeightMap) -> Self {
        w.iter().map(|(p, z)| WeightEntry { it: p.it, ix: p.ix, re: z.re, im: z.im }).collect()
    }
}

impl WeightMap {
    pub fn from_entries(entries: impl IntoIterator<Item = (LatticePoint, C<f64>)>) -> Self {
        let mut out = Self::default();
        for (p, w) in entries {
            *out.entries.entry(p).or_insert(C::new(0.0, 0.0)) += w;
        }
        out.entries.retain(|_, w| w.norm() > 0.0);
        out
    }

    pub fn indicator(p: LatticePoint) -> Self {
        Self::from_entries([(p, C::new(1.0, 0.0))])
    }

    /// Smooth bump `exp(−1/(1−s²))`, `s = dist/radius`, centred at `(t, x)`
    /// with periodic spatial distance, sampled on the lattice.
    pub fn bump(params: &BoxParams, t: f64, x: f64, radius: f64) -> Self {
        let mut entries = Vec::new();
        for it in 0..params.nt {
            for ix in 0..params.nx {
                let dt = it as f64 * params.dt() - t;
                let dx = fold(ix as f64 * params.dx() - x, params.length);
                let s2 = (dt * dt + dx * dx) / (radius * radius);
                if s2 < 1.0 {
                    entries.push((LatticePoint::new(it, ix), C::new((-1.0 / (1.0 - s2)).exp(), 0.0)));
                }
            }
        }
        Self::from_entries(entries)
    }

    pub fn support(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LatticePoint, C<f64>)> + '_ {
        self.entries.iter().map(|(p, w)| (*p, *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_real(&self) -> bool {
        self.entries.values().all(|w| w.im == 0.0)
    }

    pub fn add(&self, other: &WeightMap) -> WeightMap {
        Self::from_entries(self.iter().chain(other.iter()))
    }

    pub fn scale(&self, c: C<f64>) -> WeightMap {
        Self::from_entries(self.iter().map(|(p, w)| (p, w * c)))
    }
}

#[derive(Clone, Debug)]
pub struct SmearedOperator<T: Real> {
    pub weights: WeightMap,
    pub op: CMat<T>,
}

/// `A_f = Σ_p f(p) F(p) Δμ`.
pub fn smear<T: Real>(f: &WeightMap, sys: &BoxSystem<T>) -> Result<SmearedOperator<T>> {
    let d = sys.dim();
    let cell = sys.params().cell_volume();
    let mut op = CMat::<T>::zeros(d, d);
    for (p, w) in f.iter() {
        let e = sys.evaluation_map(p)?;
        let s = w * cell;
        let s = cplx(lit::<T>(s.re), lit::<T>(s.im));
        // F(p) = −E* γ⁰ E
        let mut g = e.clone();
        for j in 0..d {
            g[(0, j)] *= -s;
            g[(1, j)] *= s;
        }
        op += e.adjoint() * g;
    }
    if f.is_real() {
        op = linalg::symmetrize(&op);
    }
    Ok(SmearedOperator { weights: f.clone(), op })
}

/// Factor of a probe monomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// `F^ε` at the base point itself.
    Base,
    Smear(WeightMap),
}

/// A word in smeared operators, re-instantiated in each ε-system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub id: String,
    pub factors: Vec<Factor>,
}

impl Monomial {
    pub fn new(id: impl Into<String>, factors: Vec<Factor>) -> Self {
        Self { id: id.into(), factors }
    }

    /// `A_f^k`.
    pub fn power(id: impl Into<String>, f: &WeightMap, k: usize) -> Self {
        Self::new(id, vec![Factor::Smear(f.clone()); k])
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn instantiate<T: Real>(&self, base: LatticePoint, sys: &BoxSystem<T>) -> Result<CMat<T>> {
        let d = sys.dim();
        let mut out = linalg::identity::<T>(d);
        for f in &self.factors {
            let m = match f {
                Factor::Base => sys.local_correlation(base)?.mat().clone(),
                Factor::Smear(w) => smear(w, sys)?.op,
            };
            out = out * m;
        }
        Ok(out)
    }

    fn check_future(&self, params: &BoxParams, base: LatticePoint, margin: f64) -> Result<()> {
        for f in &self.factors {
            if let Factor::Smear(w) = f {
                if let Some(q) = w.support().find(|&q| !in_forward_cone(params, base, q, margin)) {
                    return Err(CfsError::ProbeNotInFuture(format!(
                        "probe {} has support at {:?}, outside the forward cone of {:?} with margin {margin}",
                        self.id, q, base
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_sweep(eps_list: &[f64], decade: bool) -> Result<()> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(CfsError::InvalidParameter("ε sweep must be nonempty and positive".into()));
    }
    let (lo, hi) = eps_list.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    if decade && hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(CfsError::InvalidParameter(format!("ε sweep must span a decade, got [{lo}, {hi}]")));
    }
    Ok(())
}

/// Log-spaced sweep from `lo` to `hi` inclusive.
pub fn log_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub probe_id: String,
    pub value: f64,
    /// Norm of the probe operator (commutator sweep) or of the 2×2 spin
    /// matrix (cone probe).
    pub aux: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    pub probe_id: String,
    pub fit: Option<PowerFit>,
    /// `value(ε_max) / value(ε_min)`.
    pub ratio: f64,
    /// `max / min` of the value over the sweep.
    pub variation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub fits: Vec<SweepFit>,
}

impl SweepTable {
    fn fit_groups(&mut self, ids: &[String]) {
        self.fits = ids
            .iter()
            .map(|id| {
                let mut pts: Vec<(f64, f64)> =
                    self.rows.iter().filter(|r| &r.probe_id == id).map(|r| (r.eps, r.value)).collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let (lo, hi) = y.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
                SweepFit {
                    probe_id: id.clone(),
                    fit: power_law(&x, &y).ok(),
                    ratio: y.last().copied().unwrap_or(f64::NAN) / y.first().copied().unwrap_or(f64::NAN),
                    variation: hi / lo,
                }
            })
            .collect();
    }

    pub fn fit(&self, probe_id: &str) -> Option<&SweepFit> {
        self.fits.iter().find(|f| f.probe_id == probe_id)
    }
}

/// `r(ε) = ‖[F^ε(p), ι^ε(a)]‖ / ‖F^ε(p)‖` for each probe monomial over the
/// sweep, one rebuilt box per ε.
pub fn commutator_sweep(
    p: LatticePoint,
    probes: &[Monomial],
    eps_list: &[f64],
    params: &BoxParams,
    margin: f64,
) -> Result<SweepTable> {
    check_sweep(eps_list, true)?;
    for a in probes {
        a.check_future(params, p, margin)?;
    }
    let per_eps: Vec<Result<Vec<SweepRow>>> = eps_list
        .par_iter()
        .map(|&eps| {
            let sys = BoxModel::build(params.with_eps(eps))?;
            let fp = sys.local_correlation(p)?;
            let nf = fp.norm().abs();
            probes
                .iter()
                .map(|a| {
                    let m = a.instantiate(p, &sys)?;
                    let c = linalg::commutator(fp.mat(), &m);
                    Ok(SweepRow { eps, probe_id: a.id.clone(), value: linalg::spectral_norm(&c) / nf, aux: linalg::spectral_norm(&m) })
                })
                .collect()
        })
        .collect();
    let mut table = SweepTable::default();
    for r in per_eps {
        table.rows.extend(r?);
    }
    let ids: Vec<String> = probes.iter().map(|a| a.id.clone()).collect();
    table.fit_groups(&ids);
    Ok(table)
}

/// The 2×2 spin matrix `M = γ⁰ E(p) A_f E(p)* γ⁰`, so that
/// `⟨u_χ | A_f u_χ̃⟩ = χ* M χ̃` for the wave-evaluation vectors `u_χ`.
pub fn spin_probe_matrix(sys: &BoxModel, p: LatticePoint, a: &CMat<f64>) -> Result<CMat<f64>> {
    let e = sys.evaluation_map(p)?;
    let mut m = &e * a * e.adjoint();
    m[(0, 1)] = -m[(0, 1)];
    m[(1, 0)] = -m[(1, 0)];
    Ok(m)
}

/// Spinor pair for the cone probe.
pub type Spinor = [C<f64>; 2];

/// Expectation `⟨u_χ | A_f u_χ̃⟩` (modulus, probe id with an `:expect`
/// suffix) and the spin-matrix norm `sup_{|χ|=|χ̃|=1}` (plain probe id) for an
/// inside-cone and an on-cone smearing over the sweep.
pub fn cone_probe_sweep(
    p: LatticePoint,
    f_inside: &WeightMap,
    f_oncone: &WeightMap,
    chi: Spinor,
    chitilde: Spinor,
    eps_list: &[f64],
    params: &BoxParams,
) -> Result<SweepTable> {
    check_sweep(eps_list, false)?;
    let per_eps: Vec<Result<Vec<SweepRow>>> = eps_list
        .par_iter()
        .map(|&eps| {
            let sys = BoxModel::build(params.with_eps(eps))?;
            let mut rows = Vec::new();
            for (id, f) in [("inside", f_inside), ("on_cone", f_oncone)] {
                let a = smear(f, &sys)?.op;
                let m = spin_probe_matrix(&sys, p, &a)?;
                let ex = chi[0].conj() * (m[(0, 0)] * chitilde[0] + m[(0, 1)] * chitilde[1])
                    + chi[1].conj() * (m[(1, 0)] * chitilde[0] + m[(1, 1)] * chitilde[1]);
                let nm = linalg::spectral_norm(&m);
                rows.push(SweepRow { eps, probe_id: id.into(), value: nm, aux: linalg::spectral_norm(&a) });
                rows.push(SweepRow { eps, probe_id: format!("{id}:expect"), value: ex.norm(), aux: nm });
            }
            Ok(rows)
        })
        .collect();
    let mut table = SweepTable::default();
    for r in per_eps {
        table.rows.extend(r?);
    }
    let ids: Vec<String> = ["inside", "on_cone", "inside:expect", "on_cone:expect"].map(String::from).to_vec();
    table.fit_groups(&ids);
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpRow {
    pub eps: f64,
    pub algebra_p: AlgebraSummary,
    pub algebra_ptilde: AlgebraSummary,
    /// Largest span residual of algebra(p̃) inside algebra(p).
    pub inclusion_residual: f64,
    /// Relative HS distance of `F(z)` from algebra(p̃) per witness point.
    pub witness_distance: Vec<f64>,
    /// `sup ‖[F(z), B]‖_HS / ‖F(z)‖` over unit `B` in algebra(p̃), per diamond point.
    pub diamond_commutator: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpReport {
    pub p: LatticePoint,
    pub ptilde: LatticePoint,
    pub flavor: FutureFlavor,
    pub future_p: usize,
    pub future_ptilde: usize,
    /// Whether future(p̃) is a strict subset of future(p).
    pub strict: bool,
    pub witnesses: Vec<LatticePoint>,
    pub diamond: Vec<LatticePoint>,
    pub rows: Vec<PdpRow>,
    pub floor: f64,
}

impl PdpReport {
    /// Smallest witness distance over the sweep, taking the best witness per ε.
    pub fn witness_min(&self) -> Option<f64> {
        if self.witnesses.is_empty() || self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| r.witness_distance.iter().copied().fold(0.0, f64::max)).fold(f64::INFINITY, f64::min))
    }

    pub fn witness_above_floor(&self) -> bool {
        self.witness_min().is_some_and(|w| w >= self.floor)
    }

    /// Every diamond point's commutator decreases strictly as ε decreases.
    pub fn diamond_shrinks(&self) -> bool {
        let mut rows: Vec<&PdpRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        (0..self.diamond.len()).all(|k| rows.windows(2).all(|w| w[0].diamond_commutator[k] < w[1].diamond_commutator[k]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdpSpec {
    pub p: LatticePoint,
    pub ptilde: LatticePoint,
    pub degree: usize,
    pub flavor: FutureFlavor,
    pub witnesses: Vec<LatticePoint>,
    pub diamond: Vec<LatticePoint>,
    pub floor: f64,
}

impl Default for PdpSpec {
    fn default() -> Self {
        Self {
            p: LatticePoint::new(18, 16),
            ptilde: LatticePoint::new(22, 16),
            degree: 1,
            flavor: FutureFlavor::MinkowskiCone,
            witnesses: vec![LatticePoint::new(25, 19), LatticePoint::new(27, 11), LatticePoint::new(24, 18)],
            diamond: vec![LatticePoint::new(20, 16), LatticePoint::new(20, 17), LatticePoint::new(21, 16)],
            floor: 0.05,
        }
    }
}

fn future_algebra(sys: &BoxModel, set: &FutureSet, degree: usize) -> Result<MatrixAlgebra<f64>> {
    let gens: Vec<CMat<f64>> =
        set.members.iter().map(|&q| sys.local_correlation(q).map(|f| f.mat().clone())).collect::<Result<_>>()?;
    if gens.is_empty() {
        return Ok(MatrixAlgebra::span_of(sys.dim(), &[]));
    }
    generate_truncated(&gens, false, degree)
}

/// Largest singular value of `B ↦ [F, B]` on the orthonormal basis of `alg`,
/// divided by `‖F‖`.
fn canonical_commutator(f: &CMat<f64>, alg: &MatrixAlgebra<f64>) -> f64 {
    let n = alg.dimension();
    if n == 0 {
        return 0.0;
    }
    let dd = f.len();
    let mut cols = CMat::<f64>::zeros(dd, n);
    for (k, b) in alg.basis().iter().enumerate() {
        let c = linalg::commutator(f, b);
        cols.column_mut(k).copy_from_slice(c.as_slice());
    }
    linalg::spectral_norm(&cols) / linalg::spectral_norm(f)
}

/// Strict-inclusion witness and diamond commutators for the future algebras
/// of `p` and `p̃` across the sweep.
pub fn pdp_probe(spec: &PdpSpec, eps_list: &[f64], params: &BoxParams) -> Result<PdpReport> {
    check_sweep(eps_list, false)?;
    let per_eps: Vec<Result<(PdpRow, usize, usize, bool)>> = eps_list
        .par_iter()
        .map(|&eps| {
            let sys = BoxModel::build(params.with_eps(eps))?;
            let fp = future_set(spec.p, &sys, spec.flavor)?;
            let ft = future_set(spec.ptilde, &sys, spec.flavor)?;
            if !ft.is_subset(&fp) {
                return Err(CfsError::InvalidParameter(format!(
                    "future of {:?} is not contained in the future of {:?} at ε={eps}",
                    spec.ptilde, spec.p
                )));
            }
            let strict = ft.len() < fp.len();
            let ap = future_algebra(&sys, &fp, spec.degree)?;
            let at = future_algebra(&sys, &ft, spec.degree)?;
            let witnesses = if strict { &spec.witnesses[..] } else { &[] };
            let witness_distance = witnesses
                .iter()
                .map(|&z| Ok(at.relative_distance(sys.local_correlation(z)?.mat())))
                .collect::<Result<Vec<_>>>()?;
            let diamond_commutator = spec
                .diamond
                .iter()
                .map(|&z| Ok(canonical_commutator(sys.local_correlation(z)?.mat(), &at)))
                .collect::<Result<Vec<_>>>()?;
            let row = PdpRow {
                eps,
                algebra_p: ap.summary(),
                algebra_ptilde: at.summary(),
                inclusion_residual: ap.inclusion_residual(&at),
                witness_distance,
                diamond_commutator,
            };
            Ok((row, fp.len(), ft.len(), strict))
        })
        .collect();
    let mut rows = Vec::new();
    let (mut np, mut nt, mut strict) = (0, 0, true);
    for r in per_eps {
        let (row, a, b, s) = r?;
        rows.push(row);
        np = a;
        nt = b;
        strict &= s;
    }
    if strict {
        for &z in &spec.witnesses {
            if !in_forward_cone(params, spec.p, z, 0.0) && spec.flavor == FutureFlavor::MinkowskiCone {
                return Err(CfsError::InvalidParameter(format!("witness {z:?} is not in the future of {:?}", spec.p)));
            }
        }
    }
    Ok(PdpReport {
        p: spec.p,
        ptilde: spec.ptilde,
        flavor: spec.flavor,
        future_p: np,
        future_ptilde: nt,
        strict,
        witnesses: if strict { spec.witnesses.clone() } else { Vec::new() },
        diamond: spec.diamond.clone(),
        rows,
        floor: spec.floor,
    })
}

/// Base point and probes of the pinned commutator-decay experiment.
pub fn pinned_commutator_probes(params: &BoxParams) -> (LatticePoint, Vec<Monomial>) {
    let base = LatticePoint::new(0, params.nx / 2);
    let x0 = params.length / 2.0;
    let f1 = WeightMap::bump(params, PI, x0, 1.2);
    let f2 = WeightMap::bump(params, 2.5, x0, 0.8);
    let f3 = WeightMap::bump(params, 4.0, x0, 1.0);
    let probes = vec![
        Monomial::power("A1", &f1, 1),
        Monomial::new("A2A3", vec![Factor::Smear(f2.clone()), Factor::Smear(f3)]),
        Monomial::power("A2^3", &f2, 3),
        Monomial::power("A1^3", &f1, 3),
    ];
    (base, probes)
}

/// Base point and smearings of the pinned light-cone probe.
pub fn pinned_cone_probe(params: &BoxParams) -> (LatticePoint, WeightMap, WeightMap) {
    let base = LatticePoint::new(0, params.nx / 2);
    let x0 = params.length / 2.0;
    let inside = WeightMap::bump(params, 2.5, x0, 0.8);
    let oncone = WeightMap::bump(params, 2.0, x0 + 2.0, 0.5);
    (base, inside, oncone)
}
