//! Events, Born probabilities and collapse for finite-dimensional states,
//! history operators, and a branching process over a tensor co-filtration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{center, relative_commutant, span_tol, MatrixAlgebra};
use crate::error::{CfsError, Result};
use crate::linalg::{self, CMat};
use crate::scalar::{cplx, lit, to_f64, Real, C};

/// Default threshold for a Born weight to count as strictly positive.
pub const PROB_TOL: f64 = 1e-8;

fn state_tol<T: Real>() -> f64 {
    (1e2 * to_f64(T::default_epsilon())).max(1e-12)
}

/// Density matrix `Ω` of a state `ω(X) = tr(ΩX)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState<T: Real> {
    mat: CMat<T>,
}

impl<T: Real> QuantumState<T> {
    pub fn new(mat: CMat<T>) -> Result<Self> {
        let tol = state_tol::<T>();
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(CfsError::DimensionMismatch("density matrix must be square and nonempty".into()));
        }
        let dev = to_f64(linalg::hermiticity_deviation(&mat));
        if dev > tol {
            return Err(CfsError::NotSelfadjoint { deviation: dev });
        }
        let tr = to_f64(linalg::trace(&mat).re);
        if (tr - 1.0).abs() > tol {
            return Err(CfsError::InvalidParameter(format!("density matrix has trace {tr}")));
        }
        let (vals, _) = linalg::hermitian_eigen(&mat);
        if let Some(&low) = vals.last() {
            if to_f64(low) < -tol {
                return Err(CfsError::InvalidParameter(format!("density matrix has eigenvalue {}", to_f64(low))));
            }
        }
        Ok(Self { mat: linalg::symmetrize(&mat) })
    }

    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let diag: Vec<T> = probs.iter().map(|&p| lit(p)).collect();
        Self::new(linalg::from_real_diag(&diag))
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self { mat: linalg::identity::<T>(d) * cplx(T::one() / lit(d as f64), T::zero()) }
    }

    /// `|v⟩⟨v| / ⟨v|v⟩`.
    pub fn pure(v: &[C<T>]) -> Result<Self> {
        let v = linalg::CVec::<T>::from_column_slice(v);
        let n = v.norm_squared();
        if n == T::zero() {
            return Err(CfsError::InvalidParameter("pure state of the zero vector".into()));
        }
        Self::new(&v * v.adjoint() * cplx(T::one() / n, T::zero()))
    }

    /// Mixed state with spectrum drawn from a flat Dirichlet and Haar eigenbasis.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let w: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = w.iter().sum();
        let diag: Vec<T> = w.iter().map(|x| lit(x / s)).collect();
        let u = linalg::random_unitary::<T, _>(d, rng);
        Self { mat: linalg::symmetrize(&(&u * linalg::from_real_diag(&diag) * u.adjoint())) }
    }

    pub fn mat(&self) -> &CMat<T> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// `ω(X) = tr(ΩX)`.
    pub fn expectation(&self, x: &CMat<T>) -> C<T> {
        linalg::trace(&(&self.mat * x))
    }

    pub fn conjugate(&self, u: &CMat<T>) -> Self {
        Self { mat: linalg::symmetrize(&(u * &self.mat * u.adjoint())) }
    }
}

fn check_dims<T: Real>(omega: &QuantumState<T>, a: &MatrixAlgebra<T>) -> Result<()> {
    if omega.dim() != a.matrix_size() {
        return Err(CfsError::DimensionMismatch(format!(
            "state on ℂ^{} but algebra of {}×{} matrices",
            omega.dim(),
            a.matrix_size(),
            a.matrix_size()
        )));
    }
    Ok(())
}

/// Orthonormal eigenvectors of `Ω` grouped by (numerically) equal eigenvalue.
fn eigenspaces<T: Real>(omega: &QuantumState<T>) -> Vec<Vec<linalg::CVec<T>>> {
    let (vals, vecs) = linalg::hermitian_eigen(omega.mat());
    let gap = span_tol::<T>();
    let mut groups: Vec<(T, Vec<linalg::CVec<T>>)> = Vec::new();
    for (i, &v) in vals.iter().enumerate() {
        let col = vecs.column(i).into_owned();
        match groups.last_mut() {
            Some((last, g)) if to_f64(*last - v) <= gap => {
                *last = v;
                g.push(col);
            }
            _ => groups.push((v, vec![col])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

fn is_full<T: Real>(a: &MatrixAlgebra<T>) -> bool {
    a.dimension() == a.matrix_size() * a.matrix_size()
}

/// `𝒞_ω(A) = {Y ∈ A : ω([Y, X]) = 0 for all X ∈ A}`.
///
/// On the full matrix algebra this is the commutant of `Ω`, read off from
/// its eigenspaces; otherwise a null space in the coefficients of `A`.
pub fn centralizer<T: Real>(omega: &QuantumState<T>, a: &MatrixAlgebra<T>) -> Result<MatrixAlgebra<T>> {
    check_dims(omega, a)?;
    if is_full(a) {
        let mut basis = Vec::new();
        for g in eigenspaces(omega) {
            for u in &g {
                for v in &g {
                    basis.push(u * v.adjoint());
                }
            }
        }
        return Ok(MatrixAlgebra::from_orthonormal(a.matrix_size(), basis));
    }
    let n = a.dimension();
    let basis = a.basis();
    // ω([A_k, A_i]) = tr([A_i, Ω] A_k)
    let mut system = CMat::<T>::zeros(n, n);
    for i in 0..n {
        let c = linalg::commutator(&basis[i], omega.mat());
        for k in 0..n {
            system[(i, k)] = linalg::trace(&(&c * &basis[k]));
        }
    }
    let null = linalg::null_space(&system, lit(span_tol::<T>()), T::one());
    let out: Vec<CMat<T>> = (0..null.ncols())
        .map(|c| {
            let mut y = CMat::zeros(a.matrix_size(), a.matrix_size());
            for k in 0..n {
                y += &basis[k] * null[(k, c)];
            }
            y
        })
        .collect();
    Ok(MatrixAlgebra::from_orthonormal(a.matrix_size(), out))
}

/// Spectral projections of `Ω`: the minimal projections of the center of its
/// commutant.
fn spectral_projections<T: Real>(omega: &QuantumState<T>) -> Vec<CMat<T>> {
    let d = omega.dim();
    eigenspaces(omega)
        .into_iter()
        .map(|g| {
            let mut p = CMat::zeros(d, d);
            for u in &g {
                p += u * u.adjoint();
            }
            linalg::symmetrize(&p)
        })
        .collect()
}

pub fn center_of_centralizer<T: Real>(omega: &QuantumState<T>, a: &MatrixAlgebra<T>) -> Result<MatrixAlgebra<T>> {
    check_dims(omega, a)?;
    if is_full(a) {
        let basis = spectral_projections(omega)
            .into_iter()
            .map(|p| {
                let n = linalg::hs_norm(&p);
                p * cplx(T::one() / n, T::zero())
            })
            .collect();
        return Ok(MatrixAlgebra::from_orthonormal(a.matrix_size(), basis));
    }
    Ok(center(&centralizer(omega, a)?))
}

/// Partition of unity by orthogonal projections with their Born weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EventCandidate<T: Real> {
    pub projections: Vec<CMat<T>>,
    pub born: Vec<f64>,
}

impl<T: Real> EventCandidate<T> {
    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    /// Largest deviation from `π_ξ π_η = δ_{ξη} π_ξ` and `Σ π_ξ = 1`.
    pub fn partition_residual(&self) -> f64 {
        let d = self.projections.first().map_or(0, |p| p.nrows());
        let mut worst = 0.0f64;
        let mut sum = CMat::<T>::zeros(d, d);
        for (i, p) in self.projections.iter().enumerate() {
            sum += p;
            for (j, q) in self.projections.iter().enumerate() {
                let pq = p * q;
                let r = if i == j { &pq - p } else { pq };
                worst = worst.max(to_f64(linalg::max_abs_entry(&r)));
            }
        }
        worst.max(to_f64(linalg::max_abs_entry(&(sum - linalg::identity::<T>(d)))))
    }
}

/// Hermitian spanning set of an algebra closed under adjoints.
fn hermitian_basis<T: Real>(a: &MatrixAlgebra<T>) -> Vec<CMat<T>> {
    let half = cplx(lit::<T>(0.5), T::zero());
    let mut mats = Vec::new();
    for b in a.basis() {
        mats.push((b + b.adjoint()) * half);
        mats.push((b - b.adjoint()) * cplx(T::zero(), -lit::<T>(0.5)));
    }
    let span = MatrixAlgebra::span_of(a.matrix_size(), &mats);
    span.basis().iter().map(|m| linalg::symmetrize(m)).collect()
}

/// Spectral projections of a generic Hermitian element of an abelian unital
/// algebra; `None` when eigenvalues collide.
fn minimal_projections<T: Real>(z: &MatrixAlgebra<T>, seed: u64) -> Option<Vec<CMat<T>>> {
    let herm = hermitian_basis(z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = z.matrix_size();
    let mut h = CMat::<T>::zeros(d, d);
    for b in &herm {
        let r: f64 = rng.sample(StandardNormal);
        h += b * cplx(lit::<T>(r), T::zero());
    }
    let (vals, vecs) = linalg::hermitian_eigen(&h);
    let scale = vals.iter().fold(0.0f64, |a, &v| a.max(to_f64(v).abs())).max(f64::MIN_POSITIVE);
    let gap = 1e3 * span_tol::<T>() * scale;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..vals.len() {
        match clusters.last_mut() {
            Some(c) if to_f64(vals[c[c.len() - 1]] - vals[i]).abs() <= gap => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    if clusters.len() != z.dimension() {
        return None;
    }
    let projs: Vec<CMat<T>> = clusters
        .iter()
        .map(|c| {
            let mut p = CMat::zeros(d, d);
            for &i in c {
                let v = vecs.column(i);
                p += &v * v.adjoint();
            }
            linalg::symmetrize(&p)
        })
        .collect();
    if projs.iter().any(|p| !z.contains(p)) {
        return None;
    }
    Some(projs)
}

/// Lexicographic order on real diagonals, largest first, for labels that do
/// not depend on the generic element.
fn canonical_order<T: Real>(projs: &mut [CMat<T>]) {
    let key = |p: &CMat<T>| -> Vec<f64> { (0..p.nrows()).map(|i| to_f64(p[(i, i)].re)).collect() };
    projs.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        for (x, y) in ka.iter().zip(&kb) {
            if (x - y).abs() > 1e-9 {
                return y.total_cmp(x);
            }
        }
        std::cmp::Ordering::Equal
    });
}

/// Event of `A` in the state `ω`: the minimal projections of the center of
/// the centralizer, if at least two carry Born weight above `prob_tol`.
pub fn detect_event<T: Real>(
    omega: &QuantumState<T>,
    a: &MatrixAlgebra<T>,
    prob_tol: f64,
    seed: u64,
) -> Result<Option<EventCandidate<T>>> {
    if !(prob_tol > 0.0) {
        return Err(CfsError::InvalidParameter(format!("prob_tol must be positive, got {prob_tol}")));
    }
    let z = center_of_centralizer(omega, a)?;
    if z.dimension() < 2 {
        return Ok(None);
    }
    if !z.is_unital() {
        return Err(CfsError::InvalidParameter("event detection needs a unital algebra".into()));
    }
    let mut projs = is_full(a).then(|| spectral_projections(omega));
    for attempt in 0..4u64 {
        if projs.is_some() {
            break;
        }
        projs = minimal_projections(&z, seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    }
    let mut projections = projs.ok_or(CfsError::DegenerateSpectralSplit)?;
    canonical_order(&mut projections);
    let born: Vec<f64> = projections.iter().map(|p| to_f64(omega.expectation(p).re).clamp(0.0, 1.0)).collect();
    if born.iter().filter(|&&b| b > prob_tol).count() < 2 {
        return Ok(None);
    }
    Ok(Some(EventCandidate { projections, born }))
}

/// `H Ω H* / tr(H Ω H*)`, or `None` when the normalization vanishes.
fn condition<T: Real>(omega: &QuantumState<T>, h: &CMat<T>) -> Option<QuantumState<T>> {
    let m = h * omega.mat() * h.adjoint();
    let n = linalg::trace(&m).re;
    if to_f64(n) <= 1e2 * to_f64(T::default_epsilon()) {
        return None;
    }
    Some(QuantumState { mat: linalg::symmetrize(&(m * cplx(T::one() / n, T::zero()))) })
}

/// Collapse `π Ω π / ω(π)`.
pub fn collapse<T: Real>(omega: &QuantumState<T>, pi: &CMat<T>) -> Result<QuantumState<T>> {
    condition(omega, pi).ok_or(CfsError::ZeroProbability)
}

/// `ω_P(X) = ω₀(H* X H) / ω₀(H* H)`.
pub fn conditioned_state<T: Real>(omega0: &QuantumState<T>, h: &CMat<T>) -> Result<QuantumState<T>> {
    condition(omega0, h).ok_or(CfsError::ZeroNormalization)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub ok: bool,
    pub max_error: f64,
    pub violations: Vec<String>,
}

/// Checks range, normalization and finite additivity of `μ(π) = ω(π)` over
/// the given outcome subsets.
pub fn additive_measure_check<T: Real>(
    omega: &QuantumState<T>,
    candidate: &EventCandidate<T>,
    subsets: &[Vec<usize>],
) -> AdditivityReport {
    let tol = 1e-9;
    let d = omega.dim();
    let mu = |p: &CMat<T>| to_f64(omega.expectation(p).re);
    let mut rep = AdditivityReport { ok: true, ..Default::default() };
    let note = |rep: &mut AdditivityReport, err: f64, what: String| {
        rep.max_error = rep.max_error.max(err);
        if err > tol {
            rep.ok = false;
            rep.violations.push(what);
        }
    };
    let one = mu(&linalg::identity(d));
    note(&mut rep, (one - 1.0).abs(), format!("μ(1) = {one}"));
    for (i, p) in candidate.projections.iter().enumerate() {
        let m = mu(p);
        let err = if m < 0.0 { -m } else if m > 1.0 { m - 1.0 } else { 0.0 };
        note(&mut rep, err, format!("μ(π_{i}) = {m} outside [0,1]"));
    }
    for s in subsets {
        let mut sum_p = CMat::<T>::zeros(d, d);
        let mut sum_mu = 0.0;
        for &i in s {
            match candidate.projections.get(i) {
                Some(p) => {
                    sum_p += p;
                    sum_mu += mu(p);
                }
                None => {
                    rep.ok = false;
                    rep.violations.push(format!("subset label {i} out of range"));
                }
            }
        }
        let lhs = mu(&sum_p);
        note(&mut rep, (lhs - sum_mu).abs(), format!("μ(Σ π) = {lhs} ≠ Σ μ(π) = {sum_mu} on {s:?}"));
    }
    rep
}

/// The empty set, the full set and `count` random subsets of `0..n`.
pub fn sample_subsets(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(), (0..n).collect()];
    for _ in 0..count {
        out.push((0..n).filter(|_| rng.random::<bool>()).collect());
    }
    out
}

#[derive(Clone, Debug)]
pub struct HistoryEvent<T: Real> {
    pub label: String,
    pub projection: CMat<T>,
}

/// Causally ordered product of event projections, past factors rightmost.
///
/// `precedes` lists pairs `(a, b)` with event `a` in the past of event `b`;
/// pairs left incomparable by its transitive closure count as spacelike and
/// must commute within `comm_tol`. Ties are broken by label.
pub fn history_operator<T: Real>(events: &[HistoryEvent<T>], precedes: &[(usize, usize)], comm_tol: f64) -> Result<CMat<T>> {
    let n = events.len();
    if n == 0 {
        return Err(CfsError::InvalidParameter("history of no events".into()));
    }
    let d = events[0].projection.nrows();
    if events.iter().any(|e| e.projection.nrows() != d || e.projection.ncols() != d) {
        return Err(CfsError::DimensionMismatch("event projections differ in size".into()));
    }
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in precedes {
        if a >= n || b >= n {
            return Err(CfsError::InvalidParameter(format!("order pair ({a}, {b}) out of range")));
        }
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    if (0..n).any(|i| reach[i][i]) {
        return Err(CfsError::CausalCycle);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !reach[i][j] && !reach[j][i] {
                let c = to_f64(linalg::spectral_norm(&linalg::commutator(&events[i].projection, &events[j].projection)));
                if c > comm_tol {
                    return Err(CfsError::Axiom2Violation(events[i].label.clone(), events[j].label.clone(), c));
                }
            }
        }
    }
    // Kahn's algorithm, smallest label first among the currently minimal events
    let mut done = vec![false; n];
    let mut h = linalg::identity::<T>(d);
    for _ in 0..n {
        let next = (0..n)
            .filter(|&i| !done[i] && (0..n).all(|j| done[j] || !reach[j][i]))
            .min_by(|&a, &b| events[a].label.cmp(&events[b].label).then(a.cmp(&b)))
            .expect("acyclic order has a minimal element");
        done[next] = true;
        h = &events[next].projection * h;
    }
    Ok(h)
}

/// Tensor chain `(ℂ^s)^{⊗T}` with `E_{≥t}` acting on sites `t..T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoFiltration {
    pub depth: usize,
    pub site_dim: usize,
}

impl CoFiltration {
    pub fn new(depth: usize, site_dim: usize) -> Result<Self> {
        let f = Self { depth, site_dim };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.site_dim < 2 {
            return Err(CfsError::InvalidParameter(format!(
                "co-filtration needs depth ≥ 1 and site_dim ≥ 2, got {self:?}"
            )));
        }
        let dim = (self.site_dim as f64).powi(self.depth as i32);
        if dim > 512.0 {
            return Err(CfsError::InvalidParameter(format!("total dimension {dim} exceeds 512")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.site_dim.pow(self.depth as u32)
    }

    /// Dimension of the sites `base..T`.
    pub fn tail_dim(&self, base: usize) -> usize {
        self.site_dim.pow((self.depth - base.min(self.depth)) as u32)
    }

    /// `E_{≥t}` on the full chain, `1_{s^t} ⊗ M_{s^{T−t}}`.
    pub fn algebra<T: Real>(&self, t: usize) -> MatrixAlgebra<T> {
        self.algebra_on(t, 0)
    }

    /// `E_{≥t}` represented on the sites `base..T` (`base ≤ t`), which is
    /// faithful, so dimensions, products and commutants agree with
    /// [`Self::algebra`].
    pub fn algebra_on<T: Real>(&self, t: usize, base: usize) -> MatrixAlgebra<T> {
        let t = t.min(self.depth);
        let base = base.min(t);
        let outer = self.site_dim.pow((t - base) as u32);
        let inner = self.tail_dim(t);
        let id = linalg::identity::<T>(outer) * cplx(T::one() / lit::<T>(outer as f64).sqrt(), T::zero());
        let mut basis = Vec::with_capacity(inner * inner);
        for i in 0..inner {
            for j in 0..inner {
                let mut e = CMat::<T>::zeros(inner, inner);
                e[(i, j)] = C::new(T::one(), T::zero());
                basis.push(id.kronecker(&e));
            }
        }
        MatrixAlgebra::from_orthonormal(outer * inner, basis)
    }

    /// Restriction of `ω` to `E_{≥t}`: the partial trace over sites `< t`.
    pub fn restrict<T: Real>(&self, omega: &QuantumState<T>, t: usize) -> QuantumState<T> {
        let m = self.tail_dim(t);
        let outer = omega.dim() / m;
        let rho = CMat::from_fn(m, m, |i, j| (0..outer).fold(C::new(T::zero(), T::zero()), |acc, o| acc + omega.mat()[(o * m + i, o * m + j)]));
        QuantumState { mat: linalg::symmetrize(&rho) }
    }

    /// `1_{s^t} ⊗ x` for `x` acting on sites `t..T`.
    pub fn lift<T: Real>(&self, x: &CMat<T>, t: usize) -> CMat<T> {
        let outer = self.dim() / self.tail_dim(t);
        linalg::identity::<T>(outer).kronecker(x)
    }

    /// Product state with the same site density matrix on every site.
    pub fn product_state<T: Real>(&self, site: &QuantumState<T>) -> Result<QuantumState<T>> {
        if site.dim() != self.site_dim {
            return Err(CfsError::DimensionMismatch(format!("site state on ℂ^{}, sites are ℂ^{}", site.dim(), self.site_dim)));
        }
        let mut m = linalg::identity::<T>(1);
        for _ in 0..self.depth {
            m = m.kronecker(site.mat());
        }
        QuantumState::new(m)
    }
}

/// One fired event along a branch: time step and outcome label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub outcome: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchLeaf {
    pub path: Vec<Step>,
    pub prob_exact: f64,
    pub freq_empirical: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub filtration: CoFiltration,
    pub runs: usize,
    pub seed: u64,
    pub leaves: Vec<BranchLeaf>,
}

impl BranchRecord {
    pub fn total_probability(&self) -> f64 {
        self.leaves.iter().map(|l| l.prob_exact).sum()
    }
}

/// Node of the exact branching tree: the event fired at this level (if any)
/// and the child subtrees per outcome.
struct Node {
    t: usize,
    born: Vec<f64>,
    children: Vec<Node>,
}

fn build_tree<T: Real>(f: &CoFiltration, omega: &QuantumState<T>, t: usize, prob_tol: f64, seed: u64) -> Result<Node> {
    if t > f.depth {
        return Ok(Node { t, born: Vec::new(), children: Vec::new() });
    }
    let reduced = f.restrict(omega, t);
    let alg = MatrixAlgebra::full(reduced.dim());
    match detect_event(&reduced, &alg, prob_tol, seed)? {
        None => {
            let child = build_tree(f, omega, t + 1, prob_tol, seed)?;
            Ok(Node { t, born: Vec::new(), children: vec![child] })
        }
        Some(ev) => {
            let mut children = Vec::with_capacity(ev.len());
            for (p, &b) in ev.projections.iter().zip(&ev.born) {
                if b > prob_tol {
                    children.push(build_tree(f, &collapse(omega, &f.lift(p, t))?, t + 1, prob_tol, seed)?);
                } else {
                    children.push(Node { t: f.depth + 1, born: Vec::new(), children: Vec::new() });
                }
            }
            let born = ev.born.iter().map(|&b| if b > prob_tol { b } else { 0.0 }).collect();
            Ok(Node { t, born, children })
        }
    }
}

fn collect_leaves(node: &Node, path: &mut Vec<Step>, prob: f64, out: &mut Vec<(Vec<Step>, f64)>) {
    if node.children.is_empty() {
        out.push((path.clone(), prob));
        return;
    }
    if node.born.is_empty() {
        collect_leaves(&node.children[0], path, prob, out);
        return;
    }
    for (k, (child, &b)) in node.children.iter().zip(&node.born).enumerate() {
        if b == 0.0 {
            continue;
        }
        path.push(Step { t: node.t, outcome: k });
        collect_leaves(child, path, prob * b, out);
        path.pop();
    }
}

fn sample_path(root: &Node, rng: &mut ChaCha8Rng) -> Vec<Step> {
    let mut path = Vec::new();
    let mut node = root;
    while !node.children.is_empty() {
        if node.born.is_empty() {
            node = &node.children[0];
            continue;
        }
        let total: f64 = node.born.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = node.born.len() - 1;
        for (k, &b) in node.born.iter().enumerate() {
            acc += b;
            if u < acc && b > 0.0 {
                pick = k;
                break;
            }
        }
        path.push(Step { t: node.t, outcome: pick });
        node = &node.children[pick];
    }
    path
}

/// Exact branching tree plus, when `runs > 0`, Monte-Carlo path frequencies.
/// Run `r` draws from the ChaCha8 stream `r` of `seed`, so the result does
/// not depend on the worker count.
pub fn branching_simulate<T: Real>(
    f: &CoFiltration,
    omega0: &QuantumState<T>,
    runs: usize,
    seed: u64,
    prob_tol: f64,
) -> Result<BranchRecord> {
    f.validate()?;
    if omega0.dim() != f.dim() {
        return Err(CfsError::DimensionMismatch(format!("state on ℂ^{}, chain on ℂ^{}", omega0.dim(), f.dim())));
    }
    let root = build_tree(f, omega0, 0, prob_tol, seed)?;
    let mut exact = Vec::new();
    collect_leaves(&root, &mut Vec::new(), 1.0, &mut exact);
    let counts: BTreeMap<Vec<Step>, usize> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            sample_path(&root, &mut rng)
        })
        .fold(BTreeMap::new, |mut m, p| {
            *m.entry(p).or_insert(0) += 1;
            m
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    let leaves = exact
        .into_iter()
        .map(|(path, prob)| {
            let freq = (runs > 0).then(|| *counts.get(&path).unwrap_or(&0) as f64 / runs as f64);
            BranchLeaf { path, prob_exact: prob, freq_empirical: freq }
        })
        .collect();
    Ok(BranchRecord { filtration: *f, runs, seed, leaves })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeCommutantRow {
    pub t: usize,
    pub t_later: usize,
    pub dimension: usize,
    pub abelian: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpVerifyReport {
    pub dims: Vec<usize>,
    pub strictly_decreasing: bool,
    pub relative: Vec<RelativeCommutantRow>,
    pub violations: Vec<String>,
}

impl PdpVerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Strict decrease of `E_{≥t}` and non-abelian relative commutants
/// `(E_{≥t'})′ ∩ E_{≥t}` of dimension at least 4 for `t < t'`; the diagonal
/// `t' = t` rows give the centers.
pub fn pdp_verify(f: &CoFiltration) -> Result<PdpVerifyReport> {
    f.validate()?;
    let dims: Vec<usize> = (0..=f.depth).map(|t| f.algebra_on::<f64>(t, t).dimension()).collect();
    let mut violations = Vec::new();
    let strictly_decreasing = dims.windows(2).all(|w| w[1] < w[0]);
    if !strictly_decreasing {
        violations.push(format!("dimensions {dims:?} not strictly decreasing"));
    }
    let mut relative = Vec::new();
    for t in 0..=f.depth {
        let outer = f.algebra_on::<f64>(t, t);
        for t2 in t..=f.depth {
            let rc = relative_commutant(&f.algebra_on(t2, t), &outer)?;
            let row = RelativeCommutantRow { t, t_later: t2, dimension: rc.dimension(), abelian: rc.is_abelian() };
            if t2 > t && (row.abelian || row.dimension < 4) {
                violations.push(format!(
                    "relative commutant of levels {t2} in {t} has dimension {} (abelian: {})",
                    row.dimension, row.abelian
                ));
            }
            if t2 == t && row.dimension != 1 {
                violations.push(format!("center of level {t} has dimension {}", row.dimension));
            }
            relative.push(row);
        }
    }
    Ok(PdpVerifyReport { dims, strictly_decreasing, relative, violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cofiltration_dims() {
        let f = CoFiltration::new(3, 2).unwrap();
        let dims: Vec<usize> = (0..=3).map(|t| f.algebra_on::<f64>(t, t).dimension()).collect();
        assert_eq!(dims, vec![64, 16, 4, 1]);
        let g = CoFiltration::new(2, 2).unwrap();
        let full: Vec<usize> = (0..=2).map(|t| g.algebra::<f64>(t).dimension()).collect();
        assert_eq!(full, vec![16, 4, 1]);
        assert!(g.algebra::<f64>(0).inclusion_residual(&g.algebra::<f64>(1)) < 1e-12);
    }

    #[test]
    fn subsets_include_extremes() {
        let s = sample_subsets(3, 4, 1);
        assert_eq!(s[0], Vec::<usize>::new());
        assert_eq!(s[1], vec![0, 1, 2]);
        assert_eq!(s.len(), 6);
    }
}
