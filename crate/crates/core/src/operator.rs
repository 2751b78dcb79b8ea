//! Spacetime point operators of a finite causal fermion system.
//!
//! A point of spacetime is a selfadjoint operator on a finite-dimensional
//! Hilbert space with at most `n` positive and at most `n` negative
//! eigenvalues. Causal relations between two points are read off from the
//! nontrivial eigenvalues of the operator product `xy`, and the causal
//! Lagrangian measures how far their absolute values spread.

use std::sync::OnceLock;

use nalgebra::{ComplexField, DMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::linalg::{self, CMat};
use crate::scalar::{cplx, lit, to_f64, Real, C};

/// Modulus floor below which a product spectrum carries no causal information.
pub const DEGENERATE_FLOOR: f64 = 1e-300;

/// Dimensions and tolerances shared by all operators of one system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub hilbert_dim: usize,
    pub spin_dim: usize,
    /// Eigenvalues below `rank_tol * ‖x‖` in modulus count as zero.
    pub rank_tol: f64,
    /// Relative tolerance for modulus equality and realness.
    pub class_tol: f64,
}

impl SystemParams {
    pub fn new(hilbert_dim: usize, spin_dim: usize) -> Self {
        Self { hilbert_dim, spin_dim, rank_tol: 1e-10, class_tol: 1e-8 }
    }

    pub fn with_class_tol(mut self, class_tol: f64) -> Self {
        self.class_tol = class_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hilbert_dim == 0 || self.spin_dim == 0 {
            return Err(CfsError::InvalidParameter("dimensions must be positive".into()));
        }
        for (name, v) in [("rank_tol", self.rank_tol), ("class_tol", self.class_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CfsError::InvalidParameter(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        Ok(())
    }
}

/// A validated point `x ∈ 𝓕`, with its nontrivial spectral data cached.
#[derive(Clone, Debug)]
pub struct SpacetimeOperator<T: Real> {
    dim: usize,
    /// Dense matrix, materialized from the spectral data on first use.
    mat: OnceLock<CMat<T>>,
    spin_dim: usize,
    /// Nontrivial eigenvalues in descending order.
    values: Vec<T>,
    /// Orthonormal eigenvectors for `values`, as columns (`d × rank`).
    vectors: CMat<T>,
    norm: T,
}

impl<T: Real> SpacetimeOperator<T> {
    pub fn mat(&self) -> &CMat<T> {
        self.mat.get_or_init(|| {
            let scaled = CMat::from_fn(self.dim, self.rank(), |i, j| self.vectors[(i, j)] * cplx(self.values[j], T::zero()));
            linalg::symmetrize(&(scaled * self.vectors.adjoint()))
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spin_dim(&self) -> usize {
        self.spin_dim
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.values
    }

    /// Orthonormal basis of the spin space `S_x` (range of `x`).
    pub fn range_basis(&self) -> &CMat<T> {
        &self.vectors
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Operator norm (largest eigenvalue modulus).
    pub fn norm(&self) -> T {
        self.norm
    }

    /// Numbers of positive and negative nontrivial eigenvalues.
    pub fn signature(&self) -> (usize, usize) {
        let p = self.values.iter().filter(|v| **v > T::zero()).count();
        (p, self.values.len() - p)
    }

    pub fn trace(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Builds `x = B* S B` from a thin factor `B` (`r × d`) and a Hermitian
    /// `r × r` middle matrix `S`, solving only the `r`-dimensional eigenproblem.
    pub fn from_factorization(factor: &CMat<T>, middle: &CMat<T>, params: &SystemParams) -> Result<Self> {
        let d = factor.ncols();
        let gram = factor * factor.adjoint();
        // Nonzero eigenpairs of B*SB correspond to those of S·(BB*) via v = B*w.
        let (gvals, gvecs) = linalg::hermitian_eigen(&gram);
        let gmax = gvals.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        let cut = gmax * lit(1e-14);
        let keep: Vec<usize> = (0..gvals.len()).filter(|&i| gvals[i] > cut).collect();
        if keep.is_empty() {
            return Self::assemble(d, None, params.spin_dim, Vec::new(), CMat::zeros(d, 0), params);
        }
        // Orthonormal basis of range(B*): Q = B* W Λ^{-1/2}.
        let mut w = CMat::zeros(gram.nrows(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let s = cplx(T::one() / gvals[i].sqrt(), T::zero());
            w.set_column(c, &(gvecs.column(i) * s));
        }
        let q = factor.adjoint() * &w;
        // Q* B* S B Q, formed without the d×d matrix
        let bq = factor * &q;
        let reduced = bq.adjoint() * middle * &bq;
        let (rvals, rvecs) = linalg::hermitian_eigen(&reduced);
        let vectors = &q * rvecs;
        Self::assemble(d, None, params.spin_dim, rvals, vectors, params)
    }

    fn assemble(
        dim: usize,
        mat: Option<CMat<T>>,
        spin_dim: usize,
        all_values: Vec<T>,
        all_vectors: CMat<T>,
        params: &SystemParams,
    ) -> Result<Self> {
        let norm = all_values.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        let cut = norm * lit(params.rank_tol);
        let keep: Vec<usize> = (0..all_values.len()).filter(|&i| all_values[i].abs() > cut).collect();
        let positive = keep.iter().filter(|&&i| all_values[i] > T::zero()).count();
        let negative = keep.len() - positive;
        if positive > spin_dim || negative > spin_dim {
            return Err(CfsError::SignatureViolation { positive, negative, spin_dim });
        }
        let values: Vec<T> = keep.iter().map(|&i| all_values[i]).collect();
        let mut vectors = CMat::zeros(dim, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            vectors.set_column(c, &all_vectors.column(i));
        }
        let cell = OnceLock::new();
        if let Some(m) = mat {
            let _ = cell.set(m);
        }
        Ok(Self { dim, mat: cell, spin_dim, values, vectors, norm })
    }

    /// Conjugates by a unitary: `U x U*`.
    pub fn conjugate(&self, u: &CMat<T>) -> Self {
        let mat = OnceLock::new();
        if let Some(m) = self.mat.get() {
            let _ = mat.set(u * m * u.adjoint());
        }
        Self {
            dim: self.dim,
            mat,
            spin_dim: self.spin_dim,
            values: self.values.clone(),
            vectors: u * &self.vectors,
            norm: self.norm,
        }
    }

    /// Multiplies by a positive real scalar.
    pub fn scaled(&self, c: T) -> Self {
        let cc = cplx(c, T::zero());
        let mat = OnceLock::new();
        if let Some(m) = self.mat.get() {
            let _ = mat.set(m * cc);
        }
        Self {
            dim: self.dim,
            mat,
            spin_dim: self.spin_dim,
            values: self.values.iter().map(|&v| v * c).collect(),
            vectors: self.vectors.clone(),
            norm: self.norm * c.abs(),
        }
    }

    pub fn to_record(&self) -> OperatorRecord {
        let (re, im) = linalg::to_row_major(self.mat());
        OperatorRecord { d: self.dim(), n: self.spin_dim, re, im }
    }
}

/// JSON form of an operator: `{"d", "n", "re", "im"}` with row-major parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub d: usize,
    pub n: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl OperatorRecord {
    pub fn to_operator<T: Real>(&self, params: &SystemParams) -> Result<SpacetimeOperator<T>> {
        if self.re.len() != self.d * self.d || self.im.len() != self.d * self.d {
            return Err(CfsError::DimensionMismatch(format!("record with d={} has {} entries", self.d, self.re.len())));
        }
        let params = SystemParams { hilbert_dim: self.d, spin_dim: self.n, ..*params };
        validate_operator(&linalg::from_row_major(self.d, self.d, &self.re, &self.im), &params)
    }
}

/// Checks selfadjointness and the eigenvalue signature bound and caches the
/// nontrivial spectrum.
pub fn validate_operator<T: Real>(mat: &CMat<T>, params: &SystemParams) -> Result<SpacetimeOperator<T>> {
    params.validate()?;
    if mat.nrows() != mat.ncols() || mat.nrows() != params.hilbert_dim {
        return Err(CfsError::DimensionMismatch(format!(
            "expected {0}x{0}, got {1}x{2}",
            params.hilbert_dim,
            mat.nrows(),
            mat.ncols()
        )));
    }
    if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(CfsError::InvalidParameter("non-finite matrix entry".into()));
    }
    let scale = linalg::max_abs_entry(mat);
    let dev = linalg::hermiticity_deviation(mat);
    let allowed = scale * lit::<T>(1e-12).max(T::hermitian_floor());
    if dev > allowed {
        return Err(CfsError::NotSelfadjoint { deviation: to_f64(dev) });
    }
    let sym = linalg::symmetrize(mat);
    let (vals, vecs) = linalg::hermitian_eigen(&sym);
    SpacetimeOperator::assemble(sym.nrows(), Some(sym), params.spin_dim, vals, vecs, params)
}

/// Replaces `mat` by the closest operator in its own eigenbasis that obeys the
/// signature bound: excess eigenvalues of smallest modulus are set to zero.
pub fn clip_signature<T: Real>(mat: &CMat<T>, params: &SystemParams) -> Result<SpacetimeOperator<T>> {
    let sym = linalg::symmetrize(mat);
    let (vals, vecs) = linalg::hermitian_eigen(&sym);
    let n = params.spin_dim;
    let d = vals.len();
    // vals is descending: the n largest positives lead, the n most negative trail.
    let mut kept = vec![false; d];
    for i in 0..d.min(n) {
        if vals[i] > T::zero() {
            kept[i] = true;
        }
    }
    for i in (d.saturating_sub(n)..d).rev() {
        if vals[i] < T::zero() {
            kept[i] = true;
        }
    }
    let mut out = CMat::zeros(d, d);
    for i in (0..d).filter(|&i| kept[i]) {
        let v = vecs.column(i);
        out += &v * v.adjoint() * cplx(vals[i], T::zero());
    }
    validate_operator(&linalg::symmetrize(&out), params)
}

/// Nontrivial eigenvalues `λ^{xy}` of the product `xy`, zero-padded to `2n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductSpectrum<T: Real> {
    pub lambdas: Vec<C<T>>,
    pub rank: usize,
}

impl<T: Real> ProductSpectrum<T> {
    /// Pads and orders raw eigenvalues (descending modulus).
    pub fn from_eigenvalues(mut raw: Vec<C<T>>, spin_dim: usize) -> Self {
        let rank = raw.len();
        raw.sort_by(|a, b| b.modulus().partial_cmp(&a.modulus()).unwrap_or(std::cmp::Ordering::Equal));
        raw.resize(2 * spin_dim, C::new(T::zero(), T::zero()));
        Self { lambdas: raw, rank }
    }

    pub fn max_modulus(&self) -> T {
        self.lambdas.iter().fold(T::zero(), |a, z| a.max(z.modulus()))
    }

    /// `Σ_i |λ_i|²`, the spectral weight entering the boundedness constraint.
    pub fn spectral_weight(&self) -> T {
        self.lambdas.iter().fold(T::zero(), |a, z| a + z.norm_sqr())
    }
}

/// Product spectrum computed on `range(x)`, which `xy` maps into itself.
pub fn product_spectrum<T: Real>(x: &SpacetimeOperator<T>, y: &SpacetimeOperator<T>) -> Result<ProductSpectrum<T>> {
    check_compatible(x, y)?;
    let k = x.rank();
    if k == 0 || y.rank() == 0 {
        return Ok(ProductSpectrum::from_eigenvalues(vec![C::new(T::zero(), T::zero()); k], x.spin_dim));
    }
    // xy on range(x) is Λ_x G Λ_y G* with G = V_x* V_y; symmetrize with |Λ_x|^{1/2}.
    let g = x.vectors.adjoint() * &y.vectors;
    let lam_y = linalg::from_real_diag(&y.values);
    let b = &g * lam_y * g.adjoint();
    let sqrt_abs: Vec<T> = x.values.iter().map(|v| v.abs().sqrt()).collect();
    let h = DMatrix::from_fn(k, k, |i, j| b[(i, j)] * cplx(sqrt_abs[i] * sqrt_abs[j], T::zero()));
    let signs: Vec<T> = x.values.iter().map(|v| if *v > T::zero() { T::one() } else { -T::one() }).collect();
    let raw = linalg::pseudo_hermitian_eigenvalues(&signs, &h)?;
    Ok(ProductSpectrum::from_eigenvalues(raw, x.spin_dim))
}

fn check_compatible<T: Real>(x: &SpacetimeOperator<T>, y: &SpacetimeOperator<T>) -> Result<()> {
    if x.dim() != y.dim() || x.spin_dim != y.spin_dim {
        return Err(CfsError::DimensionMismatch(format!(
            "operators (d={}, n={}) and (d={}, n={})",
            x.dim(),
            x.spin_dim,
            y.dim(),
            y.spin_dim
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CausalKind {
    Spacelike,
    Timelike,
    Lightlike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeDirection {
    /// `y` lies in the future of `x`.
    Future,
    Past,
    #[serde(rename = "None")]
    Undirected,
}

/// Causal relation between two points, with the two relative margins used by
/// the decision (modulus spread and largest imaginary part, both divided by
/// the largest modulus).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalRelation {
    pub kind: CausalKind,
    pub direction: TimeDirection,
    pub margin_mod: f64,
    pub margin_im: f64,
}

/// Classifies a product spectrum: equal moduli is spacelike, real with
/// distinct moduli is timelike, anything else lightlike.
pub fn classify_from_spectrum<T: Real>(spectrum: &ProductSpectrum<T>, class_tol: f64) -> Result<CausalRelation> {
    let maxmod = spectrum.max_modulus();
    if to_f64(maxmod) < DEGENERATE_FLOOR {
        return Err(CfsError::DegenerateScale(to_f64(maxmod)));
    }
    let minmod = spectrum.lambdas.iter().fold(maxmod, |a, z| a.min(z.modulus()));
    let max_im = spectrum.lambdas.iter().fold(T::zero(), |a, z| a.max(z.im.abs()));
    let margin_mod = to_f64((maxmod - minmod) / maxmod);
    let margin_im = to_f64(max_im / maxmod);
    let kind = if margin_mod <= class_tol {
        CausalKind::Spacelike
    } else if margin_im <= class_tol {
        CausalKind::Timelike
    } else {
        CausalKind::Lightlike
    };
    Ok(CausalRelation { kind, direction: TimeDirection::Undirected, margin_mod, margin_im })
}

/// Full causal classification, including the time direction for timelike pairs.
pub fn classify_causal<T: Real>(x: &SpacetimeOperator<T>, y: &SpacetimeOperator<T>, params: &SystemParams) -> Result<CausalRelation> {
    let spectrum = product_spectrum(x, y)?;
    let mut rel = classify_from_spectrum(&spectrum, params.class_tol)?;
    if rel.kind == CausalKind::Timelike {
        rel.direction = direction_of(time_direction(x, y)?, x, y, params.class_tol);
    }
    Ok(rel)
}

/// Sign of `𝒞` with values within `tol·‖x‖‖y‖` of zero treated as zero.
pub fn direction_of<T: Real>(c: T, x: &SpacetimeOperator<T>, y: &SpacetimeOperator<T>, tol: f64) -> TimeDirection {
    let zero = x.norm() * y.norm() * lit(tol);
    if c > zero {
        TimeDirection::Future
    } else if c < -zero {
        TimeDirection::Past
    } else {
        TimeDirection::Undirected
    }
}

/// Orthogonal projection `π_x` onto the spin space.
#[derive(Clone, Debug)]
pub struct SpinProjection<T: Real> {
    pub proj: CMat<T>,
    pub rank: usize,
}

pub fn spin_projection<T: Real>(x: &SpacetimeOperator<T>) -> SpinProjection<T> {
    SpinProjection { proj: &x.vectors * x.vectors.adjoint(), rank: x.rank() }
}

/// `𝒞(x,y) = i tr(y x π_y π_x − x y π_x π_y)`.
///
/// Evaluated on the spin spaces: with `G = V_y* V_x` both traces reduce to
/// `rank × rank` products.
pub fn time_direction<T: Real>(x: &SpacetimeOperator<T>, y: &SpacetimeOperator<T>) -> Result<T> {
    check_compatible(x, y)?;
    if x.rank() == 0 || y.rank() == 0 {
        return Ok(T::zero());
    }
    let g = y.vectors.adjoint() * &x.vectors;
    let lx = linalg::from_real_diag(&x.values);
    let ly = linalg::from_real_diag(&y.values);
    let ggh = &g * g.adjoint();
    let ghg = g.adjoint() * &g;
    // tr(y x π_y π_x) = tr(Λ_y G Λ_x G* G G*)
    let t1 = linalg::trace(&(&ly * &g * &lx * g.adjoint() * &ggh));
    // tr(x y π_x π_y) = tr(Λ_x G* Λ_y G G* G)
    let t2 = linalg::trace(&(&lx * g.adjoint() * &ly * &g * &ghg));
    let z = (t1 - t2) * cplx(T::zero(), T::one());
    let scale = t1.modulus() + t2.modulus();
    if z.im.abs() > scale * lit(1e-9) + lit::<T>(1e-300) {
        return Err(CfsError::NumericalFailure(format!(
            "time-direction functional has imaginary residue {:e}",
            to_f64(z.im)
        )));
    }
    Ok(z.re)
}

/// Causal Lagrangian `L = (1/4n) Σ_{i,j} (|λ_i| − |λ_j|)²` of a product spectrum.
pub fn lagrangian_from_spectrum<T: Real>(spectrum: &ProductSpectrum<T>) -> T {
    let moduli: Vec<T> = spectrum.lambdas.iter().map(|z| z.modulus()).collect();
    let mut sum = T::zero();
    for &a in &moduli {
        for &b in &moduli {
            sum += (a - b) * (a - b);
        }
    }
    // lambdas has 2n entries
    sum / lit(2.0 * spectrum.lambdas.len() as f64)
}

pub fn lagrangian<T: Real>(x: &SpacetimeOperator<T>, y: &SpacetimeOperator<T>) -> Result<T> {
    Ok(lagrangian_from_spectrum(&product_spectrum(x, y)?))
}

/// Random valid operator: Haar eigenbasis with `p ≤ n` positive and `q ≤ n`
/// negative eigenvalues drawn from `[0.1, 2)` in modulus.
pub fn random_operator<T: Real, R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> SpacetimeOperator<T> {
    let d = params.hilbert_dim;
    let n = params.spin_dim;
    let p = rng.random_range(0..=n.min(d));
    let q = rng.random_range(0..=n.min(d - p));
    let mut diag = vec![T::zero(); d];
    for v in diag.iter_mut().take(p) {
        *v = lit(rng.random_range(0.1..2.0));
    }
    for v in diag.iter_mut().skip(p).take(q) {
        *v = lit(-rng.random_range(0.1..2.0));
    }
    let u = linalg::random_unitary::<T, _>(d, rng);
    let mat = &u * linalg::from_real_diag(&diag) * u.adjoint();
    validate_operator(&mat, params).expect("sampled operator obeys the signature bound")
}

/// Random operator of full signature `(n, n)`.
pub fn random_full_operator<T: Real, R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> SpacetimeOperator<T> {
    let d = params.hilbert_dim;
    let n = params.spin_dim.min(d / 2);
    let mut diag = vec![T::zero(); d];
    for i in 0..n {
        diag[i] = lit(rng.random_range(0.1..2.0));
        diag[n + i] = lit(-rng.random_range(0.1..2.0));
    }
    let u = linalg::random_unitary::<T, _>(d, rng);
    let mat = &u * linalg::from_real_diag(&diag) * u.adjoint();
    validate_operator(&mat, params).expect("sampled operator obeys the signature bound")
}
