//! Finite-dimensional *-algebras of complex matrices, represented by a
//! Hilbert–Schmidt orthonormal basis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::linalg::{self, CMat};
use crate::scalar::{cplx, lit, to_f64, Real, C};

/// Relative residual below which a matrix counts as lying in a span.
pub fn span_tol<T: Real>() -> f64 {
    (1e3 * to_f64(T::default_epsilon())).max(1e-9)
}

#[derive(Clone, Debug)]
pub struct MatrixAlgebra<T: Real> {
    dim: usize,
    basis: Vec<CMat<T>>,
    unital: bool,
    degree: usize,
    truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgebraSummary {
    pub dimension: usize,
    pub matrix_size: usize,
    pub degree: usize,
    pub truncated: bool,
    pub unital: bool,
}

/// Incremental Hilbert–Schmidt Gram–Schmidt.
struct SpanBuilder<T: Real> {
    basis: Vec<CMat<T>>,
    tol: f64,
}

impl<T: Real> SpanBuilder<T> {
    fn new(tol: f64) -> Self {
        Self { basis: Vec::new(), tol }
    }

    fn residual(&self, m: &CMat<T>) -> CMat<T> {
        let mut r = m.clone();
        // two passes keep the basis orthonormal to working precision
        for _ in 0..2 {
            for b in &self.basis {
                let c = linalg::hs_inner(b, &r);
                r -= b * c;
            }
        }
        r
    }

    fn try_add(&mut self, m: &CMat<T>) -> bool {
        let n0 = linalg::hs_norm(m);
        if n0 == T::zero() {
            return false;
        }
        let r = self.residual(m);
        let n = linalg::hs_norm(&r);
        if to_f64(n) <= self.tol * to_f64(n0) {
            return false;
        }
        self.basis.push(r * cplx(T::one() / n, T::zero()));
        true
    }
}

impl<T: Real> MatrixAlgebra<T> {
    /// Algebra from an already orthonormal basis.
    fn from_basis(dim: usize, basis: Vec<CMat<T>>, degree: usize, truncated: bool) -> Self {
        let mut alg = Self { dim, basis, unital: false, degree, truncated };
        alg.unital = alg.contains(&linalg::identity(dim));
        alg
    }

    /// Wraps a basis the caller guarantees to be Hilbert–Schmidt orthonormal
    /// and closed under products and adjoints.
    pub fn from_orthonormal(dim: usize, basis: Vec<CMat<T>>) -> Self {
        Self::from_basis(dim, basis, 1, false)
    }

    /// Span of the given matrices, orthonormalized; not checked for closure.
    pub fn span_of(dim: usize, mats: &[CMat<T>]) -> Self {
        let mut sb = SpanBuilder::new(span_tol::<T>());
        for m in mats {
            sb.try_add(m);
        }
        Self::from_basis(dim, sb.basis, 1, false)
    }

    /// All `d × d` matrices.
    pub fn full(dim: usize) -> Self {
        let mut basis = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let mut m = CMat::zeros(dim, dim);
                m[(i, j)] = C::new(T::one(), T::zero());
                basis.push(m);
            }
        }
        Self::from_basis(dim, basis, 1, false)
    }

    pub fn scalars(dim: usize) -> Self {
        let s = cplx(T::one() / lit::<T>(dim as f64).sqrt(), T::zero());
        Self::from_basis(dim, vec![linalg::identity::<T>(dim) * s], 1, false)
    }

    /// Size `d` of the matrices.
    pub fn matrix_size(&self) -> usize {
        self.dim
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[CMat<T>] {
        &self.basis
    }

    pub fn is_unital(&self) -> bool {
        self.unital
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn summary(&self) -> AlgebraSummary {
        AlgebraSummary {
            dimension: self.dimension(),
            matrix_size: self.dim,
            degree: self.degree,
            truncated: self.truncated,
            unital: self.unital,
        }
    }

    /// Orthogonal projection onto the span.
    pub fn project(&self, m: &CMat<T>) -> CMat<T> {
        let mut p = CMat::zeros(self.dim, self.dim);
        for b in &self.basis {
            p += b * linalg::hs_inner(b, m);
        }
        p
    }

    /// `‖m − P m‖ / ‖m‖` in the Hilbert–Schmidt norm (0 for `m = 0`).
    pub fn relative_distance(&self, m: &CMat<T>) -> f64 {
        let n = to_f64(linalg::hs_norm(m));
        if n == 0.0 {
            return 0.0;
        }
        to_f64(linalg::hs_norm(&(m - self.project(m)))) / n
    }

    pub fn contains(&self, m: &CMat<T>) -> bool {
        self.relative_distance(m) <= span_tol::<T>()
    }

    /// Largest relative span residual of `b` over the basis of `other`.
    pub fn inclusion_residual(&self, other: &MatrixAlgebra<T>) -> f64 {
        other.basis.iter().map(|b| self.relative_distance(b)).fold(0.0, f64::max)
    }

    /// Largest span residual of `B_i B_j` over basis pairs.
    pub fn product_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.basis {
            for b in &self.basis {
                let p = a * b;
                let r = to_f64(linalg::hs_norm(&(&p - self.project(&p))));
                worst = worst.max(r);
            }
        }
        worst
    }

    /// Largest span residual of `B_i*`.
    pub fn adjoint_residual(&self) -> f64 {
        self.basis
            .iter()
            .map(|b| {
                let a = b.adjoint();
                to_f64(linalg::hs_norm(&(&a - self.project(&a))))
            })
            .fold(0.0, f64::max)
    }

    /// Largest commutator norm over basis pairs.
    pub fn max_commutator(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.basis.iter().enumerate() {
            for b in &self.basis[i + 1..] {
                worst = worst.max(to_f64(linalg::hs_norm(&linalg::commutator(a, b))));
            }
        }
        worst
    }

    pub fn is_abelian(&self) -> bool {
        self.max_commutator() <= span_tol::<T>()
    }
}

/// Span saturation of the words in `generators` and their adjoints, up to
/// length `max_degree`. The result carries a truncation flag when the
/// dimension was still growing at the cap.
pub fn generate_truncated<T: Real>(generators: &[CMat<T>], unital: bool, max_degree: usize) -> Result<MatrixAlgebra<T>> {
    let dim = match generators.first() {
        Some(g) => g.nrows(),
        None if unital => return Err(CfsError::InvalidParameter("unital algebra of no generators needs a size".into())),
        None => 0,
    };
    if generators.iter().any(|g| g.nrows() != dim || g.ncols() != dim) {
        return Err(CfsError::DimensionMismatch("generators must be square of equal size".into()));
    }
    if max_degree == 0 {
        return Err(CfsError::InvalidParameter("max_degree must be at least 1".into()));
    }
    let mut letters: Vec<CMat<T>> = Vec::with_capacity(2 * generators.len());
    for g in generators {
        letters.push(g.clone());
        if to_f64(linalg::hermiticity_deviation(g)) > span_tol::<T>() * to_f64(linalg::hs_norm(g)) {
            letters.push(g.adjoint());
        }
    }
    let mut sb = SpanBuilder::new(span_tol::<T>());
    if unital {
        sb.try_add(&linalg::identity(dim));
    }
    let mut newest = Vec::new();
    for l in &letters {
        if sb.try_add(l) {
            newest.push(sb.basis.len() - 1);
        }
    }
    let full = dim * dim;
    let mut degree = 1;
    let mut growing = !newest.is_empty();
    while growing && sb.basis.len() < full {
        if degree == max_degree {
            break;
        }
        let mut added = Vec::new();
        'outer: for &i in &newest {
            for l in &letters {
                let w = &sb.basis[i] * l;
                if sb.try_add(&w) {
                    added.push(sb.basis.len() - 1);
                    if sb.basis.len() == full {
                        break 'outer;
                    }
                }
            }
        }
        growing = !added.is_empty();
        if growing {
            degree += 1;
        }
        newest = added;
    }
    // one more product pass decides whether the cap truncated the closure
    let truncated = growing && sb.basis.len() < full && {
        let probe = SpanBuilder { basis: sb.basis.clone(), tol: sb.tol };
        newest.iter().any(|&i| letters.iter().any(|l| {
            let w = &sb.basis[i] * l;
            let n0 = to_f64(linalg::hs_norm(&w));
            n0 > 0.0 && to_f64(linalg::hs_norm(&probe.residual(&w))) > probe.tol * n0
        }))
    };
    Ok(MatrixAlgebra::from_basis(dim, sb.basis, degree, truncated))
}

/// Generated *-algebra; errors if the degree cap stops a growing span.
pub fn generate_algebra<T: Real>(generators: &[CMat<T>], unital: bool, max_degree: usize) -> Result<MatrixAlgebra<T>> {
    let alg = generate_truncated(generators, unital, max_degree)?;
    if alg.truncated {
        return Err(CfsError::DegreeCapReached { degree: max_degree, dimension: alg.dimension() });
    }
    Ok(alg)
}

/// `vec(Y) ↦ vec([Y, B])` for column-major vectorization.
fn ad_matrix<T: Real>(b: &CMat<T>) -> CMat<T> {
    let d = b.nrows();
    let id = linalg::identity::<T>(d);
    b.transpose().kronecker(&id) - id.kronecker(b)
}

fn unvec<T: Real>(d: usize, v: nalgebra::DVectorView<'_, C<T>>) -> CMat<T> {
    CMat::from_column_slice(d, d, v.as_slice())
}

/// `{Y : [Y, B] = 0 for all B ∈ A}`.
pub fn commutant<T: Real>(a: &MatrixAlgebra<T>) -> MatrixAlgebra<T> {
    let d = a.dim;
    let n = d * d;
    let mut system = CMat::<T>::zeros(n * a.basis.len(), n);
    for (i, b) in a.basis.iter().enumerate() {
        system.view_mut((i * n, 0), (n, n)).copy_from(&ad_matrix(b));
    }
    let null = linalg::null_space(&system, lit(span_tol::<T>()), T::one());
    let basis = (0..null.ncols()).map(|c| unvec(d, null.column(c))).collect();
    MatrixAlgebra::from_basis(d, basis, 1, false)
}

/// `B′ ∩ A`, solved inside `span(A)`.
pub fn relative_commutant<T: Real>(b: &MatrixAlgebra<T>, a: &MatrixAlgebra<T>) -> Result<MatrixAlgebra<T>> {
    if a.dim != b.dim {
        return Err(CfsError::DimensionMismatch(format!("{}×{} vs {}×{} matrices", b.dim, b.dim, a.dim, a.dim)));
    }
    let res = a.inclusion_residual(b);
    if res > span_tol::<T>() {
        return Err(CfsError::NotASubalgebra(res));
    }
    let n = a.dimension();
    if n == 0 {
        return Ok(MatrixAlgebra::from_basis(a.dim, Vec::new(), 1, false));
    }
    // Column k stacks vec([A_k, B_i]) over i.
    let dd = a.dim * a.dim;
    let mut system = CMat::<T>::zeros(dd * b.dimension(), n);
    for (k, ak) in a.basis.iter().enumerate() {
        for (i, bi) in b.basis.iter().enumerate() {
            let c = linalg::commutator(ak, bi);
            system.view_mut((i * dd, k), (dd, 1)).copy_from_slice(c.as_slice());
        }
    }
    let null = linalg::null_space(&system, lit(span_tol::<T>()), T::one());
    let basis = (0..null.ncols())
        .map(|c| {
            let mut x = CMat::zeros(a.dim, a.dim);
            for k in 0..n {
                x += &a.basis[k] * null[(k, c)];
            }
            x
        })
        .collect();
    Ok(MatrixAlgebra::from_basis(a.dim, basis, 1, false))
}

pub fn center<T: Real>(a: &MatrixAlgebra<T>) -> MatrixAlgebra<T> {
    relative_commutant(a, a).expect("an algebra is a subalgebra of itself")
}

/// Dense `d × d` matrix from real entries, for examples and tests.
pub fn real_matrix<T: Real>(rows: &[&[f64]]) -> CMat<T> {
    let d = rows.len();
    DMatrix::from_fn(d, rows[0].len(), |i, j| cplx(lit(rows[i][j]), T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sign_generator() {
        let g = real_matrix::<f64>(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let alg = generate_algebra(&[g], false, 4).unwrap();
        assert_eq!(alg.dimension(), 2);
        assert_eq!(alg.degree(), 2);
        assert!(alg.is_unital());
        assert!(alg.is_abelian());
    }

    #[test]
    fn commutant_of_full_is_scalars() {
        let c = commutant(&MatrixAlgebra::<f64>::full(3));
        assert_eq!(c.dimension(), 1);
        assert!(c.is_unital());
    }
}
