//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{ComplexField, DMatrix, DVector, Schur, SymmetricEigen};
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CfsError, Result};
use crate::scalar::{cplx, lit, Real, C};

pub type CMat<T> = DMatrix<C<T>>;
pub type CVec<T> = DVector<C<T>>;

/// Largest absolute deviation from hermiticity.
pub fn hermiticity_deviation<T: Real>(m: &CMat<T>) -> T {
    let mut dev = T::zero();
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)].conj()).modulus();
            if d > dev {
                dev = d;
            }
        }
    }
    dev
}

pub fn max_abs_entry<T: Real>(m: &CMat<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.max(z.modulus()))
}

pub fn symmetrize<T: Real>(m: &CMat<T>) -> CMat<T> {
    (m + m.adjoint()) * cplx(lit::<T>(0.5), T::zero())
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn hermitian_eigen<T: Real>(m: &CMat<T>) -> (Vec<T>, CMat<T>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigenvalues of a general square complex matrix via the complex Schur form.
pub fn general_eigenvalues<T: Real>(m: &CMat<T>) -> Result<Vec<C<T>>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), T::default_epsilon(), 10_000)
        .ok_or_else(|| CfsError::NumericalFailure("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Eigenvalues of `diag(signs) * h` with `h` Hermitian.
///
/// Such a matrix is selfadjoint for an indefinite inner product, so its
/// spectrum is closed under complex conjugation. For sizes up to two the
/// characteristic polynomial has exactly real coefficients and the roots are
/// taken in closed form, which keeps conjugate pairs exactly conjugate.
pub fn pseudo_hermitian_eigenvalues<T: Real>(signs: &[T], h: &CMat<T>) -> Result<Vec<C<T>>> {
    let k = signs.len();
    match k {
        0 => Ok(Vec::new()),
        1 => Ok(vec![cplx(signs[0] * h[(0, 0)].re, T::zero())]),
        2 => {
            let a = signs[0] * h[(0, 0)].re;
            let d = signs[1] * h[(1, 1)].re;
            let tr = a + d;
            let det = signs[0] * signs[1] * (h[(0, 0)].re * h[(1, 1)].re - h[(0, 1)].norm_sqr());
            let half = tr * lit(0.5);
            let disc = half * half - det;
            if disc >= T::zero() {
                let s = disc.sqrt();
                // stable root pair
                let big = if half >= T::zero() { half + s } else { half - s };
                let small = if big != T::zero() { det / big } else { half - s };
                Ok(vec![cplx(big, T::zero()), cplx(small, T::zero())])
            } else {
                let s = (-disc).sqrt();
                Ok(vec![cplx(half, s), cplx(half, -s)])
            }
        }
        _ => {
            let mut m = h.clone();
            for (i, &s) in signs.iter().enumerate() {
                for j in 0..k {
                    m[(i, j)] *= cplx(s, T::zero());
                }
            }
            general_eigenvalues(&m)
        }
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &CMat<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().fold(T::zero(), |a, &b| a.max(b))
}

pub fn commutator<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    a * b - b * a
}

/// Hilbert–Schmidt inner product `tr(a* b)`.
pub fn hs_inner<T: Real>(a: &CMat<T>, b: &CMat<T>) -> C<T> {
    a.iter().zip(b.iter()).fold(C::zero(), |acc, (x, y)| acc + x.conj() * y)
}

pub fn hs_norm<T: Real>(a: &CMat<T>) -> T {
    a.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

pub fn trace<T: Real>(m: &CMat<T>) -> C<T> {
    (0..m.nrows().min(m.ncols())).fold(C::zero(), |acc, i| acc + m[(i, i)])
}

pub fn identity<T: Real>(d: usize) -> CMat<T> {
    CMat::identity(d, d)
}

pub fn from_real_diag<T: Real>(diag: &[T]) -> CMat<T> {
    let d = diag.len();
    let mut m = CMat::zeros(d, d);
    for (i, &v) in diag.iter().enumerate() {
        m[(i, i)] = cplx(v, T::zero());
    }
    m
}

/// Builds a complex matrix from row-major real and imaginary parts.
pub fn from_row_major<T: Real>(rows: usize, cols: usize, re: &[f64], im: &[f64]) -> CMat<T> {
    CMat::from_fn(rows, cols, |i, j| {
        let k = i * cols + j;
        cplx(lit(re[k]), lit(im[k]))
    })
}

pub fn to_row_major<T: Real>(m: &CMat<T>) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::with_capacity(m.len());
    let mut im = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            re.push(crate::scalar::to_f64(m[(i, j)].re));
            im.push(crate::scalar::to_f64(m[(i, j)].im));
        }
    }
    (re, im)
}

/// Orthonormal basis (columns) of the null space of a Hermitian positive
/// semidefinite matrix: eigenvectors whose eigenvalue is at most
/// `rel_tol` times the largest eigenvalue (or `abs_floor`, whichever is larger).
pub fn psd_null_space<T: Real>(h: &CMat<T>, rel_tol: T, abs_floor: T) -> CMat<T> {
    let (vals, vecs) = hermitian_eigen(h);
    let top = vals.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let cut = (top * rel_tol).max(abs_floor);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i].abs() <= cut).collect();
    let mut out = CMat::zeros(h.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &vecs.column(i));
    }
    out
}

/// Orthonormal basis (columns) of the null space of `m`: right singular
/// vectors whose singular value is at most `rel_tol` times the largest, or
/// times `scale` when that is larger (so a numerically zero `m` is not
/// mistaken for a well-conditioned one).
pub fn null_space<T: Real>(m: &CMat<T>, rel_tol: T, scale: T) -> CMat<T> {
    let cols = m.ncols();
    if m.nrows() == 0 || cols == 0 {
        return CMat::identity(cols, cols);
    }
    // pad short systems so the thin SVD returns a complete right basis
    let padded;
    let a = if m.nrows() < cols {
        padded = m.clone().resize_vertically(cols, C::zero());
        &padded
    } else {
        m
    };
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let top = svd.singular_values.iter().fold(scale, |x, &y| x.max(y));
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= top * rel_tol).collect();
    let mut out = CMat::zeros(cols, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &vt.row(i).adjoint());
    }
    out
}

/// Complex Gaussian Hermitian matrix (GUE-like) with entries of standard
/// deviation `scale`.
pub fn random_hermitian<T: Real, R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> CMat<T> {
    let mut m = CMat::zeros(d, d);
    for i in 0..d {
        let v: f64 = rng.sample(StandardNormal);
        m[(i, i)] = cplx(lit(v * scale), T::zero());
        for j in (i + 1)..d {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = cplx(lit(re * scale / 2f64.sqrt()), lit(im * scale / 2f64.sqrt()));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Haar-distributed unitary via QR of a complex Ginibre matrix.
pub fn random_unitary<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat<T> {
    let g = CMat::<T>::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        cplx(lit(re), lit(im))
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let z = r[(j, j)];
        let n = z.modulus();
        if n > T::zero() {
            let phase = z / cplx(n, T::zero());
            for i in 0..d {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_sorted_descending() {
        let m = from_real_diag(&[1.0f64, -2.0, 3.0]);
        let (v, _) = hermitian_eigen(&m);
        assert_eq!(v, vec![3.0, 1.0, -2.0]);
    }

    #[test]
    fn pseudo_hermitian_small_matches_schur() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let h = random_hermitian::<f64, _>(2, 1.0, &mut rng);
            let signs = [1.0, -1.0];
            let closed = pseudo_hermitian_eigenvalues(&signs, &h).unwrap();
            let mut m = h.clone();
            for j in 0..2 {
                m[(1, j)] = -m[(1, j)];
            }
            let schur = general_eigenvalues(&m).unwrap();
            for z in &closed {
                let best = schur.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
                assert!(best < 1e-10, "{z} vs {schur:?}");
            }
        }
    }

    #[test]
    fn unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary::<f64, _>(5, &mut rng);
        let e = &u.adjoint() * &u - identity::<f64>(5);
        assert!(hs_norm(&e) < 1e-12);
    }

    #[test]
    fn null_space_of_projector() {
        let p = from_real_diag(&[1.0f64, 0.0, 1.0, 0.0]);
        let n = psd_null_space(&p, 1e-12, 1e-300);
        assert_eq!(n.ncols(), 2);
    }
}
