//! Regularized vacuum Dirac-sea kernel in 3+1 dimensions.
//!
//! `P^ε(ξ) = ∫ d⁴k/(2π)⁴ 𝔊_ε(k) δ(k²−m²) Θ(−k⁰) (k̸+m) e^{−ik·ξ}` restricted to
//! the lower mass shell. The angular integral is done analytically, leaving
//!
//! ```text
//! P(ξ) = a + b γ⁰ + c (ξ̂·γ⃗),
//! a = N ∫ k²/ω g(k) e^{iωξ⁰} m j₀(kr) dk
//! b = N ∫ k²/ω g(k) e^{iωξ⁰} (−ω) j₀(kr) dk
//! c = N ∫ k²/ω g(k) e^{iωξ⁰} (−i k) j₁(kr) dk,   N = 1/(8π³)
//! ```
//!
//! evaluated by composite Gauss–Legendre quadrature on `[0, kmax]`.
//! Units are fixed by the mass: everything is measured in `1/m`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::fit::{power_law, PowerFit};
use crate::linalg;
use crate::operator::{classify_from_spectrum, CausalKind, CausalRelation, ProductSpectrum};

pub type SpinMatrix = Matrix4<Complex64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// `e^{εk⁰}` on the lower shell, i.e. `e^{−εω}`.
    Exponential,
    /// `e^{−ε²|k⃗|²}`.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSpec {
    /// Gauss–Legendre order per panel.
    pub order: usize,
    /// Number of panels on `[0, kmax]`; chosen from the oscillation frequency
    /// when absent.
    pub panels: Option<usize>,
    /// Radial truncation as a multiple of `1/ε`.
    pub kmax_eps: f64,
    /// Largest relative entry change tolerated when the panels are doubled.
    pub tol: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self { order: 16, panels: None, kmax_eps: 40.0, tol: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    pub mass: f64,
    pub eps: f64,
    pub cutoff: Cutoff,
    pub quad: QuadSpec,
    /// Classification tolerance for closed-chain spectra.
    pub class_tol: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::new(0.01)
    }
}

impl KernelParams {
    pub fn new(eps: f64) -> Self {
        Self { mass: 1.0, eps, cutoff: Cutoff::Exponential, quad: QuadSpec::default(), class_tol: 1e-4 }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..*self }
    }

    pub fn kmax(&self) -> f64 {
        self.quad.kmax_eps / self.eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.eps > 0.0) {
            return Err(CfsError::InvalidParameter(format!("need m > 0 and ε > 0, got m={} ε={}", self.mass, self.eps)));
        }
        if !(self.quad.kmax_eps >= 20.0) {
            return Err(CfsError::InvalidParameter(format!(
                "kmax·ε = {} does not resolve the cutoff (need ≥ 20)",
                self.quad.kmax_eps
            )));
        }
        if self.quad.order == 0 || self.quad.panels == Some(0) || !(self.quad.tol > 0.0) {
            return Err(CfsError::InvalidParameter("quadrature order, panels and tolerance must be positive".into()));
        }
        if !(self.class_tol > 0.0 && self.class_tol < 1.0) {
            return Err(CfsError::InvalidParameter(format!("class_tol must lie in (0,1), got {}", self.class_tol)));
        }
        Ok(())
    }
}

/// Separation `ξ = y − x` reduced to time component and spatial radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeVector {
    pub xi0: f64,
    pub r: f64,
}

impl SpacetimeVector {
    pub fn new(xi0: f64, r: f64) -> Self {
        Self { xi0, r: r.abs() }
    }

    /// Minkowski square `ξ⁰² − r²`.
    pub fn square(&self) -> f64 {
        self.xi0 * self.xi0 - self.r * self.r
    }
}

/// Scalar, time-vector and radial-vector coefficients of the kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelCoeffs {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
}

impl KernelCoeffs {
    /// `a + bγ⁰ + c(n̂·γ⃗)` for a unit spatial direction `n̂`.
    pub fn matrix(&self, direction: [f64; 3]) -> SpinMatrix {
        let g = gammas();
        let mut m = SpinMatrix::identity() * self.a + g[0] * self.b;
        for i in 0..3 {
            m += g[i + 1] * (self.c * direction[i]);
        }
        m
    }

    fn max_abs(&self) -> f64 {
        self.a.norm().max(self.b.norm()).max(self.c.norm())
    }
}

/// Dirac matrices `γ⁰ … γ³` in the Dirac representation.
pub fn gammas() -> [SpinMatrix; 4] {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let sigma = [[[z, o], [o, z]], [[z, -i], [i, z]], [[o, z], [z, -o]]];
    let mut g = [SpinMatrix::zeros(); 4];
    g[0] = SpinMatrix::from_diagonal(&nalgebra::Vector4::new(o, o, -o, -o));
    for (k, s) in sigma.iter().enumerate() {
        let mut m = SpinMatrix::zeros();
        for r in 0..2 {
            for c in 0..2 {
                m[(r, c + 2)] = s[r][c];
                m[(r + 2, c)] = -s[r][c];
            }
        }
        g[k + 1] = m;
    }
    g
}

/// Spherical Bessel functions `j₀(x)`, `j₁(x)`.
pub fn spherical_j01(x: f64) -> (f64, f64) {
    if x.abs() < 0.1 {
        let x2 = x * x;
        let j0 = 1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)));
        let j1 = x / 3.0 * (1.0 - x2 / 10.0 * (1.0 - x2 / 28.0 * (1.0 - x2 / 54.0 * (1.0 - x2 / 88.0))));
        (j0, j1)
    } else {
        let (s, c) = x.sin_cos();
        (s / x, (s / x - c) / x)
    }
}

/// Radial nodes with the ξ-independent part of the integrand folded into the
/// weights.
struct NodeTable {
    k: Vec<f64>,
    omega: Vec<f64>,
    base: Vec<f64>,
}

fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("order is positive"));
    rule.iter().map(|(x, w)| (*x, *w)).unzip()
}

impl NodeTable {
    fn new(params: &KernelParams, panels: usize) -> Self {
        let (x, w) = gauss_legendre(params.quad.order);
        let kmax = params.kmax();
        let h = kmax / panels as f64;
        let n = panels * x.len();
        let (mut k, mut omega, mut base) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let m = params.mass;
        let norm = 1.0 / (8.0 * PI * PI * PI);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(&w) {
                let kk = mid + 0.5 * h * xi;
                let om = (kk * kk + m * m).sqrt();
                let g = match params.cutoff {
                    Cutoff::Exponential => (-params.eps * om).exp(),
                    Cutoff::Gaussian => (-params.eps * params.eps * kk * kk).exp(),
                };
                k.push(kk);
                omega.push(om);
                base.push(norm * 0.5 * h * wi * kk * kk / om * g);
            }
        }
        Self { k, omega, base }
    }

    fn coeffs(&self, xi: SpacetimeVector, mass: f64) -> KernelCoeffs {
        let (mut a, mut b, mut c) = (Complex64::default(), Complex64::default(), Complex64::default());
        for i in 0..self.k.len() {
            let (s, co) = (self.omega[i] * xi.xi0).sin_cos();
            let phase = Complex64::new(co, s) * self.base[i];
            let (j0, j1) = spherical_j01(self.k[i] * xi.r);
            a += phase * (mass * j0);
            b += phase * (-self.omega[i] * j0);
            c += phase * Complex64::new(0.0, -self.k[i] * j1);
        }
        KernelCoeffs { a, b, c }
    }
}

/// Kernel evaluator for fixed parameters, caching node tables.
pub struct Kernel {
    params: KernelParams,
    tables: Mutex<HashMap<usize, Arc<NodeTable>>>,
}

impl Kernel {
    pub fn new(params: KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, tables: Mutex::new(HashMap::new()) })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Panel count: explicit, or about one oscillation per panel rounded up
    /// to a power of two.
    fn panels_for(&self, xi: SpacetimeVector) -> usize {
        if let Some(p) = self.params.quad.panels {
            return p;
        }
        let freq = xi.xi0.abs() + xi.r + self.params.eps;
        let want = (self.params.kmax() * freq / PI).ceil() as usize;
        want.max(64).next_power_of_two()
    }

    fn table(&self, panels: usize) -> Arc<NodeTable> {
        let mut cache = self.tables.lock().expect("node cache poisoned");
        cache.entry(panels).or_insert_with(|| Arc::new(NodeTable::new(&self.params, panels))).clone()
    }

    /// Coefficients `(a, b, c)`, checked against a run with doubled panels.
    pub fn coeffs(&self, xi: SpacetimeVector) -> Result<KernelCoeffs> {
        let panels = self.panels_for(xi);
        let coarse = self.table(panels).coeffs(xi, self.params.mass);
        let fine = self.table(2 * panels).coeffs(xi, self.params.mass);
        let scale = fine.max_abs();
        let change = (fine.a - coarse.a).norm().max((fine.b - coarse.b).norm()).max((fine.c - coarse.c).norm());
        let rel = if scale > 0.0 { change / scale } else { change };
        if rel > self.params.quad.tol {
            return Err(CfsError::QuadratureNotConverged { change: rel, tol: self.params.quad.tol });
        }
        Ok(fine)
    }

    /// `P^ε(ξ)` with the spatial direction along the third axis.
    pub fn kernel(&self, xi: SpacetimeVector) -> Result<SpinMatrix> {
        Ok(self.coeffs(xi)?.matrix([0.0, 0.0, 1.0]))
    }

    /// `P^ε` at a full spacetime separation `(ξ⁰, ξ⃗)`.
    pub fn kernel_at(&self, xi0: f64, x: [f64; 3]) -> Result<SpinMatrix> {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let dir = if r > 0.0 { [x[0] / r, x[1] / r, x[2] / r] } else { [0.0, 0.0, 1.0] };
        Ok(self.coeffs(SpacetimeVector::new(xi0, r))?.matrix(dir))
    }

    /// Closed chain `A = P(ξ) P(−ξ)`.
    pub fn closed_chain(&self, xi: SpacetimeVector) -> Result<SpinMatrix> {
        let fwd = self.coeffs(xi)?;
        let back = self.coeffs(SpacetimeVector::new(-xi.xi0, xi.r))?;
        Ok(fwd.matrix([0.0, 0.0, 1.0]) * back.matrix([0.0, 0.0, -1.0]))
    }

    /// The four closed-chain eigenvalues as a spin-dimension-2 spectrum.
    pub fn chain_spectrum(&self, xi: SpacetimeVector) -> Result<ProductSpectrum<f64>> {
        let a = self.closed_chain(xi)?;
        let dense = DMatrix::from_fn(4, 4, |i, j| a[(i, j)]);
        let raw = linalg::general_eigenvalues(&dense)?;
        Ok(ProductSpectrum::from_eigenvalues(raw, 2))
    }

    pub fn classify(&self, xi: SpacetimeVector) -> Result<CausalRelation> {
        classify_from_spectrum(&self.chain_spectrum(xi)?, self.params.class_tol)
    }

    /// Largest singular value of `P^ε(ξ)`.
    pub fn norm(&self, xi: SpacetimeVector) -> Result<f64> {
        let p = self.kernel(xi)?;
        Ok(p.svd(false, false).singular_values.max())
    }
}

/// One classified grid point of a light-cone scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub xi0: f64,
    pub r: f64,
    pub eps: f64,
    pub kind: CausalKind,
    pub margin_mod: f64,
    pub margin_im: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub eps: f64,
    pub matched: usize,
    pub total: usize,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        self.matched as f64 / self.total as f64
    }
}

/// Regular `n × n` grid on `(0, extent]²` in the `(ξ⁰, r)` plane, keeping only
/// points at least `margin` away from the cone in `|ξ⁰² − r²|`.
pub fn cone_grid(n: usize, extent: f64, margin: f64) -> Vec<SpacetimeVector> {
    let step = extent / n as f64;
    let mut out = Vec::new();
    for i in 1..=n {
        for j in 1..=n {
            let xi = SpacetimeVector::new(i as f64 * step, j as f64 * step);
            if xi.square().abs() >= margin {
                out.push(xi);
            }
        }
    }
    out
}

/// Classifies every grid point at every ε and counts agreement with the
/// Minkowski rule (timelike iff `ξ⁰² > r²`).
pub fn lightcone_scan(grid: &[SpacetimeVector], eps_list: &[f64], params: &KernelParams) -> Result<(Vec<ScanRow>, Vec<Agreement>)> {
    let mut rows = Vec::with_capacity(grid.len() * eps_list.len());
    let mut agreement = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let kernel = Kernel::new(params.with_eps(eps))?;
        let rels: Vec<Result<CausalRelation>> = grid.par_iter().map(|&xi| kernel.classify(xi)).collect();
        let mut matched = 0;
        for (xi, rel) in grid.iter().zip(rels) {
            let rel = rel?;
            let expect = if xi.square() > 0.0 { CausalKind::Timelike } else { CausalKind::Spacelike };
            if rel.kind == expect {
                matched += 1;
            }
            rows.push(ScanRow { xi0: xi.xi0, r: xi.r, eps, kind: rel.kind, margin_mod: rel.margin_mod, margin_im: rel.margin_im });
        }
        agreement.push(Agreement { eps, matched, total: grid.len() });
    }
    Ok((rows, agreement))
}

/// Where the classification along the ray `ξ⁰ = const` stops being timelike.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub xi0: f64,
    pub eps: f64,
    /// Radius of the last timelike point.
    pub r_flip: f64,
    /// `ξ⁰ − r_flip`; positive when the flip lies inside the Minkowski cone.
    pub offset: f64,
}

/// Bisects the timelike→non-timelike transition on `r ∈ [ξ⁰ − below, ξ⁰ + above]`.
pub fn cone_flip(kernel: &Kernel, xi0: f64, below: f64, above: f64, tol: f64) -> Result<FlipRow> {
    let is_timelike = |r: f64| -> Result<bool> { Ok(kernel.classify(SpacetimeVector::new(xi0, r))?.kind == CausalKind::Timelike) };
    let (mut lo, mut hi) = ((xi0 - below).max(0.0), xi0 + above);
    if !is_timelike(lo)? || is_timelike(hi)? {
        return Err(CfsError::NumericalFailure(format!(
            "no timelike→spacelike transition bracketed on ray ξ⁰={xi0} at ε={}",
            kernel.params().eps
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if is_timelike(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r_flip = 0.5 * (lo + hi);
    Ok(FlipRow { xi0, eps: kernel.params().eps, r_flip, offset: xi0 - r_flip })
}

/// Flip offsets along several rays for each ε, with a power-law fit of the
/// offset against ε per ray.
pub fn cone_deformation(rays: &[f64], eps_list: &[f64], params: &KernelParams) -> Result<(Vec<FlipRow>, Vec<(f64, Option<PowerFit>)>)> {
    let mut rows = Vec::new();
    for &eps in eps_list {
        let kernel = Kernel::new(params.with_eps(eps))?;
        let found: Vec<Result<FlipRow>> = rays.par_iter().map(|&t| cone_flip(&kernel, t, 1.0, 0.5, 1e-6)).collect();
        for f in found {
            rows.push(f?);
        }
    }
    let mut fits = Vec::new();
    for &t in rays {
        let pts: Vec<&FlipRow> = rows.iter().filter(|r| r.xi0 == t).collect();
        let x: Vec<f64> = pts.iter().map(|r| r.eps).collect();
        let y: Vec<f64> = pts.iter().map(|r| r.offset).collect();
        fits.push((t, power_law(&x, &y).ok()));
    }
    Ok((rows, fits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub group: String,
    pub xi0: f64,
    pub r: f64,
    pub eps: f64,
    pub norm: f64,
}

/// Kernel norms for on-cone and inside-cone points across ε, with a
/// power-law fit per group (norms averaged over the group's points).
pub fn singularity_probe(
    on_cone: &[SpacetimeVector],
    inside: &[SpacetimeVector],
    eps_list: &[f64],
    params: &KernelParams,
) -> Result<(Vec<GrowthRow>, Vec<(String, PowerFit)>)> {
    let mut rows = Vec::new();
    for &eps in eps_list {
        let kernel = Kernel::new(params.with_eps(eps))?;
        for (group, pts) in [("on_cone", on_cone), ("inside", inside)] {
            for xi in pts {
                rows.push(GrowthRow { group: group.into(), xi0: xi.xi0, r: xi.r, eps, norm: kernel.norm(*xi)? });
            }
        }
    }
    let mut fits = Vec::new();
    for group in ["on_cone", "inside"] {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &eps in eps_list {
            let vals: Vec<f64> = rows.iter().filter(|r| r.group == group && r.eps == eps).map(|r| r.norm).collect();
            if !vals.is_empty() {
                x.push(eps);
                y.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        if x.len() >= 2 {
            fits.push((group.to_string(), power_law(&x, &y)?));
        }
    }
    Ok((rows, fits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_branches_agree() {
        for &x in &[0.0999999, 0.1] {
            let (a0, a1) = spherical_j01(x);
            let (s, c) = f64::sin_cos(x);
            assert!((a0 - s / x).abs() < 1e-14);
            assert!((a1 - (s / x - c) / x).abs() < 1e-13);
        }
    }

    #[test]
    fn gamma_algebra() {
        let g = gammas();
        let eta = [1.0, -1.0, -1.0, -1.0];
        for mu in 0..4 {
            for nu in 0..4 {
                let ac = g[mu] * g[nu] + g[nu] * g[mu];
                let want = if mu == nu { 2.0 * eta[mu] } else { 0.0 };
                assert!((ac - SpinMatrix::identity() * Complex64::new(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn radial_part_vanishes_at_origin() {
        let k = Kernel::new(KernelParams::new(0.5)).unwrap();
        let c = k.coeffs(SpacetimeVector::new(0.7, 0.0)).unwrap();
        assert_eq!(c.c, Complex64::new(0.0, 0.0));
    }
}
