//! Finite-mode Dirac sea in a periodic 1+1 dimensional box.
//!
//! Modes are the negative-energy plane waves `ψ_j = u_j e^{i(ω_j t + k_j x)}/√L`
//! with `k_j = 2πj/L`, `|j| ≤ K`, in the representation `γ⁰ = σ₃`, `γ¹ = iσ₁`.
//! Regularization damps mode `j` by `g_j = e^{−εω_j}`. The local correlation
//! operator at a lattice point factors through the regularized evaluation map
//! `E(p): 𝓗 → ℂ²` as `F(p) = −E(p)* γ⁰ E(p)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::linalg::{CMat, CVec};
use crate::measure::DiscreteMeasure;
use crate::operator::{
    classify_causal, time_direction, CausalKind, CausalRelation, OperatorRecord, SpacetimeOperator, SystemParams,
    TimeDirection,
};
use crate::scalar::{cplx, lit, to_f64, Real, C};

/// Classification tolerance for box operators.
pub const BOX_CLASS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxParams {
    /// Spatial period `L`.
    pub length: f64,
    /// Time extent `T` of the lattice.
    pub duration: f64,
    /// Momentum cutoff index `K`; the Hilbert space has `2K+1` modes.
    pub modes: usize,
    pub mass: f64,
    pub eps: f64,
    /// Lattice points in time.
    pub nt: usize,
    /// Lattice points in space.
    pub nx: usize,
}

impl Default for BoxParams {
    fn default() -> Self {
        Self { length: 2.0 * PI, duration: 2.0 * PI, modes: 48, mass: 1.0, eps: 0.05, nt: 32, nx: 32 }
    }
}

impl BoxParams {
    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..*self }
    }

    pub fn dim(&self) -> usize {
        2 * self.modes + 1
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    /// Cell volume `Δμ`.
    pub fn cell_volume(&self) -> f64 {
        self.dt() * self.dx()
    }

    pub fn num_points(&self) -> usize {
        self.nt * self.nx
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.length, self.duration, self.mass, self.eps];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(CfsError::InvalidParameter(format!(
                "box length, duration, mass and ε must be positive: {self:?}"
            )));
        }
        if self.nt == 0 || self.nx == 0 {
            return Err(CfsError::InvalidParameter("lattice must have at least one point".into()));
        }
        Ok(())
    }

    pub fn system_params(&self) -> SystemParams {
        SystemParams::new(self.dim(), 1).with_class_tol(BOX_CLASS_TOL)
    }
}

/// A point of the spacetime lattice, by integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub it: usize,
    pub ix: usize,
}

impl LatticePoint {
    pub fn new(it: usize, ix: usize) -> Self {
        Self { it, ix }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeBasis {
    pub j: Vec<i64>,
    pub k: Vec<f64>,
    pub omega: Vec<f64>,
    /// Unit-norm spinor amplitudes.
    pub u: Vec<[C<f64>; 2]>,
    pub g: Vec<f64>,
    pub length: f64,
    pub mass: f64,
}

pub fn build_modes(params: &BoxParams) -> ModeBasis {
    let kk = params.modes as i64;
    let m = params.mass;
    let mut basis = ModeBasis {
        j: Vec::new(),
        k: Vec::new(),
        omega: Vec::new(),
        u: Vec::new(),
        g: Vec::new(),
        length: params.length,
        mass: m,
    };
    for j in -kk..=kk {
        let k = 2.0 * PI * j as f64 / params.length;
        let w = (k * k + m * m).sqrt();
        let n = (k * k + (w + m) * (w + m)).sqrt();
        basis.j.push(j);
        basis.k.push(k);
        basis.omega.push(w);
        basis.u.push([cplx(k / n, 0.0), cplx(0.0, (w + m) / n)]);
        basis.g.push((-params.eps * w).exp());
    }
    basis
}

impl ModeBasis {
    pub fn dim(&self) -> usize {
        self.k.len()
    }

    /// Unregularized mode `j` at `(t, x)`.
    pub fn mode(&self, j: usize, t: f64, x: f64) -> [C<f64>; 2] {
        let phase = C::from_polar(1.0 / self.length.sqrt(), self.omega[j] * t + self.k[j] * x);
        [self.u[j][0] * phase, self.u[j][1] * phase]
    }

    /// Residual of `(k̸ − m) u_j` with `k⁰ = −ω_j`, `k¹ = k_j`.
    pub fn dirac_residual(&self, j: usize) -> f64 {
        let (w, k, m) = (self.omega[j], self.k[j], self.mass);
        let [a, b] = self.u[j];
        let i = cplx(0.0, 1.0);
        // k̸ = −ω σ₃ − i k σ₁
        let r0 = a * (-w) - i * k * b - a * m;
        let r1 = -i * k * a + b * w - b * m;
        r0.norm().max(r1.norm())
    }

    /// Gram matrix `(ψ_j | ψ_k) = ∫ ψ̄_j γ⁰ ψ_k dx` at time `t` by the
    /// rectangle rule on `samples` equidistant points, exact once
    /// `samples > 2K`.
    pub fn gram(&self, t: f64, samples: usize) -> CMat<f64> {
        let d = self.dim();
        let h = self.length / samples as f64;
        let mut gram = CMat::zeros(d, d);
        for s in 0..samples {
            let x = s as f64 * h;
            let vals: Vec<[C<f64>; 2]> = (0..d).map(|j| self.mode(j, t, x)).collect();
            for a in 0..d {
                for b in 0..d {
                    gram[(a, b)] += (vals[a][0].conj() * vals[b][0] + vals[a][1].conj() * vals[b][1]) * h;
                }
            }
        }
        gram
    }

    /// Diagonal unitary `e^{iω_j s}` implementing time translation by `s`.
    pub fn time_shift<T: Real>(&self, s: f64) -> CMat<T> {
        let d = self.dim();
        let mut u = CMat::zeros(d, d);
        for j in 0..d {
            let z = C::from_polar(1.0, self.omega[j] * s);
            u[(j, j)] = cplx(lit(z.re), lit(z.im));
        }
        u
    }
}

/// Box model with every lattice operator assembled.
pub struct BoxSystem<T: Real> {
    params: BoxParams,
    basis: ModeBasis,
    system: SystemParams,
    rho: DiscreteMeasure<T>,
}

impl<T: Real> BoxSystem<T> {
    pub fn build(params: BoxParams) -> Result<Self> {
        params.validate()?;
        let basis = build_modes(&params);
        let system = params.system_params();
        let points: Vec<LatticePoint> =
            (0..params.nt).flat_map(|it| (0..params.nx).map(move |ix| LatticePoint::new(it, ix))).collect();
        let atoms = points
            .par_iter()
            .map(|&p| {
                let (t, x) = point_coords(&params, p);
                correlation_at(&basis, &system, t, x)
            })
            .collect::<Result<Vec<_>>>()?;
        let cell = params.cell_volume();
        let weights = vec![cell; atoms.len()];
        let volume = cell * atoms.len() as f64;
        let rho = DiscreteMeasure::new(atoms, weights, volume)?;
        Ok(Self { params, basis, system, rho })
    }

    pub fn params(&self) -> &BoxParams {
        &self.params
    }

    pub fn basis(&self) -> &ModeBasis {
        &self.basis
    }

    pub fn system_params(&self) -> &SystemParams {
        &self.system
    }

    pub fn rho(&self) -> &DiscreteMeasure<T> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn index(&self, p: LatticePoint) -> usize {
        p.it * self.params.nx + p.ix
    }

    pub fn point(&self, index: usize) -> LatticePoint {
        LatticePoint::new(index / self.params.nx, index % self.params.nx)
    }

    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.params.num_points()).map(|i| self.point(i))
    }

    pub fn coords(&self, p: LatticePoint) -> (f64, f64) {
        point_coords(&self.params, p)
    }

    fn check(&self, p: LatticePoint) -> Result<()> {
        if p.it >= self.params.nt || p.ix >= self.params.nx {
            return Err(CfsError::InvalidParameter(format!(
                "lattice point {p:?} outside {}×{}",
                self.params.nt, self.params.nx
            )));
        }
        Ok(())
    }

    /// `F^ε(p)`.
    pub fn local_correlation(&self, p: LatticePoint) -> Result<&SpacetimeOperator<T>> {
        self.check(p)?;
        Ok(&self.rho.atoms()[self.index(p)])
    }

    /// `F^ε` at an arbitrary spacetime point, not necessarily on the lattice.
    pub fn correlation_at(&self, t: f64, x: f64) -> Result<SpacetimeOperator<T>> {
        correlation_at(&self.basis, &self.system, t, x)
    }

    /// Regularized evaluation map `E(p)` as a `2 × d` matrix.
    pub fn evaluation_map(&self, p: LatticePoint) -> Result<CMat<T>> {
        self.check(p)?;
        let (t, x) = self.coords(p);
        Ok(evaluation_map(&self.basis, t, x))
    }

    /// The vector `u_j = −ψ_{ε,j}(p)* γ⁰ χ`.
    pub fn wave_evaluation(&self, p: LatticePoint, chi: [C<T>; 2]) -> Result<CVec<T>> {
        let e = self.evaluation_map(p)?;
        let g0chi = CVec::from_vec(vec![chi[0], -chi[1]]);
        Ok(-(e.adjoint() * g0chi))
    }

    pub fn classify(&self, p: LatticePoint, q: LatticePoint) -> Result<CausalRelation> {
        classify_causal(self.local_correlation(p)?, self.local_correlation(q)?, &self.system)
    }

    /// Causal relation of every lattice point to `origin`, keyed by the
    /// displacement with `dx` folded into `[−L/2, L/2)`.
    pub fn causal_map(&self, origin: LatticePoint) -> Result<Vec<CausalMapRow>> {
        let x = self.local_correlation(origin)?;
        let (t0, x0) = self.coords(origin);
        let rows: Vec<Result<CausalMapRow>> = (0..self.params.num_points())
            .into_par_iter()
            .map(|i| {
                let q = self.point(i);
                let (t, xq) = self.coords(q);
                let y = &self.rho.atoms()[i];
                let rel = classify_causal(x, y, &self.system)?;
                let c = if x.rank() > 0 && y.rank() > 0 { to_f64(time_direction(x, y)?) } else { 0.0 };
                Ok(CausalMapRow {
                    dt: t - t0,
                    dx: fold(xq - x0, self.params.length),
                    kind: rel.kind,
                    direction: rel.direction,
                    time_direction: c,
                    margin_mod: rel.margin_mod,
                    margin_im: rel.margin_im,
                })
            })
            .collect();
        rows.into_iter().collect()
    }

    pub fn snapshot(&self, with_operators: bool) -> BoxSnapshot {
        let modes = (0..self.dim())
            .map(|j| ModeRow {
                j: self.basis.j[j],
                k: self.basis.k[j],
                omega: self.basis.omega[j],
                g: self.basis.g[j],
                u_re: [self.basis.u[j][0].re, self.basis.u[j][1].re],
                u_im: [self.basis.u[j][0].im, self.basis.u[j][1].im],
            })
            .collect();
        let operators = with_operators.then(|| self.rho.atoms().iter().map(|a| a.to_record()).collect());
        BoxSnapshot { params: self.params, cell_volume: self.params.cell_volume(), modes, operators }
    }
}

fn point_coords(params: &BoxParams, p: LatticePoint) -> (f64, f64) {
    (p.it as f64 * params.dt(), p.ix as f64 * params.dx())
}

/// Representative of `x` modulo `period` in `[−period/2, period/2)`.
pub fn fold(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    if y >= 0.5 * period {
        y - period
    } else {
        y
    }
}

fn evaluation_map<T: Real>(basis: &ModeBasis, t: f64, x: f64) -> CMat<T> {
    let d = basis.dim();
    let mut e = CMat::zeros(2, d);
    for j in 0..d {
        let v = basis.mode(j, t, x);
        for s in 0..2 {
            let z = v[s] * basis.g[j];
            e[(s, j)] = cplx(lit(z.re), lit(z.im));
        }
    }
    e
}

fn correlation_at<T: Real>(basis: &ModeBasis, system: &SystemParams, t: f64, x: f64) -> Result<SpacetimeOperator<T>> {
    let e = evaluation_map::<T>(basis, t, x);
    let mut middle = CMat::zeros(2, 2);
    middle[(0, 0)] = cplx(-T::one(), T::zero());
    middle[(1, 1)] = cplx(T::one(), T::zero());
    SpacetimeOperator::from_factorization(&e, &middle, system)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalMapRow {
    pub dt: f64,
    pub dx: f64,
    pub kind: CausalKind,
    pub direction: TimeDirection,
    /// Raw value of `𝒞(x, y)`.
    pub time_direction: f64,
    pub margin_mod: f64,
    pub margin_im: f64,
}

/// Summary of a causal map against the 1+1D light cone, over displacements
/// with `|Δt| < L/2` (before the periodic cone closes on itself).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapAgreement {
    /// Points with `|Δt| ≥ 2(|Δx| + 1/(mK))`.
    pub deep_timelike: usize,
    pub timelike_matched: usize,
    /// Deep-timelike points with `𝒞` of sign `sign(Δt)`.
    pub direction_matched: usize,
    /// Deep-timelike points with `𝒞` of sign `−sign(Δt)`.
    pub direction_reversed: usize,
    /// Points with `|Δx| ≥ 2(|Δt| + 1/(mK))`.
    pub deep_spacelike: usize,
    pub spacelike_matched: usize,
}

pub fn map_agreement(rows: &[CausalMapRow], params: &BoxParams) -> MapAgreement {
    let pad = 1.0 / (params.mass * params.modes.max(1) as f64);
    let mut out = MapAgreement::default();
    for r in rows {
        let (at, ax) = (r.dt.abs(), r.dx.abs());
        if at >= 0.5 * params.length {
            continue;
        }
        if at >= 2.0 * (ax + pad) {
            out.deep_timelike += 1;
            if r.kind == CausalKind::Timelike {
                out.timelike_matched += 1;
                let want = if r.dt > 0.0 { TimeDirection::Future } else { TimeDirection::Past };
                let flipped = if r.dt > 0.0 { TimeDirection::Past } else { TimeDirection::Future };
                if r.direction == want {
                    out.direction_matched += 1;
                } else if r.direction == flipped {
                    out.direction_reversed += 1;
                }
            }
        } else if ax >= 2.0 * (at + pad) {
            out.deep_spacelike += 1;
            if r.kind == CausalKind::Spacelike {
                out.spacelike_matched += 1;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub j: i64,
    pub k: f64,
    pub omega: f64,
    pub g: f64,
    pub u_re: [f64; 2],
    pub u_im: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSnapshot {
    pub params: BoxParams,
    pub cell_volume: f64,
    pub modes: Vec<ModeRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub operators: Option<Vec<OperatorRecord>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_range() {
        let l = 2.0 * PI;
        assert_eq!(fold(0.0, l), 0.0);
        assert!((fold(1.5 * PI, l) + 0.5 * PI).abs() < 1e-12);
        assert!((fold(PI, l) + PI).abs() < 1e-12);
        assert!((fold(-0.5, l) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_box_builds() {
        let p = BoxParams { modes: 4, nt: 3, nx: 4, ..BoxParams::default() };
        let sys = BoxSystem::<f64>::build(p).unwrap();
        assert_eq!(sys.dim(), 9);
        assert_eq!(sys.rho().len(), 12);
        assert_eq!(sys.point(sys.index(LatticePoint::new(2, 3))), LatticePoint::new(2, 3));
    }
}
