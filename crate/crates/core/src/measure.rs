//! Discrete measures on the space of spacetime operators, the causal action
//! and its minimization.
//!
//! Weights are optimized in `f64` regardless of the operator scalar type: the
//! weight problem is a small dense quadratic program and its accuracy is
//! limited by the Lagrangian matrix, not by the weight arithmetic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::linalg::{self, CMat};
use crate::operator::{
    classify_causal, clip_signature, lagrangian_from_spectrum, product_spectrum, time_direction, CausalKind,
    OperatorRecord, SpacetimeOperator, SystemParams,
};
use crate::scalar::{cplx, lit, to_f64, Real};

/// Relative threshold separating support atoms from phantom weights.
pub const SUPPORT_REL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct DiscreteMeasure<T: Real> {
    atoms: Vec<SpacetimeOperator<T>>,
    weights: Vec<f64>,
    volume: f64,
}

impl<T: Real> DiscreteMeasure<T> {
    pub fn new(atoms: Vec<SpacetimeOperator<T>>, weights: Vec<f64>, volume: f64) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(CfsError::InvalidParameter(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(CfsError::InvalidParameter(format!("volume must be positive, got {volume}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CfsError::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        // the empty measure stands for "no atoms yet" and carries no mass
        if !atoms.is_empty() && (sum - volume).abs() > 1e-9 * volume {
            return Err(CfsError::InvalidParameter(format!("weights sum to {sum}, expected volume {volume}")));
        }
        if let Some(first) = atoms.first() {
            if atoms.iter().any(|a| a.dim() != first.dim() || a.spin_dim() != first.spin_dim()) {
                return Err(CfsError::DimensionMismatch("atoms live on different spaces".into()));
            }
        }
        Ok(Self { atoms, weights, volume })
    }

    /// Equal weights summing to `volume`.
    pub fn uniform(atoms: Vec<SpacetimeOperator<T>>, volume: f64) -> Result<Self> {
        let n = atoms.len();
        let weights = if n == 0 { Vec::new() } else { vec![volume / n as f64; n] };
        if n == 0 {
            return Ok(Self { atoms, weights, volume });
        }
        Self::new(atoms, weights, volume)
    }

    pub fn atoms(&self) -> &[SpacetimeOperator<T>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn support_tol(&self) -> f64 {
        SUPPORT_REL_TOL * self.volume
    }

    /// Indices of atoms carrying weight above the support threshold.
    pub fn support(&self) -> Vec<usize> {
        let tol = self.support_tol();
        (0..self.len()).filter(|&i| self.weights[i] > tol).collect()
    }

    /// `Σ_a w_a tr(x_a)`.
    pub fn total_trace(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| w * to_f64(a.trace())).sum()
    }

    pub fn to_record(&self) -> MeasureRecord {
        MeasureRecord {
            atoms: self.atoms.iter().map(|a| a.to_record()).collect(),
            weights: self.weights.clone(),
            volume: self.volume,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub atoms: Vec<OperatorRecord>,
    pub weights: Vec<f64>,
    pub volume: f64,
}

impl MeasureRecord {
    pub fn to_measure<T: Real>(&self, params: &SystemParams) -> Result<DiscreteMeasure<T>> {
        let atoms = self.atoms.iter().map(|r| r.to_operator(params)).collect::<Result<Vec<_>>>()?;
        DiscreteMeasure::new(atoms, self.weights.clone(), self.volume)
    }
}

/// Volume, optional total trace and optional boundedness cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub volume: f64,
    #[serde(default)]
    pub trace_target: Option<f64>,
    #[serde(default)]
    pub bound_cap: Option<f64>,
}

impl ConstraintSet {
    pub fn volume(volume: f64) -> Self {
        Self { volume, trace_target: None, bound_cap: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0) || !self.volume.is_finite() {
            return Err(CfsError::InvalidParameter(format!("volume must be positive, got {}", self.volume)));
        }
        if let Some(c) = self.bound_cap {
            if !(c >= 0.0) {
                return Err(CfsError::InvalidParameter(format!("bound_cap must be nonnegative, got {c}")));
            }
        }
        Ok(())
    }
}

/// Pairwise Lagrangian and spectral-weight matrices of a list of atoms.
#[derive(Clone, Debug)]
pub struct PairTables {
    pub lagrangian: DMatrix<f64>,
    pub bound: DMatrix<f64>,
}

/// `L_ab = L(x_a, x_b)` and `B_ab = Σ_i |λ^{x_a x_b}_i|²`, assembled in
/// parallel over pairs with a fixed write order.
pub fn pair_tables<T: Real>(atoms: &[SpacetimeOperator<T>]) -> Result<PairTables> {
    let n = atoms.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let vals: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let s = product_spectrum(&atoms[a], &atoms[b])?;
            Ok((to_f64(lagrangian_from_spectrum(&s)), to_f64(s.spectral_weight())))
        })
        .collect();
    let mut lagrangian = DMatrix::zeros(n, n);
    let mut bound = DMatrix::zeros(n, n);
    for (&(a, b), v) in pairs.iter().zip(vals) {
        let (l, w) = v?;
        lagrangian[(a, b)] = l;
        lagrangian[(b, a)] = l;
        bound[(a, b)] = w;
        bound[(b, a)] = w;
    }
    Ok(PairTables { lagrangian, bound })
}

fn quad_form(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let mut s = 0.0;
    for a in 0..n {
        if w[a] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for b in 0..n {
            row += m[(a, b)] * w[b];
        }
        s += w[a] * row;
    }
    s
}

/// Causal action `S = Σ_{a,b} w_a w_b L(x_a, x_b)`.
pub fn action<T: Real>(rho: &DiscreteMeasure<T>) -> Result<f64> {
    Ok(quad_form(&pair_tables(rho.atoms())?.lagrangian, rho.weights()))
}

/// Euler–Lagrange diagnostics: `ℓ(x_a) = Σ_b w_b L(x_a, x_b)` and its spread
/// over the support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ELReport {
    pub ell: Vec<f64>,
    pub spread: f64,
    pub support: Vec<usize>,
}

pub fn el_report<T: Real>(rho: &DiscreteMeasure<T>) -> Result<ELReport> {
    el_from_matrix(&pair_tables(rho.atoms())?.lagrangian, rho.weights(), rho.support_tol())
}

fn el_from_matrix(l: &DMatrix<f64>, w: &[f64], support_tol: f64) -> Result<ELReport> {
    let n = w.len();
    let ell: Vec<f64> = (0..n).map(|a| (0..n).map(|b| l[(a, b)] * w[b]).sum::<f64>().max(0.0)).collect();
    let support: Vec<usize> = (0..n).filter(|&i| w[i] > support_tol).collect();
    if support.is_empty() {
        return Err(CfsError::EmptySupport);
    }
    Ok(ELReport { spread: relative_spread(support.iter().map(|&i| ell[i])), ell, support })
}

/// `(max − min)/mean`, or `max − min` when the mean vanishes.
fn relative_spread(values: impl Iterator<Item = f64>) -> f64 {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
        n += 1;
    }
    let mean = sum / n as f64;
    if mean.abs() > 1e-300 {
        (hi - lo) / mean.abs()
    } else {
        hi - lo
    }
}

/// One line of an optimizer trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub action: f64,
    pub spread: f64,
    pub support_size: usize,
}

/// Euclidean projection onto `{w ≥ 0, Σw = volume, Σ w_a t_a = τ}` (the last
/// constraint only when `trace` is given).
pub fn project_feasible(z: &[f64], volume: f64, trace: Option<(&[f64], f64)>) -> Result<Vec<f64>> {
    match trace {
        None => Ok(project_simplex(z, volume, None)),
        Some((t, tau)) => {
            let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let target = tau / volume;
            let slack = 1e-9 * (hi.abs() + lo.abs()).max(target.abs()).max(1e-300);
            if z.is_empty() || target < lo - slack || target > hi + slack {
                return Err(CfsError::InfeasibleConstraints(format!(
                    "trace target {tau} outside [{}, {}]",
                    lo * volume,
                    hi * volume
                )));
            }
            if hi - lo <= slack {
                // every atom has the same trace; the slice coincides with the simplex
                return Ok(project_simplex(z, volume, None));
            }
            // g(β) = Σ w(β)·t − τ is non-increasing in β
            let g = |beta: f64| -> f64 {
                let w = project_simplex(z, volume, Some((t, beta)));
                w.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() - tau
            };
            let mut a = -1.0;
            let mut b = 1.0;
            let mut expand = 0;
            while g(a) < 0.0 && expand < 200 {
                a *= 2.0;
                expand += 1;
            }
            while g(b) > 0.0 && expand < 400 {
                b *= 2.0;
                expand += 1;
            }
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if g(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a <= 1e-16 * (a.abs() + b.abs()).max(1e-300) {
                    break;
                }
            }
            let mut w = project_simplex(z, volume, Some((t, 0.5 * (a + b))));
            // remove the residual trace error along the cheapest pair direction
            let err: f64 = w.iter().zip(t).map(|(x, y)| x * y).sum::<f64>() - tau;
            correct_trace(&mut w, t, err);
            Ok(w)
        }
    }
}

/// Simplex projection of `z − β t` (sort-free bisection on the shift).
fn project_simplex(z: &[f64], volume: f64, shift: Option<(&[f64], f64)>) -> Vec<f64> {
    let y: Vec<f64> = match shift {
        None => z.to_vec(),
        Some((t, beta)) => z.iter().zip(t).map(|(a, b)| a - beta * b).collect(),
    };
    let mut sorted = y.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cum += v;
        let cand = (cum - volume) / (i + 1) as f64;
        if v - cand > 0.0 {
            theta = cand;
        }
    }
    let mut w: Vec<f64> = y.iter().map(|v| (v - theta).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for x in w.iter_mut() {
            *x *= volume / s;
        }
    }
    w
}

fn correct_trace(w: &mut [f64], t: &[f64], err: f64) {
    if err == 0.0 {
        return;
    }
    // move mass from the atom pushing the trace the wrong way to the one
    // pulling it back, keeping the volume fixed
    let n = w.len();
    let (mut src, mut dst) = (None, None);
    for i in 0..n {
        let sign_ok = if err > 0.0 { t[i] } else { -t[i] };
        if w[i] > 0.0 && src.is_none_or(|s: usize| sign_ok > if err > 0.0 { t[s] } else { -t[s] }) {
            src = Some(i);
        }
        if dst.is_none_or(|d: usize| sign_ok < if err > 0.0 { t[d] } else { -t[d] }) {
            dst = Some(i);
        }
    }
    if let (Some(s), Some(d)) = (src, dst) {
        let dt = t[s] - t[d];
        if dt.abs() > 0.0 {
            let mv = (err / dt).clamp(-w[d], w[s]);
            w[s] -= mv;
            w[d] += mv;
        }
    }
}

struct WeightProblem<'a> {
    l: &'a DMatrix<f64>,
    bound: Option<(&'a DMatrix<f64>, f64)>,
    volume: f64,
    trace: Option<(&'a [f64], f64)>,
}

impl WeightProblem<'_> {
    fn action(&self, w: &[f64]) -> f64 {
        quad_form(self.l, w)
    }

    fn cap_ok(&self, w: &[f64]) -> bool {
        match self.bound {
            None => true,
            Some((b, cap)) => quad_form(b, w) <= cap * (1.0 + 1e-12),
        }
    }

    fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        project_feasible(z, self.volume, self.trace)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = w.len();
        (0..n).map(|a| 2.0 * (0..n).map(|b| self.l[(a, b)] * w[b]).sum::<f64>()).collect()
    }

    /// Projected gradient with backtracking; only decreasing steps are taken.
    fn descend(&self, w0: Vec<f64>, iters: usize, log: &mut impl FnMut(&[f64])) -> Result<Vec<f64>> {
        let mut w = w0;
        let mut s = self.action(&w);
        let lnorm = self.l.iter().fold(0.0f64, |a, v| a.max(v.abs())) * w.len() as f64;
        let mut step = if lnorm > 0.0 { 0.5 / lnorm } else { 1.0 };
        for _ in 0..iters {
            let g = self.gradient(&w);
            let mut accepted = false;
            let mut trial_step = step;
            for _ in 0..60 {
                let z: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - trial_step * b).collect();
                let cand = self.project(&z)?;
                let sc = self.action(&cand);
                if sc < s && self.cap_ok(&cand) {
                    let moved: f64 = cand.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
                    w = cand;
                    s = sc;
                    accepted = moved > 0.0;
                    break;
                }
                trial_step *= 0.5;
            }
            if !accepted {
                break;
            }
            log(&w);
            step = (trial_step * 2.0).min(1e6);
        }
        Ok(w)
    }

    /// Stationary point of the problem restricted to `support` (equality
    /// constraints only). `None` if the KKT system is singular or the
    /// solution leaves the nonnegative orthant.
    fn kkt_on(&self, support: &[usize]) -> Option<Vec<f64>> {
        let k = support.len();
        if k == 0 {
            return None;
        }
        let extra = if self.trace.is_some() { 2 } else { 1 };
        let size = k + extra;
        let mut a = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        for (i, &si) in support.iter().enumerate() {
            for (j, &sj) in support.iter().enumerate() {
                a[(i, j)] = 2.0 * self.l[(si, sj)];
            }
            a[(i, k)] = 1.0;
            a[(k, i)] = 1.0;
            if let Some((t, _)) = self.trace {
                a[(i, k + 1)] = t[si];
                a[(k + 1, i)] = t[si];
            }
        }
        rhs[k] = self.volume;
        if let Some((_, tau)) = self.trace {
            rhs[k + 1] = tau;
        }
        let lu = a.lu();
        let sol = lu.solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let n = self.l.nrows();
        let mut w = vec![0.0; n];
        for (i, &si) in support.iter().enumerate() {
            if sol[i] < -1e-12 * self.volume {
                return None;
            }
            w[si] = sol[i].max(0.0);
        }
        // renormalize the clipped rounding
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return None;
        }
        for x in w.iter_mut() {
            *x *= self.volume / s;
        }
        if let Some((t, tau)) = self.trace {
            let tr: f64 = w.iter().zip(t).map(|(a, b)| a * b).sum();
            if (tr - tau).abs() > 1e-9 * tau.abs().max(self.volume) {
                return None;
            }
        }
        Some(w)
    }
}

/// Largest atom count for which every support pattern is tried exactly.
pub const EXACT_SUPPORT_LIMIT: usize = 12;

/// Weight optimization over the fixed atoms.
///
/// Projected gradient descent on the feasible polytope, followed by an exact
/// stationary-point solve on the final support. For at most
/// [`EXACT_SUPPORT_LIMIT`] atoms every support pattern is also solved and the
/// best feasible candidate kept. Each candidate replaces the current weights
/// only if it lowers the action, so the action never increases.
pub fn optimize_weights<T: Real>(
    rho: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    iters: usize,
) -> Result<(DiscreteMeasure<T>, Vec<TraceRecord>)> {
    let tables = pair_tables(rho.atoms())?;
    optimize_weights_with(rho, constraints, iters, &tables)
}

fn optimize_weights_with<T: Real>(
    rho: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    iters: usize,
    tables: &PairTables,
) -> Result<(DiscreteMeasure<T>, Vec<TraceRecord>)> {
    constraints.validate()?;
    if rho.is_empty() {
        return Ok((rho.clone(), Vec::new()));
    }
    let traces: Vec<f64> = rho.atoms().iter().map(|a| to_f64(a.trace())).collect();
    let (w, trace) = solve_weights(tables, &traces, rho.weights(), rho.volume(), constraints, iters)?;
    let out = DiscreteMeasure::new(rho.atoms.clone(), w, constraints.volume)?;
    Ok((out, trace))
}

/// The weight subproblem for a given Lagrangian matrix: minimizes `wᵀLw`
/// over `{w ≥ 0, Σw = volume}` starting from `w0`. Same algorithm as
/// [`optimize_weights`]; no trace or bound constraint.
pub fn optimize_weight_matrix(l: &DMatrix<f64>, w0: &[f64], volume: f64, iters: usize) -> Result<(Vec<f64>, Vec<TraceRecord>)> {
    let n = l.nrows();
    if l.ncols() != n || w0.len() != n {
        return Err(CfsError::DimensionMismatch(format!("{}×{} matrix with {} weights", n, l.ncols(), w0.len())));
    }
    if w0.iter().any(|&v| !(v >= 0.0)) || l.iter().any(|v| !v.is_finite()) {
        return Err(CfsError::InvalidParameter("weights must be nonnegative and L finite".into()));
    }
    let from: f64 = w0.iter().sum();
    if !(from > 0.0) {
        return Err(CfsError::EmptySupport);
    }
    let sym = (l + l.transpose()) * 0.5;
    let tables = PairTables { lagrangian: sym, bound: DMatrix::zeros(n, n) };
    solve_weights(&tables, &vec![0.0; n], w0, from, &ConstraintSet::volume(volume), iters)
}

fn solve_weights(
    tables: &PairTables,
    traces: &[f64],
    weights: &[f64],
    volume: f64,
    constraints: &ConstraintSet,
    iters: usize,
) -> Result<(Vec<f64>, Vec<TraceRecord>)> {
    constraints.validate()?;
    let problem = WeightProblem {
        l: &tables.lagrangian,
        bound: constraints.bound_cap.map(|c| (&tables.bound, c)),
        volume: constraints.volume,
        trace: constraints.trace_target.map(|tau| (traces, tau)),
    };
    let start = rescale_to_volume(weights, volume, constraints.volume);
    let start = match problem.trace {
        Some((_, tau)) => {
            let tr: f64 = start.iter().zip(traces).map(|(a, b)| a * b).sum();
            if (tr - tau).abs() > 1e-6 * tau.abs().max(1e-300) {
                problem.project(&start)?
            } else {
                start
            }
        }
        None => start,
    };
    if !problem.cap_ok(&start) {
        return Err(CfsError::InfeasibleConstraints(format!(
            "initial measure violates the bound cap ({} > {})",
            quad_form(&tables.bound, &start),
            constraints.bound_cap.unwrap_or(f64::INFINITY)
        )));
    }
    let support_tol = SUPPORT_REL_TOL * constraints.volume;
    let mut trace = Vec::new();
    let record = |w: &[f64], trace: &mut Vec<TraceRecord>| {
        let el = el_from_matrix(&tables.lagrangian, w, support_tol).ok();
        trace.push(TraceRecord {
            step: trace.len(),
            action: problem.action(w),
            spread: el.as_ref().map_or(f64::NAN, |e| e.spread),
            support_size: el.map_or(0, |e| e.support.len()),
        });
    };
    record(&start, &mut trace);
    let mut w = problem.descend(start, iters, &mut |w| record(w, &mut trace))?;
    let mut s = problem.action(&w);

    let consider = |cand: Vec<f64>, w: &mut Vec<f64>, s: &mut f64, trace: &mut Vec<TraceRecord>| {
        let sc = problem.action(&cand);
        if sc < *s && problem.cap_ok(&cand) {
            *w = cand;
            *s = sc;
            record(w, trace);
        }
    };
    // polish on the detected support, then let descent clean up, twice
    for _ in 0..3 {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > support_tol).collect();
        if let Some(cand) = problem.kkt_on(&support) {
            consider(cand, &mut w, &mut s, &mut trace);
        }
        let before = s;
        w = problem.descend(w, iters.min(200), &mut |w| record(w, &mut trace))?;
        s = problem.action(&w);
        if s >= before {
            break;
        }
    }
    if w.len() <= EXACT_SUPPORT_LIMIT {
        let n = w.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1u32 << n) {
            let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            if let Some(cand) = problem.kkt_on(&support) {
                if !problem.cap_ok(&cand) {
                    continue;
                }
                let sc = problem.action(&cand);
                if best.as_ref().is_none_or(|(b, _)| sc < *b) {
                    best = Some((sc, cand));
                }
            }
        }
        if let Some((_, cand)) = best {
            consider(cand, &mut w, &mut s, &mut trace);
        }
    }
    Ok((w, trace))
}

fn rescale_to_volume(w: &[f64], from: f64, to: f64) -> Vec<f64> {
    if (from - to).abs() <= 1e-15 * to {
        return w.to_vec();
    }
    w.iter().map(|x| x * to / from).collect()
}

/// Random selfadjoint step `x + s·H/√d`, clipped back to the signature bound.
/// With `keep_trace` the nontrivial eigenvalues are shifted to restore the
/// original trace; proposals whose signature breaks under the shift are
/// dropped.
fn propose<T: Real>(
    x: &SpacetimeOperator<T>,
    scale: f64,
    keep_trace: bool,
    params: &SystemParams,
    rng: &mut ChaCha8Rng,
) -> Option<SpacetimeOperator<T>> {
    let d = x.dim();
    let h: CMat<T> = linalg::random_hermitian(d, scale / (d as f64).sqrt(), rng);
    let moved = clip_signature(&(x.mat() + h), params).ok()?;
    if !keep_trace {
        return Some(moved);
    }
    let rank = moved.rank();
    if rank == 0 {
        return None;
    }
    let shift = (to_f64(x.trace()) - to_f64(moved.trace())) / rank as f64;
    let proj = moved.range_basis() * moved.range_basis().adjoint();
    let shifted = moved.mat() + proj * cplx(lit::<T>(shift), T::zero());
    let out = crate::operator::validate_operator(&shifted, params).ok()?;
    let target = to_f64(x.trace());
    if (to_f64(out.trace()) - target).abs() > 1e-9 * target.abs().max(to_f64(x.norm())) {
        return None;
    }
    Some(out)
}

/// Action change when atom `a` is replaced, from its new Lagrangian row.
fn action_delta(l: &DMatrix<f64>, w: &[f64], a: usize, row: &[f64]) -> f64 {
    let mut delta = 0.0;
    for b in 0..w.len() {
        if b == a {
            continue;
        }
        delta += 2.0 * w[a] * w[b] * (row[b] - l[(a, b)]);
    }
    delta + w[a] * w[a] * (row[a] - l[(a, a)])
}

fn lagrangian_row<T: Real>(x: &SpacetimeOperator<T>, atoms: &[SpacetimeOperator<T>], a: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lrow = Vec::with_capacity(atoms.len());
    let mut brow = Vec::with_capacity(atoms.len());
    for (b, y) in atoms.iter().enumerate() {
        let other = if b == a { x } else { y };
        let s = product_spectrum(x, other)?;
        lrow.push(to_f64(lagrangian_from_spectrum(&s)));
        brow.push(to_f64(s.spectral_weight()));
    }
    Ok((lrow, brow))
}

/// Extra acceptance test applied to each relocation proposal.
type Admissible<'a, T> = &'a dyn Fn(&SpacetimeOperator<T>) -> bool;

/// Offsets of the fixed background contribution to the action.
struct Background<'a, T: Real> {
    atoms: &'a [SpacetimeOperator<T>],
    weights: &'a [f64],
}

#[allow(clippy::too_many_arguments)]
fn relocate_inner<T: Real>(
    rho: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    params: &SystemParams,
    proposal_scale: f64,
    rng: &mut ChaCha8Rng,
    iters: usize,
    admissible: Option<Admissible<'_, T>>,
    background: Option<&Background<'_, T>>,
) -> Result<(DiscreteMeasure<T>, Vec<f64>)> {
    let mut atoms = rho.atoms().to_vec();
    let w = rho.weights().to_vec();
    let mut tables = pair_tables(&atoms)?;
    let mut bg_row: Vec<f64> = match background {
        Some(bg) => atoms.iter().map(|x| background_sum(x, bg)).collect::<Result<_>>()?,
        None => vec![0.0; atoms.len()],
    };
    let mut s = quad_form(&tables.lagrangian, &w) + 2.0 * w.iter().zip(&bg_row).map(|(a, b)| a * b).sum::<f64>();
    let mut history = vec![s];
    if proposal_scale == 0.0 || atoms.is_empty() {
        return Ok((rho.clone(), history));
    }
    let mut cap_value = quad_form(&tables.bound, &w);
    let support = rho.support();
    if support.is_empty() {
        return Ok((rho.clone(), history));
    }
    let keep_trace = constraints.trace_target.is_some();
    for _ in 0..iters {
        let a = support[rng.random_range(0..support.len())];
        let Some(cand) = propose(&atoms[a], proposal_scale, keep_trace, params, rng) else {
            continue;
        };
        if let Some(ok) = admissible {
            if !ok(&cand) {
                continue;
            }
        }
        let (lrow, brow) = lagrangian_row(&cand, &atoms, a)?;
        let mut delta = action_delta(&tables.lagrangian, &w, a, &lrow);
        let new_bg = match background {
            Some(bg) => background_sum(&cand, bg)?,
            None => 0.0,
        };
        delta += 2.0 * w[a] * (new_bg - bg_row[a]);
        if !(delta < 0.0) {
            continue;
        }
        let cap_delta = action_delta(&tables.bound, &w, a, &brow);
        if let Some(cap) = constraints.bound_cap {
            if cap_value + cap_delta > cap * (1.0 + 1e-12) {
                continue;
            }
        }
        for b in 0..atoms.len() {
            tables.lagrangian[(a, b)] = lrow[b];
            tables.lagrangian[(b, a)] = lrow[b];
            tables.bound[(a, b)] = brow[b];
            tables.bound[(b, a)] = brow[b];
        }
        atoms[a] = cand;
        bg_row[a] = new_bg;
        cap_value += cap_delta;
        s += delta;
        history.push(s);
    }
    Ok((DiscreteMeasure { atoms, weights: w, volume: rho.volume() }, history))
}

/// `Σ_c v_c L(x, y_c)` over a fixed background measure.
fn background_sum<T: Real>(x: &SpacetimeOperator<T>, bg: &Background<'_, T>) -> Result<f64> {
    let mut s = 0.0;
    for (y, v) in bg.atoms.iter().zip(bg.weights) {
        if *v > 0.0 {
            s += v * to_f64(lagrangian_from_spectrum(&product_spectrum(x, y)?));
        }
    }
    Ok(s)
}

/// Stochastic local search over atom positions. Returns the new measure and
/// the action after every accepted move (first entry: initial action).
pub fn relocate_atoms<T: Real>(
    rho: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    params: &SystemParams,
    proposal_scale: f64,
    seed: u64,
    iters: usize,
) -> Result<(DiscreteMeasure<T>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    relocate_inner(rho, constraints, params, proposal_scale, &mut rng, iters, None, None)
}

/// Alternation plan for [`minimize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub rounds: usize,
    pub weight_iters: usize,
    pub relocate_iters: usize,
    pub proposal_scale: f64,
    /// Multiplier applied to the proposal scale after each round.
    pub scale_decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { rounds: 12, weight_iters: 2000, relocate_iters: 400, proposal_scale: 0.3, scale_decay: 0.8 }
    }
}

/// Alternates weight optimization and atom relocation, ending with a weight
/// step. The trace holds one record per accepted step.
pub fn minimize<T: Real>(
    rho0: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    params: &SystemParams,
    schedule: &Schedule,
    seed: u64,
) -> Result<(DiscreteMeasure<T>, ELReport, Vec<TraceRecord>)> {
    minimize_inner(rho0, constraints, params, schedule, seed, None, None)
}

fn minimize_inner<T: Real>(
    rho0: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    params: &SystemParams,
    schedule: &Schedule,
    seed: u64,
    admissible: Option<Admissible<'_, T>>,
    background: Option<&Background<'_, T>>,
) -> Result<(DiscreteMeasure<T>, ELReport, Vec<TraceRecord>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log: Vec<TraceRecord> = Vec::new();
    let push = |log: &mut Vec<TraceRecord>, mut recs: Vec<TraceRecord>, skip_first: bool| {
        if skip_first && !log.is_empty() && !recs.is_empty() {
            recs.remove(0);
        }
        for mut r in recs {
            r.step = log.len();
            log.push(r);
        }
    };
    let (mut rho, recs) = weights_step(rho0, constraints, schedule.weight_iters, background)?;
    push(&mut log, recs, false);
    let mut scale = schedule.proposal_scale;
    for _ in 0..schedule.rounds {
        let (moved, hist) =
            relocate_inner(&rho, constraints, params, scale, &mut rng, schedule.relocate_iters, admissible, background)?;
        if hist.len() > 1 {
            let el = el_report(&moved)?;
            for s in hist.iter().skip(1) {
                log.push(TraceRecord { step: log.len(), action: *s, spread: el.spread, support_size: el.support.len() });
            }
        }
        rho = moved;
        let (next, recs) = weights_step(&rho, constraints, schedule.weight_iters, background)?;
        push(&mut log, recs, true);
        rho = next;
        scale *= schedule.scale_decay;
    }
    let el = el_report(&rho)?;
    Ok((rho, el, log))
}

/// Weight step, optionally against a fixed background measure whose cross
/// terms enter the linear part of the objective.
fn weights_step<T: Real>(
    rho: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    iters: usize,
    background: Option<&Background<'_, T>>,
) -> Result<(DiscreteMeasure<T>, Vec<TraceRecord>)> {
    match background {
        None => optimize_weights(rho, constraints, iters),
        Some(bg) => {
            // the fixed background adds the linear term 2 w·c to the objective
            let tables = pair_tables(rho.atoms())?;
            let c: Vec<f64> = rho.atoms().iter().map(|x| background_sum(x, bg)).collect::<Result<_>>()?;
            let w = rho.weights().to_vec();
            let n = w.len();
            let obj = |w: &[f64]| quad_form(&tables.lagrangian, w) + 2.0 * w.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            let traces: Vec<f64> = rho.atoms().iter().map(|a| to_f64(a.trace())).collect();
            let trace_c = constraints.trace_target.map(|tau| (traces.as_slice(), tau));
            let mut w = w;
            let mut s = obj(&w);
            let mut recs = vec![TraceRecord { step: 0, action: s, spread: f64::NAN, support_size: n }];
            let lnorm = tables.lagrangian.iter().fold(0.0f64, |a, v| a.max(v.abs())) * n as f64;
            let mut step = if lnorm > 0.0 { 0.5 / lnorm } else { 1.0 };
            for _ in 0..iters {
                let g: Vec<f64> =
                    (0..n).map(|a| 2.0 * (0..n).map(|b| tables.lagrangian[(a, b)] * w[b]).sum::<f64>() + 2.0 * c[a]).collect();
                let mut moved = false;
                let mut ts = step;
                for _ in 0..60 {
                    let z: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - ts * b).collect();
                    let cand = project_feasible(&z, constraints.volume, trace_c)?;
                    let sc = obj(&cand);
                    let cap_ok = constraints.bound_cap.is_none_or(|cap| quad_form(&tables.bound, &cand) <= cap * (1.0 + 1e-12));
                    if sc < s && cap_ok {
                        moved = cand.iter().zip(&w).any(|(a, b)| a != b);
                        w = cand;
                        s = sc;
                        recs.push(TraceRecord { step: recs.len(), action: s, spread: f64::NAN, support_size: 0 });
                        break;
                    }
                    ts *= 0.5;
                }
                if !moved {
                    break;
                }
                step = (ts * 2.0).min(1e6);
            }
            let out = DiscreteMeasure::new(rho.atoms.clone(), w, constraints.volume)?;
            let tol = out.support_tol();
            let support = out.support().len();
            let spread = el_from_matrix(&tables.lagrangian, out.weights(), tol).map_or(f64::NAN, |e| e.spread);
            for r in recs.iter_mut() {
                r.spread = spread;
                r.support_size = support;
            }
            Ok((out, recs))
        }
    }
}

/// Membership in the future of a fixed past measure: for every support atom
/// `y` of `past`, the pair is spacelike or else `𝒞(x, y) > 0`.
pub fn future_membership<T: Real>(x: &SpacetimeOperator<T>, past: &DiscreteMeasure<T>, params: &SystemParams) -> Result<bool> {
    for &i in &past.support() {
        let y = &past.atoms()[i];
        let rel = match classify_causal(x, y, params) {
            Ok(r) => r,
            // x and y annihilate each other: no causal relation to satisfy
            Err(CfsError::DegenerateScale(_)) => continue,
            Err(e) => return Err(e),
        };
        if rel.kind == CausalKind::Spacelike {
            continue;
        }
        let c = time_direction(x, y)?;
        let zero = x.norm() * y.norm() * lit(params.class_tol);
        if !(c > zero) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Minimizes the action of `past + future` over the future part only.
///
/// The past atoms and weights are held fixed and enter through their cross
/// terms with the future and their constant self-action. Relocation proposals
/// leaving the future of `past` are rejected. Returns the final future
/// measure, the total action trace and the total final action.
pub fn constrained_minimize_future<T: Real>(
    past: &DiscreteMeasure<T>,
    future0: &DiscreteMeasure<T>,
    constraints: &ConstraintSet,
    params: &SystemParams,
    schedule: &Schedule,
    seed: u64,
) -> Result<(DiscreteMeasure<T>, Vec<TraceRecord>, f64)> {
    let past_action = action(past)?;
    if future0.is_empty() {
        return Ok((future0.clone(), vec![TraceRecord { step: 0, action: past_action, spread: 0.0, support_size: 0 }], past_action));
    }
    for x in future0.atoms() {
        if !future_membership(x, past, params)? {
            return Err(CfsError::InfeasibleStart("an initial future atom is not in the future of the past measure".into()));
        }
    }
    let bg = Background { atoms: past.atoms(), weights: past.weights() };
    let admissible = |x: &SpacetimeOperator<T>| future_membership(x, past, params).unwrap_or(false);
    let (future, _, mut log) = minimize_inner(future0, constraints, params, schedule, seed, Some(&admissible), Some(&bg))?;
    for r in log.iter_mut() {
        r.action += past_action;
    }
    let total = past_action
        + quad_form(&pair_tables(future.atoms())?.lagrangian, future.weights())
        + 2.0
            * future
                .atoms()
                .iter()
                .zip(future.weights())
                .map(|(x, w)| background_sum(x, &bg).map(|s| w * s))
                .sum::<Result<f64>>()?;
    Ok((future, log, total))
}

/// Seed, size and shape of the pinned reference instance.
pub const REFERENCE_SEED: u64 = 42;
pub const REFERENCE_DIM: usize = 6;
pub const REFERENCE_ATOMS: usize = 20;

/// Pinned reference instance: `d = 6`, `n = 1`, 20 atoms, unit volume.
///
/// Atoms are Gaussian selfadjoint matrices clipped to signature at most
/// `(1, 1)`; draws whose trace is below `0.1‖x‖` are redrawn and the rest are
/// scaled to unit trace, so the trace constraint (`trace_target = 1`) is a
/// per-atom normalization.
pub fn reference_instance<T: Real>() -> (DiscreteMeasure<T>, ConstraintSet, SystemParams) {
    let params = SystemParams::new(REFERENCE_DIM, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
    let mut atoms = Vec::with_capacity(REFERENCE_ATOMS);
    while atoms.len() < REFERENCE_ATOMS {
        let h: CMat<T> = linalg::random_hermitian(REFERENCE_DIM, 1.0, &mut rng);
        let x = clip_signature(&h, &params).expect("clipping always yields a valid operator");
        let tr = to_f64(x.trace());
        if tr < 0.1 * to_f64(x.norm()) {
            continue;
        }
        atoms.push(x.scaled(lit(1.0 / tr)));
    }
    let rho = DiscreteMeasure::uniform(atoms, 1.0).expect("uniform weights are valid");
    let constraints = ConstraintSet { volume: 1.0, trace_target: Some(1.0), bound_cap: None };
    (rho, constraints, params)
}
