use cfs_core::dirac_box::{map_agreement, LatticePoint};
use cfs_core::eth::{branching_simulate, pdp_verify, CoFiltration, QuantumState};
use cfs_core::future::{cone_probe_sweep, commutator_sweep, log_sweep, pdp_probe, pinned_commutator_probes, pinned_cone_probe, SweepTable};
use cfs_core::kernel::{cone_deformation, cone_grid, lightcone_scan, singularity_probe, SpacetimeVector};
use cfs_core::measure::{action, minimize, reference_instance, ConstraintSet};
use cfs_core::operator::{random_operator, SystemParams};
use cfs_core::{BoxModel, CfsError, Measure};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Instance, Scenario};
use crate::output::{num, Output};

/// Failure of a run, split by exit code.
#[derive(Debug)]
pub enum RunError {
    Validation(String),
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(m) => write!(f, "validation error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<CfsError> for RunError {
    fn from(e: CfsError) -> Self {
        use CfsError::*;
        match e {
            InvalidParameter(_) | NotSelfadjoint { .. } | SignatureViolation { .. } | EmptySupport | InfeasibleConstraints(_)
            | InfeasibleStart(_) | NotASubalgebra(_) | ProbeNotInFuture(_) | DimensionMismatch(_) | CausalCycle
            | Axiom2Violation(..) => RunError::Validation(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Validation(format!("cannot write output: {e}"))
    }
}

type Run = Result<(), RunError>;

fn bad(msg: impl Into<String>) -> RunError {
    RunError::Validation(msg.into())
}

fn point(p: LatticePoint) -> [String; 2] {
    [p.it.to_string(), p.ix.to_string()]
}

pub fn run(cfg: &ExperimentConfig, out: &Output) -> Run {
    match cfg.scenario.expect("resolved config has a scenario") {
        Scenario::CausalMap => causal_map(cfg, out),
        Scenario::Minimize => minimize_run(cfg, out),
        Scenario::CommutatorSweep => commutator(cfg, out),
        Scenario::LightconeProbe => lightcone(cfg, out),
        Scenario::ConeScan => cone_scan(cfg, out),
        Scenario::EthBranch => eth_branch(cfg, out),
        Scenario::PdpVerify => pdp(cfg, out),
    }
}

fn causal_map(cfg: &ExperimentConfig, out: &Output) -> Run {
    let params = cfg.box_params;
    params.validate()?;
    let origin = cfg.causal_map.origin.unwrap_or(LatticePoint::new(0, params.nx / 2));
    if origin.it >= params.nt || origin.ix >= params.nx {
        return Err(bad(format!("origin {origin:?} outside the {}×{} lattice", params.nt, params.nx)));
    }
    let sys = BoxModel::build(params)?;
    let rows = sys.causal_map(origin)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.dt),
                num(r.dx),
                format!("{:?}", r.kind),
                serde_json::to_value(r.direction).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                num(r.time_direction),
                num(r.margin_mod),
                num(r.margin_im),
            ]
        })
        .collect();
    out.csv("causal_map.csv", &["dt", "dx", "kind", "direction", "time_direction", "margin_mod", "margin_im"], &table)?;
    let agr = map_agreement(&rows, &params);
    out.json("agreement.json", &agr)?;
    out.json("box.json", &sys.snapshot(cfg.causal_map.operators))?;
    out.summary(&format!(
        "timelike {}/{}, spacelike {}/{}, direction reversed {}/{}",
        agr.timelike_matched, agr.deep_timelike, agr.spacelike_matched, agr.deep_spacelike, agr.direction_reversed, agr.deep_timelike
    ));
    Ok(())
}

fn minimize_run(cfg: &ExperimentConfig, out: &Output) -> Run {
    let mc = &cfg.minimize;
    let seed = cfg.seed.expect("stochastic scenarios carry a seed");
    let (rho0, mut constraints, params): (Measure, ConstraintSet, SystemParams) = match mc.instance {
        Instance::Reference => reference_instance(),
        Instance::Random => {
            let params = SystemParams::new(mc.hilbert_dim, mc.spin_dim);
            params.validate()?;
            if mc.atoms == 0 {
                return Err(bad("a random instance needs at least one atom"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let atoms = (0..mc.atoms).map(|_| random_operator(&params, &mut rng)).collect();
            (Measure::uniform(atoms, 1.0)?, ConstraintSet::volume(1.0), params)
        }
    };
    if let Some(c) = mc.constraints {
        constraints = c;
    }
    constraints.validate()?;
    let s0 = action(&rho0)?;
    let (rho, el, trace) = minimize(&rho0, &constraints, &params, &mc.schedule, seed)?;
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|t| vec![t.step.to_string(), num(t.action), num(t.spread), t.support_size.to_string()])
        .collect();
    out.csv("trace.csv", &["step", "action", "spread", "support_size"], &rows)?;
    let rows: Vec<Vec<String>> = (0..rho.len())
        .map(|a| vec![a.to_string(), num(rho.weights()[a]), num(el.ell[a]), el.support.contains(&a).to_string()])
        .collect();
    out.csv("euler_lagrange.csv", &["atom", "weight", "ell", "in_support"], &rows)?;
    out.json("measure.json", &rho.to_record())?;
    out.summary(&format!(
        "action {} -> {}, spread {}, support {}/{}",
        num(s0),
        num(action(&rho)?),
        num(el.spread),
        el.support.len(),
        rho.len()
    ));
    Ok(())
}

fn sweep_tables(out: &Output, prefix: &str, table: &SweepTable) -> Run {
    let rows: Vec<Vec<String>> =
        table.rows.iter().map(|r| vec![num(r.eps), r.probe_id.clone(), num(r.value), num(r.aux)]).collect();
    out.csv(&format!("{prefix}.csv"), &["eps", "probe_id", "value", "aux"], &rows)?;
    let rows: Vec<Vec<String>> = table
        .fits
        .iter()
        .map(|f| {
            let (e, c, r2) = f.fit.map_or((String::new(), String::new(), String::new()), |p| (num(p.exponent), num(p.ci95), num(p.r2)));
            vec![f.probe_id.clone(), e, c, r2, num(f.ratio), num(f.variation)]
        })
        .collect();
    out.csv(&format!("{prefix}_fits.csv"), &["probe_id", "exponent", "ci95", "r2", "ratio", "variation"], &rows)?;
    for f in &table.fits {
        out.summary(&format!(
            "{} ratio {} variation {} exponent {}",
            f.probe_id,
            num(f.ratio),
            num(f.variation),
            f.fit.map_or("n/a".into(), |p| num(p.exponent))
        ));
    }
    Ok(())
}

fn box_sweep(cfg: &ExperimentConfig) -> Result<Vec<f64>, RunError> {
    cfg.sweep.resolve(&log_sweep(0.02, 0.2, 5)).map_err(bad)
}

fn commutator(cfg: &ExperimentConfig, out: &Output) -> Run {
    let params = cfg.box_params;
    params.validate()?;
    let eps = box_sweep(cfg)?;
    let (base, probes) = pinned_commutator_probes(&params);
    let table = commutator_sweep(base, &probes, &eps, &params, cfg.commutator.margin)?;
    sweep_tables(out, "commutator", &table)
}

fn spinor(v: [[f64; 2]; 2]) -> [Complex64; 2] {
    [Complex64::new(v[0][0], v[0][1]), Complex64::new(v[1][0], v[1][1])]
}

fn vectors(pts: &[[f64; 2]]) -> Vec<SpacetimeVector> {
    pts.iter().map(|p| SpacetimeVector::new(p[0], p[1])).collect()
}

fn lightcone(cfg: &ExperimentConfig, out: &Output) -> Run {
    let params = cfg.box_params;
    params.validate()?;
    cfg.kernel.validate()?;
    let eps = box_sweep(cfg)?;
    let (base, inside, oncone) = pinned_cone_probe(&params);
    let pc = &cfg.probe;
    let table = cone_probe_sweep(base, &inside, &oncone, spinor(pc.chi), spinor(pc.chitilde), &eps, &params)?;
    sweep_tables(out, "cone_probe", &table)?;

    let (rows, fits) = singularity_probe(&vectors(&pc.kernel_on_cone), &vectors(&pc.kernel_inside), &pc.kernel_eps, &cfg.kernel)?;
    let table: Vec<Vec<String>> =
        rows.iter().map(|r| vec![r.group.clone(), num(r.xi0), num(r.r), num(r.eps), num(r.norm)]).collect();
    out.csv("kernel_norms.csv", &["group", "xi0", "r", "eps", "norm"], &table)?;
    let table: Vec<Vec<String>> =
        fits.iter().map(|(g, f)| vec![g.clone(), num(f.exponent), num(f.ci95), num(f.r2)]).collect();
    out.csv("kernel_fits.csv", &["group", "exponent", "ci95", "r2"], &table)?;
    for (g, f) in &fits {
        out.summary(&format!("kernel {g} exponent {}", num(f.exponent)));
    }
    Ok(())
}

fn cone_scan(cfg: &ExperimentConfig, out: &Output) -> Run {
    cfg.kernel.validate()?;
    let sc = &cfg.scan;
    if sc.n == 0 || !(sc.extent > 0.0) || !(sc.margin >= 0.0) {
        return Err(bad(format!("invalid scan grid {sc:?}")));
    }
    let eps = cfg.sweep.resolve(&[0.08, 0.04, 0.02, 0.01]).map_err(bad)?;
    let grid = cone_grid(sc.n, sc.extent, sc.margin);
    let (rows, agreement) = lightcone_scan(&grid, &eps, &cfg.kernel)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.xi0), num(r.r), num(r.eps), format!("{:?}", r.kind), num(r.margin_mod), num(r.margin_im)])
        .collect();
    out.csv("scan.csv", &["xi0", "r", "eps", "kind", "margin_mod", "margin_im"], &table)?;
    let table: Vec<Vec<String>> = agreement
        .iter()
        .map(|a| vec![num(a.eps), a.matched.to_string(), a.total.to_string(), num(a.fraction())])
        .collect();
    out.csv("agreement.csv", &["eps", "matched", "total", "fraction"], &table)?;
    for a in &agreement {
        out.summary(&format!("eps {} agreement {}/{} = {}", num(a.eps), a.matched, a.total, num(a.fraction())));
    }
    if !sc.rays.is_empty() {
        let (flips, fits) = cone_deformation(&sc.rays, &eps, &cfg.kernel)?;
        let table: Vec<Vec<String>> =
            flips.iter().map(|f| vec![num(f.xi0), num(f.eps), num(f.r_flip), num(f.offset)]).collect();
        out.csv("flips.csv", &["xi0", "eps", "r_flip", "offset"], &table)?;
        let table: Vec<Vec<String>> = fits
            .iter()
            .map(|(xi0, f)| match f {
                Some(p) => vec![num(*xi0), num(p.exponent), num(p.ci95), num(p.r2)],
                None => vec![num(*xi0), String::new(), String::new(), String::new()],
            })
            .collect();
        out.csv("flip_fits.csv", &["xi0", "alpha", "ci95", "r2"], &table)?;
        for (xi0, f) in &fits {
            out.summary(&format!("ray {} alpha {}", num(*xi0), f.map_or("n/a".into(), |p| num(p.exponent))));
        }
    }
    Ok(())
}

fn filtration(cfg: &ExperimentConfig) -> Result<CoFiltration, RunError> {
    Ok(CoFiltration::new(cfg.filtration.depth, cfg.filtration.site_dim)?)
}

fn eth_branch(cfg: &ExperimentConfig, out: &Output) -> Run {
    let fc = &cfg.filtration;
    let f = filtration(cfg)?;
    let site = QuantumState::<f64>::diagonal(&fc.site_state)?;
    let omega = f.product_state(&site)?;
    let seed = cfg.seed.expect("stochastic scenarios carry a seed");
    let rec = branching_simulate(&f, &omega, fc.runs, seed, fc.prob_tol)?;
    let rows: Vec<Vec<String>> = rec
        .leaves
        .iter()
        .map(|l| {
            let path: Vec<String> = l.path.iter().map(|s| format!("{}:{}", s.t, s.outcome)).collect();
            vec![path.join(" "), num(l.prob_exact), l.freq_empirical.map(num).unwrap_or_default()]
        })
        .collect();
    out.csv("leaves.csv", &["path", "prob_exact", "freq_empirical"], &rows)?;
    out.json("branches.json", &rec)?;
    out.summary(&format!("{} leaves, total probability {}", rec.leaves.len(), num(rec.total_probability())));
    Ok(())
}

fn pdp(cfg: &ExperimentConfig, out: &Output) -> Run {
    let f = filtration(cfg)?;
    let rep = pdp_verify(&f)?;
    let rows: Vec<Vec<String>> = rep
        .relative
        .iter()
        .map(|r| vec![r.t.to_string(), r.t_later.to_string(), r.dimension.to_string(), r.abelian.to_string()])
        .collect();
    out.csv("relative_commutants.csv", &["t", "t_later", "dimension", "abelian"], &rows)?;
    out.json("pdp_verify.json", &rep)?;
    out.summary(&format!("dims {:?}, {} violations", rep.dims, rep.violations.len()));

    if let Some(spec) = &cfg.pdp {
        let params = cfg.box_params;
        params.validate()?;
        let eps = box_sweep(cfg)?;
        let report = pdp_probe(spec, &eps, &params)?;
        let mut columns: Vec<String> = vec!["eps".into(), "dim_p".into(), "dim_ptilde".into(), "inclusion_residual".into()];
        for w in &report.witnesses {
            let [a, b] = point(*w);
            columns.push(format!("witness_{a}_{b}"));
        }
        for d in &report.diamond {
            let [a, b] = point(*d);
            columns.push(format!("diamond_{a}_{b}"));
        }
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![
                    num(r.eps),
                    r.algebra_p.dimension.to_string(),
                    r.algebra_ptilde.dimension.to_string(),
                    num(r.inclusion_residual),
                ];
                v.extend(r.witness_distance.iter().map(|x| num(*x)));
                v.extend(r.diamond_commutator.iter().map(|x| num(*x)));
                v
            })
            .collect();
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        out.csv("pdp_probe.csv", &cols, &rows)?;
        out.json("pdp_probe.json", &report)?;
        out.summary(&format!(
            "witness min {} (floor {}), diamond shrinks {}",
            report.witness_min().map_or("n/a".into(), num),
            num(report.floor),
            report.diamond_shrinks()
        ));
    }
    Ok(())
}
