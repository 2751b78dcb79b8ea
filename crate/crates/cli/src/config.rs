use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use cfs_core::dirac_box::{BoxParams, LatticePoint};
use cfs_core::eth::PROB_TOL;
use cfs_core::future::{log_sweep, PdpSpec};
use cfs_core::kernel::KernelParams;
use cfs_core::measure::{ConstraintSet, Schedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CausalMap,
    Minimize,
    CommutatorSweep,
    LightconeProbe,
    ConeScan,
    EthBranch,
    PdpVerify,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::CausalMap => "causal-map",
            Scenario::Minimize => "minimize",
            Scenario::CommutatorSweep => "commutator-sweep",
            Scenario::LightconeProbe => "lightcone-probe",
            Scenario::ConeScan => "cone-scan",
            Scenario::EthBranch => "eth-branch",
            Scenario::PdpVerify => "pdp-verify",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Scenario::Minimize | Scenario::EthBranch)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// ε values: an explicit list, or a log-spaced range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Option<Vec<f64>>,
    pub eps_min: Option<f64>,
    pub eps_max: Option<f64>,
    pub count: Option<usize>,
}

impl SweepConfig {
    pub fn resolve(&self, default: &[f64]) -> Result<Vec<f64>, String> {
        let list = match (&self.eps, self.eps_min, self.eps_max) {
            (Some(list), None, None) => list.clone(),
            (None, Some(lo), Some(hi)) => {
                let n = self.count.unwrap_or(5);
                if !(lo > 0.0 && hi > lo) || n < 2 {
                    return Err(format!("sweep range needs 0 < eps_min < eps_max and count ≥ 2, got {lo}, {hi}, {n}"));
                }
                log_sweep(lo, hi, n)
            }
            (None, None, None) => default.to_vec(),
            _ => return Err("give either sweep.eps or both sweep.eps_min and sweep.eps_max".into()),
        };
        if list.is_empty() || list.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(format!("sweep values must be positive, got {list:?}"));
        }
        Ok(list)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Grid points per axis.
    pub n: usize,
    pub extent: f64,
    /// Points with `|ξ²| < margin` are skipped.
    pub margin: f64,
    /// `ξ⁰` of the rays probed for the classification flip.
    pub rays: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { n: 40, extent: 4.0, margin: 0.1, rays: vec![1.0, 2.0, 3.0] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalMapConfig {
    /// Defaults to `(0, nx/2)`.
    pub origin: Option<LatticePoint>,
    /// Also write the operators of every lattice point.
    pub operators: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instance {
    Reference,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub instance: Instance,
    /// Size of a random instance.
    pub hilbert_dim: usize,
    pub spin_dim: usize,
    pub atoms: usize,
    /// Overrides the instance's constraints.
    pub constraints: Option<ConstraintSet>,
    pub schedule: Schedule,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            instance: Instance::Reference,
            hilbert_dim: 4,
            spin_dim: 1,
            atoms: 10,
            constraints: None,
            schedule: Schedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorConfig {
    /// Minimum cone margin of probe supports.
    pub margin: f64,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        Self { margin: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Spinors as `[re, im]` pairs.
    pub chi: [[f64; 2]; 2],
    pub chitilde: [[f64; 2]; 2],
    /// Kernel points `[ξ⁰, r]` on and inside the light cone.
    pub kernel_on_cone: Vec<[f64; 2]>,
    pub kernel_inside: Vec<[f64; 2]>,
    pub kernel_eps: Vec<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            chi: [[1.0, 0.0], [0.0, 0.0]],
            chitilde: [[1.0, 0.0], [0.0, 0.0]],
            kernel_on_cone: vec![[1.0, 1.0], [2.0, 2.0]],
            kernel_inside: vec![[2.0, 1.0], [3.0, 1.5]],
            kernel_eps: vec![0.08, 0.04, 0.02, 0.01],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiltrationConfig {
    pub depth: usize,
    pub site_dim: usize,
    /// Diagonal of the site density matrix; the initial state is its
    /// tensor power.
    pub site_state: Vec<f64>,
    pub runs: usize,
    pub prob_tol: f64,
}

impl Default for FiltrationConfig {
    fn default() -> Self {
        Self { depth: 3, site_dim: 2, site_state: vec![0.3, 0.7], runs: 10_000, prob_tol: PROB_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default, rename = "box")]
    pub box_params: BoxParams,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub causal_map: CausalMapConfig,
    #[serde(default)]
    pub minimize: MinimizeConfig,
    #[serde(default)]
    pub commutator: CommutatorConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub filtration: FiltrationConfig,
    /// Also run the strict-inclusion probe on the box in `pdp-verify`.
    #[serde(default)]
    pub pdp: Option<PdpSpec>,
}

impl FromStr for ExperimentConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        toml::from_str(s).map_err(|e| e.to_string())
    }
}

impl ExperimentConfig {
    /// Fixes the scenario and seed; the CLI scenario must agree with the
    /// config's when both are given.
    pub fn resolve(mut self, scenario: Scenario, env_seed: Option<&str>) -> Result<Self, String> {
        if let Some(s) = self.scenario {
            if s != scenario {
                return Err(format!("config is for scenario {s}, not {scenario}"));
            }
        }
        self.scenario = Some(scenario);
        if let Some(raw) = env_seed {
            let seed = raw.trim().parse::<u64>().map_err(|_| format!("CFS_SEED is not an unsigned integer: {raw:?}"))?;
            self.seed = Some(seed);
        }
        if scenario.is_stochastic() && self.seed.is_none() {
            return Err(format!("scenario {scenario} needs a seed (config `seed` or CFS_SEED)"));
        }
        Ok(self)
    }

    /// SHA-256 of the resolved configuration, without the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_forms() {
        assert_eq!(SweepConfig::default().resolve(&[0.1]).unwrap(), vec![0.1]);
        let s = SweepConfig { eps_min: Some(0.02), eps_max: Some(0.2), count: Some(3), ..Default::default() };
        let v = s.resolve(&[]).unwrap();
        assert_eq!(v.len(), 3);
        assert!((v[1] - (0.02f64 * 0.2).sqrt()).abs() < 1e-12);
        let both = SweepConfig { eps: Some(vec![0.1]), eps_min: Some(0.01), ..Default::default() };
        assert!(both.resolve(&[]).is_err());
        assert!(SweepConfig { eps: Some(vec![]), ..Default::default() }.resolve(&[]).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a: ExperimentConfig = "seed = 1\nout = \"a\"".parse().unwrap();
        let b: ExperimentConfig = "seed = 1\nout = \"b\"".parse().unwrap();
        let c: ExperimentConfig = "seed = 2".parse().unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn resolve_rules() {
        let cfg: ExperimentConfig = "".parse().unwrap();
        assert!(cfg.clone().resolve(Scenario::CausalMap, None).is_ok());
        assert!(cfg.clone().resolve(Scenario::Minimize, None).is_err());
        assert_eq!(cfg.clone().resolve(Scenario::Minimize, Some("9")).unwrap().seed, Some(9));
        assert!(cfg.resolve(Scenario::Minimize, Some("-1")).is_err());
        let named: ExperimentConfig = "scenario = \"cone-scan\"".parse().unwrap();
        assert!(named.resolve(Scenario::CausalMap, None).is_err());
    }
}
