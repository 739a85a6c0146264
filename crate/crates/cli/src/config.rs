//! Run configuration: JSON with every key checked.

use std::path::Path;

use fastslow::ldp::RateMode;
use fastslow::system::{evaluator, SystemParts};
use fastslow::{Discretization, FastSlowSystem, PathSpec, Preset};
use serde::{Deserialize, Serialize};

use crate::expr::{parse_expression, ExprNode, Var};
use crate::CliError;

/// The system: a preset name, or expressions for `f`, `ω` and extra observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Lift of the fast map in `x` and `theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<String>,
    /// Passive observables `A[1..]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observables: Vec<String>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { preset: Some(Preset::DoublingCos.name().into()), f: None, omega: None, observables: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    pub x0: f64,
    /// Number of map iterations; `T/ε` when absent.
    pub steps: Option<usize>,
    pub dithered: bool,
    /// Write every `stride`-th state.
    pub stride: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self { x0: 0.1234567, steps: None, dithered: true, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumParams {
    /// Uniform θ grid size.
    pub thetas: usize,
    /// Tilt `σ` of the real-linear potential; zero potential when absent.
    pub sigma: Option<Vec<f64>>,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self { thetas: 16, sigma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AverageParams {
    pub dt: f64,
    /// Monte Carlo paths to compare against; none when zero.
    pub paths: usize,
}

impl Default for AverageParams {
    fn default() -> Self {
        Self { dt: 1e-3, paths: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceParams {
    pub dt: f64,
    /// Euler–Maruyama reference paths; none when zero.
    pub sde_paths: usize,
}

impl Default for VarianceParams {
    fn default() -> Self {
        Self { dt: 1e-3, sde_paths: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateTableParams {
    /// θ values; `[theta0]` when absent.
    pub thetas: Option<Vec<f64>>,
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    /// Ray direction for `d > 1`.
    pub direction: Option<Vec<f64>>,
}

impl Default for RateTableParams {
    fn default() -> Self {
        Self { thetas: None, b_min: -0.2, b_max: 0.2, b_step: 0.05, direction: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathRateParams {
    pub path: PathSpec,
    pub quad_dt: f64,
    pub modes: Vec<RateMode>,
}

impl Default for PathRateParams {
    fn default() -> Self {
        Self {
            path: PathSpec { breakpoints: vec![0.0, 1.0], values: vec![vec![0.0], vec![0.1]] },
            quad_dt: 0.01,
            modes: vec![RateMode::Frozen, RateMode::Moving],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainParams {
    pub p_max: usize,
}

impl Default for DomainParams {
    fn default() -> Self {
        Self { p_max: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsParams {
    /// Left end of the initial pair.
    pub a: f64,
    /// Initial length; the largest admissible when absent.
    pub length: Option<f64>,
    /// Real and imaginary parts of the potential, in `x` and `theta`.
    pub phi_re: String,
    pub phi_im: String,
    pub steps: usize,
}

impl Default for PairsParams {
    fn default() -> Self {
        Self { a: 0.1, length: None, phi_re: "0".into(), phi_im: "0".into(), steps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgfParams {
    pub sigmas: Vec<Vec<f64>>,
    pub n_paths: usize,
}

impl Default for MgfParams {
    fn default() -> Self {
        Self { sigmas: vec![vec![0.1]], n_paths: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LltParams {
    /// Window shift in units of `√ε`.
    pub shift: f64,
    pub bins: usize,
    pub n_paths: usize,
}

impl Default for LltParams {
    fn default() -> Self {
        Self { shift: 0.0, bins: 60, n_paths: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdpProbeParams {
    pub c_event: f64,
    pub beta: f64,
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    pub grid_intervals: usize,
}

impl Default for LdpProbeParams {
    fn default() -> Self {
        Self { c_event: 1.0, beta: 0.4, eps_list: vec![1e-2, 4e-3, 1e-3], n_paths: 10_000, grid_intervals: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DolgopyatParams {
    pub varsigmas: Vec<f64>,
    /// Iterations; `⌈A ln ς⌉` (at least 40) when absent.
    pub n: Option<usize>,
    pub growth_constant: f64,
    pub seeds: usize,
}

impl Default for DolgopyatParams {
    fn default() -> Self {
        Self { varsigmas: vec![5.0, 10.0, 20.0, 50.0], n: None, growth_constant: 8.0, seeds: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniParams {
    /// θ values; `[theta0]` when absent.
    pub thetas: Option<Vec<f64>>,
    pub n: usize,
}

impl Default for UniParams {
    fn default() -> Self {
        Self { thetas: None, n: 10 }
    }
}

/// Everything a run reads. Missing keys take defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub epsilon: f64,
    pub theta0: f64,
    pub t_end: f64,
    pub discretization: Discretization,
    pub seed: u64,
    pub simulate: SimulateParams,
    pub spectrum: SpectrumParams,
    pub average: AverageParams,
    pub variance: VarianceParams,
    pub rate_table: RateTableParams,
    pub path_rate: PathRateParams,
    pub domain: DomainParams,
    pub pairs: PairsParams,
    pub mgf: MgfParams,
    pub llt: LltParams,
    pub ldp_probe: LdpProbeParams,
    pub dolgopyat_scan: DolgopyatParams,
    pub uni: UniParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            epsilon: 1e-3,
            theta0: 0.5,
            t_end: 1.0,
            discretization: Discretization::default(),
            seed: 0,
            simulate: SimulateParams::default(),
            spectrum: SpectrumParams::default(),
            average: AverageParams::default(),
            variance: VarianceParams::default(),
            rate_table: RateTableParams::default(),
            path_rate: PathRateParams::default(),
            domain: DomainParams::default(),
            pairs: PairsParams::default(),
            mgf: MgfParams::default(),
            llt: LltParams::default(),
            ldp_probe: LdpProbeParams::default(),
            dolgopyat_scan: DolgopyatParams::default(),
            uni: UniParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks that do not need the system.
    pub fn validate(&self) -> Result<(), CliError> {
        let finite = [("epsilon", self.epsilon), ("theta0", self.theta0), ("t_end", self.t_end)];
        for (k, v) in finite {
            if !v.is_finite() {
                return Err(CliError::Config(format!("{k} must be finite")));
            }
        }
        if self.epsilon < 0.0 || self.t_end < 0.0 {
            return Err(CliError::Config("epsilon and t_end must be nonnegative".into()));
        }
        self.discretization.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build_system(&self) -> Result<FastSlowSystem, CliError> {
        let sys = build_system(&self.system, self.epsilon)?;
        Ok(sys)
    }
}

fn parse_field(name: &str, text: &str) -> Result<ExprNode, CliError> {
    parse_expression(text).map_err(|e| CliError::Config(format!("system.{name}: {e}")))
}

fn closure(e: ExprNode) -> fastslow::system::Evaluator {
    evaluator(move |x, t| e.eval(x, t))
}

/// Certify and build the configured system.
pub fn build_system(cfg: &SystemConfig, epsilon: f64) -> Result<FastSlowSystem, CliError> {
    let passive: Vec<ExprNode> = cfg
        .observables
        .iter()
        .enumerate()
        .map(|(i, s)| parse_field(&format!("observables[{i}]"), s))
        .collect::<Result<_, _>>()?;
    let passive: Vec<_> = passive.into_iter().map(closure).collect();
    let sys = match (&cfg.preset, &cfg.f, &cfg.omega) {
        (Some(name), None, None) => {
            let preset: Preset = name.parse().map_err(|_| {
                let known: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                CliError::Config(format!("unknown preset `{name}`; known: {}", known.join(", ")))
            })?;
            let sys = preset.build(epsilon)?;
            if passive.is_empty() {
                sys
            } else {
                sys.with_passive(passive)
            }
        }
        (None, Some(f), Some(omega)) => {
            let f = parse_field("f", f)?;
            let w = parse_field("omega", omega)?;
            let fx = f.differentiate(Var::X);
            let parts = SystemParts {
                name: "custom".into(),
                df_dtheta: closure(f.differentiate(Var::Theta)),
                d2f_dx2: closure(fx.differentiate(Var::X)),
                d2f_dxdtheta: closure(fx.differentiate(Var::Theta)),
                df_dx: closure(fx),
                f: closure(f),
                domega_dx: closure(w.differentiate(Var::X)),
                domega_dtheta: closure(w.differentiate(Var::Theta)),
                omega: closure(w),
                passive,
            };
            FastSlowSystem::new(parts, epsilon)?
        }
        _ => return Err(CliError::Config("system needs either `preset` or both `f` and `omega`, not a mix".into())),
    };
    Ok(sys)
}
