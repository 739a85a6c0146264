//! Subcommands. Each produces one table and a JSON summary.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use fastslow::ldp::{domain_estimate, mgf_predict, path_rate, rate_quadratic, RateMode};
use fastslow::montecarlo::{
    averaging_error, ensemble_paths, llt_check, mgf_probe, moderate_probe, InitialDensity, ModerateConfig,
};
use fastslow::rng::CounterRng;
use fastslow::standardpairs::{iterate_family, PairBounds, PairConfig, StandardFamily, StandardPair, TorusPotential};
use fastslow::statistics::{averaged_field, green_kubo, sde_reference, solve_averaged, variance_profile};
use fastslow::system::{simulate, simulate_dithered, slope_recursion};
use fastslow::transfer::{eigentriple_for, spectral_radius_complex, uni_estimate, ScanOptions};
use fastslow::{AveragedTables, FastSlowSystem, OperatorSpec, Potential, RateTable, RateValue, TrajectoryState};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::expr::{parse_expression, ExprNode};
use crate::output::{Artifacts, Cell, Table};
use crate::CliError;

/// Largest trajectory `simulate` will hold in memory.
const MAX_SIMULATE_STEPS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Spectrum,
    Average,
    Variance,
    RateTable,
    PathRate,
    Domain,
    Pairs,
    Mgf,
    Llt,
    LdpProbe,
    DolgopyatScan,
    Uni,
}

impl Command {
    pub const ALL: [Command; 13] = [
        Command::Simulate,
        Command::Spectrum,
        Command::Average,
        Command::Variance,
        Command::RateTable,
        Command::PathRate,
        Command::Domain,
        Command::Pairs,
        Command::Mgf,
        Command::Llt,
        Command::LdpProbe,
        Command::DolgopyatScan,
        Command::Uni,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Spectrum => "spectrum",
            Command::Average => "average",
            Command::Variance => "variance",
            Command::RateTable => "rate-table",
            Command::PathRate => "path-rate",
            Command::Domain => "domain",
            Command::Pairs => "pairs",
            Command::Mgf => "mgf",
            Command::Llt => "llt",
            Command::LdpProbe => "ldp-probe",
            Command::DolgopyatScan => "dolgopyat-scan",
            Command::Uni => "uni",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown subcommand `{s}`")))
    }
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub artifacts: Artifacts,
    pub table: Table,
    pub manifest: Value,
}

/// Run `command` and write `<out>/<command>.csv` plus `<out>/<command>.json`.
pub fn run(command: Command, cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let started = Instant::now();
    let sys = cfg.build_system()?;
    let (table, summary) = match command {
        Command::Simulate => cmd_simulate(&sys, cfg)?,
        Command::Spectrum => cmd_spectrum(&sys, cfg)?,
        Command::Average => cmd_average(&sys, cfg)?,
        Command::Variance => cmd_variance(&sys, cfg)?,
        Command::RateTable => cmd_rate_table(&sys, cfg)?,
        Command::PathRate => cmd_path_rate(&sys, cfg)?,
        Command::Domain => cmd_domain(&sys, cfg)?,
        Command::Pairs => cmd_pairs(&sys, cfg)?,
        Command::Mgf => cmd_mgf(&sys, cfg)?,
        Command::Llt => cmd_llt(&sys, cfg)?,
        Command::LdpProbe => cmd_ldp_probe(&sys, cfg)?,
        Command::DolgopyatScan => cmd_dolgopyat(&sys, cfg)?,
        Command::Uni => cmd_uni(&sys, cfg)?,
    };
    let artifacts = Artifacts::in_dir(out_dir, command.name());
    let manifest = json!({
        "command": command.name(),
        "config": cfg,
        "seed": cfg.seed,
        "versions": {
            "fastslow": fastslow::VERSION,
            "fastslow-cli": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "csv": artifacts.csv.file_name().map(|s| s.to_string_lossy().into_owned()),
        "rows": table.rows.len(),
        "summary": summary,
    });
    artifacts.write(&table, &manifest)?;
    Ok(RunOutcome { artifacts, table, manifest })
}

/// Re-run the command recorded in a manifest.
pub fn replay(manifest: &Value, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let command: Command = manifest
        .get("command")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Config("manifest has no `command`".into()))?
        .parse()?;
    let cfg: RunConfig = serde_json::from_value(manifest.get("config").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::Config(format!("manifest config: {e}")))?;
    run(command, &cfg, out_dir)
}

type Output = Result<(Table, Value), CliError>;

fn float(v: f64) -> Cell {
    Cell::Float(v)
}

fn rate_cell(v: RateValue) -> Cell {
    match v {
        RateValue::Finite(z) => float(z),
        RateValue::Infinite => float(f64::INFINITY),
    }
}

fn tables(sys: &FastSlowSystem, cfg: &RunConfig) -> Result<AveragedTables, CliError> {
    Ok(AveragedTables::build(sys, cfg.discretization)?)
}

fn thetas_or_default(list: &Option<Vec<f64>>, theta0: f64) -> Vec<f64> {
    list.clone().unwrap_or_else(|| vec![theta0])
}

fn cmd_simulate(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.simulate;
    let steps = match p.steps {
        Some(n) => n,
        None if sys.epsilon > 0.0 => (cfg.t_end / sys.epsilon).ceil() as usize,
        None => return Err(CliError::Config("simulate.steps is required when epsilon = 0".into())),
    };
    if steps > MAX_SIMULATE_STEPS {
        return Err(CliError::Resource(format!("{steps} steps exceed the cap of {MAX_SIMULATE_STEPS}")));
    }
    if p.stride == 0 {
        return Err(CliError::Config("simulate.stride must be positive".into()));
    }
    let s0 = TrajectoryState::new(sys, p.x0, cfg.theta0);
    let orbit = if p.dithered {
        simulate_dithered(sys, &s0, steps, &mut CounterRng::new(cfg.seed, 0))?
    } else {
        simulate(sys, &s0, steps)?
    };
    let slope = slope_recursion(sys, &orbit);
    let d = sys.dim();
    let mut header = vec!["k".to_string(), "t".into(), "x".into(), "theta".into()];
    header.extend((1..d).map(|i| format!("z{i}")));
    let mut table = Table::new(header);
    for (k, s) in orbit.iter().enumerate().step_by(p.stride) {
        let mut row = vec![k.into(), float(k as f64 * sys.epsilon), float(s.x), float(s.z[0])];
        row.extend(s.z[1..].iter().map(|&v| float(v)));
        table.push(row);
    }
    let last = orbit.last().map(|s| s.z[0]).unwrap_or(cfg.theta0);
    Ok((table, json!({ "steps": steps, "final_theta": last, "cone_ok": slope.cone_ok, "cone_bound": slope.bound })))
}

fn cmd_spectrum(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.spectrum;
    if p.thetas == 0 {
        return Err(CliError::Config("spectrum.thetas must be positive".into()));
    }
    let d = sys.dim();
    let potential = match &p.sigma {
        Some(s) if s.len() != d => return Err(CliError::Config(format!("spectrum.sigma needs {d} entries"))),
        Some(s) => Potential::RealLinear(s.clone()),
        None => Potential::Zero,
    };
    let mut header: Vec<String> =
        ["theta", "lambda_re", "lambda_im", "chi", "gap", "near_degenerate", "h_integral"].map(String::from).into();
    header.extend((0..d).map(|i| format!("abar{i}")));
    header.extend((0..d).map(|i| format!("sigma2_{i}{i}")));
    let mut table = Table::new(header);
    let mut worst_chi = 0.0f64;
    for j in 0..p.thetas {
        let theta = j as f64 / p.thetas as f64;
        let spec = OperatorSpec { theta, potential: potential.clone(), discretization: cfg.discretization };
        let e = eigentriple_for(sys, &spec)?;
        let abar = averaged_field(sys, theta, cfg.discretization)?;
        let s2 = green_kubo(sys, theta, 1e-12, cfg.discretization)?;
        worst_chi = worst_chi.max(e.chi.re.abs());
        let mut row = vec![
            float(theta),
            float(e.lambda.re),
            float(e.lambda.im),
            float(e.chi.re),
            float(e.gap),
            e.near_degenerate.into(),
            float(e.h_integral().re),
        ];
        row.extend(abar.iter().map(|&v| float(v)));
        row.extend((0..d).map(|i| float(s2[i][i])));
        table.push(row);
    }
    Ok((table, json!({ "max_abs_chi": worst_chi })))
}

fn cmd_average(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.average;
    let tab = tables(sys, cfg)?;
    let path = solve_averaged(&tab, cfg.theta0, cfg.t_end, p.dt)?;
    let d = sys.dim();
    let mut header = vec!["t".to_string(), "theta_bar".into()];
    header.extend((1..d).map(|i| format!("zeta_bar{i}")));
    let ensemble = if p.paths > 0 {
        Some(ensemble_paths(sys, cfg.theta0, &InitialDensity::Uniform, cfg.t_end, p.paths, cfg.seed, p.dt)?)
    } else {
        None
    };
    if ensemble.is_some() {
        header.push("theta_mean".into());
    }
    let mut table = Table::new(header);
    for (i, &t) in path.t_grid.iter().enumerate() {
        let mut row = vec![float(t), float(path.theta_bar[i])];
        row.extend(path.zeta_bar[i].iter().map(|&v| float(v)));
        if let Some(ens) = &ensemble {
            let mean = ens.paths.iter().map(|q| q[i][0]).sum::<f64>() / ens.paths.len() as f64;
            row.push(float(mean));
        }
        table.push(row);
    }
    let mut summary = json!({ "error_estimate": path.error_estimate });
    if let Some(ens) = &ensemble {
        let report = averaging_error(ens, &path)?;
        summary["median_sup_deviation"] = json!(report.median());
        summary["quantiles"] = json!(report.quantiles);
    }
    Ok((table, summary))
}

fn cmd_variance(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.variance;
    let tab = tables(sys, cfg)?;
    let prof = variance_profile(&tab, cfg.theta0, cfg.t_end, p.dt)?;
    let mut table = Table::new(["t", "var_t"]);
    for (&t, &v) in prof.t_grid.iter().zip(&prof.var_t) {
        table.push(vec![float(t), float(v)]);
    }
    let mut summary = json!({ "final_variance": prof.final_variance() });
    if p.sde_paths > 1 {
        let samples = sde_reference(&tab, cfg.theta0, cfg.t_end, p.dt, p.sde_paths, cfg.seed)?;
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        summary["sde_variance"] = json!(var);
        summary["sde_ratio"] = json!(var / prof.final_variance());
    }
    Ok((table, summary))
}

fn cmd_rate_table(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.rate_table;
    if !(p.b_step > 0.0 && p.b_max >= p.b_min) {
        return Err(CliError::Config("rate_table needs b_step > 0 and b_max >= b_min".into()));
    }
    let count = ((p.b_max - p.b_min) / p.b_step + 1e-9).floor() as usize + 1;
    // Snap grid points that should be zero but carry rounding residue.
    let b_grid: Vec<f64> = (0..count)
        .map(|i| p.b_min + i as f64 * p.b_step)
        .map(|b| if b.abs() < 1e-9 * p.b_step { 0.0 } else { b })
        .collect();
    let thetas = thetas_or_default(&p.thetas, cfg.theta0);
    let rt = RateTable::build(sys, &thetas, &b_grid, p.direction.clone(), cfg.discretization)?;
    let mut table = Table::new(["theta", "b", "z", "sigma_star", "converged"]);
    for (i, &th) in rt.theta_grid.iter().enumerate() {
        for (j, &b) in rt.b_grid.iter().enumerate() {
            table.push(vec![
                float(th),
                float(b),
                rate_cell(rt.z_values[i][j]),
                float(rt.sigma_star[i][j]),
                rt.converged[i][j].into(),
            ]);
        }
    }
    Ok((table, json!({ "direction": rt.direction })))
}

fn cmd_path_rate(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.path_rate;
    let tab = tables(sys, cfg)?;
    let quadratic = rate_quadratic(&tab, &p.path, cfg.theta0, p.quad_dt)?;
    let mut table = Table::new(["mode", "rate", "quadratic_rate"]);
    for &mode in &p.modes {
        let r = path_rate(sys, &tab, &p.path, cfg.theta0, p.quad_dt, mode, cfg.discretization)?;
        let name = match mode {
            RateMode::Frozen => "frozen",
            RateMode::Moving => "moving",
        };
        table.push(vec![name.into(), rate_cell(r), float(quadratic)]);
    }
    Ok((table, json!({ "horizon": p.path.horizon() })))
}

fn cmd_domain(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let est = domain_estimate(sys, cfg.theta0, cfg.domain.p_max)?;
    let d = sys.dim();
    let mut header = vec!["word".to_string(), "period".into(), "x_first".into()];
    header.extend((0..d).map(|i| format!("average{i}")));
    let mut table = Table::new(header);
    for o in &est.orbits {
        let word: String = o.word.iter().map(|c| char::from(b'0' + c)).collect();
        let mut row = vec![word.into(), o.word.len().into(), float(o.points[0])];
        row.extend(o.average.iter().map(|&v| float(v)));
        table.push(row);
    }
    Ok((table, json!({ "hull": est.hull, "skipped": est.skipped })))
}

fn cmd_pairs(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.pairs;
    let parse = |name: &str, text: &str| -> Result<ExprNode, CliError> {
        parse_expression(text).map_err(|e| CliError::Config(format!("pairs.{name}: {e}")))
    };
    let re = parse("phi_re", &p.phi_re)?;
    let im = parse("phi_im", &p.phi_im)?;
    let complex = im != ExprNode::Num(0.0);
    let phi = TorusPotential::new(move |x, t| Complex64::new(re.eval(x, t), im.eval(x, t)));
    let bounds = PairBounds::for_system(sys, std::slice::from_ref(&phi), complex, &PairConfig::default());
    let length = p.length.unwrap_or(bounds.delta);
    let pair = StandardPair::flat(p.a, p.a + length, cfg.theta0)?;
    let mut fam = StandardFamily::single(pair, bounds);
    fam.validate(sys.epsilon)?;
    let probe = |x: f64, _t: f64| Complex64::from_polar(1.0, 2.0 * PI * x);
    let mut table = Table::new(["step", "pairs", "weight_re", "weight_im", "total_variation", "probe_re", "probe_im"]);
    let mut record = |k: usize, fam: &StandardFamily| {
        let w = fam.total_weight();
        let m = fastslow::standardpairs::family_measure(fam, &probe);
        table.push(vec![
            k.into(),
            fam.len().into(),
            float(w.re),
            float(w.im),
            float(fam.total_variation()),
            float(m.re),
            float(m.im),
        ]);
    };
    record(0, &fam);
    for k in 1..=p.steps {
        fam = iterate_family(&fam, std::slice::from_ref(&phi), 1, sys)?;
        record(k, &fam);
    }
    Ok((table, json!({ "delta": bounds.delta, "complex": complex, "final_pairs": fam.len() })))
}

fn cmd_mgf(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.mgf;
    let tab = tables(sys, cfg)?;
    let d = sys.dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("sigma{i}")).collect();
    header.extend(["empirical", "predicted", "effective_sample_size", "low_ess"].map(String::from));
    let mut table = Table::new(header);
    for sigma in &p.sigmas {
        if sigma.len() != d {
            return Err(CliError::Config(format!("mgf.sigmas entries need {d} components")));
        }
        let r = mgf_probe(sys, &tab, cfg.theta0, sigma, cfg.t_end, p.n_paths, cfg.seed, cfg.discretization)?;
        let mut row: Vec<Cell> = sigma.iter().map(|&s| float(s)).collect();
        row.extend([float(r.empirical), float(r.predicted), float(r.effective_sample_size), r.low_ess.into()]);
        table.push(row);
    }
    let predictions: Vec<f64> = p
        .sigmas
        .iter()
        .map(|s| {
            let s = s.clone();
            mgf_predict(sys, &tab, &move |_| s.clone(), cfg.theta0, cfg.t_end, cfg.discretization)
        })
        .collect::<Result<_, _>>()?;
    Ok((table, json!({ "chi_integral": predictions })))
}

fn cmd_llt(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.llt;
    let tab = tables(sys, cfg)?;
    let r = llt_check(sys, &tab, cfg.theta0, cfg.t_end, p.shift, p.bins, p.n_paths, cfg.seed)?;
    let mut table = Table::new(["bin_center", "empirical_density", "predicted_density"]);
    for i in 0..r.bin_centers.len() {
        table.push(vec![float(r.bin_centers[i]), float(r.empirical_density[i]), float(r.predicted_density[i])]);
    }
    let summary = json!({
        "ks": r.ks,
        "mean": r.mean,
        "sample_variance": r.sample_variance,
        "target_variance": r.target_variance,
        "variance_ratio": r.variance_ratio,
        "window_count": r.window_count,
        "window_expected": r.window_expected,
        "insufficient_samples": r.insufficient_samples,
    });
    Ok((table, summary))
}

fn cmd_ldp_probe(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.ldp_probe;
    let tab = tables(sys, cfg)?;
    let mc = ModerateConfig {
        c_event: p.c_event,
        beta: p.beta,
        eps_list: p.eps_list.clone(),
        t_end: cfg.t_end,
        n_paths: p.n_paths,
        seed: cfg.seed,
        grid_intervals: p.grid_intervals,
    };
    let rows = moderate_probe(sys, &tab, cfg.theta0, &mc)?;
    let mut table = Table::new([
        "epsilon",
        "n_paths",
        "hits",
        "p_hat",
        "ci_low",
        "ci_high",
        "scaled_rate",
        "scaled_rate_lower",
        "target",
    ]);
    for r in &rows {
        table.push(vec![
            float(r.epsilon),
            r.n_paths.into(),
            r.hits.into(),
            float(r.p_hat),
            float(r.ci_low),
            float(r.ci_high),
            float(r.scaled_rate.unwrap_or(f64::NAN)),
            float(r.scaled_rate_lower),
            float(r.target),
        ]);
    }
    Ok((table, json!({ "beta": p.beta, "c_event": p.c_event })))
}

fn cmd_dolgopyat(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.dolgopyat_scan;
    let opts = ScanOptions { seeds: p.seeds, growth_constant: p.growth_constant, rng_seed: cfg.seed };
    let mut table = Table::new(["varsigma", "n", "radius"]);
    let mut worst = 0.0f64;
    for &vs in &p.varsigmas {
        let n = p.n.unwrap_or_else(|| ((p.growth_constant * vs.abs().ln()).ceil() as usize).max(40));
        let r = spectral_radius_complex(sys, cfg.theta0, vs, n, cfg.discretization, &opts)?;
        worst = worst.max(r);
        table.push(vec![float(vs), n.into(), float(r)]);
    }
    Ok((table, json!({ "max_radius": worst })))
}

fn cmd_uni(sys: &FastSlowSystem, cfg: &RunConfig) -> Output {
    let p = &cfg.uni;
    let mut table = Table::new(["theta", "n", "uni"]);
    for th in thetas_or_default(&p.thetas, cfg.theta0) {
        table.push(vec![float(th), p.n.into(), float(uni_estimate(sys, th, p.n)?)]);
    }
    Ok((table, Value::Null))
}
