//! Experiment pipelines behind the command-line subcommands.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde_json::{json, Value};

use crate::affine::fk_solve;
use crate::calculus::{check_catalogue, heat_functional, ppde_residual, DerivativeConfig, Scheme};
use crate::config::{ExperimentConfig, OutputFormat};
use crate::control::{
    default_perturbations, martingale_m_check, verify_optimality, ControlProblem, ControlProcess,
    VerifyOptions,
};
use crate::diffusion::{simulate_from, DiffusionSpec, MartingaleOptions};
use crate::error::{Error, Result};
use crate::estimate::EstimateWithError;
use crate::expr::Expr;
use crate::functional::{Functional, VectorFunctional};
use crate::mild::{solve_ode, solve_point, Backend, MildProblem, SolverConfig};
use crate::nonlinearity::{validate_conditions, Evidence, Structure, ValidateOptions};
use crate::path::DiscretePath;
use crate::viscosity::{
    consistency_battery, default_stop_rules, path_scale, residual_at_test_function,
    test_membership_sp, BatteryOptions, Side, StopRule, TestFunctionCandidate,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Solve,
    Fk,
    Control,
    Viscosity,
    CheckDerivs,
    ValidateF,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::Fk => "fk",
            Command::Control => "control",
            Command::Viscosity => "viscosity",
            Command::CheckDerivs => "check-derivs",
            Command::ValidateF => "validate-f",
        }
    }

    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Solve,
        Command::Fk,
        Command::Control,
        Command::Viscosity,
        Command::CheckDerivs,
        Command::ValidateF,
    ];
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown subcommand '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Accept a user-supplied value function in the control pipeline.
    pub unsafe_u: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub json: Value,
    /// Table output (`check-derivs` with `format = "csv"`).
    pub csv: Option<String>,
    /// Long-format trajectories when `run.trajectories` is set.
    pub trajectories: Option<String>,
}

impl Outcome {
    /// Text to write to the output target.
    pub fn primary_text(&self, format: OutputFormat) -> String {
        match (format, &self.csv) {
            (OutputFormat::Csv, Some(csv)) => csv.clone(),
            _ => serde_json::to_string_pretty(&self.json).expect("json serializes") + "\n",
        }
    }
}

/// Process exit code for an error: 2 for invalid input, 3 for numerical
/// failures.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        2
    } else {
        3
    }
}

struct Body {
    estimate: EstimateWithError,
    extra: Vec<(&'static str, Value)>,
    diagnostics: Value,
    csv: Option<String>,
    trajectories: Option<String>,
}

impl Body {
    fn new(estimate: EstimateWithError, diagnostics: Value) -> Self {
        Self {
            estimate,
            extra: Vec::new(),
            diagnostics,
            csv: None,
            trajectories: None,
        }
    }
}

/// Runs `cmd` on `cfg`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let started = Instant::now();
    let body = match cmd {
        Command::Simulate => run_simulate(cfg)?,
        Command::Solve => run_solve(cfg)?,
        Command::Fk => run_fk(cfg)?,
        Command::Control => run_control(cfg, opts)?,
        Command::Viscosity => run_viscosity(cfg)?,
        Command::CheckDerivs => run_check_derivs(cfg)?,
        Command::ValidateF => run_validate(cfg)?,
    };
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": cmd.name(),
        "value": body.estimate.value,
        "std_error": body.estimate.std_error,
        "n_samples": body.estimate.n_samples,
    });
    let obj = out.as_object_mut().expect("object");
    for (k, v) in body.extra {
        obj.insert(k.to_string(), v);
    }
    obj.insert("diagnostics".into(), body.diagnostics);
    obj.insert("resolved_config".into(), cfg.to_json_value());
    obj.insert("seed".into(), json!(cfg.run.seed));
    obj.insert(
        "runtime_ms".into(),
        json!(started.elapsed().as_millis() as u64),
    );
    Ok(Outcome {
        json: out,
        csv: body.csv,
        trajectories: body.trajectories,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn mild_problem(cfg: &ExperimentConfig) -> Result<MildProblem> {
    Ok(MildProblem::new(
        cfg.diffusion_spec()?,
        cfg.nonlinearity()?,
        cfg.terminal()?,
    ))
}

fn solver_config(cfg: &ExperimentConfig, default_backend: &str) -> Result<SolverConfig> {
    let grid = cfg.grid()?;
    let section = cfg.solver.clone();
    let backend_name = section
        .as_ref()
        .map_or(default_backend.to_string(), |s| s.backend.clone());
    let backend = Backend::from_str(&backend_name)?;
    let mut sc = SolverConfig::new(backend, grid, cfg.run.seed);
    sc.outer_paths = cfg.run.n_paths;
    if let Some(s) = section {
        sc.picard_iters = s.iters;
        sc.inner_budget = s.budgets;
        sc.tolerance = s.tolerance;
        if let Some(n) = s.outer_paths {
            sc.outer_paths = n;
        }
    }
    Ok(sc)
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<Body> {
    let spec = cfg.diffusion_spec()?;
    let (r, x) = cfg.start_path()?;
    let sim = cfg.sim_config()?;
    let ensemble = simulate_from(r, &x, &spec, &sim)?;
    let m = sim.grid.steps();
    let horizon = sim.grid.horizon();
    let target = match &cfg.terminal {
        Some(_) => cfg.terminal()?,
        None => Functional::new("x_1(T)", |t, p| p.coord_at(t, 0)),
    };
    let estimate = ensemble.estimate(|_, p| Ok(target.eval(horizon, p)))?;
    let mut coords = Vec::new();
    for i in 0..spec.dim() {
        let e = ensemble.estimate(|_, p| Ok(p.node(m)[i]))?;
        let sq = ensemble.estimate(|_, p| Ok(p.node(m)[i].powi(2)))?;
        coords.push(json!({"coordinate": i + 1, "mean": e.value, "std_error": e.std_error, "second_moment": sq.value}));
    }
    let mut body = Body::new(
        estimate,
        json!({"target": target.label(), "terminal_moments": coords}),
    );
    if cfg.run.trajectories.is_some() {
        body.trajectories = Some(ensemble.to_csv());
    }
    Ok(body)
}

fn run_solve(cfg: &ExperimentConfig) -> Result<Body> {
    let prob = mild_problem(cfg)?;
    let sc = solver_config(cfg, "nested_mc")?;
    let (r, x) = cfg.start_path()?;
    let sol = solve_point(r, &x, &prob, &sc)?;
    let d = &sol.diagnostics;
    let mut body = Body::new(sol.estimate, to_value(d));
    body.extra = vec![
        ("iterations", json!(d.iterations)),
        ("residual", json!(d.residual.value)),
        ("residual_std_error", json!(d.residual.std_error)),
        ("clamp_count", json!(d.clamp_count)),
        ("status", to_value(&d.status)),
    ];
    Ok(body)
}

fn run_fk(cfg: &ExperimentConfig) -> Result<Body> {
    let f = cfg.nonlinearity()?;
    let (alpha, beta) = match f.structure() {
        Structure::Affine { alpha, beta } => (alpha.clone(), beta.clone()),
        _ => {
            return Err(Error::validation(
                "fk needs nonlinearity.tag = \"affine\" (or \"zero\")",
            ))
        }
    };
    let g = cfg.terminal()?;
    let spec = cfg.diffusion_spec()?;
    let (r, x) = cfg.start_path()?;
    let fk = fk_solve(r, &x, &alpha, &beta, &g, &spec, &cfg.sim_config()?)?;
    Ok(Body::new(
        fk.estimate,
        json!({"alpha_max": fk.alpha_max, "beta_max": fk.beta_max}),
    ))
}

fn parse_perturbations(
    cfg: &ExperimentConfig,
    prob: &ControlProblem,
    u: &Functional,
    specs: &[String],
) -> Result<Vec<ControlProcess>> {
    let defaults = default_perturbations(prob, u);
    let mut out = Vec::new();
    for s in specs {
        let s = s.trim();
        let (kind, arg) = s
            .split_once('=')
            .map_or((s, ""), |(k, a)| (k.trim(), a.trim()));
        let number = || {
            arg.parse::<f64>().map_err(|_| {
                Error::validation(format!("control.perturbations: '{s}' needs a number"))
            })
        };
        match kind {
            "default" => out.extend(defaults.iter().cloned()),
            "liquidation" => out.push(defaults[2].clone()),
            "scale" => {
                let c = number()?;
                let (pr, u) = (prob.clone(), u.clone());
                out.push(ControlProcess::exponential(format!("rate x {c}"), prob.nu0, move |t, x| {
                    let uv = u.eval(t, x);
                    let eta = pr.eta.eval(t, x);
                    if !(uv >= 0.0 && eta > 0.0) {
                        return Err(Error::domain(format!("u = {uv}, eta = {eta} at t = {t}")));
                    }
                    Ok(c * (uv / eta).powf(pr.q - 1.0))
                }));
            }
            "delay" => {
                let frac = number()?;
                let (pr, u) = (prob.clone(), u.clone());
                out.push(ControlProcess::exponential(format!("rate delayed {frac}T"), prob.nu0, move |t, x| {
                    let lag = frac * x.horizon();
                    if t < lag {
                        return Ok(0.0);
                    }
                    let s = t - lag;
                    let xs = x.stop(s)?;
                    let uv = u.eval(s, &xs);
                    let eta = pr.eta.eval(s, &xs);
                    if !(uv >= 0.0 && eta > 0.0) {
                        return Err(Error::domain(format!("u = {uv}, eta = {eta} at t = {s}")));
                    }
                    Ok((uv / eta).powf(pr.q - 1.0))
                }));
            }
            "rate" => {
                let rate = cfg.functional(arg, "control.perturbations rate")?;
                out.push(ControlProcess::open_loop(format!("rate {arg}"), prob.nu0, rate));
            }
            _ => {
                return Err(Error::validation(format!(
                    "control.perturbations: unknown entry '{s}' (default, scale=c, delay=f, liquidation, rate=expr)"
                )))
            }
        }
    }
    Ok(out)
}

fn run_control(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Body> {
    let section = cfg
        .control
        .clone()
        .ok_or_else(|| Error::validation("missing [control] section"))?;
    let g = cfg.terminal()?;
    let prob = ControlProblem::new(
        section.p,
        cfg.functional(&section.alpha, "control.alpha")?,
        cfg.functional(&section.eta, "control.eta")?,
        g,
        section.nu0,
        cfg.diffusion_spec()?,
    )?;
    let (_, x) = cfg.start_path()?;
    let grid = cfg.grid()?;
    let (u, source, u0_se) = match (&section.unsafe_u, opts.unsafe_u) {
        (Some(src), true) => (
            cfg.functional(src, "control.unsafe_u")?,
            "user (unsafe)".to_string(),
            0.0,
        ),
        (Some(_), false) => {
            return Err(Error::validation(
                "control.unsafe_u is set; pass --unsafe-u to use a user-supplied value function",
            ))
        }
        (None, _) => {
            let dual = prob.dual_problem()?;
            let ode_ok = dual.f.is_path_independent() && dual.g.is_path_independent();
            let wanted = cfg.solver.as_ref().map(|s| s.backend.as_str());
            if ode_ok && matches!(wanted, None | Some("ode_fast_path")) {
                let tol = cfg.solver.as_ref().map_or(1e-3, |s| s.tolerance);
                (
                    solve_ode(&dual, grid.clone(), tol)?.as_functional(),
                    "ode_fast_path".to_string(),
                    0.0,
                )
            } else {
                let sc = solver_config(cfg, "regression")?;
                if sc.backend != Backend::Regression {
                    return Err(Error::validation(
                        "control needs the value function on the whole ensemble: use solver.backend = \"regression\"",
                    ));
                }
                let sol = solve_point(0.0, &x, &dual, &sc)?;
                let f = sol
                    .as_functional()
                    .expect("regression provides a fit")
                    .clone();
                (f, "regression".to_string(), sol.estimate.std_error)
            }
        }
    };
    let perturbations = parse_perturbations(cfg, &prob, &u, &section.perturbations)?;
    let sim = cfg.sim_config()?;
    let report = verify_optimality(
        &prob,
        &u,
        &perturbations,
        &x,
        &sim,
        &VerifyOptions {
            bias_allowance: None,
            u0_std_error: u0_se,
        },
    )?;
    let mart = martingale_m_check(&u, &prob, &x, &sim, &MartingaleOptions::default())?;
    let mut body = Body::new(
        report.j_star,
        json!({"value_function": source, "optimality": to_value(&report), "martingale": to_value(&mart)}),
    );
    body.extra = vec![("passed", json!(report.passed && mart.passed))];
    Ok(body)
}

fn run_viscosity(cfg: &ExperimentConfig) -> Result<Body> {
    let section = cfg
        .viscosity
        .clone()
        .ok_or_else(|| Error::validation("missing [viscosity] section"))?;
    let u = cfg.functional(&section.u, "viscosity.u")?;
    let f = match &cfg.nonlinearity {
        Some(_) => cfg.nonlinearity()?,
        None => crate::nonlinearity::Nonlinearity::zero(),
    };
    let spec = cfg.diffusion_spec()?;
    let (r, x) = cfg.start_path()?;
    let sim = cfg.sim_config()?;
    let dcfg = derivative_config(cfg)?;
    let side = match section.side.as_str() {
        "sub" => Side::Sub,
        "super" => Side::Super,
        other => {
            return Err(Error::validation(format!(
                "viscosity.side: '{other}' (expected sub or super)"
            )))
        }
    };
    if section.phi.is_empty() {
        let mut opts = BatteryOptions::new(section.delta);
        opts.derivative_tolerance = section.derivative_tolerance;
        if let Some(gm) = section.gamma {
            opts.gamma_factors = vec![gm / path_scale(&spec, r, &x, section.delta)];
        }
        let rep = consistency_battery(&u, &f, &spec, r, &x, &sim, &dcfg, &opts)?;
        let mut body = Body::new(
            EstimateWithError::exact(rep.findings.len() as f64),
            to_value(&rep),
        );
        body.extra = vec![("passed", json!(rep.passed))];
        return Ok(body);
    }
    let rules: Vec<StopRule> = match &section.stop_offsets {
        Some(v) => v.iter().map(|&offset| StopRule { offset }).collect(),
        None => default_stop_rules(section.delta),
    };
    let beta = match &section.beta {
        Some(b) => Some(VectorFunctional::from_components(
            b.iter()
                .enumerate()
                .map(|(k, s)| cfg.functional(s, &format!("viscosity.beta[{k}]")))
                .collect::<Result<_>>()?,
        )),
        None => None,
    };
    let gammas: Vec<f64> = match section.gamma {
        Some(gm) => vec![gm],
        None => {
            let scale = path_scale(&spec, r, &x, section.delta);
            [0.1, 0.5, 1.0].iter().map(|c| c * scale).collect()
        }
    };
    let mut entries = Vec::new();
    let mut contradictions = 0usize;
    for (k, src) in section.phi.iter().enumerate() {
        let phi = cfg.functional(src, &format!("viscosity.phi[{k}]"))?;
        let mut memberships = Vec::new();
        for &gamma in &gammas {
            let cand = TestFunctionCandidate::new(phi.clone(), r, x.clone(), gamma, section.delta)?;
            memberships.push(test_membership_sp(
                &u,
                &cand,
                &spec,
                &sim,
                &rules,
                side,
                beta.as_ref(),
            )?);
        }
        let residual = residual_at_test_function(
            &phi,
            &spec,
            &f,
            &u,
            r,
            &x,
            &dcfg,
            section.derivative_tolerance,
        )?;
        let member = memberships.iter().all(|m| m.passed);
        let contradiction = member
            && match side {
                Side::Sub => !residual.subsolution_ok,
                Side::Super => !residual.supersolution_ok,
            };
        contradictions += usize::from(contradiction);
        entries.push(json!({
            "phi": src,
            "member": member,
            "memberships": to_value(&memberships),
            "residual": to_value(&residual),
            "contradiction": contradiction,
        }));
    }
    let mut body = Body::new(
        EstimateWithError::exact(contradictions as f64),
        json!({"test_functions": entries}),
    );
    body.extra = vec![("passed", json!(contradictions == 0))];
    Ok(body)
}

fn derivative_config(cfg: &ExperimentConfig) -> Result<DerivativeConfig> {
    let d = cfg.derivatives.clone().unwrap_or_default();
    let scheme = match d.scheme.as_str() {
        "forward" => Scheme::Forward,
        "central" => Scheme::Central,
        other => {
            return Err(Error::validation(format!(
                "derivatives.scheme: '{other}' (expected forward or central)"
            )))
        }
    };
    let dc = DerivativeConfig {
        step_h: d.step_h,
        time_step_h: d.time_step_h,
        scheme,
    };
    dc.validate()?;
    Ok(dc)
}

fn probe_path(cfg: &ExperimentConfig, exprs: &[String], what: &str) -> Result<DiscretePath> {
    let parsed = exprs
        .iter()
        .map(|s| Expr::parse(s).map_err(|e| Error::validation(format!("{what}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let grid = cfg.grid()?;
    let horizon = grid.horizon();
    let probe = DiscretePath::constant(grid.clone(), &vec![0.0; exprs.len()])?;
    if parsed.iter().any(|e| e.uses_path() || e.uses_z()) {
        return Err(Error::validation(format!(
            "{what}: probe paths may only use t and T"
        )));
    }
    DiscretePath::from_fn(grid, exprs.len(), |s| {
        parsed
            .iter()
            .map(|e| e.eval(s, horizon, 0.0, &probe))
            .collect()
    })
}

fn run_check_derivs(cfg: &ExperimentConfig) -> Result<Body> {
    let d = cfg.derivatives.clone().unwrap_or_default();
    let dcfg = derivative_config(cfg)?;
    let p1 = probe_path(cfg, std::slice::from_ref(&d.path_1d), "derivatives.path_1d")?;
    let p2 = probe_path(cfg, &d.path_2d, "derivatives.path_2d")?;
    if p2.dim() != 2 {
        return Err(Error::validation(
            "derivatives.path_2d: needs two expressions",
        ));
    }
    let horizon = cfg.grid.horizon;
    let rows = check_catalogue(horizon, d.t, (&p1, &p2), &dcfg)?;
    let heat = ppde_residual(
        &DiffusionSpec::brownian(1),
        &crate::nonlinearity::Nonlinearity::zero(),
        &heat_functional(horizon),
        d.t,
        &p1,
        &dcfg,
    )?;
    let worst = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    let mut csv = String::from("functional,derivative,analytic,numeric,abs_error\n");
    for r in &rows {
        csv.push_str(&format!(
            "\"{}\",{},{},{},{}\n",
            r.functional, r.derivative, r.analytic, r.numeric, r.abs_error
        ));
    }
    let mut body = Body::new(
        EstimateWithError::exact(worst),
        json!({"rows": to_value(&rows), "heat_residual": heat}),
    );
    body.extra = vec![("heat_residual", json!(heat))];
    body.csv = Some(csv);
    Ok(body)
}

fn run_validate(cfg: &ExperimentConfig) -> Result<Body> {
    let f = cfg.nonlinearity()?;
    let v = cfg.validate.clone().unwrap_or_default();
    let spec = cfg.diffusion_spec()?;
    let (_, x) = cfg.start_path()?;
    let mut sim = cfg.sim_config()?;
    sim.n_paths = 4;
    sim.antithetic = false;
    let ensemble = simulate_from(0.0, &x, &spec, &sim)?;
    let horizon = cfg.grid.horizon;
    let mut samples = Vec::new();
    for p in std::iter::once(&x).chain(&ensemble.paths) {
        for frac in [0.0, 0.25, 0.5, 0.75] {
            samples.push((frac * horizon, p.clone()));
        }
    }
    let rep = validate_conditions(
        &f,
        &samples,
        &ValidateOptions {
            z_scale: v.z_scale,
            samples_per_condition: v.samples,
            seed: cfg.run.seed,
        },
    );
    let fails = [&rep.local_lipschitz, &rep.growth, &rep.boundary]
        .iter()
        .filter(|c| c.evidence == Evidence::Fail)
        .count();
    let mut body = Body::new(EstimateWithError::exact(fails as f64), to_value(&rep));
    body.extra = vec![("domain", json!(f.domain().to_string()))];
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(text, &[]).unwrap()
    }

    #[test]
    fn solve_zero_f_constant_g() {
        let c = cfg(r#"
[run]
seed = 1
n_paths = 50
[grid]
steps = 10
[nonlinearity]
tag = "zero"
[terminal]
g = "1"
[solver]
backend = "nested_mc"
iters = 1
budgets = [8]
"#);
        let out = run(Command::Solve, &c, &RunOptions::default()).unwrap();
        assert_eq!(out.json["value"], 1.0);
        assert_eq!(out.json["std_error"], 0.0);
        assert_eq!(out.json["schema_version"], 1);
    }

    #[test]
    fn fk_deterministic_discount() {
        let c = cfg(r#"
[run]
seed = 1
n_paths = 20
[nonlinearity]
tag = "affine"
alpha = "0"
beta = "1"
[terminal]
g = "1"
"#);
        let out = run(Command::Fk, &c, &RunOptions::default()).unwrap();
        assert!((out.json["value"].as_f64().unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(out.json["std_error"], 0.0);
    }

    #[test]
    fn riccati_ode_solve() {
        let c = cfg(r#"
[run]
seed = 1
n_paths = 20
[nonlinearity]
tag = "power"
p = 2.0
[terminal]
g = "1"
[solver]
backend = "ode_fast_path"
"#);
        let out = run(Command::Solve, &c, &RunOptions::default()).unwrap();
        assert!((out.json["value"].as_f64().unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn unsafe_u_requires_flag() {
        let c = cfg(r#"
[run]
seed = 1
n_paths = 20
[terminal]
g = "0.5"
[control]
p = 2.0
unsafe_u = "0.5"
"#);
        let err = run(Command::Control, &c, &RunOptions::default()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(run(Command::Control, &c, &RunOptions { unsafe_u: true }).is_ok());
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
    }
}
