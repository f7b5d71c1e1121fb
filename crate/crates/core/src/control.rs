//! Cost functional of the fuel-follower type control problem, its explicit
//! optimal feedback, and checks of the verification argument.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    checkpoint_indices, default_allowance, drift_report, simulate_from, DiffusionSpec, Ensemble,
    MartingaleOptions, MartingaleReport, SimConfig,
};
use crate::error::{Error, Result};
use crate::estimate::{pairwise_sum, EstimateWithError};
use crate::functional::Functional;
use crate::mild::MildProblem;
use crate::nonlinearity::{dual_exponent, make_control_dual};
use crate::path::DiscretePath;

/// `Φ_p(y, z) = y^p - p y z^{p-1} + (p-1) z^p`.
pub fn phi_p(p: f64, y: f64, z: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::domain(format!("phi_p needs p > 1, got {p}")));
    }
    if !(y >= 0.0 && z >= 0.0) {
        return Err(Error::domain(format!(
            "phi_p needs y, z >= 0, got y = {y}, z = {z}"
        )));
    }
    if p == 2.0 {
        return Ok((y - z) * (y - z));
    }
    let v = y.powf(p) - p * y * z.powf(p - 1.0) + (p - 1.0) * z.powf(p);
    Ok(v.max(0.0))
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub p: f64,
    pub q: f64,
    pub alpha: Functional,
    pub eta: Functional,
    pub g: Functional,
    pub nu0: f64,
    pub spec: DiffusionSpec,
}

impl ControlProblem {
    pub fn new(
        p: f64,
        alpha: Functional,
        eta: Functional,
        g: Functional,
        nu0: f64,
        spec: DiffusionSpec,
    ) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::validation(format!("p = {p} must exceed 1")));
        }
        if !nu0.is_finite() {
            return Err(Error::validation(format!("nu0 = {nu0} is not finite")));
        }
        let q = dual_exponent(p);
        Ok(Self {
            p,
            q,
            alpha,
            eta,
            g,
            nu0,
            spec,
        })
    }

    /// The semilinear problem whose mild solution is the value function.
    pub fn dual_problem(&self) -> Result<MildProblem> {
        Ok(MildProblem::new(
            self.spec.clone(),
            make_control_dual(self.alpha.clone(), self.eta.clone(), self.p)?,
            self.g.clone(),
        ))
    }

    fn eta_at(&self, t: f64, x: &DiscretePath) -> Result<f64> {
        let e = self.eta.eval(t, x);
        if !(e > 0.0) {
            return Err(Error::domain(format!(
                "eta = {e} must be positive at t = {t}"
            )));
        }
        Ok(e)
    }

    /// `(u/η)^{q-1}` at `(t, x)`.
    fn feedback_rate(&self, u_hat: &Functional, t: f64, x: &DiscretePath) -> Result<f64> {
        let u = u_hat.eval(t, x);
        if !(u >= 0.0) {
            return Err(Error::domain(format!(
                "u = {u} must be non-negative at t = {t}"
            )));
        }
        Ok((u / self.eta_at(t, x)?).powf(self.q - 1.0))
    }
}

type RateFn = dyn Fn(f64, &DiscretePath, f64) -> Result<f64> + Send + Sync;
type KappaFn = dyn Fn(f64, &DiscretePath) -> Result<f64> + Send + Sync;

#[derive(Clone)]
enum Kind {
    /// `ν̇ = rate(t, X^t, ν(t))`, Euler update.
    Rate(Arc<RateFn>),
    /// `ν(t) = ν₀ exp(-∫_0^t κ ds)`, left-endpoint exponent.
    Exponential(Arc<KappaFn>),
}

/// An adapted control given in feedback form on the simulation grid.
#[derive(Clone)]
pub struct ControlProcess {
    label: String,
    nu0: f64,
    kind: Kind,
}

impl fmt::Debug for ControlProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProcess")
            .field("label", &self.label)
            .field("nu0", &self.nu0)
            .finish()
    }
}

/// `ν` and `ν̇` at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub nu: Vec<f64>,
    pub nu_dot: Vec<f64>,
}

impl ControlProcess {
    pub fn feedback(
        label: impl Into<String>,
        nu0: f64,
        rate: impl Fn(f64, &DiscretePath, f64) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            nu0,
            kind: Kind::Rate(Arc::new(rate)),
        }
    }

    /// Rate given as a functional of `(t, X^t)` only.
    pub fn open_loop(label: impl Into<String>, nu0: f64, rate: Functional) -> Self {
        Self::feedback(label, nu0, move |t, x, _| Ok(rate.eval(t, x)))
    }

    /// `ν(t) = ν₀ exp(-∫_0^t κ(s, X^s) ds)`.
    pub fn exponential(
        label: impl Into<String>,
        nu0: f64,
        kappa: impl Fn(f64, &DiscretePath) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            nu0,
            kind: Kind::Exponential(Arc::new(kappa)),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    /// `c·ν`.
    pub fn scaled(&self, c: f64) -> Self {
        let kind = match &self.kind {
            Kind::Exponential(k) => Kind::Exponential(Arc::clone(k)),
            Kind::Rate(rate) => {
                let rate = Arc::clone(rate);
                Kind::Rate(Arc::new(move |t, x, nu| Ok(c * rate(t, x, nu / c)?)))
            }
        };
        Self {
            label: format!("{} x {c}", self.label),
            nu0: c * self.nu0,
            kind,
        }
    }

    pub fn trajectory(&self, path: &DiscretePath) -> Result<Trajectory> {
        let grid = path.grid();
        let m = grid.steps();
        let mut nu = Vec::with_capacity(m + 1);
        let mut nu_dot = Vec::with_capacity(m + 1);
        match &self.kind {
            Kind::Rate(rate) => {
                let mut cur = self.nu0;
                for k in 0..=m {
                    let t = grid.time(k);
                    let r = rate(t, path, cur)?;
                    if !r.is_finite() {
                        return Err(Error::simulation(format!("control rate {r} at t = {t}")));
                    }
                    nu.push(cur);
                    nu_dot.push(r);
                    if k < m {
                        cur += r * grid.dt(k);
                    }
                }
            }
            Kind::Exponential(kappa) => {
                let mut exponent = 0.0_f64;
                for k in 0..=m {
                    let t = grid.time(k);
                    let kap = kappa(t, path)?;
                    if !kap.is_finite() {
                        return Err(Error::simulation(format!(
                            "control exponent rate {kap} at t = {t}"
                        )));
                    }
                    let v = self.nu0 * (-exponent).exp();
                    nu.push(v);
                    nu_dot.push(-v * kap);
                    if k < m {
                        exponent += kap * grid.dt(k);
                    }
                }
            }
        }
        Ok(Trajectory { nu, nu_dot })
    }
}

/// `ν*(t) = ν₀ exp(-∫_0^t (u/η)^{q-1} ds)` as a control process.
pub fn optimal_process(prob: &ControlProblem, u_hat: &Functional) -> ControlProcess {
    let (pr, u) = (prob.clone(), u_hat.clone());
    ControlProcess::exponential("optimal", prob.nu0, move |t, x| pr.feedback_rate(&u, t, x))
}

/// `ν*` and `ν̇*` along one path.
pub fn optimal_strategy(
    u_hat: &Functional,
    prob: &ControlProblem,
    path: &DiscretePath,
) -> Result<Trajectory> {
    optimal_process(prob, u_hat).trajectory(path)
}

/// Scaled rate, delayed rate and constant-rate liquidation.
pub fn default_perturbations(prob: &ControlProblem, u_hat: &Functional) -> Vec<ControlProcess> {
    let mut out = Vec::new();
    let (pr, u) = (prob.clone(), u_hat.clone());
    out.push(ControlProcess::exponential(
        "rate x 1.2",
        prob.nu0,
        move |t, x| Ok(1.2 * pr.feedback_rate(&u, t, x)?),
    ));
    let (pr, u) = (prob.clone(), u_hat.clone());
    out.push(ControlProcess::exponential(
        "rate delayed",
        prob.nu0,
        move |t, x| {
            // hold for the first tenth of the horizon, then follow the optimal
            // rate shifted by the delay
            let lag = 0.1 * x.horizon();
            if t < lag {
                return Ok(0.0);
            }
            let s = t - lag;
            pr.feedback_rate(&u, s, &x.stop(s)?)
        },
    ));
    let nu0 = prob.nu0;
    out.push(ControlProcess::feedback(
        "constant-rate liquidation",
        nu0,
        move |_, x, _| Ok(-nu0 / x.horizon()),
    ));
    out
}

/// Per-path running cost `∫(|ν̇|^p η + |ν|^p α) dt + g |ν(T)|^p` with
/// left-endpoint quadrature.
fn path_cost(nu: &ControlProcess, prob: &ControlProblem, path: &DiscretePath) -> Result<f64> {
    let traj = nu.trajectory(path)?;
    let grid = path.grid();
    let m = grid.steps();
    let mut terms = Vec::with_capacity(m);
    for k in 0..m {
        let t = grid.time(k);
        let eta = prob.eta_at(t, path)?;
        let alpha = prob.alpha.eval(t, path);
        terms.push(
            grid.dt(k)
                * (traj.nu_dot[k].abs().powf(prob.p) * eta + traj.nu[k].abs().powf(prob.p) * alpha),
        );
    }
    Ok(pairwise_sum(&terms) + prob.g.eval(grid.horizon(), path) * traj.nu[m].abs().powf(prob.p))
}

fn cost_values(
    nu: &ControlProcess,
    prob: &ControlProblem,
    ensemble: &Ensemble,
) -> Result<Vec<f64>> {
    ensemble.path_values(|_, p| path_cost(nu, prob, p))
}

/// Monte Carlo estimate of `J(ν)` from `(0, x)`.
pub fn cost(
    nu: &ControlProcess,
    prob: &ControlProblem,
    x: &DiscretePath,
    cfg: &SimConfig,
) -> Result<EstimateWithError> {
    let ensemble = simulate_from(0.0, x, &prob.spec, cfg)?;
    let v = cost_values(nu, prob, &ensemble)?;
    EstimateWithError::from_samples(&ensemble.to_samples(&v))
}

/// Per-path `∫ η Φ_p(|ν̇|, |ν| (u/η)^{q-1}) dt`.
fn phi_integral(
    nu: &ControlProcess,
    prob: &ControlProblem,
    u_hat: &Functional,
    path: &DiscretePath,
) -> Result<f64> {
    let traj = nu.trajectory(path)?;
    let grid = path.grid();
    let mut terms = Vec::with_capacity(grid.steps());
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let eta = prob.eta_at(t, path)?;
        let z = traj.nu[k].abs() * prob.feedback_rate(u_hat, t, path)?;
        terms.push(grid.dt(k) * eta * phi_p(prob.p, traj.nu_dot[k].abs(), z)?);
    }
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Slack for left-endpoint discretization; `None` means `5·max Δ`.
    pub bias_allowance: Option<f64>,
    /// Standard error of `û(0, x)` when it is itself an estimate.
    pub u0_std_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub label: String,
    pub cost: EstimateWithError,
    /// `Ĵ(ν) - ν₀^p û(0, x)`.
    pub gap: EstimateWithError,
    /// Direct estimate of `E[∫ η Φ_p dt]`.
    pub phi_integral: EstimateWithError,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub label: String,
    /// `Ĵ(ν) - Ĵ(ν*)` with paired standard error.
    pub excess_cost: EstimateWithError,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub p: f64,
    pub q: f64,
    pub j_star: EstimateWithError,
    /// `ν₀^p û(0, x)`.
    pub value_term: EstimateWithError,
    pub identity_gap: EstimateWithError,
    pub identity_threshold: f64,
    pub identity_passed: bool,
    pub perturbations: Vec<PerturbationCheck>,
    pub decompositions: Vec<DecompositionCheck>,
    pub bias_allowance: f64,
    pub eta_min: f64,
    pub alpha_min: f64,
    pub passed: bool,
    pub caveat: String,
}

/// Checks `J(ν*) = ν₀^p û(0, x)`, `J(ν) ≥ J(ν*)` for each perturbation and
/// the decomposition `J(ν) = ν₀^p û(0, x) + E[∫ η Φ_p dt]`, all on one
/// ensemble.
pub fn verify_optimality(
    prob: &ControlProblem,
    u_hat: &Functional,
    perturbations: &[ControlProcess],
    x: &DiscretePath,
    cfg: &SimConfig,
    opts: &VerifyOptions,
) -> Result<OptimalityReport> {
    let ensemble = simulate_from(0.0, x, &prob.spec, cfg)?;
    let grid = ensemble.grid().clone();
    let allowance = opts
        .bias_allowance
        .unwrap_or_else(|| default_allowance(&grid));
    let nu0p = prob.nu0.abs().powf(prob.p);
    let u0 = u_hat.eval(0.0, &ensemble.paths[0]);
    let value_term = EstimateWithError {
        value: nu0p * u0,
        std_error: nu0p * opts.u0_std_error,
        n_samples: 1,
    };

    let star = optimal_process(prob, u_hat);
    let star_costs = cost_values(&star, prob, &ensemble)?;
    let j_star = EstimateWithError::from_samples(&ensemble.to_samples(&star_costs))?;
    let identity_gap = EstimateWithError {
        value: j_star.value - value_term.value,
        std_error: j_star.combined_se(&value_term),
        n_samples: j_star.n_samples,
    };
    let identity_threshold = 3.0 * identity_gap.std_error + allowance;
    let identity_passed = identity_gap.value.abs() <= identity_threshold;

    let mut perturbation_checks = Vec::with_capacity(perturbations.len());
    let mut decompositions = Vec::with_capacity(perturbations.len() + 1);
    for nu in std::iter::once(&star).chain(perturbations) {
        let costs = if std::ptr::eq(nu, &star) {
            star_costs.clone()
        } else {
            cost_values(nu, prob, &ensemble)?
        };
        let c = EstimateWithError::from_samples(&ensemble.to_samples(&costs))?;
        if !std::ptr::eq(nu, &star) {
            let excess = EstimateWithError::paired_difference(
                &ensemble.to_samples(&costs),
                &ensemble.to_samples(&star_costs),
            )?;
            perturbation_checks.push(PerturbationCheck {
                label: nu.label().to_string(),
                passed: excess.value >= -3.0 * excess.std_error,
                excess_cost: excess,
            });
        }
        let phi = ensemble.path_values(|_, p| phi_integral(nu, prob, u_hat, p))?;
        let phi = EstimateWithError::from_samples(&ensemble.to_samples(&phi))?;
        let gap = EstimateWithError {
            value: c.value - value_term.value,
            std_error: c.combined_se(&value_term),
            n_samples: c.n_samples,
        };
        let threshold = 3.0 * gap.combined_se(&phi) + allowance;
        decompositions.push(DecompositionCheck {
            label: nu.label().to_string(),
            cost: c,
            passed: (gap.value - phi.value).abs() <= threshold,
            gap,
            phi_integral: phi,
            threshold,
        });
    }

    let (eta_min, alpha_min) = coefficient_minima(prob, &ensemble);
    let passed = identity_passed
        && perturbation_checks.iter().all(|c| c.passed)
        && decompositions.iter().all(|c| c.passed);
    Ok(OptimalityReport {
        p: prob.p,
        q: prob.q,
        j_star,
        value_term,
        identity_gap,
        identity_threshold,
        identity_passed,
        perturbations: perturbation_checks,
        decompositions,
        bias_allowance: allowance,
        eta_min,
        alpha_min,
        passed,
        caveat: "the value function is a Monte Carlo or ODE estimate; right-continuity of u is assumed, not certified"
            .to_string(),
    })
}

fn coefficient_minima(prob: &ControlProblem, ensemble: &Ensemble) -> (f64, f64) {
    let grid = ensemble.grid().clone();
    let mins = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let mut e = f64::INFINITY;
            let mut a = f64::INFINITY;
            for k in 0..=grid.steps() {
                let t = grid.time(k);
                e = e.min(prob.eta.eval(t, p));
                a = a.min(prob.alpha.eval(t, p));
            }
            (e, a)
        })
        .collect::<Vec<_>>();
    mins.iter().fold((f64::INFINITY, f64::INFINITY), |acc, v| {
        (acc.0.min(v.0), acc.1.min(v.1))
    })
}

/// Drift of `M_t = u(t, X^t) + ∫_0^t (α - u^q / ((q-1) η^{q-1})) ds` at
/// checkpoints.
pub fn martingale_m_check(
    u_hat: &Functional,
    prob: &ControlProblem,
    x: &DiscretePath,
    cfg: &SimConfig,
    opts: &MartingaleOptions,
) -> Result<MartingaleReport> {
    let ensemble = simulate_from(0.0, x, &prob.spec, cfg)?;
    let grid = ensemble.grid().clone();
    let checkpoints = checkpoint_indices(0, grid.steps(), opts.checkpoints);
    let times: Vec<f64> = checkpoints.iter().map(|&k| grid.time(k)).collect();
    let allowance = opts
        .bias_allowance
        .unwrap_or_else(|| default_allowance(&grid));
    let q = prob.q;
    let per_path = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let m0 = u_hat.eval(0.0, p);
            let mut comp = 0.0;
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut next = 0;
            for k in 0..grid.steps() {
                let t = grid.time(k);
                let u = u_hat.eval(t, p);
                if !(u >= 0.0) {
                    return Err(Error::domain(format!(
                        "u = {u} must be non-negative at t = {t}"
                    )));
                }
                let eta = prob.eta_at(t, p)?;
                comp += grid.dt(k)
                    * (prob.alpha.eval(t, p) - u.powf(q) / ((q - 1.0) * eta.powf(q - 1.0)));
                if next < checkpoints.len() && checkpoints[next] == k + 1 {
                    out.push(u_hat.eval(grid.time(k + 1), p) + comp - m0);
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    drift_report(&ensemble, &times, per_path, allowance)
}

/// `J(c·ν)` and `J(ν)` on shared paths.
pub fn homogeneity_pair(
    nu: &ControlProcess,
    c: f64,
    prob: &ControlProblem,
    x: &DiscretePath,
    cfg: &SimConfig,
) -> Result<(EstimateWithError, EstimateWithError)> {
    Ok((cost(&nu.scaled(c), prob, x, cfg)?, cost(nu, prob, x, cfg)?))
}
