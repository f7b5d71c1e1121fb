//! Falsification checks for stochastic viscosity sub/supersolutions: the
//! stopped-expectation membership test for smooth test functions and the
//! pointwise PPDE inequality at the probe.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::{parabolic_operator, DerivativeConfig};
use crate::diffusion::{doleans_weights, hitting_time, simulate_from, DiffusionSpec, SimConfig};
use crate::error::{Error, Result};
use crate::estimate::EstimateWithError;
use crate::functional::{Functional, VectorFunctional};
use crate::nonlinearity::Nonlinearity;
use crate::path::DiscretePath;

#[derive(Debug, Clone)]
pub struct TestFunctionCandidate {
    pub phi: Functional,
    pub r: f64,
    pub x: DiscretePath,
    pub gamma: f64,
    pub delta: f64,
}

impl TestFunctionCandidate {
    pub fn new(phi: Functional, r: f64, x: DiscretePath, gamma: f64, delta: f64) -> Result<Self> {
        let horizon = x.horizon();
        if !(r >= 0.0 && r < horizon) {
            return Err(Error::validation(format!(
                "probe time r = {r} must lie in [0, {horizon})"
            )));
        }
        if !(gamma > 0.0 && delta > 0.0) {
            return Err(Error::validation(format!(
                "gamma = {gamma} and delta = {delta} must be positive"
            )));
        }
        if delta >= horizon - r {
            return Err(Error::validation(format!(
                "delta = {delta} must be below T - r = {}",
                horizon - r
            )));
        }
        Ok(Self {
            phi,
            r,
            x,
            gamma,
            delta,
        })
    }
}

/// Which inequality is tested. `Sub` is membership in the class where
/// `(u - φ)(r, x) ≥ E[(u - φ)(ρ, X^ρ)]`; `Super` reverses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Sub,
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentWithMembership,
    Violated,
    Inconclusive,
}

/// Early stopping rule `τ̃ = r + offset`, snapped up to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub offset: f64,
}

/// `τ̃ ∈ {r, r + δ/4, r + δ/2}`.
pub fn default_stop_rules(delta: f64) -> Vec<StopRule> {
    vec![
        StopRule { offset: 0.0 },
        StopRule {
            offset: 0.25 * delta,
        },
        StopRule {
            offset: 0.5 * delta,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleResult {
    pub offset: f64,
    /// `(u - φ)(r, x) - E[(u - φ)(ρ, X^ρ)]` with `ρ = τ̃ ∧ τ`.
    pub gap: EstimateWithError,
    /// Fraction of paths with `τ > r`.
    pub moved_fraction: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipReport {
    pub side: Side,
    pub gamma: f64,
    pub delta: f64,
    pub weighted: bool,
    pub rules: Vec<RuleResult>,
    /// True when no rule is violated at the 3-SE level.
    pub passed: bool,
}

/// Estimates the membership gap for each stopping rule, with `τ` the exit
/// time of `X` from the `γ/2`-ball around `x(r)`, capped at `r + δ`. With
/// `beta`, samples are weighted by the stochastic exponential `M^{r,β}`.
pub fn test_membership_sp(
    u: &Functional,
    cand: &TestFunctionCandidate,
    spec: &DiffusionSpec,
    cfg: &SimConfig,
    stop_rules: &[StopRule],
    side: Side,
    beta: Option<&VectorFunctional>,
) -> Result<MembershipReport> {
    if stop_rules.is_empty() {
        return Err(Error::validation("no stopping rules"));
    }
    let ensemble = simulate_from(cand.r, &cand.x, spec, cfg)?;
    let grid = Arc::clone(ensemble.grid());
    let weights = match beta {
        Some(b) => Some(doleans_weights(b, spec, &ensemble)?),
        None => None,
    };
    let r = cand.r;
    let base = u.eval(r, &ensemble.paths[0]) - cand.phi.eval(r, &ensemble.paths[0]);
    let cap = grid.time(
        grid.first_node_at_or_after(r + cand.delta)
            .min(grid.steps()),
    );
    let taus: Vec<f64> = ensemble
        .paths
        .iter()
        .map(|p| hitting_time(0.5 * cand.gamma, r, &cand.x, p).min(cap))
        .collect();
    let moved_fraction = taus.iter().filter(|&&t| t > r).count() as f64 / taus.len() as f64;
    let mut rules = Vec::with_capacity(stop_rules.len());
    for rule in stop_rules {
        if !(rule.offset >= 0.0 && rule.offset < cand.delta) {
            return Err(Error::validation(format!(
                "stop offset {} must lie in [0, delta)",
                rule.offset
            )));
        }
        let tilde = grid.time(
            grid.first_node_at_or_after(r + rule.offset)
                .min(grid.steps()),
        );
        let values = ensemble.path_values(|i, p| {
            let rho = tilde.min(taus[i]);
            let diff = base - (u.eval(rho, p) - cand.phi.eval(rho, p));
            Ok(match &weights {
                Some(w) => w[i] * diff,
                None => diff,
            })
        })?;
        let gap = EstimateWithError::from_samples(&ensemble.to_samples(&values))?;
        let informative = tilde > r && moved_fraction > 0.0;
        let ok = match side {
            Side::Sub => gap.value >= -3.0 * gap.std_error,
            Side::Super => gap.value <= 3.0 * gap.std_error,
        };
        let verdict = if !ok {
            Verdict::Violated
        } else if informative {
            Verdict::ConsistentWithMembership
        } else {
            Verdict::Inconclusive
        };
        rules.push(RuleResult {
            offset: rule.offset,
            gap,
            moved_fraction,
            verdict,
        });
    }
    let passed = rules.iter().all(|r| r.verdict != Verdict::Violated);
    Ok(MembershipReport {
        side,
        gamma: cand.gamma,
        delta: cand.delta,
        weighted: beta.is_some(),
        rules,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSign {
    Positive,
    Zero,
    Negative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunctionResidual {
    /// `(∂_t + 𝓛)φ(r, x) - f(r, x, u(r, x))`.
    pub residual: f64,
    pub operator_value: f64,
    pub f_value: f64,
    pub sign: ResidualSign,
    /// Whether the subsolution inequality `residual ≥ -tolerance` holds.
    pub subsolution_ok: bool,
    /// Whether the supersolution inequality `residual ≤ tolerance` holds.
    pub supersolution_ok: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn residual_at_test_function(
    phi: &Functional,
    spec: &DiffusionSpec,
    f: &Nonlinearity,
    u: &Functional,
    r: f64,
    x: &DiscretePath,
    dcfg: &DerivativeConfig,
    tolerance: f64,
) -> Result<TestFunctionResidual> {
    let z = u.eval(r, x);
    if !f.domain().contains(z) {
        return Err(Error::domain(format!(
            "u(r, x) = {z} lies outside D = {}",
            f.domain()
        )));
    }
    let operator_value = parabolic_operator(spec, phi, r, x, dcfg)?;
    let f_value = f.eval(r, x, z)?;
    let residual = operator_value - f_value;
    let sign = if residual > tolerance {
        ResidualSign::Positive
    } else if residual < -tolerance {
        ResidualSign::Negative
    } else {
        ResidualSign::Zero
    };
    Ok(TestFunctionResidual {
        residual,
        operator_value,
        f_value,
        sign,
        subsolution_ok: residual >= -tolerance,
        supersolution_ok: residual <= tolerance,
    })
}

/// `γ` unit for the default battery: the typical displacement
/// `sqrt(δ · tr a(r, x))` over the window.
pub fn path_scale(spec: &DiffusionSpec, r: f64, x: &DiscretePath, delta: f64) -> f64 {
    let a = spec.covariance(r, x);
    let d = spec.dim();
    let trace: f64 = (0..d).map(|i| a[i * d + i]).sum();
    (delta * trace).sqrt().max(f64::EPSILON)
}

/// Perturbations `φ = u + c·(t - r)`, `u ± (t - r)²` and
/// `u ± ½|x(t) - x(r)|²` of a smooth interpolant `u`.
pub fn test_function_battery(
    u: &Functional,
    r: f64,
    x: &DiscretePath,
) -> Vec<(String, Functional)> {
    let mut out = Vec::new();
    for c in [-1.0, -0.5, 0.5, 1.0] {
        let name = format!("u + {c}(t - r)");
        out.push((name, shifted_in_time(u, r, c)));
    }
    for c in [-1.0, 1.0] {
        let u = u.clone();
        out.push((
            format!("u + {c}(t - r)^2"),
            Functional::new(format!("{} + {c}(t - r)^2", u.label()), move |t, y| {
                u.eval(t, y) + c * (t - r) * (t - r)
            }),
        ));
    }
    let anchor = x.value_at(r);
    for c in [-0.5, 0.5] {
        let (u, anchor) = (u.clone(), anchor.clone());
        out.push((
            format!("u + {c}|x(t) - x(r)|^2"),
            Functional::new(
                format!("{} + {c}|x(t) - x(r)|^2", u.label()),
                move |t, y| {
                    let d2: f64 = anchor
                        .iter()
                        .enumerate()
                        .map(|(i, a)| (y.coord_at(t, i) - a).powi(2))
                        .sum();
                    u.eval(t, y) + c * d2
                },
            ),
        ));
    }
    out
}

/// `φ(t, x) = u(t, x) + c (t - r)`.
pub fn shifted_in_time(u: &Functional, r: f64, c: f64) -> Functional {
    let u = u.clone();
    Functional::new(format!("{} + {c}(t - r)", u.label()), move |t, y| {
        u.eval(t, y) + c * (t - r)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub name: String,
    pub member: bool,
    pub memberships: Vec<MembershipReport>,
    pub residual: TestFunctionResidual,
    /// A member whose residual breaks the subsolution inequality.
    pub contradiction: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryReport {
    pub entries: Vec<BatteryEntry>,
    pub findings: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct BatteryOptions {
    pub delta: f64,
    /// Multiples of [`path_scale`].
    pub gamma_factors: Vec<f64>,
    pub derivative_tolerance: f64,
}

impl BatteryOptions {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            gamma_factors: vec![0.1, 0.5, 1.0],
            derivative_tolerance: 1e-3,
        }
    }
}

/// Runs the membership test (subsolution side) and the residual for every
/// battery function, and reports members whose residual is below
/// `-(tolerance + 3 SE)`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_battery(
    u: &Functional,
    f: &Nonlinearity,
    spec: &DiffusionSpec,
    r: f64,
    x: &DiscretePath,
    cfg: &SimConfig,
    dcfg: &DerivativeConfig,
    opts: &BatteryOptions,
) -> Result<BatteryReport> {
    let scale = path_scale(spec, r, x, opts.delta);
    let rules = default_stop_rules(opts.delta);
    let mut entries = Vec::new();
    let mut findings = Vec::new();
    for (name, phi) in test_function_battery(u, r, x) {
        let mut memberships = Vec::with_capacity(opts.gamma_factors.len());
        for &gf in &opts.gamma_factors {
            let cand =
                TestFunctionCandidate::new(phi.clone(), r, x.clone(), gf * scale, opts.delta)?;
            memberships.push(test_membership_sp(
                u,
                &cand,
                spec,
                cfg,
                &rules,
                Side::Sub,
                None,
            )?);
        }
        let member = memberships.iter().all(|m| m.passed);
        let residual =
            residual_at_test_function(&phi, spec, f, u, r, x, dcfg, opts.derivative_tolerance)?;
        let contradiction = member && residual.residual < -opts.derivative_tolerance;
        if contradiction {
            findings.push(format!(
                "{name}: passes the membership battery but (d/dt + L)phi - f = {} < -{}",
                residual.residual, opts.derivative_tolerance
            ));
        }
        entries.push(BatteryEntry {
            name,
            member,
            memberships,
            residual,
            contradiction,
        });
    }
    let passed = findings.is_empty();
    Ok(BatteryReport {
        entries,
        findings,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::heat_functional;
    use crate::path::TimeGrid;

    fn setup() -> (Arc<TimeGrid>, DiscretePath, SimConfig) {
        let g = Arc::new(TimeGrid::uniform(1.0, 100).unwrap());
        let x = DiscretePath::constant(g.clone(), &[0.0]).unwrap();
        (g.clone(), x, SimConfig::new(2000, g, 17))
    }

    #[test]
    fn phi_equal_to_u_has_zero_gap() {
        let (_, x, cfg) = setup();
        let u = heat_functional(1.0);
        let cand = TestFunctionCandidate::new(u.clone(), 0.2, x, 0.5, 0.3).unwrap();
        let rep = test_membership_sp(
            &u,
            &cand,
            &DiffusionSpec::brownian(1),
            &cfg,
            &default_stop_rules(0.3),
            Side::Sub,
            None,
        )
        .unwrap();
        for rule in &rep.rules {
            assert_eq!(rule.gap.value, 0.0);
        }
        assert!(rep.passed);
        assert_eq!(rep.rules[0].verdict, Verdict::Inconclusive);
    }

    #[test]
    fn concave_in_time_test_function() {
        // u = c, φ = -(t - r)²: (u - φ)(ρ) = c + (ρ - r)², so the gap is -E[(ρ - r)²]
        let (_, x, cfg) = setup();
        let r = 0.2;
        let u = Functional::constant(3.0);
        let phi = Functional::new("-(t-r)^2", move |t, _| -(t - r) * (t - r));
        let cand = TestFunctionCandidate::new(phi, r, x, 0.5, 0.3).unwrap();
        let spec = DiffusionSpec::brownian(1);
        let rules = default_stop_rules(0.3);
        let sub = test_membership_sp(&u, &cand, &spec, &cfg, &rules, Side::Sub, None).unwrap();
        assert!(sub.rules[2].gap.value < 0.0);
        assert_eq!(sub.rules[2].verdict, Verdict::Violated);
        let sup = test_membership_sp(&u, &cand, &spec, &cfg, &rules, Side::Super, None).unwrap();
        assert!(sup.passed);
    }

    #[test]
    fn heat_shifted_test_functions() {
        let (_, x, cfg) = setup();
        let u = heat_functional(1.0);
        let spec = DiffusionSpec::brownian(1);
        let f = Nonlinearity::zero();
        let dcfg = DerivativeConfig::default();
        let r = 0.2;
        let up = shifted_in_time(&u, r, 1.0);
        let down = shifted_in_time(&u, r, -1.0);
        let rp = residual_at_test_function(&up, &spec, &f, &u, r, &x, &dcfg, 1e-3).unwrap();
        let rm = residual_at_test_function(&down, &spec, &f, &u, r, &x, &dcfg, 1e-3).unwrap();
        assert!((rp.residual - 1.0).abs() < 1e-6);
        assert!((rm.residual + 1.0).abs() < 1e-6);
        // u - φ = -(t - r) for φ = u + (t - r): a member on the subsolution side
        let cand = TestFunctionCandidate::new(up, r, x.clone(), 0.5, 0.3).unwrap();
        let rep = test_membership_sp(
            &u,
            &cand,
            &spec,
            &cfg,
            &default_stop_rules(0.3),
            Side::Sub,
            None,
        )
        .unwrap();
        assert!(rep.passed);
        let cand = TestFunctionCandidate::new(down, r, x, 0.5, 0.3).unwrap();
        let rep = test_membership_sp(
            &u,
            &cand,
            &spec,
            &cfg,
            &default_stop_rules(0.3),
            Side::Sub,
            None,
        )
        .unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn weighted_variant_with_zero_beta_matches() {
        let (_, x, cfg) = setup();
        let u = heat_functional(1.0);
        let spec = DiffusionSpec::brownian(1);
        let phi = shifted_in_time(&u, 0.2, 1.0);
        let cand = TestFunctionCandidate::new(phi, 0.2, x, 0.5, 0.3).unwrap();
        let rules = default_stop_rules(0.3);
        let a = test_membership_sp(&u, &cand, &spec, &cfg, &rules, Side::Sub, None).unwrap();
        let zero = VectorFunctional::constant(vec![0.0]);
        let b = test_membership_sp(&u, &cand, &spec, &cfg, &rules, Side::Sub, Some(&zero)).unwrap();
        for (p, q) in a.rules.iter().zip(&b.rules) {
            assert_eq!(p.gap, q.gap);
        }
    }

    #[test]
    fn candidate_validation() {
        let (_, x, _) = setup();
        let u = Functional::constant(0.0);
        assert!(TestFunctionCandidate::new(u.clone(), 1.0, x.clone(), 0.5, 0.1).is_err());
        assert!(TestFunctionCandidate::new(u.clone(), 0.5, x.clone(), 0.0, 0.1).is_err());
        assert!(TestFunctionCandidate::new(u, 0.5, x, 0.5, 0.6).is_err());
    }

    #[test]
    fn hitting_time_positivity() {
        let (_, x, cfg) = setup();
        let u = heat_functional(1.0);
        let cand = TestFunctionCandidate::new(u.clone(), 0.2, x, 0.05, 0.3).unwrap();
        let rep = test_membership_sp(
            &u,
            &cand,
            &DiffusionSpec::brownian(1),
            &cfg,
            &default_stop_rules(0.3),
            Side::Sub,
            None,
        )
        .unwrap();
        assert!(rep.rules[0].moved_fraction > 0.0);
    }
}
