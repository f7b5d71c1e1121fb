//! Reaction terms `f(t, x, z)` on a domain interval `D`, and a sampling
//! validator for the local Lipschitz, growth and boundary conditions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::path::DiscretePath;
use crate::rng::StreamKey;

/// A non-degenerate interval `D ⊂ ℝ`; infinite ends are open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainInterval {
    pub lower: f64,
    pub upper: f64,
    pub closed_lower: bool,
    pub closed_upper: bool,
}

impl DomainInterval {
    pub fn new(lower: f64, upper: f64, closed_lower: bool, closed_upper: bool) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::validation(format!(
                "domain [{lower}, {upper}] is degenerate"
            )));
        }
        Ok(Self {
            lower,
            upper,
            closed_lower: closed_lower && lower.is_finite(),
            closed_upper: closed_upper && upper.is_finite(),
        })
    }

    pub fn real_line() -> Self {
        Self::new(f64::NEG_INFINITY, f64::INFINITY, false, false).expect("non-degenerate")
    }

    /// `[0, ∞)`.
    pub fn nonnegative() -> Self {
        Self::new(0.0, f64::INFINITY, true, false).expect("non-degenerate")
    }

    pub fn contains(&self, z: f64) -> bool {
        if z.is_nan() {
            return false;
        }
        let lo = if self.closed_lower {
            z >= self.lower
        } else {
            z > self.lower
        };
        let hi = if self.closed_upper {
            z <= self.upper
        } else {
            z < self.upper
        };
        lo && hi
    }
}

impl fmt::Display for DomainInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_end = |v: f64| {
            if v == f64::INFINITY {
                "inf".to_string()
            } else if v == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                v.to_string()
            }
        };
        write!(
            f,
            "{}{}, {}{}",
            if self.closed_lower { '[' } else { '(' },
            fmt_end(self.lower),
            fmt_end(self.upper),
            if self.closed_upper { ']' } else { ')' }
        )
    }
}

/// One atom `w(t, x)·δ_u` of the branching kernel `n(t, x, du)`.
#[derive(Debug, Clone)]
pub struct Atom {
    pub position: f64,
    pub weight: Functional,
}

/// Structural tag plus the coefficients the tag needs.
#[derive(Debug, Clone)]
pub enum Structure {
    /// `α + βz`.
    Affine {
        alpha: Functional,
        beta: Functional,
    },
    /// `α z^p`.
    Power {
        alpha: Functional,
        p: f64,
    },
    /// `αz + γz² + Σ_k w_k (e^{-u_k z} - 1 + u_k z)`.
    Superprocess {
        alpha: Functional,
        gamma: Functional,
        atoms: Vec<Atom>,
    },
    /// `-α + z^q / ((q-1) η^{q-1})` with `1/p + 1/q = 1`.
    ControlDual {
        alpha: Functional,
        eta: Functional,
        p: f64,
        q: f64,
    },
    Custom,
}

impl Structure {
    pub fn tag(&self) -> &'static str {
        match self {
            Structure::Affine { .. } => "affine",
            Structure::Power { .. } => "power",
            Structure::Superprocess { .. } => "superprocess",
            Structure::ControlDual { .. } => "control_dual",
            Structure::Custom => "custom",
        }
    }
}

type EvalFn = dyn Fn(f64, &DiscretePath, f64) -> Result<f64> + Send + Sync;

#[derive(Clone)]
pub struct Nonlinearity {
    label: Arc<str>,
    domain: DomainInterval,
    structure: Structure,
    path_independent: bool,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("label", &self.label)
            .field("domain", &self.domain)
            .field("tag", &self.structure.tag())
            .finish()
    }
}

impl Nonlinearity {
    pub fn custom(
        label: impl Into<String>,
        domain: DomainInterval,
        path_independent: bool,
        eval: impl Fn(f64, &DiscretePath, f64) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into().into(),
            domain,
            structure: Structure::Custom,
            path_independent,
            eval: Arc::new(eval),
        }
    }

    /// `f ≡ 0` on `ℝ`.
    pub fn zero() -> Self {
        make_affine(Functional::constant(0.0), Functional::constant(0.0))
    }

    /// `f(t, x, z)`; errors when `z ∉ D`.
    #[inline]
    pub fn eval(&self, t: f64, x: &DiscretePath, z: f64) -> Result<f64> {
        if !self.domain.contains(z) {
            return Err(Error::domain(format!(
                "f({}) evaluated at z = {z} outside D = {}",
                self.label, self.domain
            )));
        }
        (self.eval)(t, x, z)
    }

    pub fn domain(&self) -> &DomainInterval {
        &self.domain
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when `f` depends on `(t, z)` only.
    pub fn is_path_independent(&self) -> bool {
        self.path_independent
    }

    /// True when `f(·, ·, 0) = 0` is known from the structure.
    pub fn vanishes_identically(&self) -> bool {
        match &self.structure {
            Structure::Affine { alpha, beta } => {
                alpha.as_constant() == Some(0.0) && beta.as_constant() == Some(0.0)
            }
            _ => false,
        }
    }
}

fn all_path_independent(fs: &[&Functional]) -> bool {
    fs.iter().all(|f| f.is_path_independent())
}

/// `f = α + βz` on `ℝ`.
pub fn make_affine(alpha: Functional, beta: Functional) -> Nonlinearity {
    let (a, b) = (alpha.clone(), beta.clone());
    Nonlinearity {
        label: format!("{} + ({}) z", alpha.label(), beta.label()).into(),
        domain: DomainInterval::real_line(),
        path_independent: all_path_independent(&[&alpha, &beta]),
        structure: Structure::Affine { alpha, beta },
        eval: Arc::new(move |t, x, z| Ok(a.eval(t, x) + b.eval(t, x) * z)),
    }
}

/// Branching mechanism with a finite atomic kernel, on `[0, ∞)`.
pub fn make_superprocess(
    alpha: Functional,
    gamma: Functional,
    atoms: Vec<Atom>,
) -> Result<Nonlinearity> {
    if let Some(a) = atoms
        .iter()
        .find(|a| !(a.position.is_finite() && a.position > 0.0))
    {
        return Err(Error::validation(format!(
            "atom position {} must be positive",
            a.position
        )));
    }
    let mut coeffs = vec![&alpha, &gamma];
    coeffs.extend(atoms.iter().map(|a| &a.weight));
    let path_independent = all_path_independent(&coeffs);
    let (a, g, at) = (alpha.clone(), gamma.clone(), atoms.clone());
    Ok(Nonlinearity {
        label: format!(
            "superprocess(alpha = {}, gamma = {}, {} atoms)",
            alpha.label(),
            gamma.label(),
            atoms.len()
        )
        .into(),
        domain: DomainInterval::nonnegative(),
        path_independent,
        structure: Structure::Superprocess {
            alpha,
            gamma,
            atoms,
        },
        eval: Arc::new(move |t, x, z| {
            let mut v = a.eval(t, x) * z + g.eval(t, x) * z * z;
            for atom in &at {
                let uz = atom.position * z;
                v += atom.weight.eval(t, x) * ((-uz).exp_m1() + uz);
            }
            Ok(v)
        }),
    })
}

/// `f = α z^p` on `[0, ∞)`, `p ≥ 1`.
pub fn make_power(alpha: Functional, p: f64) -> Result<Nonlinearity> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::validation(format!("power p = {p} must be >= 1")));
    }
    let a = alpha.clone();
    Ok(Nonlinearity {
        label: format!("({}) z^{p}", alpha.label()).into(),
        domain: DomainInterval::nonnegative(),
        path_independent: alpha.is_path_independent(),
        structure: Structure::Power { alpha, p },
        eval: Arc::new(move |t, x, z| Ok(a.eval(t, x) * z.powf(p))),
    })
}

/// Dual exponent `q = p / (p - 1)`.
pub fn dual_exponent(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `f = -α + z^q / ((q-1) η^{q-1})` on `[0, ∞)`, the nonlinearity whose mild
/// solution is the value function of the control problem.
pub fn make_control_dual(alpha: Functional, eta: Functional, p: f64) -> Result<Nonlinearity> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::validation(format!(
            "control exponent p = {p} must exceed 1"
        )));
    }
    let q = dual_exponent(p);
    let (a, e) = (alpha.clone(), eta.clone());
    Ok(Nonlinearity {
        label: format!(
            "-({}) + z^{q}/(({q}-1) ({})^({q}-1))",
            alpha.label(),
            eta.label()
        )
        .into(),
        domain: DomainInterval::nonnegative(),
        path_independent: all_path_independent(&[&alpha, &eta]),
        structure: Structure::ControlDual { alpha, eta, p, q },
        eval: Arc::new(move |t, x, z| {
            let eta = e.eval(t, x);
            if !(eta > 0.0) {
                return Err(Error::domain(format!(
                    "eta(t, x) = {eta} must be positive (t = {t})"
                )));
            }
            Ok(-a.eval(t, x) + z.powf(q) / ((q - 1.0) * eta.powf(q - 1.0)))
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Evidence {
    Pass,
    Inconclusive,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionResult {
    pub evidence: Evidence,
    pub detail: String,
    pub constants: BTreeMap<String, f64>,
}

impl ConditionResult {
    fn new(evidence: Evidence, detail: impl Into<String>) -> Self {
        Self {
            evidence,
            detail: detail.into(),
            constants: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.constants.insert(key.to_string(), v);
        self
    }
}

/// Sampling evidence for conditions (i)–(iii); never a proof.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub local_lipschitz: ConditionResult,
    pub growth: ConditionResult,
    pub boundary: ConditionResult,
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    /// Half-width of the explored `z` range on unbounded ends.
    pub z_scale: f64,
    pub samples_per_condition: usize,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            z_scale: 10.0,
            samples_per_condition: 1000,
            seed: 0,
        }
    }
}

const BOUNDARY_TOL: f64 = 1e-8;

/// Checks local boundedness/Lipschitz continuity, linear growth towards
/// infinite ends of `D`, and the sign of `f` at finite ends, on the sample
/// points `(t, x)`.
pub fn validate_conditions(
    f: &Nonlinearity,
    samples: &[(f64, DiscretePath)],
    opts: &ValidateOptions,
) -> ConditionReport {
    if samples.is_empty() || opts.samples_per_condition == 0 {
        let none = ConditionResult::new(Evidence::Inconclusive, "no samples");
        return ConditionReport {
            local_lipschitz: none.clone(),
            growth: none.clone(),
            boundary: none,
        };
    }
    ConditionReport {
        local_lipschitz: check_local(f, samples, opts),
        growth: check_growth(f, samples, opts),
        boundary: check_boundary(f, samples),
    }
}

/// Working `z` range: `D` intersected with `[-z_scale, z_scale]` around the
/// finite ends, nudged inside open ends.
fn working_range(d: &DomainInterval, scale: f64) -> (f64, f64) {
    let nudge = |v: f64| 1e-9 * v.abs().max(1.0);
    let lo = if d.lower.is_finite() {
        if d.closed_lower {
            d.lower
        } else {
            d.lower + nudge(d.lower)
        }
    } else if d.upper.is_finite() {
        d.upper - 2.0 * scale
    } else {
        -scale
    };
    let hi = if d.upper.is_finite() {
        if d.closed_upper {
            d.upper
        } else {
            d.upper - nudge(d.upper)
        }
    } else if d.lower.is_finite() {
        d.lower + 2.0 * scale
    } else {
        scale
    };
    (lo, hi)
}

fn check_local(
    f: &Nonlinearity,
    samples: &[(f64, DiscretePath)],
    opts: &ValidateOptions,
) -> ConditionResult {
    let (lo, hi) = working_range(f.domain(), opts.z_scale);
    let delta = (0.1 * opts.z_scale).min(0.5 * (hi - lo));
    let windows = 10usize;
    let mut rng = StreamKey::root(opts.seed).tagged(7).rng();
    let mut kappa = 0.0_f64;
    let mut lambda = 0.0_f64;
    for n in 0..opts.samples_per_condition {
        let (t, x) = &samples[n % samples.len()];
        let w = n % windows;
        let center = lo + (hi - lo) * w as f64 / (windows - 1) as f64;
        let a = (center - delta).max(lo);
        let b = (center + delta).min(hi);
        let z1 = rng.gen_range(a..=b);
        let z2 = rng.gen_range(a..=b);
        let (v1, v2) = match (f.eval(*t, x, z1), f.eval(*t, x, z2)) {
            (Ok(v1), Ok(v2)) => (v1, v2),
            (Err(e), _) | (_, Err(e)) => {
                return ConditionResult::new(
                    Evidence::Fail,
                    format!("evaluation failed at t = {t}: {e}"),
                )
            }
        };
        if !(v1.is_finite() && v2.is_finite()) {
            return ConditionResult::new(
                Evidence::Fail,
                format!("non-finite f at t = {t}, z in {{{z1}, {z2}}}"),
            );
        }
        kappa = kappa.max(v1.abs()).max(v2.abs());
        if z1 != z2 {
            lambda = lambda.max((v1 - v2).abs() / (z1 - z2).abs());
        }
    }
    ConditionResult::new(
        Evidence::Pass,
        format!("bounded and Lipschitz on {windows} windows of half-width {delta} in [{lo}, {hi}]"),
    )
    .with("kappa", kappa)
    .with("lambda", lambda)
    .with("delta", delta)
}

fn check_growth(
    f: &Nonlinearity,
    samples: &[(f64, DiscretePath)],
    opts: &ValidateOptions,
) -> ConditionResult {
    let d = f.domain();
    if d.lower.is_finite() && d.upper.is_finite() {
        return ConditionResult::new(Evidence::NotApplicable, "D is bounded");
    }
    let reference = 0.0_f64.clamp(
        working_range(d, opts.z_scale).0,
        working_range(d, opts.z_scale).1,
    );
    let mut result = ConditionResult::new(Evidence::Pass, String::new());
    let mut details = Vec::new();
    // (sign of direction, multiplier turning f into the quantity bounded above)
    let sides: Vec<(f64, f64, &str)> = [
        (d.lower == f64::NEG_INFINITY).then_some((-1.0, 1.0, "upper")),
        (d.upper == f64::INFINITY).then_some((1.0, -1.0, "lower")),
    ]
    .into_iter()
    .flatten()
    .collect();
    let per_side = (opts.samples_per_condition / sides.len().max(1)).max(1);
    let levels = 11usize;
    for (dir, sign, name) in sides {
        let mut alpha = 0.0_f64;
        let mut beta = 0.0_f64;
        let mut first_slope = f64::NEG_INFINITY;
        let mut last_slope = f64::NEG_INFINITY;
        let mut near = Vec::new();
        for n in 0..per_side {
            let (t, x) = &samples[n % samples.len()];
            let href = match f.eval(*t, x, reference) {
                Ok(v) => sign * v,
                Err(e) => return ConditionResult::new(Evidence::Fail, e.to_string()),
            };
            let k = n % levels;
            let z = reference + dir * opts.z_scale * 2f64.powi(k as i32);
            let h = match f.eval(*t, x, z) {
                Ok(v) if v.is_finite() => sign * v,
                Ok(v) => {
                    return ConditionResult::new(Evidence::Fail, format!("f = {v} at z = {z}"))
                }
                Err(e) => return ConditionResult::new(Evidence::Fail, e.to_string()),
            };
            let slope = (h - href) / (z - reference).abs();
            beta = beta.max(slope);
            if k == 0 {
                first_slope = first_slope.max(slope);
            }
            if k == levels - 1 {
                last_slope = last_slope.max(slope);
            }
            near.push((href, h, z));
            // points between the reference and the working range
            let zm = reference + dir * opts.z_scale * (n % 7) as f64 / 7.0;
            if let Ok(v) = f.eval(*t, x, zm) {
                near.push((href, sign * v, zm));
            }
        }
        let beta = beta.max(0.0);
        for (href, h, z) in near {
            alpha = alpha.max(href).max(h - beta * z.abs());
        }
        let alpha = alpha.max(0.0);
        let superlinear = last_slope > (2.0 * first_slope.max(0.0)).max(first_slope + 1.0);
        if superlinear {
            result.evidence = Evidence::Fail;
            details.push(format!(
                "{name} bound: slope grows from {first_slope} to {last_slope} over z-scales up to {}",
                opts.z_scale * 2f64.powi(levels as i32 - 1)
            ));
        } else {
            details.push(format!(
                "{name} bound holds on samples with alpha = {alpha}, beta = {beta}"
            ));
        }
        result = result
            .with(&format!("{name}_alpha"), alpha)
            .with(&format!("{name}_beta"), beta);
    }
    result.detail = details.join("; ");
    result
}

fn check_boundary(f: &Nonlinearity, samples: &[(f64, DiscretePath)]) -> ConditionResult {
    let d = f.domain();
    if !d.lower.is_finite() && !d.upper.is_finite() {
        return ConditionResult::new(Evidence::NotApplicable, "D has no finite end");
    }
    let mut evidence = Evidence::Pass;
    let mut details = Vec::new();
    let mut result = ConditionResult::new(Evidence::Pass, String::new());
    // (finite end, direction into D, required sign: limit <= 0 at the lower end, >= 0 at the upper end)
    let ends: Vec<(f64, f64, &str)> = [
        d.lower.is_finite().then_some((d.lower, 1.0, "lower")),
        d.upper.is_finite().then_some((d.upper, -1.0, "upper")),
    ]
    .into_iter()
    .flatten()
    .collect();
    for (end, dir, name) in ends {
        let mut worst = f64::NEG_INFINITY;
        let mut unsettled = false;
        for (t, x) in samples {
            let mut seq = Vec::with_capacity(20);
            for k in 1..=20 {
                let z = end + dir * 2f64.powi(-k);
                match f.eval(*t, x, z) {
                    Ok(v) => seq.push(v),
                    Err(e) => {
                        return ConditionResult::new(Evidence::Fail, format!("{name} end: {e}"));
                    }
                }
            }
            let (v19, v20) = (seq[18], seq[19]);
            let limit = 2.0 * v20 - v19;
            if !limit.is_finite() || (v20 - v19).abs() > 1e-3 * v20.abs().max(1.0) {
                unsettled = true;
            }
            // orient so that a positive value violates the condition
            let violation = dir * limit;
            worst = worst.max(violation);
        }
        let limit_value = dir * worst;
        result = result.with(&format!("{name}_limit"), limit_value);
        if worst > BOUNDARY_TOL {
            evidence = Evidence::Fail;
            details.push(format!(
                "{name} end {end}: limit {limit_value} has the wrong sign ({} 0 required)",
                if dir > 0.0 { "<=" } else { ">=" }
            ));
        } else if unsettled {
            if evidence == Evidence::Pass {
                evidence = Evidence::Inconclusive;
            }
            details.push(format!(
                "{name} end {end}: sequence not settled, extrapolated limit {limit_value}"
            ));
        } else {
            details.push(format!(
                "{name} end {end}: limit {limit_value} has the required sign"
            ));
        }
    }
    result.evidence = evidence;
    result.detail = details.join("; ");
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::TimeGrid;

    fn x() -> DiscretePath {
        DiscretePath::scalar(Arc::new(TimeGrid::uniform(1.0, 10).unwrap()), |s| s).unwrap()
    }

    #[test]
    fn affine_examples() {
        let p = x();
        let zero = make_affine(Functional::constant(0.0), Functional::constant(0.0));
        assert_eq!(zero.eval(0.3, &p, 5.0).unwrap(), 0.0);
        assert!(zero.vanishes_identically());
        let one = make_affine(Functional::constant(1.0), Functional::constant(0.0));
        assert_eq!(one.eval(0.3, &p, -7.0).unwrap(), 1.0);
        let two = make_affine(Functional::constant(0.0), Functional::constant(2.0));
        assert_eq!(two.eval(0.3, &p, 3.0).unwrap(), 6.0);
    }

    #[test]
    fn superprocess_examples() {
        let p = x();
        let f = make_superprocess(
            Functional::constant(0.3),
            Functional::constant(1.2),
            vec![Atom {
                position: 2.0,
                weight: Functional::constant(0.5),
            }],
        )
        .unwrap();
        assert_eq!(f.eval(0.1, &p, 0.0).unwrap(), 0.0);
        let sq = make_superprocess(Functional::constant(0.0), Functional::constant(1.0), vec![])
            .unwrap();
        assert_eq!(sq.eval(0.1, &p, 3.0).unwrap(), 9.0);
        let atom = make_superprocess(
            Functional::constant(0.0),
            Functional::constant(0.0),
            vec![Atom {
                position: 1.0,
                weight: Functional::constant(1.0),
            }],
        )
        .unwrap();
        assert!((atom.eval(0.1, &p, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(atom.eval(0.1, &p, -0.1), Err(Error::Domain(_))));
        assert!(make_superprocess(
            Functional::constant(0.0),
            Functional::constant(0.0),
            vec![Atom {
                position: 0.0,
                weight: Functional::constant(1.0)
            }]
        )
        .is_err());
    }

    #[test]
    fn power_and_dual_examples() {
        let p = x();
        let sq = make_power(Functional::constant(1.0), 2.0).unwrap();
        assert_eq!(sq.eval(0.0, &p, 3.0).unwrap(), 9.0);
        assert_eq!(sq.eval(0.0, &p, 0.0).unwrap(), 0.0);
        let f = make_power(Functional::constant(2.0), 1.5).unwrap();
        assert_eq!(f.eval(0.0, &p, 4.0).unwrap(), 16.0);
        assert!(make_power(Functional::constant(1.0), 0.5).is_err());

        let d2 =
            make_control_dual(Functional::constant(0.0), Functional::constant(1.0), 2.0).unwrap();
        assert_eq!(d2.eval(0.0, &p, 3.0).unwrap(), 9.0);
        let a =
            make_control_dual(Functional::constant(0.7), Functional::constant(1.0), 2.0).unwrap();
        assert_eq!(a.eval(0.0, &p, 0.0).unwrap(), -0.7);
        let d3 =
            make_control_dual(Functional::constant(0.0), Functional::constant(1.0), 3.0).unwrap();
        assert!((d3.eval(0.0, &p, 4.0).unwrap() - 16.0).abs() < 1e-12);
        let bad_eta =
            make_control_dual(Functional::constant(0.0), Functional::constant(0.0), 2.0).unwrap();
        assert!(matches!(bad_eta.eval(0.0, &p, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn domain_display_and_membership() {
        let d = DomainInterval::nonnegative();
        assert_eq!(d.to_string(), "[0, inf)");
        assert!(d.contains(0.0) && !d.contains(-1e-300));
        assert!(DomainInterval::new(1.0, 1.0, true, true).is_err());
        assert!(DomainInterval::real_line().contains(-1e300));
    }

    fn samples() -> Vec<(f64, DiscretePath)> {
        vec![(0.0, x()), (0.5, x()), (0.9, x())]
    }

    #[test]
    fn validator_square_on_half_line() {
        let f = make_power(Functional::constant(1.0), 2.0).unwrap();
        let rep = validate_conditions(&f, &samples(), &ValidateOptions::default());
        assert_eq!(rep.local_lipschitz.evidence, Evidence::Pass);
        assert_eq!(rep.growth.evidence, Evidence::Pass);
        assert_eq!(rep.growth.constants["lower_alpha"], 0.0);
        assert_eq!(rep.growth.constants["lower_beta"], 0.0);
        assert_eq!(rep.boundary.evidence, Evidence::Pass);
    }

    #[test]
    fn validator_constant_one_fails_boundary() {
        let f = make_affine(Functional::constant(1.0), Functional::constant(0.0));
        let f = Nonlinearity::custom("1", DomainInterval::nonnegative(), true, move |t, x, z| {
            f.eval(t, x, z)
        });
        let rep = validate_conditions(&f, &samples(), &ValidateOptions::default());
        assert_eq!(rep.boundary.evidence, Evidence::Fail);
        assert_eq!(rep.boundary.constants["lower_limit"], 1.0);
    }

    #[test]
    fn validator_affine_on_line() {
        let f = make_affine(Functional::constant(1.0), Functional::constant(-1.0));
        let rep = validate_conditions(&f, &samples(), &ValidateOptions::default());
        assert_eq!(rep.local_lipschitz.evidence, Evidence::Pass);
        assert!((rep.local_lipschitz.constants["lambda"] - 1.0).abs() < 1e-9);
        assert_eq!(rep.growth.evidence, Evidence::Pass);
        assert!((rep.growth.constants["upper_alpha"] - 1.0).abs() < 1e-12);
        assert!((rep.growth.constants["upper_beta"] - 1.0).abs() < 1e-12);
        assert_eq!(rep.boundary.evidence, Evidence::NotApplicable);
    }

    #[test]
    fn validator_flags_superlinear_decay() {
        let f = Nonlinearity::custom("-z^2", DomainInterval::real_line(), true, |_, _, z| {
            Ok(-z * z)
        });
        let rep = validate_conditions(&f, &samples(), &ValidateOptions::default());
        assert_eq!(rep.growth.evidence, Evidence::Fail);
    }
}
