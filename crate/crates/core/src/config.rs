//! Experiment configuration: TOML or JSON, unknown keys rejected, defaults
//! materialized so the resolved tree can be echoed and replayed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSpec, SimConfig};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::functional::{Functional, MatrixFunctional, VectorFunctional};
use crate::nonlinearity::{self, Atom, DomainInterval, Nonlinearity};
use crate::path::{DiscretePath, TimeGrid};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub start: StartSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<ViscositySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivatives: Option<DerivativeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
    /// CSV file for simulated trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<String>,
    #[serde(default)]
    pub antithetic: bool,
}

fn default_paths() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "hundred")]
    pub steps: usize,
}

fn one() -> f64 {
    1.0
}

fn hundred() -> usize {
    100
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    #[serde(default = "one_usize")]
    pub dim: usize,
    /// Row-major `d × d` expressions; a single entry means that multiple of
    /// the identity. Empty means the identity.
    #[serde(default)]
    pub sigma: Vec<String>,
    /// `d` expressions; empty means zero drift.
    #[serde(default)]
    pub drift: Vec<String>,
}

fn one_usize() -> usize {
    1
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            dim: 1,
            sigma: Vec::new(),
            drift: Vec::new(),
        }
    }
}

/// Start point `(r, x)` with `x` constant at `x0` up to `r`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub position: f64,
    pub weight: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    /// One of `zero`, `affine`, `power`, `superprocess`, `control_dual`,
    /// `expr`.
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomSection>,
    /// `f(t, x, z)` for the `expr` tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    /// Domain ends for the `expr` tag (closed when finite).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub g: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_iters")]
    pub iters: usize,
    /// Regression ensemble size; defaults to `run.n_paths`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_paths: Option<usize>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_backend() -> String {
    "nested_mc".into()
}

fn default_iters() -> usize {
    4
}

fn default_budgets() -> Vec<usize> {
    vec![1024, 256, 64, 16]
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub p: f64,
    #[serde(default = "zero_expr")]
    pub alpha: String,
    #[serde(default = "one_expr")]
    pub eta: String,
    #[serde(default = "one")]
    pub nu0: f64,
    /// `default`, `scale=<c>`, `delay=<fraction of T>`, `liquidation` or
    /// `rate=<expr>`.
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<String>,
    /// User-supplied value function; honoured only with `--unsafe-u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_u: Option<String>,
}

fn zero_expr() -> String {
    "0".into()
}

fn one_expr() -> String {
    "1".into()
}

fn default_perturbations() -> Vec<String> {
    vec!["default".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViscositySection {
    /// The candidate solution `u(t, x)`.
    pub u: String,
    /// Test functions; empty runs the perturbation battery.
    #[serde(default)]
    pub phi: Vec<String>,
    pub delta: f64,
    /// Explicit `γ`; by default a battery of multiples of the path scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_side")]
    pub side: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_offsets: Option<Vec<f64>>,
    /// Bounded `β` for the weighted variant, one expression per coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<String>>,
    #[serde(default = "default_tolerance")]
    pub derivative_tolerance: f64,
}

fn default_side() -> String {
    "sub".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeSection {
    #[serde(default = "half")]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step_h: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// One-dimensional probe path as an expression in `t`.
    #[serde(default = "default_probe_1d")]
    pub path_1d: String,
    #[serde(default = "default_probe_2d")]
    pub path_2d: Vec<String>,
}

fn half() -> f64 {
    0.5
}

fn default_scheme() -> String {
    "forward".into()
}

fn default_probe_1d() -> String {
    "sin(3 * t) + t".into()
}

fn default_probe_2d() -> Vec<String> {
    vec!["cos(2 * t)".into(), "t^2 - 0.5".into()]
}

impl Default for DerivativeSection {
    fn default() -> Self {
        Self {
            t: 0.5,
            step_h: None,
            time_step_h: None,
            scheme: default_scheme(),
            path_1d: default_probe_1d(),
            path_2d: default_probe_2d(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "ten")]
    pub z_scale: f64,
    #[serde(default = "thousand")]
    pub samples: usize,
}

fn ten() -> f64 {
    10.0
}

fn thousand() -> usize {
    1000
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            z_scale: 10.0,
            samples: 1000,
        }
    }
}

/// Reads a config from text; JSON when it starts with `{`, TOML otherwise.
pub fn parse_tree(text: &str) -> Result<serde_json::Value> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("invalid JSON: {e}")))
    } else {
        let v: toml::Value =
            toml::from_str(text).map_err(|e| Error::validation(format!("invalid TOML: {e}")))?;
        serde_json::to_value(v).map_err(|e| Error::validation(e.to_string()))
    }
}

/// Applies `key.path=value`; the value is read as JSON when possible and
/// as a string otherwise.
pub fn apply_override(tree: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("override '{assignment}' is not key=value")))?;
    let value = serde_json::from_str(raw.trim())
        .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::validation(format!(
                "override '{key}': '{}' is not a table",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_tree(tree: serde_json::Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(format!("config error at '{path}': {}", e.into_inner()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree = parse_tree(text)?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        Self::from_tree(tree)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.run.n_paths < 2 {
            problems.push("run.n_paths: must be at least 2".to_string());
        }
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            problems.push("grid.horizon: must be positive".to_string());
        }
        if self.grid.steps == 0 {
            problems.push("grid.steps: must be positive".to_string());
        }
        let d = self.diffusion.dim;
        if d == 0 {
            problems.push("diffusion.dim: must be positive".to_string());
        }
        if !(self.diffusion.sigma.is_empty()
            || self.diffusion.sigma.len() == 1
            || self.diffusion.sigma.len() == d * d)
        {
            problems.push(format!("diffusion.sigma: expected 1 or {} entries", d * d));
        }
        if !(self.diffusion.drift.is_empty() || self.diffusion.drift.len() == d) {
            problems.push(format!("diffusion.drift: expected {d} entries"));
        }
        if !(self.start.x0.is_empty() || self.start.x0.len() == d) {
            problems.push(format!("start.x0: expected {d} entries"));
        }
        if let Some(s) = &self.solver {
            if !(s.tolerance > 0.0) {
                problems.push("solver.tolerance: must be positive".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(problems.join("; ")))
        }
    }

    pub fn grid(&self) -> Result<Arc<TimeGrid>> {
        Ok(Arc::new(TimeGrid::uniform(
            self.grid.horizon,
            self.grid.steps,
        )?))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        Ok(
            SimConfig::new(self.run.n_paths, self.grid()?, self.run.seed)
                .with_antithetic(self.run.antithetic),
        )
    }

    pub fn functional(&self, src: &str, what: &str) -> Result<Functional> {
        Expr::parse(src)
            .and_then(|e| e.to_functional(self.diffusion.dim, self.grid.horizon))
            .map_err(|e| Error::validation(format!("{what}: {e}")))
    }

    pub fn diffusion_spec(&self) -> Result<DiffusionSpec> {
        let d = self.diffusion.dim;
        let sig: Vec<Functional> = match self.diffusion.sigma.len() {
            0 => (0..d * d)
                .map(|k| Functional::constant(if k % (d + 1) == 0 { 1.0 } else { 0.0 }))
                .collect(),
            1 => {
                let s = self.functional(&self.diffusion.sigma[0], "diffusion.sigma[0]")?;
                (0..d * d)
                    .map(|k| {
                        if k % (d + 1) == 0 {
                            s.clone()
                        } else {
                            Functional::constant(0.0)
                        }
                    })
                    .collect()
            }
            _ => self
                .diffusion
                .sigma
                .iter()
                .enumerate()
                .map(|(k, s)| self.functional(s, &format!("diffusion.sigma[{k}]")))
                .collect::<Result<_>>()?,
        };
        let drift: Vec<Functional> = if self.diffusion.drift.is_empty() {
            vec![Functional::constant(0.0); d]
        } else {
            self.diffusion
                .drift
                .iter()
                .enumerate()
                .map(|(k, s)| self.functional(s, &format!("diffusion.drift[{k}]")))
                .collect::<Result<_>>()?
        };
        let sigma = if sig.iter().all(|f| f.as_constant().is_some()) {
            MatrixFunctional::constant(d, sig.iter().map(|f| f.as_constant().unwrap()).collect())?
        } else {
            MatrixFunctional::from_entries(d, sig)?
        };
        let drift = if drift.iter().all(|f| f.as_constant().is_some()) {
            VectorFunctional::constant(drift.iter().map(|f| f.as_constant().unwrap()).collect())
        } else {
            VectorFunctional::from_components(drift)
        };
        DiffusionSpec::new(sigma, drift).map_err(|e| Error::validation(format!("diffusion: {e}")))
    }

    pub fn start_path(&self) -> Result<(f64, DiscretePath)> {
        let x0 = if self.start.x0.is_empty() {
            vec![0.0; self.diffusion.dim]
        } else {
            self.start.x0.clone()
        };
        Ok((self.start.r, DiscretePath::constant(self.grid()?, &x0)?))
    }

    pub fn terminal(&self) -> Result<Functional> {
        let t = self
            .terminal
            .as_ref()
            .ok_or_else(|| Error::validation("missing [terminal] section"))?;
        self.functional(&t.g, "terminal.g")
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        let n = self
            .nonlinearity
            .as_ref()
            .ok_or_else(|| Error::validation("missing [nonlinearity] section"))?;
        let coef = |v: &Option<String>, name: &str, default: &str| -> Result<Functional> {
            self.functional(
                v.as_deref().unwrap_or(default),
                &format!("nonlinearity.{name}"),
            )
        };
        let need_p = || {
            n.p.ok_or_else(|| {
                Error::validation(format!("nonlinearity.p: required for tag '{}'", n.tag))
            })
        };
        let wrap = |e: Error| Error::validation(format!("nonlinearity: {e}"));
        match n.tag.as_str() {
            "zero" => Ok(Nonlinearity::zero()),
            "affine" => Ok(nonlinearity::make_affine(coef(&n.alpha, "alpha", "0")?, coef(&n.beta, "beta", "0")?)),
            "power" => nonlinearity::make_power(coef(&n.alpha, "alpha", "1")?, need_p()?).map_err(wrap),
            "superprocess" => {
                let atoms = n
                    .atoms
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        Ok(Atom { position: a.position, weight: self.functional(&a.weight, &format!("nonlinearity.atoms[{k}].weight"))? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                nonlinearity::make_superprocess(coef(&n.alpha, "alpha", "0")?, coef(&n.gamma, "gamma", "0")?, atoms)
                    .map_err(wrap)
            }
            "control_dual" => {
                nonlinearity::make_control_dual(coef(&n.alpha, "alpha", "0")?, coef(&n.eta, "eta", "1")?, need_p()?)
                    .map_err(wrap)
            }
            "expr" => {
                let src = n.expr.as_deref().ok_or_else(|| Error::validation("nonlinearity.expr: required for tag 'expr'"))?;
                let lower = n.lower.unwrap_or(f64::NEG_INFINITY);
                let upper = n.upper.unwrap_or(f64::INFINITY);
                let domain = DomainInterval::new(lower, upper, true, true).map_err(wrap)?;
                Expr::parse(src)
                    .and_then(|e| e.to_nonlinearity(self.diffusion.dim, self.grid.horizon, domain))
                    .map_err(|e| Error::validation(format!("nonlinearity.expr: {e}")))
            }
            other => Err(Error::validation(format!(
                "nonlinearity.tag: unknown tag '{other}' (expected zero, affine, power, superprocess, control_dual or expr)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[run]
seed = 7
n_paths = 100

[grid]
steps = 20

[terminal]
g = "x^2"
"#;

    #[test]
    fn toml_defaults_materialize() {
        let cfg = ExperimentConfig::from_text(BASIC, &[]).unwrap();
        assert_eq!(cfg.grid.horizon, 1.0);
        assert_eq!(cfg.diffusion.dim, 1);
        let v = cfg.to_json_value();
        assert_eq!(v["grid"]["horizon"], 1.0);
        assert_eq!(v["run"]["format"], "json");
        let again = ExperimentConfig::from_tree(v.clone()).unwrap();
        assert_eq!(again.to_json_value(), v);
    }

    #[test]
    fn seed_is_required() {
        let err = ExperimentConfig::from_text("[run]\nn_paths = 10\n", &[]).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err =
            ExperimentConfig::from_text("[run]\nseed = 1\n[grid]\nstpes = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("grid"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let cfg =
            ExperimentConfig::from_text(BASIC, &["grid.steps=40".into(), "terminal.g=x^3".into()])
                .unwrap();
        assert_eq!(cfg.grid.steps, 40);
        assert_eq!(cfg.terminal.unwrap().g, "x^3");
        assert!(ExperimentConfig::from_text(BASIC, &["nonsense".into()]).is_err());
    }

    #[test]
    fn json_is_accepted() {
        let cfg = ExperimentConfig::from_text(r#"{"run": {"seed": 3}}"#, &[]).unwrap();
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.run.n_paths, 10_000);
    }

    #[test]
    fn builds_problem_objects() {
        let text = format!("{BASIC}\n[nonlinearity]\ntag = \"power\"\np = 2.0\n");
        let cfg =
            ExperimentConfig::from_text(&text, &["diffusion.sigma=[\"0.5\"]".into()]).unwrap();
        let spec = cfg.diffusion_spec().unwrap();
        assert_eq!(spec.sigma().as_constant(), Some(&[0.5][..]));
        let f = cfg.nonlinearity().unwrap();
        assert_eq!(f.domain().to_string(), "[0, inf)");
        let err = ExperimentConfig::from_text(
            &format!("{BASIC}\n[nonlinearity]\ntag = \"power\"\n"),
            &[],
        )
        .unwrap()
        .nonlinearity()
        .unwrap_err();
        assert!(err.to_string().contains("nonlinearity.p"));
    }
}
