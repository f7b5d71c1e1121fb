//! Mild solutions by Picard iteration on
//! `u(r, x) = E[g(X^T)] - E[∫_r^T f(s, X^s, u(s, X^s)) ds]`.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_from, simulate_into, start_history, DiffusionSpec, SimConfig};
use crate::error::{Error, Result};
use crate::estimate::{pairwise_sum, EstimateWithError};
use crate::functional::Functional;
use crate::nonlinearity::{DomainInterval, Nonlinearity};
use crate::path::{DiscretePath, TimeGrid};
use crate::rng::{StreamKey, TAG_FRESH, TAG_QUADRATURE};

/// Problem data; `g` is read as `g(x) = g.eval(T, x)`.
#[derive(Debug, Clone)]
pub struct MildProblem {
    pub spec: DiffusionSpec,
    pub f: Nonlinearity,
    pub g: Functional,
}

impl MildProblem {
    pub fn new(spec: DiffusionSpec, f: Nonlinearity, g: Functional) -> Self {
        Self { spec, f, g }
    }

    fn terminal(&self, path: &DiscretePath) -> Result<f64> {
        let v = self.g.eval(path.horizon(), path);
        if !self.f.domain().contains(v) {
            return Err(Error::domain(format!(
                "g(x) = {v} lies outside D = {}",
                self.f.domain()
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    NestedMc,
    Regression,
    OdeFastPath,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested_mc" => Ok(Backend::NestedMc),
            "regression" => Ok(Backend::Regression),
            "ode_fast_path" => Ok(Backend::OdeFastPath),
            other => Err(Error::validation(format!(
                "unknown backend '{other}' (expected nested_mc, regression or ode_fast_path)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub backend: Backend,
    pub picard_iters: usize,
    /// Ensemble size for the regression backend and for residual probes.
    pub outer_paths: usize,
    /// Sample counts per nesting depth; entry 0 is the top level.
    pub inner_budget: Vec<usize>,
    /// Regression basis; `None` selects [`default_features`].
    pub features: Option<Vec<Functional>>,
    pub tolerance: f64,
    pub seed: u64,
    pub grid: Arc<TimeGrid>,
}

impl SolverConfig {
    pub fn new(backend: Backend, grid: Arc<TimeGrid>, seed: u64) -> Self {
        Self {
            backend,
            picard_iters: 4,
            outer_paths: 10_000,
            inner_budget: vec![1024, 256, 64, 16],
            features: None,
            tolerance: 1e-3,
            seed,
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.picard_iters == 0 {
            return Err(Error::validation("picard_iters must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::validation(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        match self.backend {
            Backend::NestedMc => {
                if self.inner_budget.len() < self.picard_iters {
                    return Err(Error::validation(format!(
                        "inner_budget has {} entries, need at least picard_iters = {}",
                        self.inner_budget.len(),
                        self.picard_iters
                    )));
                }
                if self.inner_budget[0] < 2 || self.inner_budget.contains(&0) {
                    return Err(Error::validation(
                        "inner budgets must be positive and the top-level budget at least 2",
                    ));
                }
            }
            Backend::Regression => {
                if self.outer_paths < 2 {
                    return Err(Error::validation("outer_paths must be at least 2"));
                }
                if self.features.as_ref().is_some_and(|f| f.is_empty()) {
                    return Err(Error::validation("feature list is empty"));
                }
            }
            Backend::OdeFastPath => {}
        }
        Ok(())
    }
}

/// `{1, x_i(t), x_i(t) x_j(t) (i ≤ j), ∫_0^t x_i ds}`.
pub fn default_features(dim: usize) -> Vec<Functional> {
    let mut out = vec![Functional::constant(1.0)];
    for i in 0..dim {
        out.push(Functional::new(format!("x_{}", i + 1), move |t, x| {
            x.coord_at(t, i)
        }));
    }
    for i in 0..dim {
        for j in i..dim {
            out.push(Functional::new(
                format!("x_{}*x_{}", i + 1, j + 1),
                move |t, x| x.coord_at(t, i) * x.coord_at(t, j),
            ));
        }
    }
    for i in 0..dim {
        out.push(Functional::new(format!("int_x_{}", i + 1), move |t, x| {
            x.integral(t, i)
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub backend: Backend,
    pub iterations: usize,
    /// `u_n(r, x)` for `n = 0..=N`.
    pub iterates: Vec<f64>,
    /// `u_{n+1}(r, x) - u_n(r, x)` with paired standard errors.
    pub changes: Vec<EstimateWithError>,
    /// Fixed-point residual at `(r, x)`. For nested_mc this is the last
    /// Picard change, i.e. the residual of `u_{N-1}`.
    pub residual: EstimateWithError,
    pub clamp_count: usize,
    pub g_max_abs: f64,
    pub status: SolveStatus,
}

#[derive(Debug, Clone)]
pub struct MildSolution {
    pub estimate: EstimateWithError,
    pub diagnostics: SolveDiagnostics,
    fitted: Option<Functional>,
}

impl MildSolution {
    /// The solution as a functional on `[r, T]`, available for the
    /// regression and ODE backends.
    pub fn as_functional(&self) -> Option<&Functional> {
        self.fitted.as_ref()
    }
}

/// Projects `z` onto `D`, staying `eps` inside finite ends (and strictly
/// inside open ends).
pub fn clamp_to_domain(z: f64, d: &DomainInterval, eps: f64) -> f64 {
    if d.contains(z) && (eps == 0.0 || (z >= d.lower + eps && z <= d.upper - eps)) {
        return z;
    }
    let inside = |end: f64, closed: bool, dir: f64| {
        let shift = if closed {
            eps
        } else {
            eps.max(f64::EPSILON * end.abs().max(1.0))
        };
        end + dir * shift
    };
    let lo = if d.lower.is_finite() {
        inside(d.lower, d.closed_lower, 1.0)
    } else {
        f64::NEG_INFINITY
    };
    let hi = if d.upper.is_finite() {
        inside(d.upper, d.closed_upper, -1.0)
    } else {
        f64::INFINITY
    };
    z.max(lo).min(hi)
}

fn distance_outside(z: f64, d: &DomainInterval) -> f64 {
    if z < d.lower {
        d.lower - z
    } else if z > d.upper {
        z - d.upper
    } else {
        0.0
    }
}

/// Shared clamp accounting; counts are order independent.
struct Guard<'a> {
    domain: &'a DomainInterval,
    tolerance: f64,
    clamps: AtomicUsize,
    g_max: AtomicU64,
}

impl<'a> Guard<'a> {
    fn new(domain: &'a DomainInterval, tolerance: f64) -> Self {
        Self {
            domain,
            tolerance,
            clamps: AtomicUsize::new(0),
            g_max: AtomicU64::new(0),
        }
    }

    fn check(&self, z: f64, iteration: usize, time: f64) -> Result<f64> {
        if self.domain.contains(z) {
            return Ok(z);
        }
        if !z.is_finite() || distance_outside(z, self.domain) > self.tolerance {
            return Err(Error::DomainEscape {
                domain: self.domain.to_string(),
                iteration,
                time,
                value: z,
            });
        }
        self.clamps.fetch_add(1, Ordering::Relaxed);
        Ok(clamp_to_domain(z, self.domain, 0.0))
    }

    fn track_g(&self, g: f64) {
        // non-negative floats order like their bit patterns
        self.g_max.fetch_max(g.abs().to_bits(), Ordering::Relaxed);
    }

    fn g_max(&self) -> f64 {
        f64::from_bits(self.g_max.load(Ordering::Relaxed))
    }
}

/// `û(r, x)` with Picard diagnostics.
pub fn solve_point(
    r: f64,
    x: &DiscretePath,
    prob: &MildProblem,
    cfg: &SolverConfig,
) -> Result<MildSolution> {
    cfg.validate()?;
    cfg.grid.check_time(r, "r")?;
    if r >= cfg.grid.horizon() {
        return Err(Error::domain(format!(
            "r = {r} must be before the horizon {}",
            cfg.grid.horizon()
        )));
    }
    if x.dim() != prob.spec.dim() {
        return Err(Error::shape(format!(
            "path has dimension {}, diffusion {}",
            x.dim(),
            prob.spec.dim()
        )));
    }
    match cfg.backend {
        Backend::NestedMc => solve_nested(r, x, prob, cfg),
        Backend::Regression => solve_regression(r, x, prob, cfg),
        Backend::OdeFastPath => solve_ode_point(r, x, prob, cfg),
    }
}

fn status_of(changes: &[EstimateWithError], tol: f64) -> SolveStatus {
    match changes.last() {
        Some(c) if c.value.abs() > tol => SolveStatus::NotConverged,
        _ => SolveStatus::Converged,
    }
}

fn fresh_seed(seed: u64) -> u64 {
    let mut rng = StreamKey::root(seed).tagged(TAG_FRESH).rng();
    rng.gen()
}

// ---------------------------------------------------------------- nested MC

struct Nested<'a> {
    prob: &'a MildProblem,
    grid: &'a TimeGrid,
    budgets: &'a [usize],
    g_const: Option<f64>,
    guard: Guard<'a>,
}

impl Nested<'_> {
    fn terminal(&self, path: &DiscretePath) -> Result<f64> {
        let g = match self.g_const {
            Some(c) => c,
            None => self.prob.terminal(path)?,
        };
        self.guard.track_g(g);
        Ok(g)
    }

    /// `u_n(t_k, y)` estimated at nesting `depth`.
    fn value(
        &self,
        n: usize,
        depth: usize,
        k: usize,
        y: &DiscretePath,
        key: StreamKey,
    ) -> Result<f64> {
        let m = self.grid.steps();
        if k >= m {
            return self.terminal(y);
        }
        if n == 0 {
            if let Some(c) = self.g_const {
                return Ok(c);
            }
        }
        let budget = self.budgets.get(depth).copied().unwrap_or(1);
        let mut acc = Vec::with_capacity(budget);
        for j in 0..budget {
            acc.push(self.sample(n, depth, k, y, key.child(j as u64))?);
        }
        Ok(pairwise_sum(&acc) / budget as f64)
    }

    /// One draw of `g(X^T) - (T - s) f(τ, X^τ, u_{n-1}(τ, X^τ))` with `τ`
    /// uniform on `[s, T)` snapped to the left grid node, an unbiased
    /// estimate of the left-endpoint quadrature.
    fn sample(
        &self,
        n: usize,
        depth: usize,
        k: usize,
        y: &DiscretePath,
        key: StreamKey,
    ) -> Result<f64> {
        let grid = self.grid;
        let m = grid.steps();
        let mut path = y.clone();
        let mut rng = key.rng();
        if n == 0 {
            if let Some(c) = self.g_const {
                return Ok(c);
            }
            simulate_into(&mut path, k, m, &self.prob.spec, &mut rng, 1.0, depth)?;
            return self.terminal(&path);
        }
        let s = grid.time(k);
        let span = grid.horizon() - s;
        let u: f64 = key.tagged(TAG_QUADRATURE).rng().gen();
        let j = grid.segment(s + span * u).clamp(k, m - 1);
        let end = if self.g_const.is_some() { j } else { m };
        simulate_into(&mut path, k, end, &self.prob.spec, &mut rng, 1.0, depth)?;
        let g = self.terminal(&path)?;
        let tj = grid.time(j);
        let inner = self.value(n - 1, depth + 1, j, &path, key.tagged(TAG_FRESH))?;
        let z = self.guard.check(inner, n - 1, tj)?;
        let fv = self.prob.f.eval(tj, &path, z)?;
        Ok(g - span * fv)
    }
}

fn solve_nested(
    r: f64,
    x: &DiscretePath,
    prob: &MildProblem,
    cfg: &SolverConfig,
) -> Result<MildSolution> {
    let grid = Arc::clone(&cfg.grid);
    let (r_idx, history) = start_history(r, x, &grid)?;
    let n_iter = cfg.picard_iters;
    let nested = Nested {
        prob,
        grid: &grid,
        budgets: &cfg.inner_budget,
        g_const: prob.g.as_constant(),
        guard: Guard::new(prob.f.domain(), cfg.tolerance),
    };
    let root = StreamKey::root(cfg.seed);
    let top = cfg.inner_budget[0];
    // samples[n][i]: top-level draw i of u_n(r, x), paired across n
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(n_iter + 1);
    for n in 0..=n_iter {
        let s = (0..top)
            .into_par_iter()
            .map(|i| nested.sample(n, 0, r_idx, &history, root.child(i as u64)))
            .collect::<Result<Vec<f64>>>()?;
        samples.push(s);
    }
    let iterates: Vec<f64> = samples
        .iter()
        .map(|s| pairwise_sum(s) / s.len() as f64)
        .collect();
    let changes = samples
        .windows(2)
        .map(|w| EstimateWithError::paired_difference(&w[1], &w[0]))
        .collect::<Result<Vec<_>>>()?;
    let estimate = EstimateWithError::from_samples(&samples[n_iter])?;
    let residual = *changes.last().expect("at least one iteration");
    Ok(MildSolution {
        estimate,
        diagnostics: SolveDiagnostics {
            backend: Backend::NestedMc,
            iterations: n_iter,
            iterates,
            status: status_of(&changes, cfg.tolerance),
            changes,
            residual,
            clamp_count: nested.guard.clamps.load(Ordering::Relaxed),
            g_max_abs: nested.guard.g_max(),
        },
        fitted: None,
    })
}

// --------------------------------------------------------------- regression

/// Per-node least-squares projector `Φ ↦ (U_r U_rᵀ, V_r Σ_r⁻¹ U_rᵀ)`.
struct Projector {
    u: DMatrix<f64>,
    coef_map: DMatrix<f64>,
}

impl Projector {
    fn new(phi: DMatrix<f64>) -> Self {
        let svd = phi.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V");
        let smax = svd.singular_values.max();
        let cut = smax * 1e-10 * (u.nrows().max(v_t.nrows()) as f64);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cut)
            .collect();
        let ur = DMatrix::from_fn(u.nrows(), keep.len(), |i, c| u[(i, keep[c])]);
        let p = v_t.ncols();
        let coef_map = DMatrix::from_fn(p, u.nrows(), |row, col| {
            keep.iter()
                .map(|&c| v_t[(c, row)] / svd.singular_values[c] * u[(col, c)])
                .sum()
        });
        Self { u: ur, coef_map }
    }

    fn fit(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let proj = &self.u * (self.u.transpose() * y);
        (proj, &self.coef_map * y)
    }
}

fn solve_regression(
    r: f64,
    x: &DiscretePath,
    prob: &MildProblem,
    cfg: &SolverConfig,
) -> Result<MildSolution> {
    let grid = Arc::clone(&cfg.grid);
    let m = grid.steps();
    let sim = SimConfig::new(cfg.outer_paths, Arc::clone(&grid), cfg.seed);
    let ensemble = simulate_from(r, x, &prob.spec, &sim)?;
    let start = ensemble.start_index;
    let n = ensemble.len();
    let guard = Guard::new(prob.f.domain(), cfg.tolerance);
    let features = cfg
        .features
        .clone()
        .unwrap_or_else(|| default_features(prob.spec.dim()));
    let p = features.len();

    let g: Vec<f64> = ensemble.path_values(|_, path| prob.terminal(path))?;
    g.iter().for_each(|&v| guard.track_g(v));

    // projectors for nodes start+1..m-1
    let projectors: Vec<Projector> = ((start + 1)..m)
        .map(|k| {
            let t = grid.time(k);
            let phi = DMatrix::from_fn(n, p, |i, c| features[c].eval(t, &ensemble.paths[i]));
            Projector::new(phi)
        })
        .collect();
    let g_vec = DVector::from_vec(g.clone());

    // u[k - start][i] for nodes start..m-1
    let mut u_nodes: Vec<Vec<f64>> = Vec::with_capacity(m - start);
    let mut coefs: Vec<DVector<f64>> = Vec::with_capacity(m - start);
    let mean_g = pairwise_sum(&g) / n as f64;
    let fit_all = |targets: &[DVector<f64>],
                   start_value: f64,
                   iteration: usize|
     -> Result<(Vec<Vec<f64>>, Vec<DVector<f64>>)> {
        let mut u = vec![vec![
            guard.check(start_value, iteration, grid.time(start))?;
            n
        ]];
        let mut c = vec![DVector::zeros(p)];
        for (off, proj) in projectors.iter().enumerate() {
            let k = start + 1 + off;
            let (pred, coef) = proj.fit(&targets[off + 1]);
            let vals = pred
                .iter()
                .map(|&v| guard.check(v, iteration, grid.time(k)))
                .collect::<Result<Vec<_>>>()?;
            u.push(vals);
            c.push(coef);
        }
        Ok((u, c))
    };
    let g_targets = vec![g_vec.clone(); m - start];
    let (u0, c0) = fit_all(&g_targets, mean_g, 0)?;
    u_nodes.extend(u0);
    coefs.extend(c0);

    let mut iterates = vec![mean_g];
    let mut prev_start_targets = g.clone();
    let mut changes = Vec::with_capacity(cfg.picard_iters);
    let mut final_targets = g.clone();
    for iter in 1..=cfg.picard_iters {
        // per path: suffix sums of dt_j f(t_j, X, u_{n-1}(t_j, X))
        let suffix: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let path = &ensemble.paths[i];
                let mut out = vec![0.0; m - start];
                let mut acc = 0.0;
                for k in (start..m).rev() {
                    let t = grid.time(k);
                    let fv = prob.f.eval(t, path, u_nodes[k - start][i])?;
                    acc += grid.dt(k) * fv;
                    out[k - start] = acc;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<DVector<f64>> = (start..m)
            .map(|k| DVector::from_fn(n, |i, _| g[i] - suffix[i][k - start]))
            .collect();
        let start_targets: Vec<f64> = targets[0].iter().copied().collect();
        let value = pairwise_sum(&start_targets) / n as f64;
        changes.push(EstimateWithError::paired_difference(
            &start_targets,
            &prev_start_targets,
        )?);
        iterates.push(value);
        let (u, c) = fit_all(&targets, value, iter)?;
        u_nodes = u;
        coefs = c;
        prev_start_targets = start_targets.clone();
        final_targets = start_targets;
    }
    let estimate = EstimateWithError::from_samples(&final_targets)?;

    let fitted = regression_functional(
        Arc::clone(&grid),
        start,
        estimate.value,
        coefs,
        features,
        prob.g.clone(),
    );
    let probe_cfg = SimConfig::new(cfg.outer_paths, Arc::clone(&grid), fresh_seed(cfg.seed));
    let residual = fixed_point_residual(&fitted, prob, &[(r, x.clone())], &probe_cfg)?.worst;
    Ok(MildSolution {
        estimate,
        diagnostics: SolveDiagnostics {
            backend: Backend::Regression,
            iterations: cfg.picard_iters,
            iterates,
            status: status_of(&changes, cfg.tolerance),
            changes,
            residual,
            clamp_count: guard.clamps.load(Ordering::Relaxed),
            g_max_abs: guard.g_max(),
        },
        fitted: Some(fitted),
    })
}

fn regression_functional(
    grid: Arc<TimeGrid>,
    start: usize,
    start_value: f64,
    coefs: Vec<DVector<f64>>,
    features: Vec<Functional>,
    g: Functional,
) -> Functional {
    let m = grid.steps();
    Functional::new("regression fit", move |t, x| {
        let k = grid.node_index(t).unwrap_or_else(|| grid.segment(t));
        if k >= m {
            return g.eval(t, x);
        }
        if k <= start {
            return start_value;
        }
        let c = &coefs[k - start];
        features
            .iter()
            .zip(c.iter())
            .map(|(f, w)| w * f.eval(t, x))
            .sum()
    })
}

// ---------------------------------------------------------------------- ODE

/// Backward RK4 solution of `u' = f(s, u)`, `u(T) = g` on every grid node.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    clamp_count: usize,
}

impl OdeSolution {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// Linear interpolation between nodes.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.grid.segment(t);
        let m = self.grid.steps();
        if k >= m {
            return self.values[m];
        }
        let (t0, t1) = (self.grid.time(k), self.grid.time(k + 1));
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }

    pub fn as_functional(&self) -> Functional {
        let me = self.clone();
        Functional::new("ode solution", move |t, _| me.at(t)).with_path_independent(true)
    }
}

/// Solves the backward ODE the mild equation reduces to when neither `f`
/// nor `g` depends on the path.
pub fn solve_ode(prob: &MildProblem, grid: Arc<TimeGrid>, tolerance: f64) -> Result<OdeSolution> {
    if !(prob.f.is_path_independent() && prob.g.is_path_independent()) {
        return Err(Error::validation(format!(
            "ode_fast_path needs path-independent f and g (f: {}, g: {})",
            prob.f.label(),
            prob.g.label()
        )));
    }
    let m = grid.steps();
    let x = DiscretePath::constant(Arc::clone(&grid), &vec![0.0; prob.spec.dim()])?;
    let g = prob.terminal(&x)?;
    let guard = Guard::new(prob.f.domain(), tolerance);
    let f = |t: f64, z: f64| -> Result<f64> {
        let z = guard.check(z, 0, t)?;
        prob.f.eval(t, &x, z)
    };
    let mut values = vec![0.0; m + 1];
    values[m] = g;
    for k in (0..m).rev() {
        let t1 = grid.time(k + 1);
        let h = -grid.dt(k);
        let u = values[k + 1];
        let k1 = f(t1, u)?;
        let k2 = f(t1 + 0.5 * h, u + 0.5 * h * k1)?;
        let k3 = f(t1 + 0.5 * h, u + 0.5 * h * k2)?;
        let k4 = f(t1 + h, u + h * k3)?;
        let next = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        values[k] = guard.check(next, 0, grid.time(k))?;
    }
    Ok(OdeSolution {
        grid,
        values,
        clamp_count: guard.clamps.load(Ordering::Relaxed),
    })
}

fn solve_ode_point(
    r: f64,
    x: &DiscretePath,
    prob: &MildProblem,
    cfg: &SolverConfig,
) -> Result<MildSolution> {
    let sol = solve_ode(prob, Arc::clone(&cfg.grid), cfg.tolerance)?;
    let value = sol.at(r);
    let fitted = sol.as_functional();
    let probe_cfg = SimConfig::new(
        cfg.outer_paths.max(2),
        Arc::clone(&cfg.grid),
        fresh_seed(cfg.seed),
    );
    let residual = fixed_point_residual(&fitted, prob, &[(r, x.clone())], &probe_cfg)?.worst;
    let g = sol.values[cfg.grid.steps()];
    Ok(MildSolution {
        estimate: EstimateWithError::exact(value),
        diagnostics: SolveDiagnostics {
            backend: Backend::OdeFastPath,
            iterations: 0,
            iterates: vec![value],
            changes: Vec::new(),
            residual,
            clamp_count: sol.clamp_count,
            g_max_abs: g.abs(),
            status: SolveStatus::Converged,
        },
        fitted: Some(fitted),
    })
}

// ----------------------------------------------------------------- residual

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub per_probe: Vec<EstimateWithError>,
    /// The probe with the largest `|residual|`.
    pub worst: EstimateWithError,
}

/// `E[g(X^T)] - û(r, x) - E[∫_r^T f(s, X^s, û(s, X^s)) ds]` at each probe,
/// from fresh simulation with left-endpoint quadrature.
pub fn fixed_point_residual(
    u_hat: &Functional,
    prob: &MildProblem,
    probes: &[(f64, DiscretePath)],
    cfg: &SimConfig,
) -> Result<ResidualReport> {
    if probes.is_empty() {
        return Err(Error::validation("no residual probes"));
    }
    let grid = Arc::clone(&cfg.grid);
    let m = grid.steps();
    let mut per_probe = Vec::with_capacity(probes.len());
    for (r, x) in probes {
        let ensemble = simulate_from(*r, x, &prob.spec, cfg)?;
        let start = ensemble.start_index;
        let u0 = u_hat.eval(*r, &ensemble.paths[0]);
        let est = ensemble.estimate(|_, path| {
            let mut integral = Vec::with_capacity(m - start);
            for k in start..m {
                let t = grid.time(k);
                integral.push(grid.dt(k) * prob.f.eval(t, path, u_hat.eval(t, path))?);
            }
            Ok(prob.terminal(path)? - u0 - pairwise_sum(&integral))
        })?;
        per_probe.push(est);
    }
    let worst = *per_probe
        .iter()
        .max_by(|a, b| a.value.abs().total_cmp(&b.value.abs()))
        .expect("non-empty");
    Ok(ResidualReport { per_probe, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{make_affine, make_power};

    fn grid(m: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(1.0, m).unwrap())
    }

    fn origin(g: &Arc<TimeGrid>) -> DiscretePath {
        DiscretePath::constant(g.clone(), &[0.0]).unwrap()
    }

    fn riccati() -> MildProblem {
        MildProblem::new(
            DiffusionSpec::brownian(1),
            make_power(Functional::constant(1.0), 2.0).unwrap(),
            Functional::constant(1.0),
        )
    }

    #[test]
    fn clamp_examples() {
        let d = DomainInterval::nonnegative();
        assert_eq!(clamp_to_domain(0.7, &d, 0.0), 0.7);
        assert_eq!(clamp_to_domain(-0.3, &d, 0.0), 0.0);
        let b = DomainInterval::new(0.0, 2.0, true, true).unwrap();
        assert_eq!(clamp_to_domain(3.0, &b, 0.0), 2.0);
        let open = DomainInterval::new(0.0, 1.0, false, false).unwrap();
        assert!(open.contains(clamp_to_domain(-1.0, &open, 0.0)));
    }

    #[test]
    fn ode_riccati_matches_closed_form() {
        let g = grid(100);
        let cfg = SolverConfig::new(Backend::OdeFastPath, g.clone(), 1);
        let sol = solve_point(0.0, &origin(&g), &riccati(), &cfg).unwrap();
        assert!((sol.estimate.value - 0.5).abs() < 1e-6);
        let ode = solve_ode(&riccati(), g, 1e-3).unwrap();
        // u(s) = 1 / (2 - s)
        for (k, v) in ode.values().iter().enumerate() {
            let s = k as f64 / 100.0;
            assert!((v - 1.0 / (2.0 - s)).abs() < 1e-8);
        }
    }

    #[test]
    fn ode_rejects_path_dependent_terminal() {
        let g = grid(10);
        let mut prob = riccati();
        prob.g = Functional::new("x(t)^2", |t, x| x.coord_at(t, 0).powi(2));
        let cfg = SolverConfig::new(Backend::OdeFastPath, g.clone(), 1);
        assert!(solve_point(0.0, &origin(&g), &prob, &cfg)
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn zero_f_constant_g_is_exact() {
        let g = grid(20);
        let prob = MildProblem::new(
            DiffusionSpec::brownian(1),
            Nonlinearity::zero(),
            Functional::constant(1.0),
        );
        for backend in [Backend::NestedMc, Backend::Regression] {
            let mut cfg = SolverConfig::new(backend, g.clone(), 3);
            cfg.picard_iters = 2;
            cfg.outer_paths = 64;
            cfg.inner_budget = vec![16, 4];
            let sol = solve_point(0.0, &origin(&g), &prob, &cfg).unwrap();
            assert_eq!(sol.estimate.value, 1.0);
            assert_eq!(sol.estimate.std_error, 0.0);
            assert_eq!(sol.diagnostics.residual.value, 0.0);
        }
    }

    #[test]
    fn nested_picard_iterates_follow_riccati_recursion() {
        // u_1(0) = 0 exactly in expectation; u_2(0) = 2/3
        let g = grid(50);
        let mut cfg = SolverConfig::new(Backend::NestedMc, g.clone(), 11);
        cfg.picard_iters = 2;
        cfg.inner_budget = vec![4000, 64];
        let sol = solve_point(0.0, &origin(&g), &riccati(), &cfg).unwrap();
        let it = &sol.diagnostics.iterates;
        assert_eq!(it[0], 1.0);
        // left-endpoint grid sums: u_1(0) = 1 - Σ dt = 0
        assert!(it[1].abs() < 4.0 * sol.diagnostics.changes[0].std_error + 1e-12);
        assert!((sol.estimate.value - 2.0 / 3.0).abs() < 4.0 * sol.estimate.std_error + 0.02);
        assert_eq!(sol.diagnostics.status, SolveStatus::NotConverged);
    }

    #[test]
    fn nested_budget_validation() {
        let g = grid(10);
        let mut cfg = SolverConfig::new(Backend::NestedMc, g.clone(), 1);
        cfg.picard_iters = 3;
        cfg.inner_budget = vec![10, 10];
        assert!(solve_point(0.0, &origin(&g), &riccati(), &cfg)
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn regression_affine_discount() {
        // f = z: u(0) = e^{-1} E[g]; g = 1 gives deterministic targets
        let g = grid(50);
        let prob = MildProblem::new(
            DiffusionSpec::brownian(1),
            make_affine(Functional::constant(0.0), Functional::constant(1.0)),
            Functional::constant(1.0),
        );
        let mut cfg = SolverConfig::new(Backend::Regression, g.clone(), 5);
        cfg.picard_iters = 12;
        cfg.outer_paths = 200;
        let sol = solve_point(0.0, &origin(&g), &prob, &cfg).unwrap();
        // the fixed point of the left-endpoint scheme is Π(1 + dt)^{-1}... approximately e^{-1}
        assert!((sol.estimate.value - (-1.0f64).exp()).abs() < 0.02);
        assert_eq!(sol.diagnostics.status, SolveStatus::Converged);
    }

    #[test]
    fn residual_examples() {
        let g = grid(20);
        let prob = MildProblem::new(
            DiffusionSpec::brownian(1),
            Nonlinearity::zero(),
            Functional::constant(0.4),
        );
        let cfg = SimConfig::new(100, g.clone(), 2);
        let probes = vec![(0.0, origin(&g)), (0.5, origin(&g))];
        let rep = fixed_point_residual(&Functional::constant(0.4), &prob, &probes, &cfg).unwrap();
        assert_eq!(rep.worst.value, 0.0);
        assert_eq!(rep.worst.std_error, 0.0);
        let rep = fixed_point_residual(&Functional::constant(0.5), &prob, &probes, &cfg).unwrap();
        assert!((rep.worst.value + 0.1).abs() < 1e-12);
        assert!(fixed_point_residual(&Functional::constant(0.5), &prob, &[], &cfg).is_err());
    }

    #[test]
    fn domain_escape_is_reported() {
        let g = grid(10);
        // f = 5 pushes u below 0 on [0, inf)
        let f = Nonlinearity::custom("5", DomainInterval::nonnegative(), true, |_, _, _| Ok(5.0));
        let prob = MildProblem::new(DiffusionSpec::brownian(1), f, Functional::constant(1.0));
        let mut cfg = SolverConfig::new(Backend::Regression, g.clone(), 1);
        cfg.picard_iters = 3;
        cfg.outer_paths = 16;
        match solve_point(0.0, &origin(&g), &prob, &cfg) {
            Err(Error::DomainEscape {
                iteration, value, ..
            }) => {
                assert_eq!(iteration, 1);
                assert!(value < 0.0);
            }
            other => panic!("expected domain escape, got {other:?}"),
        }
    }
}
