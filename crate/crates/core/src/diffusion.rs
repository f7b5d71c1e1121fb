//! Euler–Maruyama simulation of path-dependent diffusions.
//!
//! A path started from `(r, x)` equals `x^r` on `[0, r]` and then follows
//!
//! ```text
//! X_{k+1} = X_k + b(t_k, X^{t_k}) Δ_k + σ(t_k, X^{t_k}) √Δ_k Z_k
//! ```
//!
//! with coefficients read from the running stopped path. Path `i` draws its
//! Gaussians from the stream `StreamKey::root(seed).child(i)` (pairs share a
//! stream in antithetic mode), and every reduction runs in path-index order,
//! so results are bitwise identical for any worker count.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{parabolic_operator, DerivativeConfig};
use crate::error::{Error, Result};
use crate::estimate::EstimateWithError;
use crate::functional::{Functional, MatrixFunctional, VectorFunctional};
use crate::path::{DiscretePath, TimeGrid};
use crate::rng::StreamKey;

/// Coefficients `σ` and `b` of the diffusion; `a = σσᵀ`.
#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    dim: usize,
    sigma: MatrixFunctional,
    drift: VectorFunctional,
}

impl DiffusionSpec {
    pub fn new(sigma: MatrixFunctional, drift: VectorFunctional) -> Result<Self> {
        let dim = sigma.dim();
        if dim == 0 {
            return Err(Error::validation("diffusion dimension must be positive"));
        }
        if drift.dim() != dim {
            return Err(Error::shape(format!(
                "sigma is {dim}x{dim} but drift has {} entries",
                drift.dim()
            )));
        }
        if let Some(s) = sigma.as_constant() {
            if !nonsingular(dim, s) {
                return Err(Error::validation(format!(
                    "constant sigma {s:?} is singular"
                )));
            }
        }
        Ok(Self { dim, sigma, drift })
    }

    /// Standard `d`-dimensional Brownian motion.
    pub fn brownian(dim: usize) -> Self {
        Self::new(
            MatrixFunctional::identity(dim, 1.0),
            VectorFunctional::constant(vec![0.0; dim]),
        )
        .expect("identity is nonsingular")
    }

    pub fn constant(dim: usize, sigma: Vec<f64>, drift: Vec<f64>) -> Result<Self> {
        Self::new(
            MatrixFunctional::constant(dim, sigma)?,
            VectorFunctional::constant(drift),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> &MatrixFunctional {
        &self.sigma
    }

    pub fn drift(&self) -> &VectorFunctional {
        &self.drift
    }

    /// `a(t, x) = σσᵀ`, row-major.
    pub fn covariance(&self, t: f64, x: &DiscretePath) -> Vec<f64> {
        let s = self.sigma.eval(t, x);
        covariance_of(self.dim, &s)
    }
}

pub(crate) fn covariance_of(d: usize, s: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
        }
    }
    a
}

fn nonsingular(d: usize, s: &[f64]) -> bool {
    if s.iter().any(|v| !v.is_finite()) {
        return false;
    }
    match d {
        1 => s[0] != 0.0,
        2 => s[0] * s[3] - s[1] * s[2] != 0.0,
        _ => {
            nalgebra::DMatrix::from_row_slice(d, d, s)
                .lu()
                .determinant()
                != 0.0
        }
    }
}

/// Ensemble size, grid, seed and sampling mode.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_paths: usize,
    pub grid: Arc<TimeGrid>,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, grid: Arc<TimeGrid>, seed: u64) -> Self {
        Self {
            n_paths,
            grid,
            seed,
            antithetic: false,
        }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::validation("n_paths must be at least 2"));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::validation(
                "antithetic sampling needs an even n_paths",
            ));
        }
        Ok(())
    }
}

/// Simulated paths from a common starting point.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<DiscretePath>,
    /// Grid index of the starting time `r`.
    pub start_index: usize,
    pub antithetic: bool,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.paths[0].grid()
    }

    /// Per-path values of `f`, evaluated in parallel and returned in path
    /// order. Non-finite values are reported with their path index.
    pub fn path_values<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(usize, &DiscretePath) -> Result<f64> + Sync,
    {
        self.paths
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let v = f(i, p)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::simulation(format!(
                        "non-finite value {v} on path {i}"
                    )))
                }
            })
            .collect()
    }

    /// Independent samples: antithetic pairs are averaged first.
    pub fn to_samples(&self, values: &[f64]) -> Vec<f64> {
        if self.antithetic {
            values
                .chunks_exact(2)
                .map(|c| 0.5 * (c[0] + c[1]))
                .collect()
        } else {
            values.to_vec()
        }
    }

    pub fn estimate<F>(&self, f: F) -> Result<EstimateWithError>
    where
        F: Fn(usize, &DiscretePath) -> Result<f64> + Sync,
    {
        let values = self.path_values(f)?;
        EstimateWithError::from_samples(&self.to_samples(&values))
    }

    /// Long-format CSV `path_id,t,x_1,...,x_d`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let d = self.paths.first().map_or(1, DiscretePath::dim);
        let mut s = String::from("path_id,t");
        for i in 1..=d {
            let _ = write!(s, ",x_{i}");
        }
        s.push('\n');
        for (id, p) in self.paths.iter().enumerate() {
            for (k, &t) in p.grid().nodes().iter().enumerate() {
                let _ = write!(s, "{id},{t}");
                for v in p.node(k) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Resolves the start `(r, x)` against `grid`: returns the grid index of
/// `r` and `x^r` on that grid.
pub(crate) fn start_history(
    r: f64,
    x: &DiscretePath,
    grid: &Arc<TimeGrid>,
) -> Result<(usize, DiscretePath)> {
    grid.check_time(r, "start time r")?;
    let r_idx = grid.node_index(r).ok_or_else(|| {
        Error::domain(format!(
            "start time r = {r} is not a node of the simulation grid"
        ))
    })?;
    let history = x.resample(Arc::clone(grid))?.stop_at_node(r_idx);
    Ok((r_idx, history))
}

/// Simulates `cfg.n_paths` paths under `P_{r,x}`.
pub fn simulate_from(
    r: f64,
    x: &DiscretePath,
    spec: &DiffusionSpec,
    cfg: &SimConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    if x.dim() != spec.dim() {
        return Err(Error::shape(format!(
            "path has dimension {}, diffusion {}",
            x.dim(),
            spec.dim()
        )));
    }
    let (r_idx, history) = start_history(r, x, &cfg.grid)?;
    let root = StreamKey::root(cfg.seed);
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let (key, sign) = if cfg.antithetic {
                (
                    root.child((i / 2) as u64),
                    if i % 2 == 0 { 1.0 } else { -1.0 },
                )
            } else {
                (root.child(i as u64), 1.0)
            };
            simulate_path(&history, r_idx, spec, key, sign, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        paths,
        start_index: r_idx,
        antithetic: cfg.antithetic,
    })
}

/// One Euler–Maruyama path continuing `history` (already stopped at node
/// `start`). Nodes after the current step keep stale values until they are
/// simulated; non-anticipative coefficients never read them.
pub(crate) fn simulate_path(
    history: &DiscretePath,
    start: usize,
    spec: &DiffusionSpec,
    key: StreamKey,
    sign: f64,
    index: usize,
) -> Result<DiscretePath> {
    let mut path = history.clone();
    let end = path.grid().steps();
    simulate_into(&mut path, start, end, spec, &mut key.rng(), sign, index)?;
    Ok(path)
}

/// Overwrites nodes `start+1..=end` of `path` with an Euler–Maruyama
/// continuation from node `start`.
pub(crate) fn simulate_into<R: Rng>(
    path: &mut DiscretePath,
    start: usize,
    end: usize,
    spec: &DiffusionSpec,
    rng: &mut R,
    sign: f64,
    index: usize,
) -> Result<()> {
    let grid = Arc::clone(path.grid());
    let end = end.min(grid.steps());
    if start >= end {
        return Ok(());
    }
    let d = spec.dim();
    let mut sig_buf = vec![0.0; d * d];
    let mut b_buf = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut z = vec![0.0; d];
    let sig_const = spec.sigma.as_constant();
    let b_const = spec.drift.as_constant();
    for k in start..end {
        let t = grid.time(k);
        let dt = grid.dt(k);
        let sq = dt.sqrt();
        let sig: &[f64] = match sig_const {
            Some(c) => c,
            None => {
                spec.sigma.eval_into(t, path, &mut sig_buf);
                if !nonsingular(d, &sig_buf) {
                    return Err(Error::simulation(format!(
                        "singular sigma at t = {t} on path {index}: {sig_buf:?}"
                    )));
                }
                &sig_buf
            }
        };
        let b: &[f64] = match b_const {
            Some(c) => c,
            None => {
                spec.drift.eval_into(t, path, &mut b_buf);
                &b_buf
            }
        };
        for zi in z.iter_mut() {
            *zi = sign * rng.sample::<f64, _>(StandardNormal);
        }
        let cur = path.node(k);
        for i in 0..d {
            let mut acc = cur[i] + b[i] * dt;
            for j in 0..d {
                acc += sig[i * d + j] * z[j] * sq;
            }
            next[i] = acc;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::simulation(format!(
                "path {index} diverged at t = {}",
                grid.time(k + 1)
            )));
        }
        path.node_mut(k + 1).copy_from_slice(&next);
    }
    Ok(())
}

/// `E[u(t, X^t)]` over the ensemble.
pub fn expectation(u: &Functional, t: f64, ensemble: &Ensemble) -> Result<EstimateWithError> {
    if ensemble.is_empty() {
        return Err(Error::validation("empty ensemble"));
    }
    ensemble.grid().check_time(t, "evaluation time")?;
    ensemble.estimate(|_, p| Ok(u.eval(t, p)))
}

/// First grid time at which `sup_{s ≤ t} |X(s) - x(r)| ≥ gamma`, or `T`.
pub fn hitting_time(gamma: f64, r: f64, x: &DiscretePath, path: &DiscretePath) -> f64 {
    if gamma <= 0.0 {
        return r;
    }
    let grid = path.grid();
    let anchor = x.value_at(r);
    let start = grid.first_node_at_or_after(r);
    let dist = |v: &[f64]| -> f64 {
        v.iter()
            .zip(&anchor)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    for k in start..=grid.steps() {
        let mut d = dist(path.node(k));
        if k > start {
            d = d.max(dist(path.left_limit(k)));
        }
        if d >= gamma {
            return grid.time(k);
        }
    }
    grid.horizon()
}

#[derive(Debug, Clone, Copy)]
pub struct MartingaleOptions {
    pub checkpoints: usize,
    /// Extra slack for time-discretization drift; `None` means `5·max Δ`.
    pub bias_allowance: Option<f64>,
}

impl Default for MartingaleOptions {
    fn default() -> Self {
        Self {
            checkpoints: 5,
            bias_allowance: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointDrift {
    pub time: f64,
    pub drift: EstimateWithError,
    pub threshold: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub checkpoints: Vec<CheckpointDrift>,
    pub bias_allowance: f64,
    pub passed: bool,
}

/// Evenly spaced checkpoint indices in `(start, M]`.
pub(crate) fn checkpoint_indices(start: usize, m: usize, count: usize) -> Vec<usize> {
    let span = m.saturating_sub(start);
    if span == 0 || count == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (1..=count)
        .map(|j| start + ((j * span) as f64 / count as f64).round() as usize)
        .filter(|&k| k > start)
        .collect();
    idx.dedup();
    idx
}

pub(crate) fn default_allowance(grid: &TimeGrid) -> f64 {
    5.0 * (0..grid.steps()).map(|k| grid.dt(k)).fold(0.0, f64::max)
}

/// Builds the drift report from per-path increments `values[path][checkpoint]`.
pub(crate) fn drift_report(
    ensemble: &Ensemble,
    times: &[f64],
    per_path: Vec<Vec<f64>>,
    allowance: f64,
) -> Result<MartingaleReport> {
    let mut checkpoints = Vec::with_capacity(times.len());
    for (c, &time) in times.iter().enumerate() {
        let column: Vec<f64> = per_path.iter().map(|v| v[c]).collect();
        let drift = EstimateWithError::from_samples(&ensemble.to_samples(&column))?;
        let threshold = 3.0 * drift.std_error + allowance;
        checkpoints.push(CheckpointDrift {
            time,
            drift,
            threshold,
            flagged: drift.value.abs() > threshold,
        });
    }
    let passed = checkpoints.iter().all(|c| !c.flagged);
    Ok(MartingaleReport {
        checkpoints,
        bias_allowance: allowance,
        passed,
    })
}

/// Empirical drift of `N_t = φ(t, X^t) - ∫_r^t (∂_s + 𝓛)φ(s, X^s) ds`.
pub fn martingale_check(
    phi: &Functional,
    spec: &DiffusionSpec,
    r: f64,
    x: &DiscretePath,
    cfg: &SimConfig,
    dcfg: &DerivativeConfig,
    opts: &MartingaleOptions,
) -> Result<MartingaleReport> {
    let ensemble = simulate_from(r, x, spec, cfg)?;
    let grid = Arc::clone(&cfg.grid);
    let start = ensemble.start_index;
    let checkpoints = checkpoint_indices(start, grid.steps(), opts.checkpoints);
    let times: Vec<f64> = checkpoints.iter().map(|&k| grid.time(k)).collect();
    let allowance = opts
        .bias_allowance
        .unwrap_or_else(|| default_allowance(&grid));
    let per_path = ensemble
        .paths
        .par_iter()
        .map(|p| {
            let t0 = grid.time(start);
            let n0 = phi.eval(t0, p);
            let mut comp = 0.0;
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut next_cp = 0;
            for k in start..grid.steps() {
                let t = grid.time(k);
                comp += grid.dt(k) * parabolic_operator(spec, phi, t, p, dcfg)?;
                if next_cp < checkpoints.len() && checkpoints[next_cp] == k + 1 {
                    out.push(phi.eval(grid.time(k + 1), p) - comp - n0);
                    next_cp += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    drift_report(&ensemble, &times, per_path, allowance)
}

/// Per-path `M_T^{r,β} = exp(∫β dX - ∫β·b ds - ½∫βᵀaβ ds)` with left-point
/// Itô sums on the simulation grid.
pub fn doleans_weights(
    beta: &VectorFunctional,
    spec: &DiffusionSpec,
    ensemble: &Ensemble,
) -> Result<Vec<f64>> {
    let d = spec.dim();
    if beta.dim() != d {
        return Err(Error::shape(format!(
            "beta has {} entries, diffusion dimension {d}",
            beta.dim()
        )));
    }
    let grid = Arc::clone(ensemble.grid());
    let start = ensemble.start_index;
    let zero_beta = beta
        .as_constant()
        .is_some_and(|c| c.iter().all(|&v| v == 0.0));
    ensemble
        .paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if zero_beta {
                return Ok(1.0);
            }
            let mut log_m = 0.0;
            let mut bv = vec![0.0; d];
            let mut sig = vec![0.0; d * d];
            let mut drift = vec![0.0; d];
            for k in start..grid.steps() {
                let t = grid.time(k);
                let dt = grid.dt(k);
                beta.eval_into(t, p, &mut bv);
                spec.sigma.eval_into(t, p, &mut sig);
                spec.drift.eval_into(t, p, &mut drift);
                let a = covariance_of(d, &sig);
                let (x0, x1) = (p.node(k), p.node(k + 1));
                let mut ito = 0.0;
                let mut bb = 0.0;
                let mut quad = 0.0;
                for u in 0..d {
                    ito += bv[u] * (x1[u] - x0[u]);
                    bb += bv[u] * drift[u];
                    for w in 0..d {
                        quad += a[u * d + w] * bv[u] * bv[w];
                    }
                }
                log_m += ito - bb * dt - 0.5 * quad * dt;
            }
            let m = log_m.exp();
            if !m.is_finite() {
                return Err(Error::simulation(format!(
                    "stochastic exponential overflowed on path {i} (log M = {log_m}); use a smaller bound on beta or a finer grid"
                )));
            }
            Ok(m)
        })
        .collect()
}

/// Monte Carlo estimate of `E_{r,x}[M_T^{r,β}]`; a mean of 1 certifies the
/// martingale normalization.
pub fn stochastic_exponential(
    beta: &VectorFunctional,
    r: f64,
    x: &DiscretePath,
    spec: &DiffusionSpec,
    cfg: &SimConfig,
) -> Result<EstimateWithError> {
    let ensemble = simulate_from(r, x, spec, cfg)?;
    let w = doleans_weights(beta, spec, &ensemble)?;
    EstimateWithError::from_samples(&ensemble.to_samples(&w))
}
