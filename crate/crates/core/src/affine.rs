//! Feynman–Kac evaluation for affine `f = α + βz`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_from, DiffusionSpec, SimConfig};
use crate::error::{Error, Result};
use crate::estimate::{pairwise_sum, EstimateWithError};
use crate::functional::Functional;
use crate::path::DiscretePath;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkEstimate {
    pub estimate: EstimateWithError,
    /// Running maxima of `|α|` and `|β|` over the ensemble.
    pub alpha_max: f64,
    pub beta_max: f64,
}

/// `E[e^{-∫_r^T β} g(X^T)] - E[∫_r^T e^{-∫_r^t β} α(t, X^t) dt]` with
/// left-endpoint quadrature for both integrals.
pub fn fk_solve(
    r: f64,
    x: &DiscretePath,
    alpha: &Functional,
    beta: &Functional,
    g: &Functional,
    spec: &DiffusionSpec,
    cfg: &SimConfig,
) -> Result<FkEstimate> {
    let ensemble = simulate_from(r, x, spec, cfg)?;
    let grid = ensemble.grid().clone();
    let start = ensemble.start_index;
    let m = grid.steps();
    let per_path: Vec<(f64, f64, f64)> = ensemble
        .paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut log_disc = 0.0_f64;
            let mut source = Vec::with_capacity(m - start);
            let (mut amax, mut bmax) = (0.0_f64, 0.0_f64);
            for k in start..m {
                let t = grid.time(k);
                let dt = grid.dt(k);
                let a = alpha.eval(t, p);
                let b = beta.eval(t, p);
                if !(a.is_finite() && b.is_finite()) {
                    return Err(Error::simulation(format!(
                        "alpha = {a}, beta = {b} at t = {t} on path {i}"
                    )));
                }
                amax = amax.max(a.abs());
                bmax = bmax.max(b.abs());
                source.push(log_disc.exp() * a * dt);
                log_disc -= b * dt;
            }
            let v = log_disc.exp() * g.eval(grid.horizon(), p) - pairwise_sum(&source);
            if !v.is_finite() {
                return Err(Error::simulation(format!(
                    "non-finite value {v} on path {i}"
                )));
            }
            Ok((v, amax, bmax))
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let alpha_max = per_path.iter().map(|v| v.1).fold(0.0, f64::max);
    let beta_max = per_path.iter().map(|v| v.2).fold(0.0, f64::max);
    let estimate = EstimateWithError::from_samples(&ensemble.to_samples(&values))?;
    Ok(FkEstimate {
        estimate,
        alpha_max,
        beta_max,
    })
}
