//! Finite-difference horizontal and vertical derivatives, the generator
//! `𝓛`, and the PPDE residual `(∂_t + 𝓛)u - f(t, x, u)`.
//!
//! Vertical derivatives bump the path from a grid node onward, so `t` must
//! be a grid node. The horizontal derivative freezes the path at `t` and
//! moves time forward by one grid step unless configured otherwise.

use serde::{Deserialize, Serialize};

use crate::diffusion::{covariance_of, DiffusionSpec};
use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::nonlinearity::Nonlinearity;
use crate::path::DiscretePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Forward,
    /// Uses `u(t - h, x^t)`; only meaningful when the caller knows the
    /// functional is smooth in time on both sides of `t`.
    Central,
}

/// Steps for the difference quotients; `None` selects the defaults
/// (`1e-4·max(1, ‖x‖)` vertically, one grid step horizontally).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivativeConfig {
    pub step_h: Option<f64>,
    pub time_step_h: Option<f64>,
    pub scheme: Scheme,
}

impl DerivativeConfig {
    pub fn with_steps(step_h: f64, time_step_h: f64) -> Self {
        Self {
            step_h: Some(step_h),
            time_step_h: Some(time_step_h),
            scheme: Scheme::Forward,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("step_h", self.step_h), ("time_step_h", self.time_step_h)] {
            if let Some(h) = v {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::validation(format!(
                        "{name} must be positive, got {h}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vertical_step(&self, x: &DiscretePath) -> f64 {
        self.step_h.unwrap_or_else(|| 1e-4 * x.sup_norm().max(1.0))
    }

    fn time_step(&self, t: f64, x: &DiscretePath) -> Result<f64> {
        if let Some(h) = self.time_step_h {
            return Ok(h);
        }
        let grid = x.grid();
        let next = match grid.node_index(t) {
            Some(k) => k + 1,
            None => grid.first_node_at_or_after(t),
        };
        if next > grid.steps() {
            return Err(Error::domain(format!("no grid step after t = {t}")));
        }
        Ok(grid.time(next) - t)
    }
}

fn grid_node(x: &DiscretePath, t: f64) -> Result<usize> {
    x.grid().check_time(t, "t")?;
    x.grid().node_index(t).ok_or_else(|| {
        Error::domain(format!(
            "vertical derivatives need a grid-aligned t, got {t}"
        ))
    })
}

/// `∂_t u(t, x)`: derivative of `h ↦ u(t + h, x^t)` at `0`.
pub fn horizontal_derivative(
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<f64> {
    cfg.validate()?;
    let grid = x.grid();
    grid.check_time(t, "t")?;
    let horizon = grid.horizon();
    if t >= horizon {
        return Err(Error::domain(format!(
            "horizontal derivative needs t < T = {horizon}"
        )));
    }
    let h = cfg.time_step(t, x)?;
    if t + h > horizon * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "t + h = {} exceeds T = {horizon}",
            t + h
        )));
    }
    let xt = x.stop(t)?;
    let ahead = u.eval((t + h).min(horizon), &xt);
    match cfg.scheme {
        Scheme::Forward => Ok((ahead - u.eval(t, &xt)) / h),
        Scheme::Central => {
            if t - h < 0.0 {
                return Err(Error::domain(format!(
                    "central scheme needs t - h >= 0, got {}",
                    t - h
                )));
            }
            Ok((ahead - u.eval(t - h, &xt)) / (2.0 * h))
        }
    }
}

/// Value, central gradient and unsymmetrized Hessian from one stencil.
struct VerticalStencil {
    grad: Vec<f64>,
    hess_raw: Vec<f64>,
}

fn vertical_stencil(
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
    want_hessian: bool,
) -> Result<VerticalStencil> {
    cfg.validate()?;
    let j = grid_node(x, t)?;
    let d = x.dim();
    let h = cfg.vertical_step(x);
    let center = u.eval(t, x);
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for i in 0..d {
        plus[i] = u.eval(t, &x.bump_coord_from_node(j, i, h));
        minus[i] = u.eval(t, &x.bump_coord_from_node(j, i, -h));
        grad[i] = (plus[i] - minus[i]) / (2.0 * h);
    }
    let mut hess_raw = vec![0.0; d * d];
    if want_hessian {
        for i in 0..d {
            hess_raw[i * d + i] = (plus[i] - 2.0 * center + minus[i]) / (h * h);
            for k in 0..d {
                if k == i {
                    continue;
                }
                // bump coordinate i first, then k
                let bump2 = |si: f64, sk: f64| {
                    let y = x.bump_coord_from_node(j, i, si * h);
                    u.eval(t, &y.bump_coord_from_node(j, k, sk * h))
                };
                hess_raw[i * d + k] = (bump2(1.0, 1.0) - bump2(1.0, -1.0) - bump2(-1.0, 1.0)
                    + bump2(-1.0, -1.0))
                    / (4.0 * h * h);
            }
        }
    }
    Ok(VerticalStencil { grad, hess_raw })
}

/// `(∂_{x_1}u, ..., ∂_{x_d}u)` by central differences of vertical bumps.
pub fn vertical_gradient(
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<Vec<f64>> {
    Ok(vertical_stencil(u, t, x, cfg, false)?.grad)
}

/// Second vertical derivatives before symmetrization, row-major `d × d`.
pub fn vertical_hessian_raw(
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<Vec<f64>> {
    Ok(vertical_stencil(u, t, x, cfg, true)?.hess_raw)
}

/// Symmetrized second vertical derivative `(H + Hᵀ)/2`.
pub fn vertical_hessian(
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<Vec<f64>> {
    let raw = vertical_hessian_raw(u, t, x, cfg)?;
    Ok(symmetrize(x.dim(), &raw))
}

fn symmetrize(d: usize, h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            out[i * d + k] = 0.5 * (h[i * d + k] + h[k * d + i]);
        }
    }
    out
}

/// `𝓛u = ½ Σ a_ij ∂_{x_i x_j}u + Σ b_i ∂_{x_i}u`.
pub fn apply_generator(
    spec: &DiffusionSpec,
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<f64> {
    let d = spec.dim();
    if x.dim() != d {
        return Err(Error::shape(format!(
            "path dimension {} vs diffusion {d}",
            x.dim()
        )));
    }
    let st = vertical_stencil(u, t, x, cfg, true)?;
    let hess = symmetrize(d, &st.hess_raw);
    let a = covariance_of(d, &spec.sigma().eval(t, x));
    let b = spec.drift().eval(t, x);
    let second: f64 = a.iter().zip(&hess).map(|(p, q)| p * q).sum();
    let first: f64 = b.iter().zip(&st.grad).map(|(p, q)| p * q).sum();
    Ok(0.5 * second + first)
}

/// `(∂_t + 𝓛)u(t, x)`.
pub fn parabolic_operator(
    spec: &DiffusionSpec,
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<f64> {
    Ok(horizontal_derivative(u, t, x, cfg)? + apply_generator(spec, u, t, x, cfg)?)
}

/// `(∂_t + 𝓛)u(t, x) - f(t, x, u(t, x))`.
pub fn ppde_residual(
    spec: &DiffusionSpec,
    f: &Nonlinearity,
    u: &Functional,
    t: f64,
    x: &DiscretePath,
    cfg: &DerivativeConfig,
) -> Result<f64> {
    let z = u.eval(t, x);
    if !f.domain().contains(z) {
        return Err(Error::domain(format!(
            "u(t, x) = {z} lies outside D = {}",
            f.domain()
        )));
    }
    Ok(parabolic_operator(spec, u, t, x, cfg)? - f.eval(t, x, z)?)
}

type Closed<T> = Box<dyn Fn(f64, &DiscretePath) -> T + Send + Sync>;

/// A functional with closed-form derivatives, used to test the stencils.
pub struct AnalyticFunctional {
    pub name: &'static str,
    pub dim: usize,
    pub u: Functional,
    pub dt: Closed<f64>,
    pub grad: Closed<Vec<f64>>,
    pub hess: Closed<Vec<f64>>,
}

/// The five reference functionals: `x(t)`, `∫_0^t x ds`, the heat
/// functional `x(t)² + (T - t)`, `|x(t)|²` in two dimensions and
/// `x_1(t)x_2(t)`.
pub fn catalogue(horizon: f64) -> Vec<AnalyticFunctional> {
    vec![
        AnalyticFunctional {
            name: "x(t)",
            dim: 1,
            u: Functional::new("x(t)", |t, x: &DiscretePath| x.coord_at(t, 0)),
            dt: Box::new(|_, _| 0.0),
            grad: Box::new(|_, _| vec![1.0]),
            hess: Box::new(|_, _| vec![0.0]),
        },
        AnalyticFunctional {
            name: "int_0^t x ds",
            dim: 1,
            u: Functional::new("int_0^t x ds", |t, x: &DiscretePath| x.integral(t, 0)),
            dt: Box::new(|t, x| x.coord_at(t, 0)),
            grad: Box::new(|_, _| vec![0.0]),
            hess: Box::new(|_, _| vec![0.0]),
        },
        AnalyticFunctional {
            name: "x(t)^2 + (T - t)",
            dim: 1,
            u: heat_functional(horizon),
            dt: Box::new(|_, _| -1.0),
            grad: Box::new(|t, x| vec![2.0 * x.coord_at(t, 0)]),
            hess: Box::new(|_, _| vec![2.0]),
        },
        AnalyticFunctional {
            name: "|x(t)|^2",
            dim: 2,
            u: Functional::new("|x(t)|^2", |t, x: &DiscretePath| {
                x.coord_at(t, 0).powi(2) + x.coord_at(t, 1).powi(2)
            }),
            dt: Box::new(|_, _| 0.0),
            grad: Box::new(|t, x| vec![2.0 * x.coord_at(t, 0), 2.0 * x.coord_at(t, 1)]),
            hess: Box::new(|_, _| vec![2.0, 0.0, 0.0, 2.0]),
        },
        AnalyticFunctional {
            name: "x_1(t) x_2(t)",
            dim: 2,
            u: Functional::new("x_1(t) x_2(t)", |t, x: &DiscretePath| {
                x.coord_at(t, 0) * x.coord_at(t, 1)
            }),
            dt: Box::new(|_, _| 0.0),
            grad: Box::new(|t, x| vec![x.coord_at(t, 1), x.coord_at(t, 0)]),
            hess: Box::new(|_, _| vec![0.0, 1.0, 1.0, 0.0]),
        },
    ]
}

/// `u(t, x) = x(t)² + (T - t)`, a classical solution of the heat PPDE with
/// `f = 0` under Brownian motion.
pub fn heat_functional(horizon: f64) -> Functional {
    Functional::new("x(t)^2 + (T - t)", move |t, x: &DiscretePath| {
        x.coord_at(t, 0).powi(2) + (horizon - t)
    })
}

/// One row of the derivative comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub functional: String,
    pub derivative: String,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
}

/// Compares every catalogue derivative with its finite-difference estimate.
pub fn check_catalogue(
    horizon: f64,
    t: f64,
    paths: (&DiscretePath, &DiscretePath),
    cfg: &DerivativeConfig,
) -> Result<Vec<DerivativeCheck>> {
    let mut rows = Vec::new();
    for item in catalogue(horizon) {
        let x = if item.dim == 1 { paths.0 } else { paths.1 };
        let mut push = |derivative: String, analytic: f64, numeric: f64| {
            rows.push(DerivativeCheck {
                functional: item.name.to_string(),
                derivative,
                analytic,
                numeric,
                abs_error: (analytic - numeric).abs(),
            })
        };
        push(
            "d_t".into(),
            (item.dt)(t, x),
            horizontal_derivative(&item.u, t, x, cfg)?,
        );
        let grad = vertical_gradient(&item.u, t, x, cfg)?;
        for (i, (a, n)) in (item.grad)(t, x).iter().zip(&grad).enumerate() {
            push(format!("d_x{}", i + 1), *a, *n);
        }
        let hess = vertical_hessian(&item.u, t, x, cfg)?;
        let d = item.dim;
        for (k, (a, n)) in (item.hess)(t, x).iter().zip(&hess).enumerate() {
            push(format!("d_x{}x{}", k / d + 1, k % d + 1), *a, *n);
        }
    }
    Ok(rows)
}
