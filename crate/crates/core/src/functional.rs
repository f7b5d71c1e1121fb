//! Non-anticipative functionals `u(t, x)` on time × path space.
//!
//! Evaluators must satisfy `u(t, x) = u(t, x^t)`: they may read the path on
//! `[0, t]` only. The simulator relies on this and hands evaluators paths
//! whose nodes after `t` are not yet simulated. [`assert_nonanticipative`]
//! checks the contract on sample inputs.
//!
//! Evaluators are shared across worker threads and must be stateless or
//! internally synchronized.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::path::DiscretePath;

type ScalarFn = dyn Fn(f64, &DiscretePath) -> f64 + Send + Sync;
type IntoFn = dyn Fn(f64, &DiscretePath, &mut [f64]) + Send + Sync;

/// Scalar non-anticipative functional.
#[derive(Clone)]
pub struct Functional {
    label: Arc<str>,
    eval: Arc<ScalarFn>,
    path_independent: bool,
    constant: Option<f64>,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("label", &self.label)
            .finish()
    }
}

impl Functional {
    pub fn new(
        label: impl Into<String>,
        eval: impl Fn(f64, &DiscretePath) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into().into(),
            eval: Arc::new(eval),
            path_independent: false,
            constant: None,
        }
    }

    /// A functional of time only.
    pub fn of_time(
        label: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let mut u = Self::new(label, move |t, _| eval(t));
        u.path_independent = true;
        u
    }

    pub fn constant(c: f64) -> Self {
        let mut u = Self::new(c.to_string(), move |_, _| c);
        u.path_independent = true;
        u.constant = Some(c);
        u
    }

    /// Marks an arbitrary evaluator as independent of the path.
    pub fn with_path_independent(mut self, flag: bool) -> Self {
        self.path_independent = flag;
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &DiscretePath) -> f64 {
        (self.eval)(t, x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_path_independent(&self) -> bool {
        self.path_independent
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    /// `self + c`, used to perturb candidate solutions.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.clone();
        let mut u = Self::new(format!("{} + {c}", self.label), move |t, x| {
            inner.eval(t, x) + c
        });
        u.path_independent = self.path_independent;
        u.constant = self.constant.map(|v| v + c);
        u
    }
}

/// Vector-valued functional (drift, Girsanov integrands).
#[derive(Clone)]
pub struct VectorFunctional {
    label: Arc<str>,
    dim: usize,
    eval: Arc<IntoFn>,
    constant: Option<Arc<[f64]>>,
}

impl fmt::Debug for VectorFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFunctional")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .finish()
    }
}

impl VectorFunctional {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        eval: impl Fn(f64, &DiscretePath, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into().into(),
            dim,
            eval: Arc::new(eval),
            constant: None,
        }
    }

    pub fn constant(v: Vec<f64>) -> Self {
        let c: Arc<[f64]> = v.into();
        let inner = Arc::clone(&c);
        Self {
            label: format!("{:?}", &*c).into(),
            dim: c.len(),
            eval: Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&inner)),
            constant: Some(c),
        }
    }

    /// Stack scalar components into a vector functional.
    pub fn from_components(components: Vec<Functional>) -> Self {
        if let Some(c) = components
            .iter()
            .map(Functional::as_constant)
            .collect::<Option<Vec<_>>>()
        {
            return Self::constant(c);
        }
        let label = components
            .iter()
            .map(|c| c.label().to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let dim = components.len();
        Self::new(format!("[{label}]"), dim, move |t, x, out| {
            for (o, c) in out.iter_mut().zip(&components) {
                *o = c.eval(t, x);
            }
        })
    }

    #[inline]
    pub fn eval_into(&self, t: f64, x: &DiscretePath, out: &mut [f64]) {
        (self.eval)(t, x, out)
    }

    pub fn eval(&self, t: f64, x: &DiscretePath) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn as_constant(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }
}

/// `d × d` matrix-valued functional, row-major.
#[derive(Clone)]
pub struct MatrixFunctional {
    label: Arc<str>,
    dim: usize,
    eval: Arc<IntoFn>,
    constant: Option<Arc<[f64]>>,
}

impl fmt::Debug for MatrixFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixFunctional")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .finish()
    }
}

impl MatrixFunctional {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        eval: impl Fn(f64, &DiscretePath, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into().into(),
            dim,
            eval: Arc::new(eval),
            constant: None,
        }
    }

    pub fn constant(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::shape(format!(
                "matrix needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let c: Arc<[f64]> = entries.into();
        let inner = Arc::clone(&c);
        Ok(Self {
            label: format!("{:?}", &*c).into(),
            dim,
            eval: Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&inner)),
            constant: Some(c),
        })
    }

    pub fn identity(dim: usize, scale: f64) -> Self {
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = scale;
        }
        Self::constant(dim, e).expect("square by construction")
    }

    /// Matrix from `d²` scalar entries, row-major.
    pub fn from_entries(dim: usize, entries: Vec<Functional>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::shape(format!(
                "matrix needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(c) = entries
            .iter()
            .map(Functional::as_constant)
            .collect::<Option<Vec<_>>>()
        {
            return Self::constant(dim, c);
        }
        let label = entries
            .iter()
            .map(|c| c.label().to_string())
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Self::new(format!("[{label}]"), dim, move |t, x, out| {
            for (o, c) in out.iter_mut().zip(&entries) {
                *o = c.eval(t, x);
            }
        }))
    }

    #[inline]
    pub fn eval_into(&self, t: f64, x: &DiscretePath, out: &mut [f64]) {
        (self.eval)(t, x, out)
    }

    pub fn eval(&self, t: f64, x: &DiscretePath) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.eval_into(t, x, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn as_constant(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }
}

/// Checks `u(t, x) == u(t, x^t)` bitwise for every sample path and time.
pub fn assert_nonanticipative(u: &Functional, paths: &[DiscretePath], times: &[f64]) -> Result<()> {
    check_all(u.label(), paths, times, |t, x| vec![u.eval(t, x)])
}

pub fn assert_nonanticipative_vector(
    u: &VectorFunctional,
    paths: &[DiscretePath],
    times: &[f64],
) -> Result<()> {
    check_all(u.label(), paths, times, |t, x| u.eval(t, x))
}

pub fn assert_nonanticipative_matrix(
    u: &MatrixFunctional,
    paths: &[DiscretePath],
    times: &[f64],
) -> Result<()> {
    check_all(u.label(), paths, times, |t, x| u.eval(t, x))
}

fn check_all(
    label: &str,
    paths: &[DiscretePath],
    times: &[f64],
    eval: impl Fn(f64, &DiscretePath) -> Vec<f64>,
) -> Result<()> {
    for (p, x) in paths.iter().enumerate() {
        for &t in times {
            let stopped = x.stop(t)?;
            let a = eval(t, x);
            let b = eval(t, &stopped);
            let same = a
                .iter()
                .zip(&b)
                .all(|(p, q)| p.to_bits() == q.to_bits() || (p.is_nan() && q.is_nan()));
            if !same {
                return Err(Error::validation(format!(
                    "functional `{label}` is anticipative: path {p}, t = {t}: {a:?} vs {b:?} on the stopped path"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::TimeGrid;

    #[test]
    fn detects_anticipation() {
        let g = Arc::new(TimeGrid::uniform(1.0, 10).unwrap());
        let x = DiscretePath::scalar(g, |s| s).unwrap();
        let good = Functional::new("x(t)", |t, x: &DiscretePath| x.coord_at(t, 0));
        let bad = Functional::new("x(T)", |_, x: &DiscretePath| x.coord_at(1.0, 0));
        let times = [0.0, 0.35, 0.5, 1.0];
        assert!(assert_nonanticipative(&good, std::slice::from_ref(&x), &times).is_ok());
        assert!(assert_nonanticipative(&bad, &[x], &times).is_err());
    }

    #[test]
    fn constant_metadata() {
        let c = Functional::constant(2.5);
        assert_eq!(c.as_constant(), Some(2.5));
        assert!(c.is_path_independent());
        assert_eq!(c.shifted(0.5).as_constant(), Some(3.0));
        let v = VectorFunctional::from_components(vec![
            Functional::constant(1.0),
            Functional::constant(2.0),
        ]);
        assert_eq!(v.as_constant(), Some(&[1.0, 2.0][..]));
    }
}
