//! Discrete continuous paths on a shared time grid.
//!
//! A [`DiscretePath`] stores node values on a [`TimeGrid`] and is evaluated
//! off-grid by linear interpolation. Two pieces of extra bookkeeping keep the
//! path-space operations exact on the grid:
//!
//! * `freeze`: a path stopped at an off-grid time `t` is constant from `t`
//!   onward. The segment containing `t` interpolates up to `t` and is flat
//!   after it.
//! * `jumps`: [`DiscretePath::vertical_bump`] produces a right-continuous
//!   path with a jump at a grid node. The left limit at that node is kept so
//!   that interpolation and integration before the jump see the unbumped
//!   path.
//!
//! Serialized paths (CSV and JSON) carry node values only.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when matching a time against grid nodes.
const TIME_EPS: f64 = 1e-12;

/// Strictly increasing time nodes `0 = t_0 < ... < t_M = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `steps` intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::validation(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::validation("grid needs at least one step"));
        }
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        nodes[steps] = horizon;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::validation("grid needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::validation("first grid node must be exactly 0"));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("grid nodes must be finite"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("grid nodes must be strictly increasing"));
        }
        Ok(Self { nodes })
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Number of intervals `M`.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Width of interval `[t_k, t_{k+1}]`.
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    fn eps(&self) -> f64 {
        TIME_EPS * self.horizon()
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= -self.eps() && t <= self.horizon() + self.eps()
    }

    pub fn check_time(&self, t: f64, what: &str) -> Result<()> {
        if t.is_finite() && self.contains_time(t) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "{what} = {t} outside [0, {}]",
                self.horizon()
            )))
        }
    }

    /// Index of the node equal to `t` (up to a relative 1e-12 slack).
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let k = self.first_node_at_or_after(t);
        if k < self.nodes.len() && (self.nodes[k] - t).abs() <= self.eps() {
            return Some(k);
        }
        if k > 0 && (self.nodes[k - 1] - t).abs() <= self.eps() {
            return Some(k - 1);
        }
        None
    }

    /// Smallest `k` with `t_k >= t - eps`; `M` when `t` is beyond the horizon.
    pub fn first_node_at_or_after(&self, t: f64) -> usize {
        let eps = self.eps();
        let k = self.nodes.partition_point(|&s| s < t - eps);
        k.min(self.steps())
    }

    /// Largest `k` with `t_k <= t`, clamped to `[0, M]`.
    pub fn segment(&self, t: f64) -> usize {
        let k = self.nodes.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.steps())
    }

    pub(crate) fn same_as(&self, other: &TimeGrid) -> bool {
        std::ptr::eq(self, other) || self.nodes == other.nodes
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Jump {
    node: usize,
    left: Vec<f64>,
}

/// A `d`-dimensional path on a time grid.
#[derive(Debug, Clone)]
pub struct DiscretePath {
    grid: Arc<TimeGrid>,
    dim: usize,
    /// Node-major: node `k` occupies `values[k*dim..(k+1)*dim]`.
    values: Vec<f64>,
    freeze: Option<f64>,
    jumps: Vec<Jump>,
}

impl PartialEq for DiscretePath {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_as(&other.grid)
            && self.dim == other.dim
            && self.values == other.values
            && self.freeze == other.freeze
            && self.jumps == other.jumps
    }
}

impl DiscretePath {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("path dimension must be positive"));
        }
        if values.len() != dim * grid.nodes.len() {
            return Err(Error::shape(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                dim * grid.nodes.len(),
                grid.nodes.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "path value at node {} is not finite",
                i / dim
            )));
        }
        Ok(Self {
            grid,
            dim,
            values,
            freeze: None,
            jumps: Vec::new(),
        })
    }

    /// Path sampled from `f(t)` at every node.
    pub fn from_fn(grid: Arc<TimeGrid>, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(dim * grid.nodes.len());
        for &t in grid.nodes() {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::shape(format!(
                    "f({t}) has length {}, expected {dim}",
                    v.len()
                )));
            }
            values.extend_from_slice(&v);
        }
        Self::new(grid, dim, values)
    }

    /// One-dimensional path `s -> f(s)`.
    pub fn scalar(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, |t| vec![f(t)])
    }

    pub fn constant(grid: Arc<TimeGrid>, value: &[f64]) -> Result<Self> {
        Self::from_fn(grid, value.len(), |_| value.to_vec())
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub(crate) fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value just before node `k`; differs from [`Self::node`] only at a jump.
    pub fn left_limit(&self, k: usize) -> &[f64] {
        match self.jumps.iter().find(|j| j.node == k) {
            Some(j) => &j.left,
            None => self.node(k),
        }
    }

    pub fn has_jumps(&self) -> bool {
        !self.jumps.is_empty()
    }

    /// Coordinate `i` of `x(s)`.
    pub fn coord_at(&self, s: f64, i: usize) -> f64 {
        let grid = &*self.grid;
        let m = grid.steps();
        if s >= grid.horizon() {
            return self.node(m)[i];
        }
        if s <= 0.0 {
            return self.node(0)[i];
        }
        let k = grid.segment(s);
        let tk = grid.nodes[k];
        if s == tk || k == m {
            return self.node(k)[i];
        }
        let vk = self.node(k)[i];
        let right = self.left_limit(k + 1)[i];
        let t_end = match self.freeze {
            Some(f) if f > tk && f < grid.nodes[k + 1] => {
                if s >= f {
                    return right;
                }
                f
            }
            _ => grid.nodes[k + 1],
        };
        let w = (s - tk) / (t_end - tk);
        vk + (right - vk) * w
    }

    /// `x(s)` written into `out`.
    pub fn value_at_into(&self, s: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.coord_at(s, i);
        }
    }

    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_at_into(s, &mut out);
        out
    }

    /// `∫_0^t x_i(s) ds` by the trapezoidal rule on the grid, which is exact
    /// for the piecewise-linear path. Jumps contribute their left limits.
    pub fn integral(&self, t: f64, i: usize) -> f64 {
        let grid = &*self.grid;
        let t = t.clamp(0.0, grid.horizon());
        let k = grid.segment(t);
        let mut acc = 0.0;
        for j in 0..k {
            acc += self.segment_integral(j, grid.nodes[j + 1], self.left_limit(j + 1)[i], i);
        }
        if t > grid.nodes[k] {
            acc += self.segment_integral(k, t, self.coord_at(t, i), i);
        }
        acc
    }

    /// Trapezoid over `[t_j, end]` with right value `b`, split at a freeze
    /// time inside the segment.
    fn segment_integral(&self, j: usize, end: f64, b: f64, i: usize) -> f64 {
        let tj = self.grid.nodes[j];
        let a = self.node(j)[i];
        match self.freeze {
            Some(f) if f > tj && f < end => {
                let v = self.coord_at(f, i);
                0.5 * (a + v) * (f - tj) + v * (end - f)
            }
            _ => 0.5 * (a + b) * (end - tj),
        }
    }

    /// The path stopped at `t`: `y(s) = x(min(s, t))`.
    pub fn stop(&self, t: f64) -> Result<Self> {
        self.grid.check_time(t, "stopping time")?;
        let grid = Arc::clone(&self.grid);
        if t >= grid.horizon() - grid.eps() {
            return Ok(self.clone());
        }
        if let Some(k) = grid.node_index(t) {
            return Ok(self.stop_at_node(k));
        }
        let k = grid.segment(t);
        let frozen = self.value_at(t);
        let mut out = self.clone();
        for j in (k + 1)..grid.nodes.len() {
            out.node_mut(j).copy_from_slice(&frozen);
        }
        out.jumps.retain(|jmp| jmp.node <= k);
        out.freeze = match self.freeze {
            Some(f) if f < t => Some(f),
            _ => Some(t),
        };
        Ok(out)
    }

    /// Stop at grid node `k` (no interpolation needed).
    pub fn stop_at_node(&self, k: usize) -> Self {
        let mut out = self.clone();
        let m = self.grid.steps();
        if k >= m {
            return out;
        }
        let d = self.dim;
        let (head, tail) = out.values.split_at_mut((k + 1) * d);
        let frozen = &head[k * d..];
        for chunk in tail.chunks_exact_mut(d) {
            chunk.copy_from_slice(frozen);
        }
        out.jumps.retain(|j| j.node <= k);
        if let Some(f) = out.freeze {
            if f >= self.grid.nodes[k] {
                out.freeze = None;
            }
        }
        out
    }

    /// `sup_s |x(s)|` over grid nodes (and left limits at jumps).
    pub fn sup_norm(&self) -> f64 {
        let node_max = self
            .values
            .chunks_exact(self.dim)
            .map(euclid)
            .fold(0.0_f64, f64::max);
        self.jumps
            .iter()
            .map(|j| euclid(&j.left))
            .fold(node_max, f64::max)
    }

    /// `x + h·1_{[t,T]}`. Off-grid `t` snaps to the first node at or after it.
    pub fn vertical_bump(&self, t: f64, h: &[f64]) -> Result<Self> {
        self.grid.check_time(t, "bump time")?;
        if h.len() != self.dim {
            return Err(Error::shape(format!(
                "bump has dimension {}, path has {}",
                h.len(),
                self.dim
            )));
        }
        let j = self.grid.first_node_at_or_after(t);
        Ok(self.bump_from_node(j, h))
    }

    pub(crate) fn bump_from_node(&self, j: usize, h: &[f64]) -> Self {
        let mut out = self.clone();
        if h.iter().all(|&v| v == 0.0) {
            return out;
        }
        if j > 0 && !out.jumps.iter().any(|jmp| jmp.node == j) {
            let left = self.node(j).to_vec();
            let pos = out.jumps.partition_point(|jmp| jmp.node < j);
            out.jumps.insert(pos, Jump { node: j, left });
        }
        for jmp in out.jumps.iter_mut().filter(|jmp| jmp.node > j) {
            for (l, dh) in jmp.left.iter_mut().zip(h) {
                *l += dh;
            }
        }
        let d = self.dim;
        for chunk in out.values[j * d..].chunks_exact_mut(d) {
            for (v, dh) in chunk.iter_mut().zip(h) {
                *v += dh;
            }
        }
        out
    }

    /// Bump a single coordinate from node `j` on; the hot path of the
    /// finite-difference stencils.
    pub(crate) fn bump_coord_from_node(&self, j: usize, i: usize, h: f64) -> Self {
        let mut e = vec![0.0; self.dim];
        e[i] = h;
        self.bump_from_node(j, &e)
    }

    /// Re-express the path on `grid` by evaluating it at the new nodes.
    pub fn resample(&self, grid: Arc<TimeGrid>) -> Result<Self> {
        if self.grid.same_as(&grid) {
            let mut out = self.clone();
            out.grid = grid;
            return Ok(out);
        }
        if (grid.horizon() - self.horizon()).abs() > self.grid.eps() {
            return Err(Error::shape(
                "cannot resample onto a grid with a different horizon",
            ));
        }
        let mut values = Vec::with_capacity(self.dim * grid.nodes.len());
        for &t in grid.nodes() {
            values.extend(self.value_at(t));
        }
        Self::new(grid, self.dim, values)
    }

    /// Rows `[t, x_1, ..., x_d]`, one per node.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mut row = Vec::with_capacity(self.dim + 1);
                row.push(t);
                row.extend_from_slice(self.node(k));
                row
            })
            .collect()
    }

    /// Inverse of [`Self::to_rows`]; the times must form a valid grid.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::validation("path has no rows"))?;
        if first.len() < 2 {
            return Err(Error::validation(
                "each row needs a time and at least one coordinate",
            ));
        }
        let dim = first.len() - 1;
        let mut times = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != dim + 1 {
                return Err(Error::shape(format!(
                    "row {k} has {} entries, expected {}",
                    row.len(),
                    dim + 1
                )));
            }
            times.push(row[0]);
            values.extend_from_slice(&row[1..]);
        }
        Self::new(Arc::new(TimeGrid::from_nodes(times)?), dim, values)
    }

    /// CSV with header `t,x_1,...,x_d`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=self.dim {
            let _ = write!(s, ",x_{i}");
        }
        s.push('\n');
        for row in self.to_rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('t')) {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::validation(format!("line {}: {e}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// JSON array of rows `[[t, x_1, ..., x_d], ...]`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_rows()).expect("rows serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("path json: {e}")))?;
        Self::from_rows(&rows)
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `d_∞((r,x),(s,y)) = |r - s| + sup |x^r - y^s|`, the supremum taken over
/// grid nodes.
pub fn d_infinity(r: f64, x: &DiscretePath, s: f64, y: &DiscretePath) -> Result<f64> {
    if !x.grid.same_as(&y.grid) {
        return Err(Error::shape("paths live on different grids"));
    }
    if x.dim != y.dim {
        return Err(Error::shape(format!(
            "dimensions {} and {} differ",
            x.dim, y.dim
        )));
    }
    let xr = x.stop(r)?;
    let ys = y.stop(s)?;
    let d = x.dim;
    let mut sup = 0.0_f64;
    for k in 0..x.grid.nodes.len() {
        let diff = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
        };
        sup = sup.max(diff(xr.node(k), ys.node(k)));
        if k > 0 {
            sup = sup.max(diff(xr.left_limit(k), ys.left_limit(k)));
        }
    }
    debug_assert_eq!(xr.values.len() % d, 0);
    Ok((r - s).abs() + sup)
}
