//! Uniform time meshes and the piecewise signal types that live on them.
//!
//! Controls and parameters are piecewise constant: the value stored for
//! interval `k` applies on `(t_k, t_{k+1}]`. States and adjoints are stored at
//! nodes and interpolated linearly in between.
//!
//! A grid remembers the mesh it was cut from, so a tail grid produced by
//! [`UniformGrid::tail`] reproduces the parent's node times bit for bit. This
//! is what makes `extend_with_reference(restrict(u, k), u) == u` exact.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::problem::ControlBox;

/// Relative tolerance used when merging breakpoints of different meshes.
const BREAKPOINT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct UniformGrid {
    origin: f64,
    h: f64,
    start: usize,
    end: usize,
    t_end: f64,
}

impl UniformGrid {
    pub fn new(t0: f64, t_end: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidConfig("grid needs at least one interval".into()));
        }
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::InvalidConfig(format!("grid horizon [{t0}, {t_end}] is empty or non-finite")));
        }
        Ok(Self { origin: t0, h: (t_end - t0) / intervals as f64, start: 0, end: intervals, t_end })
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.end - self.start
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn t0(&self) -> f64 {
        self.global_node(self.start)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Index of this grid's first node within the mesh it was cut from.
    pub fn offset(&self) -> usize {
        self.start
    }

    /// Time of local node `j` (`0..=intervals`). The last node is `t_end` exactly.
    pub fn node(&self, j: usize) -> f64 {
        self.global_node(self.start + j)
    }

    fn global_node(&self, i: usize) -> f64 {
        if i == self.end {
            self.t_end
        } else {
            self.origin + i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.intervals()).map(move |j| self.node(j))
    }

    /// The grid on `[t_k, T]` sharing this grid's nodes.
    pub fn tail(&self, k: usize) -> Result<Self> {
        if k >= self.intervals() {
            return Err(Error::GridMismatch(format!(
                "tail index {k} outside a grid with {} intervals",
                self.intervals()
            )));
        }
        Ok(Self { start: self.start + k, ..self.clone() })
    }

    /// A fresh grid on the same horizon with `factor` times as many intervals.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(self.t0(), self.t_end, self.intervals() * factor.max(1))
    }

    /// True when `self` is `parent.tail(k)` for some `k`.
    pub fn is_tail_of(&self, parent: &UniformGrid) -> bool {
        self.origin == parent.origin
            && self.h == parent.h
            && self.end == parent.end
            && self.t_end == parent.t_end
            && self.start >= parent.start
    }

    /// Local index of the interval `(t_k, t_{k+1}]` containing `t`, clamped to the grid.
    pub fn interval_of(&self, t: f64) -> usize {
        let n = self.intervals();
        let rel = (t - self.t0()) / self.h;
        let mut k = if rel <= 0.0 { 0 } else { (rel.ceil() as usize).saturating_sub(1) };
        k = k.min(n - 1);
        // Correct for round-off in the division at interior nodes.
        while k > 0 && t <= self.node(k) {
            k -= 1;
        }
        while k + 1 < n && t > self.node(k + 1) {
            k += 1;
        }
        k
    }

    fn same_horizon(&self, other: &UniformGrid) -> bool {
        let scale = self.t_end.abs().max(1.0);
        (self.t0() - other.t0()).abs() <= BREAKPOINT_TOL * scale
            && (self.t_end - other.t_end).abs() <= BREAKPOINT_TOL * scale
    }
}

/// Sorted, de-duplicated union of node times of `grids` restricted to `[a, b]`.
pub(crate) fn common_breakpoints(grids: &[&UniformGrid], a: f64, b: f64) -> Vec<f64> {
    let tol = BREAKPOINT_TOL * b.abs().max(a.abs()).max(1.0);
    let mut pts: Vec<f64> = vec![a, b];
    for g in grids {
        pts.extend(g.nodes().filter(|&t| t > a + tol && t < b - tol));
    }
    pts.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for t in pts {
        match out.last() {
            Some(&last) if t - last <= tol => {}
            _ => out.push(t),
        }
    }
    // `b` may have been swallowed by a breakpoint within tolerance of it.
    if let Some(last) = out.last_mut() {
        *last = b;
    }
    out
}

/// Piecewise-constant vector signal; value `k` applies on `(t_k, t_{k+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstant {
    grid: UniformGrid,
    dim: usize,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(grid: UniformGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.intervals() * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} values ({} intervals x dim {dim}), got {}",
                grid.intervals() * dim,
                grid.intervals(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "signal value", index: i / dim.max(1) });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn constant(grid: UniformGrid, value: &[f64]) -> Self {
        let values = value.repeat(grid.intervals());
        Self { dim: value.len(), grid, values }
    }

    /// Samples `f` at interval midpoints.
    pub fn from_fn(grid: UniformGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.intervals() * dim);
        for k in 0..grid.intervals() {
            let v = f(0.5 * (grid.node(k) + grid.node(k + 1)));
            values.extend_from_slice(&v);
        }
        Self::new(grid, dim, values)
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.grid.intervals()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        self.value(self.grid.interval_of(t))
    }

    /// Time average over `[a, b]`. Returns the stored value exactly when
    /// `[a, b]` lies inside one interval.
    pub fn mean_over(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let len = b - a;
        if len <= 0.0 {
            out.copy_from_slice(self.value_at(a));
            return out;
        }
        let tol = BREAKPOINT_TOL * len;
        let first = self.grid.interval_of(a);
        let mut pieces: Vec<(usize, f64)> = Vec::new();
        for k in first..self.intervals() {
            let lo = self.grid.node(k).max(a);
            let hi = self.grid.node(k + 1).min(b);
            if hi - lo > tol {
                pieces.push((k, hi - lo));
            }
            if self.grid.node(k + 1) >= b {
                break;
            }
        }
        match pieces.as_slice() {
            [] => out.copy_from_slice(self.value_at(a)),
            [(k, _)] => out.copy_from_slice(self.value(*k)),
            _ => {
                for (k, w) in &pieces {
                    for (o, v) in out.iter_mut().zip(self.value(*k)) {
                        *o += v * w;
                    }
                }
                out.iter_mut().for_each(|o| *o /= len);
            }
        }
        out
    }

    /// Interval averages on another grid covering the same horizon.
    pub fn average_onto(&self, grid: &UniformGrid) -> Self {
        let mut values = Vec::with_capacity(grid.intervals() * self.dim);
        for k in 0..grid.intervals() {
            values.extend(self.mean_over(grid.node(k), grid.node(k + 1)));
        }
        Self { grid: grid.clone(), dim: self.dim, values }
    }

    /// Keeps the values on `[t_k, T]`.
    pub fn restrict(&self, k: usize) -> Result<Self> {
        let grid = self.grid.tail(k)?;
        Ok(Self { values: self.values[k * self.dim..].to_vec(), grid, dim: self.dim })
    }

    /// Prepends the reference's values on `[t0_ref, t_k)` to a tail signal.
    pub fn extend_with_reference(tail: &Self, reference: &Self) -> Result<Self> {
        if !tail.grid.is_tail_of(&reference.grid) || tail.dim != reference.dim {
            return Err(Error::GridMismatch("tail signal is not cut from the reference grid".into()));
        }
        let skip = tail.grid.offset() - reference.grid.offset();
        let mut values = reference.values[..skip * reference.dim].to_vec();
        values.extend_from_slice(&tail.values);
        Ok(Self { grid: reference.grid.clone(), dim: reference.dim, values })
    }

    /// Pieces of the common refinement of `self` and `other` over the
    /// intersection of their horizons, as `(t_lo, t_hi, k_self, k_other)`.
    pub fn refine_with(&self, other: &Self) -> Result<Vec<(f64, f64, usize, usize)>> {
        if self.dim != other.dim {
            return Err(Error::GridMismatch(format!("dimension {} vs {}", self.dim, other.dim)));
        }
        let a = self.grid.t0().max(other.grid.t0());
        let b = self.grid.t_end().min(other.grid.t_end());
        if b <= a {
            return Err(Error::GridMismatch("signals have disjoint horizons".into()));
        }
        if self.grid == other.grid {
            return Ok((0..self.intervals()).map(|k| (self.grid.node(k), self.grid.node(k + 1), k, k)).collect());
        }
        let pts = common_breakpoints(&[&self.grid, &other.grid], a, b);
        Ok(pts
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (w[0], w[1], self.grid.interval_of(mid), other.grid.interval_of(mid))
            })
            .collect())
    }

    pub fn same_horizon(&self, other: &Self) -> bool {
        self.grid.same_horizon(&other.grid)
    }
}

/// A control: piecewise constant with every value inside the control box.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal(PiecewiseConstant);

impl ControlSignal {
    /// Builds a control, projecting every value onto `bounds`.
    pub fn new(grid: UniformGrid, values: Vec<f64>, bounds: &ControlBox) -> Result<Self> {
        let mut inner = PiecewiseConstant::new(grid, bounds.dim(), values)?;
        for chunk in inner.values.chunks_mut(bounds.dim()) {
            bounds.project(chunk);
        }
        Ok(Self(inner))
    }

    pub fn from_piecewise(signal: PiecewiseConstant, bounds: &ControlBox) -> Result<Self> {
        let PiecewiseConstant { grid, values, .. } = signal;
        Self::new(grid, values, bounds)
    }

    pub fn constant(grid: UniformGrid, value: &[f64], bounds: &ControlBox) -> Self {
        let mut v = value.to_vec();
        bounds.project(&mut v);
        Self(PiecewiseConstant::constant(grid, &v))
    }

    pub fn restrict(&self, k: usize) -> Result<Self> {
        self.0.restrict(k).map(Self)
    }

    pub fn extend_with_reference(tail: &Self, reference: &Self) -> Result<Self> {
        PiecewiseConstant::extend_with_reference(&tail.0, &reference.0).map(Self)
    }

    pub fn as_piecewise(&self) -> &PiecewiseConstant {
        &self.0
    }

    pub fn into_piecewise(self) -> PiecewiseConstant {
        self.0
    }
}

impl Deref for ControlSignal {
    type Target = PiecewiseConstant;
    fn deref(&self) -> &PiecewiseConstant {
        &self.0
    }
}

/// An uncertain parameter path `p(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSignal(PiecewiseConstant);

impl ParameterSignal {
    pub fn new(grid: UniformGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        PiecewiseConstant::new(grid, dim, values).map(Self)
    }

    pub fn constant(grid: UniformGrid, value: &[f64]) -> Self {
        Self(PiecewiseConstant::constant(grid, value))
    }

    /// `sup_{t ∈ [a,b]} |self(t) - other(t)|`, evaluated on the common refinement.
    pub fn sup_distance_on(&self, other: &Self, a: f64, b: f64) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::GridMismatch("parameter dimensions differ".into()));
        }
        let pts = common_breakpoints(&[self.grid(), other.grid()], a, b);
        let mut sup: f64 = 0.0;
        for w in pts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let d = euclid_dist(self.value_at(mid), other.value_at(mid));
            sup = sup.max(d);
        }
        Ok(sup)
    }

    pub fn as_piecewise(&self) -> &PiecewiseConstant {
        &self.0
    }
}

impl Deref for ParameterSignal {
    type Target = PiecewiseConstant;
    fn deref(&self) -> &PiecewiseConstant {
        &self.0
    }
}

/// Node values with linear interpolation in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: UniformGrid,
    dim: usize,
    nodes: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: UniformGrid, dim: usize, nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() != (grid.intervals() + 1) * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} node values, got {}",
                (grid.intervals() + 1) * dim,
                nodes.len()
            )));
        }
        Ok(Self { grid, dim, nodes })
    }

    pub fn from_fn(grid: UniformGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut nodes = Vec::with_capacity((grid.intervals() + 1) * dim);
        for t in grid.nodes() {
            nodes.extend(f(t));
        }
        Self::new(grid, dim, nodes)
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn terminal(&self) -> &[f64] {
        self.node(self.grid.intervals())
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let k = self.grid.interval_of(t);
        let (ta, tb) = (self.grid.node(k), self.grid.node(k + 1));
        let s = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        self.node(k).iter().zip(self.node(k + 1)).map(|(a, b)| a + s * (b - a)).collect()
    }

    pub fn restrict(&self, k: usize) -> Result<Self> {
        let grid = self.grid.tail(k)?;
        Ok(Self { nodes: self.nodes[k * self.dim..].to_vec(), grid, dim: self.dim })
    }

    /// Reference nodes before `t_k`, tail nodes from `t_k` on.
    pub fn extend_with_reference(tail: &Self, reference: &Self) -> Result<Self> {
        if !tail.grid.is_tail_of(&reference.grid) || tail.dim != reference.dim {
            return Err(Error::GridMismatch("tail trajectory is not cut from the reference grid".into()));
        }
        let skip = tail.grid.offset() - reference.grid.offset();
        let mut nodes = reference.nodes[..skip * reference.dim].to_vec();
        nodes.extend_from_slice(&tail.nodes);
        Ok(Self { grid: reference.grid.clone(), dim: reference.dim, nodes })
    }
}

/// `y = (x, λ, u)` on one shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremalTriple {
    pub x: Trajectory,
    pub lambda: Trajectory,
    pub u: ControlSignal,
}

impl ExtremalTriple {
    pub fn new(x: Trajectory, lambda: Trajectory, u: ControlSignal) -> Result<Self> {
        if x.grid() != lambda.grid() || x.grid() != u.grid() {
            return Err(Error::GridMismatch("state, adjoint and control must share one grid".into()));
        }
        Ok(Self { x, lambda, u })
    }

    pub fn grid(&self) -> &UniformGrid {
        self.x.grid()
    }
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn euclid(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ControlBox {
        ControlBox::new(vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn last_node_is_exact() {
        let g = UniformGrid::new(0.0, 4.0 * std::f64::consts::PI, 960).unwrap();
        assert_eq!(g.node(960), 4.0 * std::f64::consts::PI);
        let tail = g.tail(17).unwrap();
        assert_eq!(tail.node(0), g.node(17));
        assert_eq!(tail.node(tail.intervals()), g.t_end());
        assert!(tail.is_tail_of(&g));
    }

    #[test]
    fn interval_semantics_left_open() {
        let g = UniformGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.interval_of(0.0), 0);
        assert_eq!(g.interval_of(0.25), 0);
        assert_eq!(g.interval_of(0.2500001), 1);
        assert_eq!(g.interval_of(1.0), 3);
        assert_eq!(g.interval_of(7.0), 3);
    }

    #[test]
    fn restrict_at_zero_is_identity_and_round_trips() {
        let g = UniformGrid::new(0.0, 1.0, 10).unwrap();
        let u = ControlSignal::new(g, (0..10).map(|k| (k as f64 * 0.37).sin()).collect(), &unit_box()).unwrap();
        assert_eq!(u.restrict(0).unwrap(), u);
        for k in 0..10 {
            let back = ControlSignal::extend_with_reference(&u.restrict(k).unwrap(), &u).unwrap();
            assert_eq!(back, u);
        }
    }

    #[test]
    fn extend_rejects_foreign_grid() {
        let g = UniformGrid::new(0.0, 1.0, 10).unwrap();
        let other = UniformGrid::new(0.0, 1.0, 20).unwrap();
        let u = ControlSignal::constant(g, &[0.5], &unit_box());
        let w = ControlSignal::constant(other.tail(3).unwrap(), &[0.5], &unit_box());
        assert!(matches!(ControlSignal::extend_with_reference(&w, &u), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn control_values_are_projected() {
        let g = UniformGrid::new(0.0, 1.0, 3).unwrap();
        let u = ControlSignal::new(g, vec![-4.0, 0.3, 9.0], &unit_box()).unwrap();
        assert_eq!(u.values(), &[-1.0, 0.3, 1.0]);
    }

    #[test]
    fn mean_over_is_exact_inside_one_cell() {
        let g = UniformGrid::new(0.0, 1.0, 3).unwrap();
        let p = ParameterSignal::new(g, 1, vec![1.0 + 0.1, 2.0, 3.0]).unwrap();
        assert_eq!(p.mean_over(0.05, 0.3)[0], 1.1);
        let m = p.mean_over(0.0, 2.0 / 3.0)[0];
        assert!((m - 1.55).abs() < 1e-14);
    }

    #[test]
    fn sup_distance_uses_refinement() {
        let coarse = UniformGrid::new(0.0, 1.0, 2).unwrap();
        let fine = UniformGrid::new(0.0, 1.0, 8).unwrap();
        let a = ParameterSignal::constant(coarse, &[0.0]);
        let mut vals = vec![0.0; 8];
        vals[1] = -0.3;
        vals[6] = 0.2;
        let b = ParameterSignal::new(fine, 1, vals).unwrap();
        assert_eq!(a.sup_distance_on(&b, 0.0, 1.0).unwrap(), 0.3);
        assert_eq!(a.sup_distance_on(&b, 0.5, 1.0).unwrap(), 0.2);
    }

    #[test]
    fn trajectory_interpolates() {
        let g = UniformGrid::new(0.0, 1.0, 2).unwrap();
        let x = Trajectory::new(g, 1, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(x.value_at(0.25)[0], 0.5);
        assert_eq!(x.value_at(0.75)[0], 0.5);
    }
}
