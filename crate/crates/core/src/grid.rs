//! Uniform space-time grids on `Q = (x_left, x_right) x (0, T)`, grid functions and
//! the quadrature shared by every other module.
//!
//! Quadrature contract:
//! * space: trapezoid rule over all nodes `0..=n_x + 1`; fields vanish on the two
//!   boundary nodes, so only interior nodes contribute (weight `h`).
//! * time: rectangle rule over the levels `1..=n_t` (weight `dt`). Level 0 holds the
//!   initial datum and is skipped by the integral norms.
//! * `L^inf` norms are discrete maxima over every stored level and node.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub x_left: f64,
    pub x_right: f64,
    pub horizon: f64,
    /// Interior spatial nodes.
    pub n_x: usize,
    /// Time steps.
    pub n_t: usize,
}

impl SpaceTimeGrid {
    pub fn new(x_left: f64, x_right: f64, horizon: f64, n_x: usize, n_t: usize) -> Result<Self> {
        if !(x_left.is_finite() && x_right.is_finite() && x_left < x_right) {
            return Err(Error::InvalidGrid(format!(
                "need x_left < x_right, got ({x_left}, {x_right})"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be > 0, got {horizon}")));
        }
        if n_x < 2 {
            return Err(Error::InvalidGrid(format!("n_x must be >= 2, got {n_x}")));
        }
        if n_t < 1 {
            return Err(Error::InvalidGrid(format!("n_t must be >= 1, got {n_t}")));
        }
        Ok(Self {
            x_left,
            x_right,
            horizon,
            n_x,
            n_t,
        })
    }

    pub fn h(&self) -> f64 {
        (self.x_right - self.x_left) / (self.n_x + 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn length(&self) -> f64 {
        self.x_right - self.x_left
    }

    /// Coordinate of node `i`, `0 <= i <= n_x + 1` (0 and `n_x + 1` are boundary nodes).
    pub fn x(&self, node: usize) -> f64 {
        self.x_left + node as f64 * self.h()
    }

    pub fn t(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }

    /// Interior node coordinates, in order.
    pub fn interior_nodes(&self) -> Array1<f64> {
        Array1::from_iter((1..=self.n_x).map(|i| self.x(i)))
    }

    pub fn all_nodes(&self) -> Array1<f64> {
        Array1::from_iter((0..=self.n_x + 1).map(|i| self.x(i)))
    }

    /// Trapezoid weight of node `i` (boundary nodes get `h / 2`).
    pub fn space_weight(&self, node: usize) -> f64 {
        if node == 0 || node == self.n_x + 1 {
            0.5 * self.h()
        } else {
            self.h()
        }
    }

    pub fn same_shape(&self, other: &SpaceTimeGrid) -> bool {
        self.n_x == other.n_x && self.n_t == other.n_t
    }
}

pub fn build_grid(x_left: f64, x_right: f64, horizon: f64, n_x: usize, n_t: usize) -> Result<SpaceTimeGrid> {
    SpaceTimeGrid::new(x_left, x_right, horizon, n_x, n_t)
}

/// Function of `x` sampled at all `n_x + 2` nodes, boundary nodes included.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialProfile {
    values: Array1<f64>,
}

impl SpatialProfile {
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.all_nodes().mapv(f),
        }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Array1<f64>) -> Result<Self> {
        if values.len() != grid.n_x + 2 {
            return Err(Error::Shape(format!(
                "profile has {} values, grid has {} nodes",
                values.len(),
                grid.n_x + 2
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            values: Array1::zeros(grid.n_x + 2),
        }
    }

    /// Indicator of `[a, b]`, evaluated at the nodes.
    pub fn indicator(grid: &SpaceTimeGrid, a: f64, b: f64) -> Self {
        let eps = 1e-12 * grid.length();
        Self::from_fn(grid, |x| if x >= a - eps && x <= b + eps { 1.0 } else { 0.0 })
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn interior(&self) -> ArrayView1<'_, f64> {
        let n = self.values.len();
        self.values.slice(ndarray::s![1..n - 1])
    }

    /// Trapezoid value of `∫_Ω w dx`.
    pub fn integral(&self, grid: &SpaceTimeGrid) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| grid.space_weight(i) * v)
            .sum()
    }

    pub fn l2_norm(&self, grid: &SpaceTimeGrid) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| grid.space_weight(i) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Nodes where the profile is nonzero.
    pub fn support_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    L1Q,
    L2Q,
    LinfQ,
    L1Time,
    L2Time,
    LinfTime,
    /// `L^inf(0, T; L^2(Ω))`.
    LinfL2,
}

impl NormKind {
    pub fn applies_to_fields(self) -> bool {
        matches!(self, Self::L1Q | Self::L2Q | Self::LinfQ | Self::LinfL2)
    }

    pub fn applies_to_controls(self) -> bool {
        matches!(self, Self::L1Time | Self::L2Time | Self::LinfTime)
    }
}

/// Grid function on `Q`: `values[(level, i)]` holds the value at time level `level`
/// (`0..=n_t`) and interior node `i + 1` (`0..n_x`). Boundary values are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: SpaceTimeGrid,
    pub values: Array2<f64>,
}

impl Field {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: *grid,
            values: Array2::zeros((grid.n_t + 1, grid.n_x)),
        }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n_t + 1, grid.n_x) {
            return Err(Error::Shape(format!(
                "field values {:?}, expected {:?}",
                values.dim(),
                (grid.n_t + 1, grid.n_x)
            )));
        }
        Ok(Self { grid: *grid, values })
    }

    /// Samples `f(x, t)` at every interior node and level.
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.n_t + 1, grid.n_x), |(k, i)| f(grid.x(i + 1), grid.t(k)));
        Self { grid: *grid, values }
    }

    pub fn level(&self, k: usize) -> ArrayView1<'_, f64> {
        self.values.row(k)
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Shape(format!(
                "fields on different grids: {:?} vs {:?}",
                self.values.dim(),
                other.values.dim()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            grid: self.grid,
            values: &self.values * c,
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: &self.values - &other.values,
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: &self.values + &other.values,
        })
    }

    /// Quadrature inner product `∫_Q a b`, levels `1..=n_t`.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        let h = self.grid.h();
        let dt = self.grid.dt();
        let s: f64 = self
            .values
            .slice(ndarray::s![1.., ..])
            .iter()
            .zip(other.values.slice(ndarray::s![1.., ..]).iter())
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * h * dt)
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        field_norm(self, kind)
    }

    /// Discrete `L^p(Q)` norm, `1 <= p < inf`, with the same quadrature as `L2Q`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let w = self.grid.h() * self.grid.dt();
        let s: f64 = self
            .values
            .slice(ndarray::s![1.., ..])
            .iter()
            .map(|v| v.abs().powf(p))
            .sum();
        (w * s).powf(1.0 / p)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn field_norm(f: &Field, kind: NormKind) -> Result<f64> {
    let h = f.grid.h();
    let dt = f.grid.dt();
    let interior_levels = f.values.slice(ndarray::s![1.., ..]);
    let value = match kind {
        NormKind::L1Q => interior_levels.iter().map(|v| v.abs()).sum::<f64>() * h * dt,
        NormKind::L2Q => (interior_levels.iter().map(|v| v * v).sum::<f64>() * h * dt).sqrt(),
        NormKind::LinfQ => f.max_abs(),
        NormKind::LinfL2 => f
            .values
            .axis_iter(Axis(0))
            .map(|row| (row.iter().map(|v| v * v).sum::<f64>() * h).sqrt())
            .fold(0.0_f64, f64::max),
        _ => return Err(Error::NormKind { kind, target: "fields" }),
    };
    Ok(value)
}

/// Trapezoid value of `∫_Ω f(·, t_level) w dx`; `w` is sampled at interior nodes.
pub fn integrate_space_weighted(f: &Field, level: usize, w: ArrayView1<'_, f64>) -> Result<f64> {
    if level > f.grid.n_t {
        return Err(Error::Index {
            index: level,
            len: f.grid.n_t + 1,
        });
    }
    if w.len() != f.grid.n_x {
        return Err(Error::Shape(format!(
            "weight has {} values, grid has {} interior nodes",
            w.len(),
            f.grid.n_x
        )));
    }
    Ok(f.level(level).dot(&w) * f.grid.h())
}

/// Piecewise-constant `m`-vector function of time: `values[(j, c)]` is component `j`
/// on cell `c = (t_c, t_{c+1}]`. Also used for variations and for the VI perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub grid: SpaceTimeGrid,
    pub values: Array2<f64>,
}

impl Control {
    pub fn zeros(grid: &SpaceTimeGrid, m: usize) -> Self {
        Self {
            grid: *grid,
            values: Array2::zeros((m, grid.n_t)),
        }
    }

    pub fn constant(grid: &SpaceTimeGrid, m: usize, value: f64) -> Self {
        Self {
            grid: *grid,
            values: Array2::from_elem((m, grid.n_t), value),
        }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.ncols() != grid.n_t || values.nrows() == 0 {
            return Err(Error::Shape(format!(
                "control values {:?}, expected (m >= 1, {})",
                values.dim(),
                grid.n_t
            )));
        }
        Ok(Self { grid: *grid, values })
    }

    /// Samples `f(j, t)` at the right end of each cell.
    pub fn from_fn(grid: &SpaceTimeGrid, m: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((m, grid.n_t), |(j, c)| f(j, grid.t(c + 1)));
        Self { grid: *grid, values }
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cells(&self) -> usize {
        self.values.ncols()
    }

    pub fn check_same_shape(&self, other: &Control) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Shape(format!(
                "controls of different shape: {:?} vs {:?}",
                self.values.dim(),
                other.values.dim()
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Control) -> Result<Control> {
        self.check_same_shape(other)?;
        Ok(Control {
            grid: self.grid,
            values: &self.values - &other.values,
        })
    }

    pub fn add(&self, other: &Control) -> Result<Control> {
        self.check_same_shape(other)?;
        Ok(Control {
            grid: self.grid,
            values: &self.values + &other.values,
        })
    }

    pub fn scaled(&self, c: f64) -> Control {
        Control {
            grid: self.grid,
            values: &self.values * c,
        }
    }

    /// `self + s * dir`.
    pub fn axpy(&self, s: f64, dir: &Control) -> Result<Control> {
        self.check_same_shape(dir)?;
        Ok(Control {
            grid: self.grid,
            values: &self.values + &(&dir.values * s),
        })
    }

    /// `∫_0^T <a, b> dt`, exact for piecewise-constant functions.
    pub fn inner(&self, other: &Control) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok((&self.values * &other.values).sum() * self.grid.dt())
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        control_norm(self, kind)
    }
}

pub fn control_norm(v: &Control, kind: NormKind) -> Result<f64> {
    let dt = v.grid.dt();
    let value = match kind {
        NormKind::L1Time => v.values.iter().map(|x| x.abs()).sum::<f64>() * dt,
        NormKind::L2Time => (v.values.iter().map(|x| x * x).sum::<f64>() * dt).sqrt(),
        NormKind::LinfTime => v.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        _ => return Err(Error::NormKind { kind, target: "controls" }),
    };
    Ok(value)
}

/// Cellwise box `lower <= u <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

impl ControlBounds {
    pub fn new(lower: Array2<f64>, upper: Array2<f64>) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::Shape(format!(
                "bounds of different shape: {:?} vs {:?}",
                lower.dim(),
                upper.dim()
            )));
        }
        if let Some(((j, c), _)) = lower
            .indexed_iter()
            .find(|(idx, lo)| !(**lo < upper[*idx]) || !lo.is_finite() || !upper[*idx].is_finite())
        {
            return Err(Error::Problem(format!(
                "u_a < u_b violated at component {j}, cell {c}: {} vs {}",
                lower[(j, c)],
                upper[(j, c)]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Constant bounds per component.
    pub fn uniform(grid: &SpaceTimeGrid, lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape("bound vectors must be nonempty and of equal length".into()));
        }
        let m = lower.len();
        Self::new(
            Array2::from_shape_fn((m, grid.n_t), |(j, _)| lower[j]),
            Array2::from_shape_fn((m, grid.n_t), |(j, _)| upper[j]),
        )
    }

    pub fn m(&self) -> usize {
        self.lower.nrows()
    }

    pub fn contains(&self, u: &Control) -> bool {
        u.values.dim() == self.lower.dim()
            && u
                .values
                .indexed_iter()
                .all(|(idx, v)| *v >= self.lower[idx] && *v <= self.upper[idx])
    }

    pub fn lower_control(&self, grid: &SpaceTimeGrid) -> Control {
        Control {
            grid: *grid,
            values: self.lower.clone(),
        }
    }

    pub fn upper_control(&self, grid: &SpaceTimeGrid) -> Control {
        Control {
            grid: *grid,
            values: self.upper.clone(),
        }
    }

    pub fn midpoint(&self, grid: &SpaceTimeGrid) -> Control {
        Control {
            grid: *grid,
            values: (&self.lower + &self.upper) * 0.5,
        }
    }

    /// Largest cellwise width `u_b - u_a`.
    pub fn max_width(&self) -> f64 {
        (&self.upper - &self.lower).iter().fold(0.0_f64, |m, w| m.max(*w))
    }
}
