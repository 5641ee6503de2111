//! Pointwise nonlinearities `(x, t, y) -> R` with their first two `y`-derivatives.
//!
//! The same trait carries the state nonlinearity `f` and the integrands `L0`, `L1_j`.
//! Laws receive a [`Site`] rather than bare coordinates so that tabulated data
//! (tracking targets computed on the grid) can be indexed exactly.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, SpaceTimeGrid};

/// Evaluation point: coordinates plus the grid indices they came from.
/// `node` runs over `0..=n_x + 1` (boundary nodes included), `level` over `0..=n_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub x: f64,
    pub t: f64,
    pub node: usize,
    pub level: usize,
}

impl Site {
    pub fn on(grid: &SpaceTimeGrid, node: usize, level: usize) -> Self {
        Self {
            x: grid.x(node),
            t: grid.t(level),
            node,
            level,
        }
    }
}

pub trait ScalarLaw: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn value(&self, s: &Site, y: f64) -> f64;
    fn d_dy(&self, s: &Site, y: f64) -> f64;
    fn d2_dy2(&self, s: &Site, y: f64) -> f64;
}

pub type Law = Arc<dyn ScalarLaw>;

pub type Coefficient = Arc<dyn Fn(&Site) -> f64 + Send + Sync>;

/// `Σ_k c_k y^k` with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    name: String,
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(name: impl Into<String>, coeffs: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            coeffs,
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", vec![])
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn eval(coeffs: impl DoubleEndedIterator<Item = f64>, y: f64) -> f64 {
        coeffs.rev().fold(0.0, |acc, c| acc * y + c)
    }
}

impl ScalarLaw for Polynomial {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, _: &Site, y: f64) -> f64 {
        Self::eval(self.coeffs.iter().copied(), y)
    }

    fn d_dy(&self, _: &Site, y: f64) -> f64 {
        Self::eval(
            self.coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c),
            y,
        )
    }

    fn d2_dy2(&self, _: &Site, y: f64) -> f64 {
        Self::eval(
            self.coeffs
                .iter()
                .enumerate()
                .skip(2)
                .map(|(k, c)| (k * (k - 1)) as f64 * c),
            y,
        )
    }
}

/// `a(x, t) + b(x, t) y`.
#[derive(Clone)]
pub struct Affine {
    name: String,
    intercept: Coefficient,
    slope: Coefficient,
}

impl Affine {
    pub fn new(name: impl Into<String>, intercept: Coefficient, slope: Coefficient) -> Self {
        Self {
            name: name.into(),
            intercept,
            slope,
        }
    }

    /// `c(x, t) y`.
    pub fn linear(name: impl Into<String>, slope: Coefficient) -> Self {
        Self::new(name, Arc::new(|_: &Site| 0.0), slope)
    }
}

impl fmt::Debug for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Affine").field("name", &self.name).finish()
    }
}

impl ScalarLaw for Affine {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, s: &Site, y: f64) -> f64 {
        (self.intercept)(s) + (self.slope)(s) * y
    }

    fn d_dy(&self, s: &Site, _: f64) -> f64 {
        (self.slope)(s)
    }

    fn d2_dy2(&self, _: &Site, _: f64) -> f64 {
        0.0
    }
}

/// `weight / 2 * (y - y_d)^2` with a tabulated target on the grid.
#[derive(Debug, Clone)]
pub struct Tracking {
    name: String,
    target: Arc<Field>,
    weight: f64,
}

impl Tracking {
    pub fn new(name: impl Into<String>, target: Field, weight: f64) -> Self {
        Self {
            name: name.into(),
            target: Arc::new(target),
            weight,
        }
    }

    pub fn target(&self) -> &Field {
        &self.target
    }

    fn target_at(&self, s: &Site) -> f64 {
        if s.node == 0 || s.node > self.target.grid.n_x {
            0.0
        } else {
            self.target.values[(s.level, s.node - 1)]
        }
    }
}

impl ScalarLaw for Tracking {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, s: &Site, y: f64) -> f64 {
        let d = y - self.target_at(s);
        0.5 * self.weight * d * d
    }

    fn d_dy(&self, s: &Site, y: f64) -> f64 {
        self.weight * (y - self.target_at(s))
    }

    fn d2_dy2(&self, _: &Site, _: f64) -> f64 {
        self.weight
    }
}

/// Checks finiteness of a law and its derivatives on `|y| <= y_max` at a sample of
/// grid sites; with `monotone`, also `d_dy >= 0`.
pub fn validate_law(law: &dyn ScalarLaw, grid: &SpaceTimeGrid, y_max: f64, monotone: bool) -> Result<()> {
    let node_stride = (grid.n_x / 8).max(1);
    let level_stride = (grid.n_t / 8).max(1);
    let ys: Vec<f64> = (0..=16).map(|i| -y_max + 2.0 * y_max * i as f64 / 16.0).collect();
    for level in (0..=grid.n_t).step_by(level_stride) {
        for node in (0..=grid.n_x + 1).step_by(node_stride) {
            let s = Site::on(grid, node, level);
            for &y in &ys {
                let (v, d1, d2) = (law.value(&s, y), law.d_dy(&s, y), law.d2_dy2(&s, y));
                if !(v.is_finite() && d1.is_finite() && d2.is_finite()) {
                    return Err(Error::Problem(format!(
                        "law `{}` not finite at (x = {}, t = {}, y = {y})",
                        law.name(),
                        s.x,
                        s.t
                    )));
                }
                if monotone && d1 < 0.0 {
                    return Err(Error::Monotonicity {
                        law: law.name().to_string(),
                        x: s.x,
                        t: s.t,
                        y,
                        value: d1,
                    });
                }
            }
        }
    }
    Ok(())
}
