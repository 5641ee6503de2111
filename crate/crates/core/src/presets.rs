//! Code-registered benchmark problems.
//!
//! Every preset is built on a caller-supplied grid; profiles and tabulated targets are
//! sampled on that grid so the problem is fully discrete.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Control, ControlBounds, Field, SpaceTimeGrid, SpatialProfile};
use crate::law::{Affine, Polynomial, Site, Tracking};
use crate::pde::{solve_semilinear_forward, EllipticOperator, SolverOptions};
use crate::problem::{L1Class, ProblemSpec};

/// Names accepted by [`by_name`].
pub const REGISTRY: &[&str] = &["linear_heat", "cubic_tracking", "linear_bangbang", "affine_L1"];

/// Constant `L1` of [`linear_bangbang`]; places the two zeros of the switching function
/// near the middle of a cell at `n_t = 200`.
pub const BANGBANG_L1: f64 = 0.182;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLaw {
    Cubic,
    Linear,
}

pub fn by_name(name: &str, grid: &SpaceTimeGrid) -> Result<ProblemSpec> {
    match name {
        "linear_heat" => Ok(linear_heat(grid)),
        "cubic_tracking" => Ok(cubic_tracking(grid, StateLaw::Cubic)),
        "cubic_tracking_linear" => Ok(cubic_tracking(grid, StateLaw::Linear)),
        "linear_bangbang" => Ok(linear_bangbang(grid)),
        "affine_L1" => Ok(affine_l1(grid)),
        "convex_surrogate" => Ok(convex_surrogate(grid)),
        other => Err(Error::Problem(format!(
            "unknown preset `{other}` (known: {})",
            REGISTRY.join(", ")
        ))),
    }
}

/// `sin(π (x - x_left) / ℓ)`: the first Dirichlet eigenfunction of the domain.
fn mode(grid: &SpaceTimeGrid, x: f64) -> f64 {
    (PI * (x - grid.x_left) / grid.length()).sin()
}

fn relative(grid: &SpaceTimeGrid, a: f64, b: f64) -> (f64, f64) {
    let l = grid.length();
    (grid.x_left + a * l, grid.x_left + b * l)
}

fn indicator(grid: &SpaceTimeGrid, a: f64, b: f64) -> SpatialProfile {
    let (a, b) = relative(grid, a, b);
    SpatialProfile::indicator(grid, a, b)
}

fn tracking(grid: &SpaceTimeGrid, target: impl Fn(f64, f64) -> f64) -> Arc<Tracking> {
    Arc::new(Tracking::new("tracking", Field::from_fn(grid, target), 1.0))
}

/// Heat equation, one control on the middle of the domain, quadratic tracking.
pub fn linear_heat(grid: &SpaceTimeGrid) -> ProblemSpec {
    let g = *grid;
    let horizon = grid.horizon;
    ProblemSpec {
        name: "linear_heat".into(),
        grid: g,
        op: EllipticOperator::constant(1.0),
        f: Arc::new(Polynomial::zero()),
        l0: tracking(grid, move |x, t| 0.5 * mode(&g, x) * (PI * t / horizon).sin()),
        l1: vec![Arc::new(Polynomial::zero())],
        g: vec![indicator(grid, 0.2, 0.8)],
        bounds: ControlBounds::uniform(grid, &[-1.0], &[1.0]).expect("static bounds"),
        y0: SpatialProfile::zeros(grid),
        l1_class: L1Class::IndependentOfY,
        solver: SolverOptions::default(),
        y_max: 2.0,
    }
}

/// Two controls on disjoint quarters tracking a sign-changing target; `f = y^3`, or
/// `f = y` for the convex variant.
pub fn cubic_tracking(grid: &SpaceTimeGrid, law: StateLaw) -> ProblemSpec {
    let g = *grid;
    let horizon = grid.horizon;
    let (f, name) = match law {
        StateLaw::Cubic => (Polynomial::new("y^3", vec![0.0, 0.0, 0.0, 1.0]), "cubic_tracking"),
        StateLaw::Linear => (Polynomial::new("y", vec![0.0, 1.0]), "cubic_tracking_linear"),
    };
    ProblemSpec {
        name: name.into(),
        grid: g,
        op: EllipticOperator::constant(1.0),
        f: Arc::new(f),
        l0: tracking(grid, move |x, t| {
            let s = (x - g.x_left) / g.length();
            (2.0 * PI * s).sin() * (2.0 * PI * t / horizon).sin()
        }),
        l1: vec![
            Arc::new(Polynomial::constant(1e-3)),
            Arc::new(Polynomial::constant(-1e-3)),
        ],
        g: vec![indicator(grid, 0.1, 0.4), indicator(grid, 0.6, 0.9)],
        bounds: ControlBounds::uniform(grid, &[-2.0, -2.0], &[2.0, 2.0]).expect("static bounds"),
        y0: SpatialProfile::zeros(grid),
        l1_class: L1Class::IndependentOfY,
        solver: SolverOptions::default(),
        y_max: 2.0,
    }
}

/// Fully linear problem with a known switching function.
///
/// `L0 = c(x, t) y` with `c = sin(πx)(-φ' + π²φ)`, `φ = sin(2πt/T)`, so the continuous
/// adjoint is `sin(πx) φ(t)` and `σ(t) = BANGBANG_L1 + (2ℓ/π) φ(t)` has two simple
/// zeros in `(T/2, T)`.
pub fn linear_bangbang(grid: &SpaceTimeGrid) -> ProblemSpec {
    let g = *grid;
    let k = PI / grid.length();
    let w = 2.0 * PI / grid.horizon;
    let c = move |s: &Site| {
        let phi = (w * s.t).sin();
        let dphi = w * (w * s.t).cos();
        mode(&g, s.x) * (-dphi + k * k * phi)
    };
    ProblemSpec {
        name: "linear_bangbang".into(),
        grid: g,
        op: EllipticOperator::constant(1.0),
        f: Arc::new(Polynomial::zero()),
        l0: Arc::new(Affine::linear("c*y", Arc::new(c))),
        l1: vec![Arc::new(Polynomial::constant(BANGBANG_L1))],
        g: vec![indicator(grid, 0.0, 1.0)],
        bounds: ControlBounds::uniform(grid, &[0.0], &[1.0]).expect("static bounds"),
        y0: SpatialProfile::zeros(grid),
        l1_class: L1Class::IndependentOfY,
        solver: SolverOptions::default(),
        y_max: 4.0,
    }
}

/// Continuous switching function of [`linear_bangbang`] and its zeros in `(0, T)`.
pub fn linear_bangbang_sigma(grid: &SpaceTimeGrid) -> (impl Fn(f64) -> f64, Vec<f64>) {
    let w = 2.0 * PI / grid.horizon;
    let amp = 2.0 * grid.length() / PI;
    let r = BANGBANG_L1 / amp;
    let zeros = vec![(PI + r.asin()) / w, (2.0 * PI - r.asin()) / w];
    (move |t: f64| BANGBANG_L1 + amp * (w * t).sin(), zeros)
}

/// `f = y + y^3`, `L1 = 0.1 + 0.5 y`.
pub fn affine_l1(grid: &SpaceTimeGrid) -> ProblemSpec {
    let g = *grid;
    let horizon = grid.horizon;
    ProblemSpec {
        name: "affine_L1".into(),
        grid: g,
        op: EllipticOperator::constant(1.0),
        f: Arc::new(Polynomial::new("y+y^3", vec![0.0, 1.0, 0.0, 1.0])),
        l0: tracking(grid, move |x, t| 0.3 * mode(&g, x) * (1.0 - t / horizon)),
        l1: vec![Arc::new(Affine::new(
            "0.1+0.5y",
            Arc::new(|_: &Site| 0.1),
            Arc::new(|_: &Site| 0.5),
        ))],
        g: vec![indicator(grid, 0.3, 0.7)],
        bounds: ControlBounds::uniform(grid, &[-1.0], &[1.0]).expect("static bounds"),
        y0: SpatialProfile::zeros(grid),
        l1_class: L1Class::AffineInY,
        solver: SolverOptions::default(),
        y_max: 2.0,
    }
}

/// Linear state, tracking the state of the midpoint control: the midpoint is the
/// unique minimizer with `σ ≡ 0` and `J''(u)(v, v) = ‖z_v‖²`.
pub fn convex_surrogate(grid: &SpaceTimeGrid) -> ProblemSpec {
    let bounds = ControlBounds::uniform(grid, &[0.0], &[1.0]).expect("static bounds");
    let f = Arc::new(Polynomial::new("y", vec![0.0, 1.0]));
    let op = EllipticOperator::constant(1.0);
    let g = vec![indicator(grid, 0.2, 0.8)];
    let y0 = SpatialProfile::zeros(grid);
    let solver = SolverOptions::default();
    let mid: Control = bounds.midpoint(grid);
    let target = solve_semilinear_forward(&op, f.as_ref(), &g, &mid, &y0, None, &solver)
        .expect("linear state solve with valid data");
    ProblemSpec {
        name: "convex_surrogate".into(),
        grid: *grid,
        op,
        f,
        l0: Arc::new(Tracking::new("tracking", target, 1.0)),
        l1: vec![Arc::new(Polynomial::zero())],
        g,
        bounds,
        y0,
        l1_class: L1Class::IndependentOfY,
        solver,
        y_max: 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn all_presets_validate() {
        let grid = build_grid(0.0, 1.0, 1.0, 19, 20).unwrap();
        for name in REGISTRY.iter().chain(&["cubic_tracking_linear", "convex_surrogate"]) {
            let p = by_name(name, &grid).unwrap();
            p.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(by_name("nope", &grid).is_err());
    }

    #[test]
    fn bangbang_zeros() {
        let grid = build_grid(0.0, 1.0, 1.0, 19, 20).unwrap();
        let (sigma, zeros) = linear_bangbang_sigma(&grid);
        for z in zeros {
            assert!(sigma(z).abs() < 1e-14);
            assert!(z > 0.5 && z < 1.0);
        }
    }
}
