//! The control problem: objective, adjoint state, switching function, first and
//! second derivatives of the reduced objective and the residual of the discrete
//! variational inequality.
//!
//! Everything here is the exact derivative of the *discrete* objective
//!
//! ```text
//! J(u) = Σ_{k=1}^{n_t} dt Σ_i w_i [L0(x_i, t_k, y_i^k) + Σ_j L1_j(x_i, t_k, y_i^k) u_j^{k-1}]
//!        + ∫_Q η y - ∫_0^T <ρ, u>
//! ```
//!
//! (trapezoid weights `w_i`, boundary nodes evaluated at `y = 0`), so the two routes to
//! `J'(u) v` agree to roundoff. The switching function on cell `c` pairs the adjoint at
//! the cell's left level `c` with the state at level `c + 1`, which the cell's control
//! drives.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Control, ControlBounds, Field, SpaceTimeGrid, SpatialProfile};
use crate::law::{validate_law, Law, ScalarLaw, Site};
use crate::pde::{
    check_disjoint_supports, law_field, solve_linear_parabolic, solve_linearized, solve_semilinear_forward,
    Direction, EllipticOperator, SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Class {
    IndependentOfY,
    AffineInY,
    General,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub grid: SpaceTimeGrid,
    pub op: EllipticOperator,
    pub f: Law,
    pub l0: Law,
    pub l1: Vec<Law>,
    pub g: Vec<SpatialProfile>,
    pub bounds: ControlBounds,
    pub y0: SpatialProfile,
    pub l1_class: L1Class,
    pub solver: SolverOptions,
    /// Half-width of the `y`-box on which the laws are spot-checked.
    pub y_max: f64,
}

impl ProblemSpec {
    pub fn m(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let grid = &self.grid;
        let m = self.m();
        if m == 0 {
            return Err(Error::Problem("at least one control profile is required".into()));
        }
        if self.l1.len() != m {
            return Err(Error::Problem(format!("{} L1 laws for {m} controls", self.l1.len())));
        }
        if self.bounds.lower.dim() != (m, grid.n_t) {
            return Err(Error::Shape(format!(
                "bounds {:?}, expected {:?}",
                self.bounds.lower.dim(),
                (m, grid.n_t)
            )));
        }
        for p in self.g.iter().chain(std::iter::once(&self.y0)) {
            if p.values().len() != grid.n_x + 2 {
                return Err(Error::Shape("spatial profile does not match the grid".into()));
            }
        }
        check_disjoint_supports(&self.g)?;
        if !self
            .g
            .iter()
            .any(|p| p.interior().iter().any(|v| *v != 0.0))
        {
            return Err(Error::Problem("every control profile vanishes on the interior nodes".into()));
        }
        self.op.check_ellipticity(grid)?;
        validate_law(self.f.as_ref(), grid, self.y_max, true)?;
        validate_law(self.l0.as_ref(), grid, self.y_max, false)?;
        for law in &self.l1 {
            validate_law(law.as_ref(), grid, self.y_max, false)?;
            self.check_l1_class(law.as_ref())?;
        }
        Ok(())
    }

    fn check_l1_class(&self, law: &dyn ScalarLaw) -> Result<()> {
        if self.l1_class == L1Class::General {
            return Ok(());
        }
        let grid = &self.grid;
        let stride_x = (grid.n_x / 6).max(1);
        let stride_t = (grid.n_t / 6).max(1);
        for level in (0..=grid.n_t).step_by(stride_t) {
            for node in (0..=grid.n_x + 1).step_by(stride_x) {
                let s = Site::on(grid, node, level);
                for y in [-self.y_max, -0.3 * self.y_max, 0.0, 0.7 * self.y_max, self.y_max] {
                    let bad = match self.l1_class {
                        L1Class::IndependentOfY => law.d_dy(&s, y) != 0.0,
                        L1Class::AffineInY => law.d2_dy2(&s, y) != 0.0,
                        L1Class::General => false,
                    };
                    if bad {
                        return Err(Error::Problem(format!(
                            "L1 law `{}` is inconsistent with class {:?}",
                            law.name(),
                            self.l1_class
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_admissible(&self, u: &Control) -> bool {
        self.bounds.contains(u)
    }

    pub fn check_control(&self, u: &Control) -> Result<()> {
        if u.values.dim() != (self.m(), self.grid.n_t) {
            return Err(Error::Shape(format!(
                "control {:?}, expected {:?}",
                u.values.dim(),
                (self.m(), self.grid.n_t)
            )));
        }
        Ok(())
    }

    /// `μ_j = ∫_Ω g_j dx`.
    pub fn mu(&self) -> Vec<f64> {
        self.g.iter().map(|p| p.integral(&self.grid)).collect()
    }
}

/// Perturbation terms threaded through the state equation (`extra_source = ξ`), the
/// objective (`+∫_Q η y`, `-∫_0^T <ρ, u>`) and hence the adjoint equation and the VI.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hooks<'a> {
    pub extra_source: Option<&'a Field>,
    pub extra_linear_y: Option<&'a Field>,
    pub extra_linear_u: Option<&'a Control>,
}

impl Hooks<'_> {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityTriple {
    pub y: Field,
    pub p: Field,
    pub u: Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingFunction {
    pub grid: SpaceTimeGrid,
    /// `values[(j, c)] = ∫_Ω [L1_j + p g_j] dx` on cell `c`.
    pub values: Array2<f64>,
}

impl SwitchingFunction {
    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Component `j` as a time series over cells.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.values.row(j).to_vec()
    }

    /// `σ - ρ`: the switching function of the perturbed VI.
    pub fn shifted(&self, rho: &Control) -> Result<SwitchingFunction> {
        if rho.values.dim() != self.values.dim() {
            return Err(Error::Shape("rho does not match the switching function".into()));
        }
        Ok(SwitchingFunction {
            grid: self.grid,
            values: &self.values - &rho.values,
        })
    }

    /// `∫_0^T <σ, v> dt`.
    pub fn pair(&self, v: &Control) -> Result<f64> {
        if v.values.dim() != self.values.dim() {
            return Err(Error::Shape("variation does not match the switching function".into()));
        }
        Ok((&self.values * &v.values).sum() * self.grid.dt())
    }
}

pub fn solve_state(p: &ProblemSpec, u: &Control, hooks: Hooks<'_>) -> Result<Field> {
    p.check_control(u)?;
    solve_semilinear_forward(&p.op, p.f.as_ref(), &p.g, u, &p.y0, hooks.extra_source, &p.solver)
}

/// Objective evaluated on a state already solved for `u`.
pub fn objective_from_state(p: &ProblemSpec, y: &Field, u: &Control, hooks: Hooks<'_>) -> Result<f64> {
    let grid = &p.grid;
    let dt = grid.dt();
    let mut total = 0.0;
    for k in 1..=grid.n_t {
        let mut level_sum = 0.0;
        for node in 0..=grid.n_x + 1 {
            let s = Site::on(grid, node, k);
            let yv = state_at(y, k, node);
            let mut integrand = p.l0.value(&s, yv);
            for (j, l1) in p.l1.iter().enumerate() {
                integrand += l1.value(&s, yv) * u.values[(j, k - 1)];
            }
            level_sum += grid.space_weight(node) * integrand;
        }
        total += dt * level_sum;
    }
    if let Some(eta) = hooks.extra_linear_y {
        total += eta.inner(y)?;
    }
    if let Some(rho) = hooks.extra_linear_u {
        total -= rho.inner(u)?;
    }
    Ok(total)
}

pub fn evaluate_objective(p: &ProblemSpec, u: &Control, hooks: Hooks<'_>) -> Result<f64> {
    let y = solve_state(p, u, hooks)?;
    objective_from_state(p, &y, u, hooks)
}

#[inline]
fn state_at(y: &Field, level: usize, node: usize) -> f64 {
    if node == 0 || node > y.grid.n_x {
        0.0
    } else {
        y.values[(level, node - 1)]
    }
}

/// `∂L/∂y(y, u) + extra_rhs` at every level (level 0 is unused by the backward solve).
fn adjoint_rhs(p: &ProblemSpec, y: &Field, u: &Control, extra_rhs: Option<&Field>) -> Result<Field> {
    let mut rhs = law_field(y, |s, yv| p.l0.d_dy(s, yv));
    if p.l1_class != L1Class::IndependentOfY {
        for k in 1..=p.grid.n_t {
            for i in 0..p.grid.n_x {
                let s = Site::on(&p.grid, i + 1, k);
                let yv = y.values[(k, i)];
                let mut acc = 0.0;
                for (j, l1) in p.l1.iter().enumerate() {
                    acc += l1.d_dy(&s, yv) * u.values[(j, k - 1)];
                }
                rhs.values[(k, i)] += acc;
            }
        }
    }
    if let Some(extra) = extra_rhs {
        y.check_same_grid(extra)?;
        rhs.values += &extra.values;
    }
    Ok(rhs)
}

pub fn solve_adjoint(p: &ProblemSpec, y: &Field, u: &Control, extra_rhs: Option<&Field>) -> Result<Field> {
    p.check_control(u)?;
    let alpha = law_field(y, |s, yv| p.f.d_dy(s, yv));
    let rhs = adjoint_rhs(p, y, u, extra_rhs)?;
    solve_linear_parabolic(
        &p.op,
        &alpha,
        &rhs,
        ndarray::Array1::zeros(p.grid.n_x).view(),
        Direction::Backward,
    )
}

/// State and adjoint for `u` under the given perturbation.
pub fn compute_triple(p: &ProblemSpec, u: &Control, hooks: Hooks<'_>) -> Result<OptimalityTriple> {
    let y = solve_state(p, u, hooks)?;
    let adj = solve_adjoint(p, &y, u, hooks.extra_linear_y)?;
    Ok(OptimalityTriple {
        y,
        p: adj,
        u: u.clone(),
    })
}

pub fn switching_function(p: &ProblemSpec, y: &Field, adj: &Field) -> Result<SwitchingFunction> {
    y.check_same_grid(adj)?;
    let grid = &p.grid;
    let h = grid.h();
    let mut values = Array2::zeros((p.m(), grid.n_t));
    for c in 0..grid.n_t {
        let k = c + 1;
        for (j, (l1, gj)) in p.l1.iter().zip(&p.g).enumerate() {
            let mut acc = 0.0;
            for node in 0..=grid.n_x + 1 {
                let s = Site::on(grid, node, k);
                acc += grid.space_weight(node) * l1.value(&s, state_at(y, k, node));
            }
            acc += h * adj.level(c).dot(&gj.interior());
            values[(j, c)] = acc;
        }
    }
    Ok(SwitchingFunction { grid: *grid, values })
}

/// Switching function of the (possibly perturbed) VI at a triple: `σ - ρ`.
pub fn perturbed_switching(p: &ProblemSpec, triple: &OptimalityTriple, hooks: Hooks<'_>) -> Result<SwitchingFunction> {
    let sigma = switching_function(p, &triple.y, &triple.p)?;
    match hooks.extra_linear_u {
        Some(rho) => sigma.shifted(rho),
        None => Ok(sigma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    ViaAdjoint,
    ViaLinearized,
}

/// `J'(u) v` from a triple already computed at `u`.
pub fn derivative_at(
    p: &ProblemSpec,
    triple: &OptimalityTriple,
    v: &Control,
    mode: DerivativeMode,
    hooks: Hooks<'_>,
) -> Result<f64> {
    p.check_control(v)?;
    match mode {
        DerivativeMode::ViaAdjoint => perturbed_switching(p, triple, hooks)?.pair(v),
        DerivativeMode::ViaLinearized => {
            let grid = &p.grid;
            let z = solve_linearized(&p.op, p.f.as_ref(), &triple.y, &p.g, v)?;
            let rhs = adjoint_rhs(p, &triple.y, &triple.u, hooks.extra_linear_y)?;
            let mut total = rhs.inner(&z)?;
            let dt = grid.dt();
            for k in 1..=grid.n_t {
                let mut level_sum = 0.0;
                for node in 0..=grid.n_x + 1 {
                    let s = Site::on(grid, node, k);
                    let yv = state_at(&triple.y, k, node);
                    let mut integrand = 0.0;
                    for (j, l1) in p.l1.iter().enumerate() {
                        integrand += l1.value(&s, yv) * v.values[(j, k - 1)];
                    }
                    level_sum += grid.space_weight(node) * integrand;
                }
                total += dt * level_sum;
            }
            if let Some(rho) = hooks.extra_linear_u {
                total -= rho.inner(v)?;
            }
            Ok(total)
        }
    }
}

pub fn derivative_j(p: &ProblemSpec, u: &Control, v: &Control, mode: DerivativeMode, hooks: Hooks<'_>) -> Result<f64> {
    let triple = compute_triple(p, u, hooks)?;
    derivative_at(p, &triple, v, mode, hooks)
}

/// The two integrals of `J''(u)(v1, v2)`: the curvature term in `z1 z2` and the
/// cross term `∫ <∂L1/∂y, v2 z1 + v1 z2>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondDerivative {
    pub curvature: f64,
    pub cross: f64,
}

impl SecondDerivative {
    pub fn total(&self) -> f64 {
        self.curvature + self.cross
    }
}

/// Second derivative with precomputed linearized states `z1 = z_{u,v1}`, `z2 = z_{u,v2}`.
pub fn second_derivative_parts_with(
    p: &ProblemSpec,
    triple: &OptimalityTriple,
    v1: &Control,
    v2: &Control,
    z1: &Field,
    z2: &Field,
) -> Result<SecondDerivative> {
    let grid = &p.grid;
    let (h, dt) = (grid.h(), grid.dt());
    let (y, adj, u) = (&triple.y, &triple.p, &triple.u);
    let mut curvature = 0.0;
    let mut cross = 0.0;
    for k in 1..=grid.n_t {
        for i in 0..grid.n_x {
            let s = Site::on(grid, i + 1, k);
            let yv = y.values[(k, i)];
            let zz = z1.values[(k, i)] * z2.values[(k, i)];
            let mut l_yy = p.l0.d2_dy2(&s, yv);
            if p.l1_class == L1Class::General {
                for (j, l1) in p.l1.iter().enumerate() {
                    l_yy += l1.d2_dy2(&s, yv) * u.values[(j, k - 1)];
                }
            }
            curvature += (l_yy - adj.values[(k - 1, i)] * p.f.d2_dy2(&s, yv)) * zz;
            if p.l1_class != L1Class::IndependentOfY {
                for (j, l1) in p.l1.iter().enumerate() {
                    cross += l1.d_dy(&s, yv)
                        * (v2.values[(j, k - 1)] * z1.values[(k, i)] + v1.values[(j, k - 1)] * z2.values[(k, i)]);
                }
            }
        }
    }
    Ok(SecondDerivative {
        curvature: curvature * h * dt,
        cross: cross * h * dt,
    })
}

pub fn second_derivative_parts(
    p: &ProblemSpec,
    triple: &OptimalityTriple,
    v1: &Control,
    v2: &Control,
) -> Result<SecondDerivative> {
    p.check_control(v1)?;
    p.check_control(v2)?;
    let z1 = solve_linearized(&p.op, p.f.as_ref(), &triple.y, &p.g, v1)?;
    let z2 = if v1 == v2 {
        z1.clone()
    } else {
        solve_linearized(&p.op, p.f.as_ref(), &triple.y, &p.g, v2)?
    };
    second_derivative_parts_with(p, triple, v1, v2, &z1, &z2)
}

pub fn second_derivative_j(p: &ProblemSpec, u: &Control, v1: &Control, v2: &Control, hooks: Hooks<'_>) -> Result<f64> {
    let triple = compute_triple(p, u, hooks)?;
    Ok(second_derivative_parts(p, &triple, v1, v2)?.total())
}

/// `Σ_j ∫_0^T σ_j (u_j - π_j) dt` with `π` the bang-bang point selected by the sign of
/// `σ`; cells with `σ_j = 0` contribute nothing.
pub fn vi_residual_from_switching(sigma: &SwitchingFunction, u: &Control, bounds: &ControlBounds) -> f64 {
    let mut acc = 0.0;
    for ((j, c), s) in sigma.values.indexed_iter() {
        let target = if *s > 0.0 {
            bounds.lower[(j, c)]
        } else if *s < 0.0 {
            bounds.upper[(j, c)]
        } else {
            u.values[(j, c)]
        };
        acc += s * (u.values[(j, c)] - target);
    }
    (acc * sigma.grid.dt()).max(0.0)
}

pub fn vi_residual(p: &ProblemSpec, triple: &OptimalityTriple, hooks: Hooks<'_>) -> Result<f64> {
    let sigma = perturbed_switching(p, triple, hooks)?;
    Ok(vi_residual_from_switching(&sigma, &triple.u, &p.bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, NormKind};
    use crate::law::{Affine, Polynomial, Tracking};
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_control(rng: &mut ChaCha8Rng, p: &ProblemSpec) -> Control {
        let values = Array2::from_shape_fn((p.m(), p.grid.n_t), |idx| {
            rng.gen_range(p.bounds.lower[idx]..=p.bounds.upper[idx])
        });
        Control::from_values(&p.grid, values).unwrap()
    }

    fn zero_problem(grid: SpaceTimeGrid) -> ProblemSpec {
        ProblemSpec {
            name: "zero".into(),
            grid,
            op: EllipticOperator::constant(1.0),
            f: Arc::new(Polynomial::zero()),
            l0: Arc::new(Polynomial::zero()),
            l1: vec![Arc::new(Polynomial::zero())],
            g: vec![SpatialProfile::indicator(&grid, 0.2, 0.8)],
            bounds: ControlBounds::uniform(&grid, &[0.0], &[1.0]).unwrap(),
            y0: SpatialProfile::zeros(&grid),
            l1_class: L1Class::IndependentOfY,
            solver: SolverOptions::default(),
            y_max: 2.0,
        }
    }

    #[test]
    fn trivial_objectives() {
        let grid = build_grid(0.0, 1.0, 1.0, 20, 10).unwrap();
        let p = zero_problem(grid);
        p.validate().unwrap();
        let u = Control::constant(&grid, 1, 0.7);
        assert_eq!(evaluate_objective(&p, &u, Hooks::none()).unwrap(), 0.0);

        let mut p1 = p.clone();
        p1.l0 = Arc::new(Polynomial::constant(1.0));
        let j = evaluate_objective(&p1, &u, Hooks::none()).unwrap();
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tracking_own_state_is_zero() {
        let grid = build_grid(0.0, 1.0, 1.0, 20, 10).unwrap();
        let mut p = zero_problem(grid);
        p.f = Arc::new(Polynomial::new("cubic", vec![0.0, 0.0, 0.0, 1.0]));
        let uhat = Control::from_fn(&grid, 1, |_, t| t);
        let yd = solve_state(&p, &uhat, Hooks::none()).unwrap();
        p.l0 = Arc::new(Tracking::new("track", yd, 1.0));
        assert!(evaluate_objective(&p, &uhat, Hooks::none()).unwrap().abs() < 1e-20);
    }

    #[test]
    fn adjoint_trivial_cases() {
        let grid = build_grid(0.0, 1.0, 1.0, 12, 8).unwrap();
        let p = zero_problem(grid);
        let u = Control::constant(&grid, 1, 0.5);
        let y = solve_state(&p, &u, Hooks::none()).unwrap();
        let adj = solve_adjoint(&p, &y, &u, None).unwrap();
        assert!(adj.values.iter().all(|v| *v == 0.0));

        let p = presets::cubic_tracking(&grid, presets::StateLaw::Cubic);
        let u = Control::constant(&grid, 2, 0.5);
        let y = solve_state(&p, &u, Hooks::none()).unwrap();
        let adj = solve_adjoint(&p, &y, &u, None).unwrap();
        assert!(adj.level(grid.n_t).iter().all(|v| *v == 0.0));
        assert!(adj.max_abs() > 0.0);
    }

    #[test]
    fn switching_function_definitions() {
        let grid = build_grid(0.0, 1.0, 1.0, 10, 6).unwrap();
        let mut p = zero_problem(grid);
        p.l1 = vec![Arc::new(Polynomial::constant(0.75))];
        let y = Field::zeros(&grid);
        let sigma = switching_function(&p, &y, &Field::zeros(&grid)).unwrap();
        assert!(sigma.values.iter().all(|s| (s - 0.75).abs() < 1e-14));

        p.l1 = vec![Arc::new(Polynomial::zero())];
        let ones = Field::from_fn(&grid, |_, _| 1.0);
        let sigma = switching_function(&p, &y, &ones).unwrap();
        let mu = p.mu()[0];
        assert!(sigma.values.iter().all(|s| (s - mu).abs() < 1e-14));
    }

    #[test]
    fn vi_residual_cases() {
        let grid = build_grid(0.0, 1.0, 1.0, 4, 10).unwrap();
        let bounds = ControlBounds::uniform(&grid, &[0.0], &[1.0]).unwrap();
        let sigma = SwitchingFunction {
            grid,
            values: Array2::from_elem((1, 10), 1.0),
        };
        let ub = Control::constant(&grid, 1, 1.0);
        assert!((vi_residual_from_switching(&sigma, &ub, &bounds) - 1.0).abs() < 1e-14);
        let ua = Control::constant(&grid, 1, 0.0);
        assert_eq!(vi_residual_from_switching(&sigma, &ua, &bounds), 0.0);
        let zero = SwitchingFunction {
            grid,
            values: Array2::zeros((1, 10)),
        };
        assert_eq!(vi_residual_from_switching(&zero, &Control::constant(&grid, 1, 0.3), &bounds), 0.0);
    }

    #[test]
    fn gradient_routes_agree_and_match_finite_differences() {
        let grid = build_grid(0.0, 1.0, 1.0, 30, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [
            presets::cubic_tracking(&grid, presets::StateLaw::Cubic),
            presets::affine_l1(&grid),
        ] {
            for _ in 0..3 {
                let u = random_control(&mut rng, &p);
                let v = random_control(&mut rng, &p).sub(&u).unwrap();
                let a = derivative_j(&p, &u, &v, DerivativeMode::ViaAdjoint, Hooks::none()).unwrap();
                let b = derivative_j(&p, &u, &v, DerivativeMode::ViaLinearized, Hooks::none()).unwrap();
                assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()), "{a} vs {b}");
                let e = 1e-4;
                let jp = evaluate_objective(&p, &u.axpy(e, &v).unwrap(), Hooks::none()).unwrap();
                let jm = evaluate_objective(&p, &u.axpy(-e, &v).unwrap(), Hooks::none()).unwrap();
                let fd = (jp - jm) / (2.0 * e);
                assert!((fd - a).abs() <= 1e-4 * a.abs(), "{}: fd {fd} vs {a}", p.name);
            }
        }
    }

    #[test]
    fn perturbed_gradient_routes_agree() {
        let grid = build_grid(0.0, 1.0, 1.0, 20, 16).unwrap();
        let p = presets::affine_l1(&grid);
        let xi = Field::from_fn(&grid, |x, t| 0.3 * x * t);
        let eta = Field::from_fn(&grid, |x, t| (x - t).sin());
        let rho = Control::from_fn(&grid, 1, |_, t| 0.2 - t);
        let hooks = Hooks {
            extra_source: Some(&xi),
            extra_linear_y: Some(&eta),
            extra_linear_u: Some(&rho),
        };
        let u = Control::from_fn(&grid, 1, |_, t| (4.0 * t).cos());
        let v = Control::from_fn(&grid, 1, |_, t| t * t - 0.2);
        let a = derivative_j(&p, &u, &v, DerivativeMode::ViaAdjoint, hooks).unwrap();
        let b = derivative_j(&p, &u, &v, DerivativeMode::ViaLinearized, hooks).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs());
        let e = 1e-4;
        let fd = (evaluate_objective(&p, &u.axpy(e, &v).unwrap(), hooks).unwrap()
            - evaluate_objective(&p, &u.axpy(-e, &v).unwrap(), hooks).unwrap())
            / (2.0 * e);
        assert!((fd - a).abs() <= 1e-4 * a.abs());
    }

    #[test]
    fn hessian_matches_finite_differences_and_is_symmetric() {
        let grid = build_grid(0.0, 1.0, 1.0, 30, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [
            presets::cubic_tracking(&grid, presets::StateLaw::Cubic),
            presets::affine_l1(&grid),
        ] {
            let u = random_control(&mut rng, &p);
            let v = random_control(&mut rng, &p).sub(&u).unwrap();
            let w = random_control(&mut rng, &p).sub(&u).unwrap();
            let triple = compute_triple(&p, &u, Hooks::none()).unwrap();
            let hvw = second_derivative_parts(&p, &triple, &v, &w).unwrap().total();
            let hwv = second_derivative_parts(&p, &triple, &w, &v).unwrap().total();
            assert!((hvw - hwv).abs() <= 1e-12 * hvw.abs());

            let e = 1e-3;
            let j0 = evaluate_objective(&p, &u, Hooks::none()).unwrap();
            let jp = evaluate_objective(&p, &u.axpy(e, &v).unwrap(), Hooks::none()).unwrap();
            let jm = evaluate_objective(&p, &u.axpy(-e, &v).unwrap(), Hooks::none()).unwrap();
            let fd = (jp - 2.0 * j0 + jm) / (e * e);
            let hvv = second_derivative_parts(&p, &triple, &v, &v).unwrap().total();
            assert!((fd - hvv).abs() <= 1e-3 * hvv.abs(), "{}: {fd} vs {hvv}", p.name);

            // J'' as the derivative of J'
            let e = 1e-6;
            let d0 = derivative_at(&p, &triple, &v, DerivativeMode::ViaAdjoint, Hooks::none()).unwrap();
            let d1 = derivative_j(&p, &u.axpy(e, &w).unwrap(), &v, DerivativeMode::ViaAdjoint, Hooks::none()).unwrap();
            assert!(((d1 - d0) / e - hvw).abs() <= 1e-4 * hvw.abs().max(1e-3));
        }
    }

    #[test]
    fn hessian_reduces_to_state_norm() {
        let grid = build_grid(0.0, 1.0, 1.0, 20, 20).unwrap();
        let p = presets::convex_surrogate(&grid);
        let u = Control::constant(&grid, 1, 0.2);
        let v = Control::from_fn(&grid, 1, |_, t| (7.0 * t).sin());
        let triple = compute_triple(&p, &u, Hooks::none()).unwrap();
        let parts = second_derivative_parts(&p, &triple, &v, &v).unwrap();
        assert_eq!(parts.cross, 0.0);
        let z = solve_linearized(&p.op, p.f.as_ref(), &triple.y, &p.g, &v).unwrap();
        let zn = z.norm(NormKind::L2Q).unwrap();
        assert!((parts.total() - zn * zn).abs() <= 1e-13 * zn * zn);
    }

    #[test]
    fn independent_l1_has_no_cross_term() {
        let grid = build_grid(0.0, 1.0, 1.0, 12, 12).unwrap();
        let p = presets::linear_bangbang(&grid);
        assert_eq!(p.l1_class, L1Class::IndependentOfY);
        let u = Control::constant(&grid, 1, 0.5);
        let triple = compute_triple(&p, &u, Hooks::none()).unwrap();
        let v = Control::from_fn(&grid, 1, |_, t| t);
        let parts = second_derivative_parts(&p, &triple, &v, &v).unwrap();
        assert_eq!(parts.cross, 0.0);
    }

    #[test]
    fn linear_quadratic_switching_matches_cellwise_finite_differences() {
        let grid = build_grid(0.0, 1.0, 1.0, 25, 20).unwrap();
        let p = presets::linear_heat(&grid);
        let u = Control::from_fn(&grid, 1, |_, t| 0.5 * (3.0 * t).sin());
        let triple = compute_triple(&p, &u, Hooks::none()).unwrap();
        let sigma = switching_function(&p, &triple.y, &triple.p).unwrap();
        let e = 1e-3;
        for c in [0, 7, 13, 19] {
            let mut up = u.clone();
            up.values[(0, c)] += e;
            let mut um = u.clone();
            um.values[(0, c)] -= e;
            let fd = (evaluate_objective(&p, &up, Hooks::none()).unwrap()
                - evaluate_objective(&p, &um, Hooks::none()).unwrap())
                / (2.0 * e * grid.dt());
            let s = sigma.values[(0, c)];
            assert!((fd - s).abs() <= 1e-4 * s.abs(), "cell {c}: {fd} vs {s}");
        }
    }

    #[test]
    fn l1_class_is_checked() {
        let grid = build_grid(0.0, 1.0, 1.0, 10, 10).unwrap();
        let mut p = zero_problem(grid);
        p.l1 = vec![Arc::new(Affine::new(
            "aff",
            Arc::new(|_: &Site| 0.1),
            Arc::new(|_: &Site| 0.5),
        ))];
        assert!(p.validate().is_err());
        p.l1_class = L1Class::AffineInY;
        p.validate().unwrap();
    }
}
