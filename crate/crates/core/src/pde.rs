//! Implicit-Euler / second-order finite-difference solvers for
//!
//! * the semilinear state equation `y_t + A y + f(x, t, y) = Σ_j g_j u_j + ξ`,
//! * the linear equation `y_t + A y + α y = r` forward in time, and its exact discrete
//!   transpose backward in time (`-p_t + A p + α p = r`, `p(T)` given),
//! * the linearized and second-order linearized equations.
//!
//! Time stepping convention: step `k` (`1..=n_t`) advances from level `k - 1` to
//! level `k` and is driven by control cell `k - 1` and by source/coefficient data at
//! level `k`. The backward solver is the algebraic transpose of that recursion, so its
//! value at level `k - 1` is the multiplier of step `k`: coefficients and sources of the
//! backward problem are read at level `k` when producing level `k - 1`, and the terminal
//! datum sits at level `n_t`.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::grid::{Control, Field, SpaceTimeGrid, SpatialProfile};
use crate::law::{ScalarLaw, Site};

/// 1-D divergence-form operator `-(a(x) y')'` with homogeneous Dirichlet data.
#[derive(Clone)]
pub struct EllipticOperator {
    diffusion: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    label: String,
}

impl std::fmt::Debug for EllipticOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EllipticOperator").field("diffusion", &self.label).finish()
    }
}

impl EllipticOperator {
    pub fn new(label: impl Into<String>, diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            diffusion: Arc::new(diffusion),
            label: label.into(),
        }
    }

    pub fn constant(a: f64) -> Self {
        Self::new(format!("a = {a}"), move |_| a)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    /// Smallest sampled value of `a` over nodes and cell midpoints.
    pub fn ellipticity(&self, grid: &SpaceTimeGrid) -> f64 {
        let h = grid.h();
        (0..=2 * (grid.n_x + 1))
            .map(|i| self.diffusion(grid.x_left + 0.5 * h * i as f64))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_ellipticity(&self, grid: &SpaceTimeGrid) -> Result<()> {
        let h = grid.h();
        for i in 0..=2 * (grid.n_x + 1) {
            let x = grid.x_left + 0.5 * h * i as f64;
            let a = self.diffusion(x);
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Ellipticity { x, value: a });
            }
        }
        Ok(())
    }

    /// Tridiagonal stencil of `A_h` on interior nodes: `(diag, off)` with
    /// `diag_i = (a_{i-1/2} + a_{i+1/2}) / h^2`, `off_i = -a_{i+1/2} / h^2`.
    pub fn stencil(&self, grid: &SpaceTimeGrid) -> Result<Stencil> {
        self.check_ellipticity(grid)?;
        let h = grid.h();
        let h2 = h * h;
        // a at x_{i + 1/2}, i = 0..=n_x
        let mid: Vec<f64> = (0..=grid.n_x).map(|i| self.diffusion(grid.x(i) + 0.5 * h)).collect();
        let diag = (0..grid.n_x).map(|i| (mid[i] + mid[i + 1]) / h2).collect();
        let off = (0..grid.n_x - 1).map(|i| -mid[i + 1] / h2).collect();
        Ok(Stencil { diag, off })
    }
}

/// Symmetric tridiagonal matrix of `A_h`.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Stencil {
    pub fn apply(&self, y: ArrayView1<'_, f64>, out: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut v = self.diag[i] * y[i];
            if i > 0 {
                v += self.off[i - 1] * y[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * y[i + 1];
            }
            out[i] = v;
        }
    }

    /// Solves `(I + dt A_h + dt diag(alpha)) x = rhs` in place of `rhs`.
    fn solve_step(&self, dt: f64, alpha: &[f64], rhs: &mut [f64], work: &mut Vec<f64>) {
        let n = self.diag.len();
        work.clear();
        work.resize(n, 0.0);
        // Thomas elimination; the matrix is a strictly diagonally dominant M-matrix.
        let mut b = 1.0 + dt * (self.diag[0] + alpha[0]);
        rhs[0] /= b;
        for i in 1..n {
            let c_prev = dt * self.off[i - 1];
            work[i - 1] = c_prev / b;
            b = 1.0 + dt * (self.diag[i] + alpha[i]) - c_prev * work[i - 1];
            rhs[i] = (rhs[i] - c_prev * rhs[i - 1]) / b;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= work[i] * rhs[i + 1];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Tolerance on the max-norm of the step residual
    /// `y^k - y^{k-1} + dt (A_h y^k + f(y^k) - s^k)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Fails if two profiles are nonzero on a common node.
pub fn check_disjoint_supports(g: &[SpatialProfile]) -> Result<()> {
    let n = g.first().map(|p| p.values().len()).unwrap_or(0);
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (j, profile) in g.iter().enumerate() {
        for node in profile.support_nodes() {
            if let Some(first) = owner[node] {
                return Err(Error::OverlappingSupports {
                    node,
                    first,
                    second: j,
                });
            }
            owner[node] = Some(j);
        }
    }
    Ok(())
}

/// `Σ_j g_j(x_i) u_j` at interior nodes for one control cell.
fn control_source(g: &[SpatialProfile], u: &Control, cell: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, profile) in g.iter().enumerate() {
        let uj = u.values[(j, cell)];
        if uj == 0.0 {
            continue;
        }
        for (i, gi) in profile.interior().iter().enumerate() {
            out[i] += gi * uj;
        }
    }
}

fn check_control_shape(grid: &SpaceTimeGrid, g: &[SpatialProfile], u: &Control) -> Result<()> {
    if u.m() != g.len() || u.n_cells() != grid.n_t {
        return Err(Error::Shape(format!(
            "control {:?} does not match {} profiles on {} cells",
            u.values.dim(),
            g.len(),
            grid.n_t
        )));
    }
    if let Some(p) = g.iter().find(|p| p.values().len() != grid.n_x + 2) {
        return Err(Error::Shape(format!(
            "profile with {} values on a grid with {} nodes",
            p.values().len(),
            grid.n_x + 2
        )));
    }
    Ok(())
}

pub fn solve_semilinear_forward(
    op: &EllipticOperator,
    f: &dyn ScalarLaw,
    g: &[SpatialProfile],
    u: &Control,
    y0: &SpatialProfile,
    extra_source: Option<&Field>,
    opts: &SolverOptions,
) -> Result<Field> {
    let grid = u.grid;
    check_control_shape(&grid, g, u)?;
    check_disjoint_supports(g)?;
    if let Some(xi) = extra_source {
        if xi.values.dim() != (grid.n_t + 1, grid.n_x) {
            return Err(Error::Shape("extra source does not match the grid".into()));
        }
    }
    let stencil = op.stencil(&grid)?;
    let n = grid.n_x;
    let dt = grid.dt();

    let mut y = Field::zeros(&grid);
    y.values.row_mut(0).assign(&y0.interior());

    let mut src = vec![0.0; n];
    let mut ay = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut res = vec![0.0; n];
    let mut work = Vec::with_capacity(n);

    for k in 1..=grid.n_t {
        control_source(g, u, k - 1, &mut src);
        if let Some(xi) = extra_source {
            for (s, x) in src.iter_mut().zip(xi.level(k).iter()) {
                *s += x;
            }
        }
        let prev: Array1<f64> = y.values.row(k - 1).to_owned();
        let mut cur = prev.clone();
        let sites: Vec<Site> = (0..n).map(|i| Site::on(&grid, i + 1, k)).collect();

        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..opts.newton_max_iter {
            stencil.apply(cur.view(), &mut ay);
            for i in 0..n {
                res[i] = cur[i] - prev[i] + dt * (ay[i] + f.value(&sites[i], cur[i]) - src[i]);
            }
            let rnorm = res.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
            history.push(rnorm);
            if !rnorm.is_finite() {
                break;
            }
            if rnorm <= opts.newton_tol {
                converged = true;
                break;
            }
            for i in 0..n {
                let d = f.d_dy(&sites[i], cur[i]);
                if d < 0.0 {
                    return Err(Error::Monotonicity {
                        law: f.name().to_string(),
                        x: sites[i].x,
                        t: sites[i].t,
                        y: cur[i],
                        value: d,
                    });
                }
                fy[i] = d;
            }
            stencil.solve_step(dt, &fy, &mut res, &mut work);
            let mut dmax = 0.0_f64;
            for i in 0..n {
                cur[i] -= res[i];
                dmax = dmax.max(res[i].abs());
            }
            let ymax = cur.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            // Update at roundoff level: the residual cannot decrease any further.
            if dmax <= 8.0 * f64::EPSILON * (1.0 + ymax) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Newton {
                level: k,
                iterations: history.len(),
                residuals: history,
            });
        }
        y.values.row_mut(k).assign(&cur);
    }
    Ok(y)
}

pub fn solve_linear_parabolic(
    op: &EllipticOperator,
    alpha: &Field,
    rhs: &Field,
    initial_or_terminal: ArrayView1<'_, f64>,
    direction: Direction,
) -> Result<Field> {
    let grid = alpha.grid;
    alpha.check_same_grid(rhs)?;
    if initial_or_terminal.len() != grid.n_x {
        return Err(Error::Shape(format!(
            "boundary-in-time datum has {} values, expected {}",
            initial_or_terminal.len(),
            grid.n_x
        )));
    }
    if let Some(((level, node), value)) = alpha.values.indexed_iter().find(|(_, a)| !(**a >= 0.0)) {
        return Err(Error::NegativeCoefficient {
            level,
            node: node + 1,
            value: *value,
        });
    }
    let stencil = op.stencil(&grid)?;
    let dt = grid.dt();
    let n = grid.n_x;
    let mut out = Field::zeros(&grid);
    let mut buf = vec![0.0; n];
    let mut work = Vec::with_capacity(n);

    match direction {
        Direction::Forward => {
            out.values.row_mut(0).assign(&initial_or_terminal);
            for k in 1..=grid.n_t {
                let prev = out.values.row(k - 1);
                let r = rhs.values.row(k);
                for i in 0..n {
                    buf[i] = prev[i] + dt * r[i];
                }
                let a = alpha.values.row(k);
                let a = a.as_slice().expect("row-major field");
                stencil.solve_step(dt, a, &mut buf, &mut work);
                out.values.row_mut(k).assign(&ArrayView1::from(&buf[..]));
            }
        }
        Direction::Backward => {
            out.values.row_mut(grid.n_t).assign(&initial_or_terminal);
            for k in (1..=grid.n_t).rev() {
                let next = out.values.row(k);
                let r = rhs.values.row(k);
                for i in 0..n {
                    buf[i] = next[i] + dt * r[i];
                }
                let a = alpha.values.row(k);
                let a = a.as_slice().expect("row-major field");
                stencil.solve_step(dt, a, &mut buf, &mut work);
                out.values.row_mut(k - 1).assign(&ArrayView1::from(&buf[..]));
            }
        }
    }
    Ok(out)
}

/// Pairing under which [`Direction::Backward`] is the transpose of
/// [`Direction::Forward`]: `Σ_{k=1}^{n_t} dt <w^k, p^{k-1}>_h`.
pub fn adjoint_pairing(w: &Field, p: &Field) -> Result<f64> {
    w.check_same_grid(p)?;
    let n_t = w.grid.n_t;
    let s: f64 = (1..=n_t).map(|k| w.level(k).dot(&p.level(k - 1))).sum();
    Ok(s * w.grid.h() * w.grid.dt())
}

/// Evaluates `which(law)` at `(x_i, t_k, y[k, i])` for every interior node and level.
pub fn law_field(y: &Field, eval: impl Fn(&Site, f64) -> f64) -> Field {
    let grid = y.grid;
    let mut out = Field::zeros(&grid);
    for ((k, i), v) in out.values.indexed_iter_mut() {
        let s = Site::on(&grid, i + 1, k);
        *v = eval(&s, y.values[(k, i)]);
    }
    out
}

pub fn solve_linearized(
    op: &EllipticOperator,
    f: &dyn ScalarLaw,
    y_u: &Field,
    g: &[SpatialProfile],
    v: &Control,
) -> Result<Field> {
    let grid = y_u.grid;
    check_control_shape(&grid, g, v)?;
    let alpha = law_field(y_u, |s, y| f.d_dy(s, y));
    let mut rhs = Field::zeros(&grid);
    let mut src = vec![0.0; grid.n_x];
    for k in 1..=grid.n_t {
        control_source(g, v, k - 1, &mut src);
        rhs.values.row_mut(k).assign(&ArrayView1::from(&src[..]));
    }
    solve_linear_parabolic(op, &alpha, &rhs, Array1::zeros(grid.n_x).view(), Direction::Forward)
}

pub fn solve_second_linearized(
    op: &EllipticOperator,
    f: &dyn ScalarLaw,
    y_u: &Field,
    z_v: &Field,
    z_w: &Field,
) -> Result<Field> {
    y_u.check_same_grid(z_v)?;
    y_u.check_same_grid(z_w)?;
    let grid = y_u.grid;
    let alpha = law_field(y_u, |s, y| f.d_dy(s, y));
    let fyy = law_field(y_u, |s, y| f.d2_dy2(s, y));
    let mut rhs = Field::zeros(&grid);
    ndarray::Zip::from(&mut rhs.values)
        .and(&fyy.values)
        .and(&z_v.values)
        .and(&z_w.values)
        .for_each(|r, c, a, b| *r = -c * (a * b));
    solve_linear_parabolic(op, &alpha, &rhs, Array1::zeros(grid.n_x).view(), Direction::Forward)
}

/// `max_k ‖y^k‖_{L^2(Ω)}` helper used by the explicit-constant estimate.
pub fn max_level_l2(f: &Field) -> f64 {
    let h = f.grid.h();
    f.values
        .axis_iter(Axis(0))
        .map(|r| (r.dot(&r) * h).sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, NormKind};
    use crate::law::Polynomial;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn heat_setup(n_x: usize, n_t: usize, horizon: f64) -> (SpaceTimeGrid, EllipticOperator) {
        (build_grid(0.0, 1.0, horizon, n_x, n_t).unwrap(), EllipticOperator::constant(1.0))
    }

    #[test]
    fn thomas_matches_dense_product() {
        let (g, op) = heat_setup(7, 1, 1.0);
        let st = op.stencil(&g).unwrap();
        let alpha = vec![0.3, 0.0, 1.0, 2.0, 0.1, 0.0, 5.0];
        let x_true: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).sin()).collect();
        let dt = 0.01;
        let mut ax = vec![0.0; 7];
        st.apply(ArrayView1::from(&x_true[..]), &mut ax);
        let mut b: Vec<f64> = (0..7).map(|i| x_true[i] + dt * (ax[i] + alpha[i] * x_true[i])).collect();
        st.solve_step(dt, &alpha, &mut b, &mut Vec::new());
        for i in 0..7 {
            assert!((b[i] - x_true[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_decay_oracle() {
        // y = exp(-pi^2 t) sin(pi x); value at (0.5, 0.1)
        let exact = (-0.1 * PI * PI).exp();
        let mut errs = Vec::new();
        for (nx, nt) in [(19, 20), (39, 40), (79, 80)] {
            let (g, op) = heat_setup(nx, nt, 0.1);
            let y0 = SpatialProfile::from_fn(&g, |x| (PI * x).sin());
            let u = Control::zeros(&g, 1);
            let gp = vec![SpatialProfile::indicator(&g, 0.0, 1.0)];
            let y = solve_semilinear_forward(&op, &Polynomial::zero(), &gp, &u, &y0, None, &SolverOptions::default())
                .unwrap();
            let mid = nx.div_ceil(2) - 1;
            assert!((g.x(mid + 1) - 0.5).abs() < 1e-12);
            errs.push((y.values[(nt, mid)] - exact).abs());
        }
        assert!(errs[2] < 5e-3);
        assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8);
    }

    #[test]
    fn zero_fixed_point() {
        let (g, op) = heat_setup(10, 10, 1.0);
        let f = Polynomial::new("cubic", vec![0.0, 0.0, 0.0, 1.0]);
        let gp = vec![SpatialProfile::indicator(&g, 0.2, 0.5)];
        let y = solve_semilinear_forward(
            &op,
            &f,
            &gp,
            &Control::zeros(&g, 1),
            &SpatialProfile::zeros(&g),
            Some(&Field::zeros(&g)),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(y.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_in_space_linear_in_time_is_reproduced() {
        // y* = t x(1-x), f = y^3: the scheme is exact at the nodes.
        let (g, op) = heat_setup(20, 10, 1.0);
        let f = Polynomial::new("cubic", vec![0.0, 0.0, 0.0, 1.0]);
        let ystar = |x: f64, t: f64| t * x * (1.0 - x);
        let src = Field::from_fn(&g, |x, t| x * (1.0 - x) + 2.0 * t + ystar(x, t).powi(3));
        let gp = vec![SpatialProfile::indicator(&g, 0.0, 0.3)];
        let y = solve_semilinear_forward(
            &op,
            &f,
            &gp,
            &Control::zeros(&g, 1),
            &SpatialProfile::zeros(&g),
            Some(&src),
            &SolverOptions::default(),
        )
        .unwrap();
        let err = y.sub(&Field::from_fn(&g, ystar)).unwrap().max_abs();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (g, op) = heat_setup(9, 4, 1.0);
        let gp = vec![SpatialProfile::indicator(&g, 0.0, 0.5), SpatialProfile::indicator(&g, 0.5, 1.0)];
        let err = solve_semilinear_forward(
            &op,
            &Polynomial::zero(),
            &gp,
            &Control::zeros(&g, 2),
            &SpatialProfile::zeros(&g),
            None,
            &SolverOptions::default(),
        );
        assert!(matches!(err, Err(Error::OverlappingSupports { .. })));

        let bad_op = EllipticOperator::new("neg", |x| x - 0.5);
        assert!(matches!(bad_op.stencil(&g), Err(Error::Ellipticity { .. })));

        let neg = Field::from_fn(&g, |_, _| -1.0);
        let z = Field::zeros(&g);
        assert!(matches!(
            solve_linear_parabolic(&op, &neg, &z, Array1::zeros(9).view(), Direction::Forward),
            Err(Error::NegativeCoefficient { .. })
        ));

        let decreasing = Polynomial::new("dec", vec![0.0, -1.0]);
        let gp1 = vec![SpatialProfile::indicator(&g, 0.0, 0.5)];
        let r = solve_semilinear_forward(
            &op,
            &decreasing,
            &gp1,
            &Control::constant(&g, 1, 1.0),
            &SpatialProfile::zeros(&g),
            None,
            &SolverOptions::default(),
        );
        assert!(matches!(r, Err(Error::Monotonicity { .. })));
    }

    #[test]
    fn newton_failure_reports_history() {
        let (g, op) = heat_setup(10, 2, 1.0);
        let f = Polynomial::new("cubic", vec![0.0, 0.0, 0.0, 1.0]);
        let gp = vec![SpatialProfile::indicator(&g, 0.2, 0.6)];
        let opts = SolverOptions {
            newton_tol: 1e-12,
            newton_max_iter: 1,
        };
        match solve_semilinear_forward(&op, &f, &gp, &Control::constant(&g, 1, 5.0), &SpatialProfile::zeros(&g), None, &opts)
        {
            Err(Error::Newton { level, residuals, .. }) => {
                assert_eq!(level, 1);
                assert_eq!(residuals.len(), 1);
            }
            other => panic!("expected Newton failure, got {other:?}"),
        }
    }

    #[test]
    fn linear_zero_data() {
        let (g, op) = heat_setup(8, 6, 1.0);
        let alpha = Field::from_fn(&g, |x, t| x + t);
        let z = Field::zeros(&g);
        for dir in [Direction::Forward, Direction::Backward] {
            let s = solve_linear_parabolic(&op, &alpha, &z, Array1::zeros(8).view(), dir).unwrap();
            assert!(s.values.iter().all(|v| *v == 0.0));
        }
        let r = Field::from_fn(&g, |x, _| x);
        let p = solve_linear_parabolic(&op, &alpha, &r, Array1::zeros(8).view(), Direction::Backward).unwrap();
        assert!(p.level(g.n_t).iter().all(|v| *v == 0.0));
        assert!(p.max_abs() > 0.0);
    }

    #[test]
    fn linearized_properties() {
        let (g, op) = heat_setup(12, 10, 1.0);
        let f = Polynomial::new("cubic", vec![0.0, 0.5, 0.0, 1.0]);
        let gp = vec![SpatialProfile::indicator(&g, 0.1, 0.4), SpatialProfile::indicator(&g, 0.6, 0.9)];
        let u = Control::from_fn(&g, 2, |j, t| (j as f64 + 1.0) * (3.0 * t).sin());
        let y = solve_semilinear_forward(&op, &f, &gp, &u, &SpatialProfile::zeros(&g), None, &SolverOptions::default())
            .unwrap();
        let zero = solve_linearized(&op, &f, &y, &gp, &Control::zeros(&g, 2)).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));

        let v = Control::from_fn(&g, 2, |j, t| t - 0.3 * j as f64);
        let z1 = solve_linearized(&op, &f, &y, &gp, &v).unwrap();
        let z3 = solve_linearized(&op, &f, &y, &gp, &v.scaled(-3.0)).unwrap();
        let diff = z3.sub(&z1.scaled(-3.0)).unwrap().max_abs();
        assert!(diff <= 1e-14 * (1.0 + z1.max_abs()));

        // f = 0: linearized solve coincides with the forward solve
        let lin = solve_linearized(&op, &Polynomial::zero(), &y, &gp, &v).unwrap();
        let fwd = solve_semilinear_forward(&op, &Polynomial::zero(), &gp, &v, &SpatialProfile::zeros(&g), None, &SolverOptions::default())
            .unwrap();
        assert!(lin.sub(&fwd).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn second_linearized_properties() {
        let (g, op) = heat_setup(12, 10, 1.0);
        let cubic = Polynomial::new("cubic", vec![0.0, 0.0, 0.0, 1.0]);
        let lin = Polynomial::new("lin", vec![0.0, 2.0]);
        let gp = vec![SpatialProfile::indicator(&g, 0.1, 0.7)];
        let u = Control::constant(&g, 1, 1.0);
        let y = solve_semilinear_forward(&op, &cubic, &gp, &u, &SpatialProfile::zeros(&g), None, &SolverOptions::default())
            .unwrap();
        let v = Control::from_fn(&g, 1, |_, t| t);
        let w = Control::from_fn(&g, 1, |_, t| 1.0 - 2.0 * t);
        let zv = solve_linearized(&op, &cubic, &y, &gp, &v).unwrap();
        let zw = solve_linearized(&op, &cubic, &y, &gp, &w).unwrap();
        let om_vw = solve_second_linearized(&op, &cubic, &y, &zv, &zw).unwrap();
        let om_wv = solve_second_linearized(&op, &cubic, &y, &zw, &zv).unwrap();
        assert_eq!(om_vw, om_wv);
        assert!(om_vw.max_abs() > 0.0);
        let om_lin = solve_second_linearized(&op, &lin, &y, &zv, &zw).unwrap();
        assert!(om_lin.values.iter().all(|v| *v == 0.0));
        let om_zero = solve_second_linearized(&op, &cubic, &y, &Field::zeros(&g), &zw).unwrap();
        assert!(om_zero.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn transpose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (g, op) = heat_setup(15, 12, 0.7);
        let alpha = Field::from_values(&g, Array2::from_shape_fn((13, 15), |_| rng.gen_range(0.0..3.0))).unwrap();
        for _ in 0..5 {
            let w = Field::from_values(&g, Array2::from_shape_fn((13, 15), |_| rng.gen_range(-1.0..1.0))).unwrap();
            let r = Field::from_values(&g, Array2::from_shape_fn((13, 15), |_| rng.gen_range(-1.0..1.0))).unwrap();
            let y = solve_linear_parabolic(&op, &alpha, &w, Array1::zeros(15).view(), Direction::Forward).unwrap();
            let p = solve_linear_parabolic(&op, &alpha, &r, Array1::zeros(15).view(), Direction::Backward).unwrap();
            let lhs = y.inner(&r).unwrap();
            let rhs = adjoint_pairing(&w, &p).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn discrete_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (g, op) = heat_setup(20, 15, 1.0);
        for _ in 0..10 {
            let alpha = Field::from_values(&g, Array2::from_shape_fn((16, 20), |_| rng.gen_range(0.0..5.0))).unwrap();
            let rhs = Field::from_values(&g, Array2::from_shape_fn((16, 20), |_| rng.gen_range(0.0..1.0))).unwrap();
            let init = Array1::from_shape_fn(20, |_| rng.gen_range(0.0..1.0));
            for dir in [Direction::Forward, Direction::Backward] {
                let y = solve_linear_parabolic(&op, &alpha, &rhs, init.view(), dir).unwrap();
                assert!(y.values.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn tangent_consistency() {
        let (g, op) = heat_setup(20, 20, 1.0);
        let f = Polynomial::new("cubic", vec![0.0, 0.0, 0.0, 1.0]);
        let gp = vec![SpatialProfile::indicator(&g, 0.2, 0.6)];
        let u = Control::from_fn(&g, 1, |_, t| 2.0 * (5.0 * t).cos());
        let v = Control::from_fn(&g, 1, |_, t| 1.0 + t);
        let opts = SolverOptions::default();
        let y = solve_semilinear_forward(&op, &f, &gp, &u, &SpatialProfile::zeros(&g), None, &opts).unwrap();
        let z = solve_linearized(&op, &f, &y, &gp, &v).unwrap();
        let eps: Vec<f64> = vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let errs: Vec<f64> = eps
            .iter()
            .map(|e| {
                let ye = solve_semilinear_forward(&op, &f, &gp, &u.axpy(*e, &v).unwrap(), &SpatialProfile::zeros(&g), None, &opts)
                    .unwrap();
                let q = ye.sub(&y).unwrap().scaled(1.0 / e);
                q.sub(&z).unwrap().norm(NormKind::L2Q).unwrap()
            })
            .collect();
        // log-log slope over the first decades (the last points approach roundoff)
        let slope = (errs[0] / errs[3]).log10() / 3.0;
        assert!((slope - 1.0).abs() < 0.1, "slope {slope}, errs {errs:?}");
    }
}
