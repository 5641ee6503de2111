//! Sampled evidence for the second-order conditions at a stationary point: critical
//! cones, coercivity constants, the structural measure of the switching function,
//! growth, and bounded-ratio estimates for the state and adjoint maps.
//!
//! Every estimate here is a min or max over finitely many seeded samples, so it is
//! one-sided evidence. Samples are drawn from per-index random streams and reduced
//! after collection, so results do not depend on the thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Control, ControlBounds, NormKind};
use crate::pde::{law_field, max_level_l2, solve_linearized};
use crate::problem::{
    compute_triple, objective_from_state, second_derivative_parts_with, switching_function, Hooks,
    OptimalityTriple, ProblemSpec, SwitchingFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    #[serde(rename = "D_tau")]
    D,
    #[serde(rename = "G_tau")]
    G,
    #[serde(rename = "E_tau")]
    E,
    #[serde(rename = "C_tau")]
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub kind: ConeKind,
    pub tau: f64,
}

impl ConeSpec {
    pub fn new(kind: ConeKind, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Argument(format!("cone tau must be > 0, got {tau}")));
        }
        Ok(Self { kind, tau })
    }
}

/// `0.01 · max_j ‖σ_j‖_∞`.
pub fn default_tau(sigma: &SwitchingFunction) -> f64 {
    0.01 * sigma.max_abs()
}

/// `0.1 · T · max_j (u_b - u_a)`.
pub fn default_control_radius(p: &ProblemSpec) -> f64 {
    0.1 * p.grid.horizon * p.bounds.max_width()
}

pub const DEFAULT_STATE_RADIUS: f64 = 0.1;

/// `v_j ≥ 0` where `ū_j = u_a`, `v_j ≤ 0` where `ū_j = u_b`.
pub fn check_sign_conditions(ubar: &Control, bounds: &ControlBounds, v: &Control) -> Result<()> {
    ubar.check_same_shape(v)?;
    for ((j, c), &vv) in v.values.indexed_iter() {
        let u = ubar.values[(j, c)];
        if (u <= bounds.lower[(j, c)] && vv < 0.0) || (u >= bounds.upper[(j, c)] && vv > 0.0) {
            return Err(Error::SignCondition { component: j, cell: c });
        }
    }
    Ok(())
}

/// Data at `ψ̄` shared by every cone test and coercivity sample.
#[derive(Debug, Clone)]
pub struct Reference<'a> {
    pub problem: &'a ProblemSpec,
    pub triple: &'a OptimalityTriple,
    pub sigma: SwitchingFunction,
    pub objective: f64,
}

impl<'a> Reference<'a> {
    pub fn new(problem: &'a ProblemSpec, triple: &'a OptimalityTriple) -> Result<Self> {
        let sigma = switching_function(problem, &triple.y, &triple.p)?;
        let objective = objective_from_state(problem, &triple.y, &triple.u, Hooks::none())?;
        Ok(Self {
            problem,
            triple,
            sigma,
            objective,
        })
    }

    fn first(&self, v: &Control) -> Result<f64> {
        self.sigma.pair(v)
    }
}

pub fn cone_membership(p: &ProblemSpec, triple: &OptimalityTriple, v: &Control, spec: ConeSpec) -> Result<bool> {
    let r = Reference::new(p, triple)?;
    cone_membership_at(&r, v, spec)
}

pub fn cone_membership_at(r: &Reference<'_>, v: &Control, spec: ConeSpec) -> Result<bool> {
    let p = r.problem;
    check_sign_conditions(&r.triple.u, &p.bounds, v)?;
    let in_d = || {
        v.values
            .indexed_iter()
            .all(|(idx, vv)| *vv == 0.0 || r.sigma.values[idx].abs() <= spec.tau)
    };
    let below = |kind: NormKind| -> Result<bool> {
        let z = solve_linearized(&p.op, p.f.as_ref(), &r.triple.y, &p.g, v)?;
        Ok(r.first(v)? <= spec.tau * z.norm(kind)?)
    };
    match spec.kind {
        ConeKind::D => Ok(in_d()),
        ConeKind::G => below(NormKind::L1Q),
        ConeKind::E => below(NormKind::L2Q),
        ConeKind::C => Ok(in_d() && below(NormKind::L1Q)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    BangFlip,
    Smooth,
    RandomFeasible,
}

pub const ALL_MODES: [SampleMode; 3] = [SampleMode::BangFlip, SampleMode::Smooth, SampleMode::RandomFeasible];

fn l1(v: &Control) -> f64 {
    v.norm(NormKind::L1Time).expect("time norm on a control")
}

/// A sign-feasible variation `v = u - ū` with `u` admissible and `‖v‖_{L1} ≤ budget`
/// (`= budget` for `bang_flip` and `smooth` whenever the box allows it).
pub fn sample_variation(
    ubar: &Control,
    bounds: &ControlBounds,
    mode: SampleMode,
    budget: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Control> {
    if !(budget >= 0.0) {
        return Err(Error::Argument(format!("budget must be >= 0, got {budget}")));
    }
    let grid = ubar.grid;
    let dt = grid.dt();
    let mut v = Control::zeros(&grid, ubar.m());
    if budget == 0.0 {
        return Ok(v);
    }
    match mode {
        SampleMode::BangFlip => {
            let mut cells: Vec<(usize, usize)> = (0..ubar.m())
                .flat_map(|j| (0..grid.n_t).map(move |c| (j, c)))
                .collect();
            cells.shuffle(rng);
            let mut left = budget;
            for idx in cells {
                let (lo, hi, u) = (bounds.lower[idx], bounds.upper[idx], ubar.values[idx]);
                let target = if u <= lo {
                    hi
                } else if u >= hi {
                    lo
                } else if rng.gen_bool(0.5) {
                    hi
                } else {
                    lo
                };
                let full = (target - u).abs() * dt;
                let frac = (left / full).min(1.0);
                v.values[idx] = frac * (target - u);
                left -= frac * full;
                if left <= 0.0 {
                    break;
                }
            }
        }
        SampleMode::Smooth => {
            let freq = rng.gen_range(1..=4) as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let signs: Vec<f64> = (0..ubar.m()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let w = Control::from_fn(&grid, ubar.m(), |j, t| {
                signs[j] * (std::f64::consts::TAU * freq * t / grid.horizon + phase).sin()
            });
            let at = |a: f64| -> Control {
                let mut out = v.clone();
                for (idx, o) in out.values.indexed_iter_mut() {
                    let u = ubar.values[idx];
                    *o = (u + a * w.values[idx]).clamp(bounds.lower[idx], bounds.upper[idx]) - u;
                }
                out
            };
            // ‖at(a)‖_{L1} is nondecreasing in a; bisect for the budget
            let a_max = 2.0 * bounds.max_width() / w.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-12);
            if l1(&at(a_max)) <= budget {
                return Ok(at(a_max));
            }
            let (mut lo, mut hi) = (0.0, a_max);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if l1(&at(mid)) < budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            v = at(lo);
        }
        SampleMode::RandomFeasible => {
            for (idx, o) in v.values.indexed_iter_mut() {
                *o = rng.gen_range(bounds.lower[idx]..=bounds.upper[idx]) - ubar.values[idx];
            }
            let n = l1(&v);
            if n > budget {
                v = v.scaled(budget / n);
            }
        }
    }
    Ok(v)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Variant `A` filters samples by `‖y_u - ȳ‖_{L∞(Q)} < radius`, variant `B` by
/// `‖u - ū‖_{L1} < radius`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityOptions {
    pub k: u8,
    pub variant: Variant,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub cone: Option<ConeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityRow {
    pub sample: usize,
    pub mode: SampleMode,
    pub v_l1: f64,
    pub z_l2: f64,
    pub state_linf: Option<f64>,
    pub first: f64,
    pub second: f64,
    pub lhs: f64,
    pub rhs_base: f64,
    pub ratio: Option<f64>,
    pub violation: bool,
    pub in_cone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub k: u8,
    pub variant: Variant,
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub cone: Option<ConeSpec>,
    pub gamma_hat: Option<f64>,
    pub violations: usize,
    pub degenerate: bool,
    /// Samples outside the cone filter or with no admissible scaling inside the radius.
    pub excluded: usize,
    #[serde(skip)]
    pub rows: Vec<CoercivityRow>,
}

impl CoercivityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.gamma_hat.is_some_and(|g| g > 0.0)
    }
}

pub fn estimate_coercivity(r: &Reference<'_>, opts: &CoercivityOptions) -> Result<CoercivityReport> {
    if opts.k > 2 {
        return Err(Error::Argument(format!("k must be 0, 1 or 2, got {}", opts.k)));
    }
    if !(opts.radius > 0.0) || opts.samples == 0 {
        return Err(Error::Argument("coercivity radius must be > 0 and N >= 1".into()));
    }
    let p = r.problem;
    let ybar = &r.triple.y;
    let span = p.grid.horizon * p.bounds.max_width();
    let rows: Vec<Result<Option<CoercivityRow>>> = (0..opts.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(opts.seed, i);
            let mode = ALL_MODES[i % ALL_MODES.len()];
            let frac = rng.gen_range(0.05..1.0);
            let budget = match opts.variant {
                Variant::B => frac * opts.radius,
                Variant::A => frac * span,
            };
            let mut v = sample_variation(&r.triple.u, &p.bounds, mode, budget, &mut rng)?;
            let mut state_linf = None;
            if opts.variant == Variant::A {
                let mut found = false;
                for _ in 0..60 {
                    let u = r.triple.u.add(&v)?;
                    let y = crate::problem::solve_state(p, &u, Hooks::none())?;
                    let d = y.sub(ybar)?.max_abs();
                    if d < opts.radius {
                        state_linf = Some(d);
                        found = true;
                        break;
                    }
                    v = v.scaled(0.5);
                }
                if !found {
                    return Ok(None);
                }
            } else if l1(&v) >= opts.radius {
                return Ok(None);
            }
            let z = solve_linearized(&p.op, p.f.as_ref(), ybar, &p.g, &v)?;
            let first = r.first(&v)?;
            let second = second_derivative_parts_with(p, r.triple, &v, &v, &z, &z)?.total();
            let lhs = first + second;
            let v_l1 = l1(&v);
            let z_l2 = z.norm(NormKind::L2Q)?;
            let k = i32::from(opts.k);
            let rhs_base = z_l2.powi(k) * v_l1.powi(2 - k);
            let in_cone = match opts.cone {
                Some(spec) => cone_membership_at(r, &v, spec)?,
                None => true,
            };
            Ok(Some(CoercivityRow {
                sample: i,
                mode,
                v_l1,
                z_l2,
                state_linf,
                first,
                second,
                lhs,
                rhs_base,
                ratio: (rhs_base > 0.0).then(|| lhs / rhs_base),
                violation: lhs < 0.0,
                in_cone,
            }))
        })
        .collect();

    let mut out = CoercivityReport {
        k: opts.k,
        variant: opts.variant,
        radius: opts.radius,
        samples: opts.samples,
        seed: opts.seed,
        cone: opts.cone,
        gamma_hat: None,
        violations: 0,
        degenerate: false,
        excluded: 0,
        rows: Vec::new(),
    };
    for row in rows {
        match row? {
            None => out.excluded += 1,
            Some(row) => {
                if !row.in_cone {
                    out.excluded += 1;
                } else {
                    out.violations += usize::from(row.violation);
                    if let Some(q) = row.ratio {
                        out.gamma_hat = Some(out.gamma_hat.map_or(q, |g: f64| g.min(q)));
                    }
                }
                out.rows.push(row);
            }
        }
    }
    out.degenerate = out.gamma_hat.is_none();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralRow {
    pub component: usize,
    pub epsilon: f64,
    pub measure: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    pub kappa_hat: f64,
    pub bang_bang_fraction: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<StructuralRow>,
}

impl StructuralReport {
    pub fn measures_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .filter(|w| w[0].component == w[1].component)
            .all(|w| w[1].measure >= w[0].measure)
    }
}

/// `20` log-spaced points in `[1e-4, 1e-1] · ‖σ‖_∞`.
pub fn default_epsilon_grid(sigma: &SwitchingFunction) -> Vec<f64> {
    log_space(1e-4, 1e-1, 20)
        .into_iter()
        .map(|e| e * sigma.max_abs())
        .collect()
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
            .collect(),
    }
}

/// Length of `{s ∈ [0, len] : |a + (b - a) s / len| ≤ eps}`.
fn linear_sublevel(a: f64, b: f64, len: f64, eps: f64) -> f64 {
    if a == b {
        return if a.abs() <= eps { len } else { 0.0 };
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let inside = (hi.min(eps) - lo.max(-eps)).max(0.0);
    inside / (hi - lo) * len
}

/// Measure of `{t : |σ_j(t)| ≤ ε}` for the piecewise-linear interpolant of `σ_j`
/// through its cell-left samples, held constant on the last cell.
pub fn sublevel_measure(sigma: &SwitchingFunction, j: usize, eps: f64) -> f64 {
    let dt = sigma.grid.dt();
    let row = sigma.values.row(j);
    let mut m: f64 = row
        .windows(2)
        .into_iter()
        .map(|w| linear_sublevel(w[0], w[1], dt, eps))
        .sum();
    if let Some(last) = row.last() {
        m += linear_sublevel(*last, *last, dt, eps);
    }
    m
}

pub fn check_structural(
    sigma: &SwitchingFunction,
    eps_grid: &[f64],
    ubar: Option<(&Control, &ControlBounds)>,
) -> Result<StructuralReport> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0)) || eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("epsilon grid must be positive and increasing".into()));
    }
    let mut rows = Vec::new();
    let mut kappa_hat = 0.0_f64;
    for j in 0..sigma.m() {
        for &eps in eps_grid {
            let measure = sublevel_measure(sigma, j, eps);
            let ratio = measure / eps;
            kappa_hat = kappa_hat.max(ratio);
            rows.push(StructuralRow {
                component: j,
                epsilon: eps,
                measure,
                ratio,
            });
        }
    }
    let bang_bang_fraction = ubar.map(|(u, b)| {
        let on = u
            .values
            .indexed_iter()
            .filter(|(idx, v)| **v == b.lower[*idx] || **v == b.upper[*idx])
            .count();
        on as f64 / u.values.len() as f64
    });
    Ok(StructuralReport {
        kappa_hat,
        bang_bang_fraction,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub sample: usize,
    pub mode: SampleMode,
    pub v_l1: f64,
    pub first: f64,
    pub first_ratio: f64,
    pub objective_gap: f64,
    pub growth_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// `min J'(ū)(u - ū) / ‖u - ū‖²_{L1}`.
    pub kappa_first: Option<f64>,
    /// `min (J(u) - J(ū)) / ‖u - ū‖²_{L1}`.
    pub kappa_growth: Option<f64>,
    pub negative_gaps: usize,
    #[serde(skip)]
    pub rows: Vec<GrowthRow>,
}

impl GrowthReport {
    pub fn passed(&self) -> bool {
        self.negative_gaps == 0 && self.kappa_first.is_some_and(|k| k > 0.0)
    }
}

pub fn check_growth(r: &Reference<'_>, samples: usize, radius: f64, seed: u64) -> Result<GrowthReport> {
    if !(radius > 0.0) {
        return Err(Error::Argument("growth radius must be > 0".into()));
    }
    let p = r.problem;
    let rows: Vec<Result<Option<GrowthRow>>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let mode = ALL_MODES[i % ALL_MODES.len()];
            let budget = rng.gen_range(0.05..1.0) * radius;
            let v = sample_variation(&r.triple.u, &p.bounds, mode, budget, &mut rng)?;
            let v_l1 = l1(&v);
            if v_l1 == 0.0 {
                return Ok(None);
            }
            let u = r.triple.u.add(&v)?;
            let y = crate::problem::solve_state(p, &u, Hooks::none())?;
            let gap = objective_from_state(p, &y, &u, Hooks::none())? - r.objective;
            let first = r.first(&v)?;
            Ok(Some(GrowthRow {
                sample: i,
                mode,
                v_l1,
                first,
                first_ratio: first / (v_l1 * v_l1),
                objective_gap: gap,
                growth_ratio: gap / (v_l1 * v_l1),
            }))
        })
        .collect();
    let mut out = GrowthReport {
        radius,
        samples,
        seed,
        kappa_first: None,
        kappa_growth: None,
        negative_gaps: 0,
        rows: Vec::new(),
    };
    for row in rows {
        if let Some(row) = row? {
            out.kappa_first = Some(out.kappa_first.map_or(row.first_ratio, |k: f64| k.min(row.first_ratio)));
            out.kappa_growth = Some(out.kappa_growth.map_or(row.growth_ratio, |k: f64| k.min(row.growth_ratio)));
            out.negative_gaps += usize::from(row.objective_gap < 0.0);
            out.rows.push(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub sample: usize,
    pub mode: SampleMode,
    pub v_l1: f64,
    pub state_linf: f64,
    /// `‖y_u - ȳ‖_{L2(Q)} / ‖z_{ū,u-ū}‖_{L2(Q)}`.
    pub comparison_l2: Option<f64>,
    /// Same in `L∞(Q)`.
    pub comparison_linf: Option<f64>,
    /// `max_θ ‖y_{ū+θ(u-ū)} - ȳ‖_{L2(Q)} / ‖y_u - ȳ‖_{L2(Q)}`.
    pub theta_max: Option<f64>,
    /// `‖p_u - p̄‖_{L2(Q)} / (‖y_u - ȳ‖_{L2(Q)} + ‖u - ū‖_{L1})`.
    pub adjoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub theta_grid: Vec<f64>,
    pub comparison_min: Option<f64>,
    pub comparison_max: Option<f64>,
    pub theta_max: Option<f64>,
    pub adjoint_max: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<RatioRow>,
}

impl RatioReport {
    /// Every comparison ratio inside `[lo, hi]`.
    pub fn comparison_within(&self, lo: f64, hi: f64) -> bool {
        self.comparison_min.is_some_and(|m| m >= lo) && self.comparison_max.is_some_and(|m| m <= hi)
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn fold(acc: Option<f64>, x: Option<f64>, pick: fn(f64, f64) -> f64) -> Option<f64> {
    match (acc, x) {
        (Some(a), Some(b)) => Some(pick(a, b)),
        (a, b) => a.or(b),
    }
}

/// Samples `u` with `‖u - ū‖_{L1} ≤ radius` and records the comparison, θ-sweep and
/// adjoint-difference ratios.
pub fn ratio_diagnostics(
    p: &ProblemSpec,
    triple: &OptimalityTriple,
    samples: usize,
    radius: f64,
    theta_grid: &[f64],
    seed: u64,
) -> Result<RatioReport> {
    if !(radius > 0.0) {
        return Err(Error::Argument("ratio radius must be > 0".into()));
    }
    let ybar = &triple.y;
    let rows: Vec<Result<RatioRow>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let mode = ALL_MODES[i % ALL_MODES.len()];
            let budget = rng.gen_range(0.05..1.0) * radius;
            let v = sample_variation(&triple.u, &p.bounds, mode, budget, &mut rng)?;
            let u = triple.u.add(&v)?;
            let tu = compute_triple(p, &u, Hooks::none())?;
            let dy = tu.y.sub(ybar)?;
            let z = solve_linearized(&p.op, p.f.as_ref(), ybar, &p.g, &v)?;
            let dy_l2 = dy.norm(NormKind::L2Q)?;
            let mut theta_max: Option<f64> = None;
            for &theta in theta_grid {
                let ut = triple.u.axpy(theta, &v)?;
                let yt = crate::problem::solve_state(p, &ut, Hooks::none())?;
                let q = ratio(yt.sub(ybar)?.norm(NormKind::L2Q)?, dy_l2);
                theta_max = fold(theta_max, q, f64::max);
            }
            let v_l1 = l1(&v);
            Ok(RatioRow {
                sample: i,
                mode,
                v_l1,
                state_linf: dy.max_abs(),
                comparison_l2: ratio(dy_l2, z.norm(NormKind::L2Q)?),
                comparison_linf: ratio(dy.max_abs(), z.max_abs()),
                theta_max,
                adjoint: ratio(tu.p.sub(&triple.p)?.norm(NormKind::L2Q)?, dy_l2 + v_l1),
            })
        })
        .collect();
    let mut out = RatioReport {
        radius,
        samples,
        seed,
        theta_grid: theta_grid.to_vec(),
        comparison_min: None,
        comparison_max: None,
        theta_max: None,
        adjoint_max: None,
        rows: Vec::new(),
    };
    for row in rows {
        let row = row?;
        for q in [row.comparison_l2, row.comparison_linf] {
            out.comparison_min = fold(out.comparison_min, q, f64::min);
            out.comparison_max = fold(out.comparison_max, q, f64::max);
        }
        out.theta_max = fold(out.theta_max, row.theta_max, f64::max);
        out.adjoint_max = fold(out.adjoint_max, row.adjoint, f64::max);
        out.rows.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplicitBoundRow {
    pub sample: usize,
    pub mode: SampleMode,
    pub z_linf_l2: f64,
    pub bound: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplicitBoundReport {
    pub samples: usize,
    pub seed: u64,
    pub max_ratio: f64,
    pub violations: usize,
    #[serde(skip)]
    pub rows: Vec<ExplicitBoundRow>,
}

/// `‖z_{u,v}‖_{L∞(L2)} ≤ 2 exp(‖f_y(y_u)‖_∞) max_j ‖g_j‖_{L2} ‖v‖_{L1}` on sampled
/// variations of any size.
pub fn check_explicit_bound(
    p: &ProblemSpec,
    triple: &OptimalityTriple,
    samples: usize,
    seed: u64,
) -> Result<ExplicitBoundReport> {
    let fy = law_field(&triple.y, |s, y| p.f.d_dy(s, y)).max_abs();
    let gmax = p.g.iter().map(|g| g.l2_norm(&p.grid)).fold(0.0, f64::max);
    let constant = 2.0 * fy.exp() * gmax;
    let span = p.grid.horizon * p.bounds.max_width();
    let rows: Vec<Result<ExplicitBoundRow>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let mode = ALL_MODES[i % ALL_MODES.len()];
            let budget = rng.gen_range(0.01..1.0) * span;
            let v = sample_variation(&triple.u, &p.bounds, mode, budget, &mut rng)?;
            let z = solve_linearized(&p.op, p.f.as_ref(), &triple.y, &p.g, &v)?;
            let z_linf_l2 = max_level_l2(&z);
            let bound = constant * l1(&v);
            Ok(ExplicitBoundRow {
                sample: i,
                mode,
                z_linf_l2,
                bound,
                violation: z_linf_l2 > bound,
            })
        })
        .collect();
    let mut out = ExplicitBoundReport {
        samples,
        seed,
        max_ratio: 0.0,
        violations: 0,
        rows: Vec::new(),
    };
    for row in rows {
        let row = row?;
        if row.bound > 0.0 {
            out.max_ratio = out.max_ratio.max(row.z_linf_l2 / row.bound);
        }
        out.violations += usize::from(row.violation);
        out.rows.push(row);
    }
    Ok(out)
}
