//! Perturbation sweeps of the optimality system and empirical subregularity moduli.
//!
//! A perturbation `ζ = (ξ, η, ρ)` enters as a state source `ξ`, a linear objective term
//! `+∫ η y` (so `η` appears in the adjoint equation) and `-∫ <ρ, u>` (so the VI reads
//! `0 ∈ σ - ρ + N_U(u)`). Perturbed triples are stationary points of that perturbed
//! problem, found by warm-starting the optimizer at `ū`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{default_control_radius, log_space};
use crate::error::{Error, Result};
use crate::grid::{Control, Field, NormKind};
use crate::optimizer::{solve_ocp, OptimizerOptions, SolveReport};
use crate::problem::{Hooks, OptimalityTriple, ProblemSpec};

/// Integrability exponent of the bound on `ξ` (any `r > 2` in one space dimension).
pub const XI_EXPONENT: f64 = 3.0;

pub const DEFAULT_C_PE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    XiSmooth,
    EtaSmooth,
    RhoConst,
    RhoSin,
    MuSigmaLinear,
    Mixed,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::XiSmooth,
        Family::EtaSmooth,
        Family::RhoConst,
        Family::RhoSin,
        Family::MuSigmaLinear,
        Family::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::XiSmooth => "xi_smooth",
            Family::EtaSmooth => "eta_smooth",
            Family::RhoConst => "rho_const",
            Family::RhoSin => "rho_sin",
            Family::MuSigmaLinear => "mu_sigma_linear",
            Family::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhoClass {
    Free,
    /// `ρ_j = μ_j σ(t)` with `σ` sampled per cell and `σ = 0` on the last cell.
    MuSigma { sigma: Vec<f64>, dsigma_dt: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub xi: Field,
    pub eta: Field,
    pub rho: Control,
    pub rho_class: RhoClass,
}

impl Perturbation {
    pub fn zero(p: &ProblemSpec) -> Self {
        Self {
            xi: Field::zeros(&p.grid),
            eta: Field::zeros(&p.grid),
            rho: Control::zeros(&p.grid, p.m()),
            rho_class: RhoClass::Free,
        }
    }

    pub fn hooks(&self) -> Hooks<'_> {
        Hooks {
            extra_source: Some(&self.xi),
            extra_linear_y: Some(&self.eta),
            extra_linear_u: Some(&self.rho),
        }
    }

    pub fn check_bound(&self, c_pe: f64) -> Result<()> {
        let norm = self.xi.lp_norm(XI_EXPONENT);
        if norm > c_pe {
            return Err(Error::PerturbationBound { norm, bound: c_pe });
        }
        Ok(())
    }

    /// `‖dσ/dt‖_{L2(0,T)}` for the restricted class.
    pub fn dsigma_l2(&self) -> Option<f64> {
        match &self.rho_class {
            RhoClass::Free => None,
            RhoClass::MuSigma { dsigma_dt, .. } => {
                let dt = self.rho.grid.dt();
                Some((dsigma_dt.iter().map(|d| d * d).sum::<f64>() * dt).sqrt())
            }
        }
    }
}

/// `‖y1 - y2‖_{L2(Q)} + ‖p1 - p2‖_{L2(Q)} + ‖u1 - u2‖_{L1}`.
pub fn metric_dy(a: &OptimalityTriple, b: &OptimalityTriple) -> Result<f64> {
    Ok(DyParts::between(a, b)?.total())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyParts {
    pub u_l1: f64,
    pub y_l2: f64,
    pub p_l2: f64,
}

impl DyParts {
    pub fn between(a: &OptimalityTriple, b: &OptimalityTriple) -> Result<Self> {
        Ok(Self {
            u_l1: a.u.sub(&b.u)?.norm(NormKind::L1Time)?,
            y_l2: a.y.sub(&b.y)?.norm(NormKind::L2Q)?,
            p_l2: a.p.sub(&b.p)?.norm(NormKind::L2Q)?,
        })
    }

    pub fn total(&self) -> f64 {
        self.u_l1 + self.y_l2 + self.p_l2
    }
}

/// `‖ξ1 - ξ2‖_{L2(Q)} + ‖η1 - η2‖_{L2(Q)} + ‖ρ1 - ρ2‖_{L∞}`.
pub fn metric_dz(a: &Perturbation, b: &Perturbation) -> Result<f64> {
    Ok(a.xi.sub(&b.xi)?.norm(NormKind::L2Q)?
        + a.eta.sub(&b.eta)?.norm(NormKind::L2Q)?
        + a.rho.sub(&b.rho)?.norm(NormKind::LinfTime)?)
}

/// Right-hand side of the subregularity estimate for a perturbation of `family`:
/// [`metric_dz`] against zero, with `‖dσ/dt‖_{L2}` in place of `‖ρ‖_∞` for the
/// restricted class.
pub fn family_dz(z: &Perturbation) -> Result<f64> {
    match z.dsigma_l2() {
        Some(ds) => Ok(z.xi.norm(NormKind::L2Q)? + z.eta.norm(NormKind::L2Q)? + ds),
        None => Ok(z.xi.norm(NormKind::L2Q)? + z.eta.norm(NormKind::L2Q)? + z.rho.norm(NormKind::LinfTime)?),
    }
}

pub fn make_perturbation(family: Family, eps: f64, p: &ProblemSpec, c_pe: f64) -> Result<Perturbation> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Argument(format!("perturbation size must be >= 0, got {eps}")));
    }
    let grid = p.grid;
    let (xl, len, horizon) = (grid.x_left, grid.length(), grid.horizon);
    let pi = std::f64::consts::PI;
    let bump = move |x: f64, t: f64| (pi * (x - xl) / len).sin() * (pi * t / horizon).sin();
    let mut z = Perturbation::zero(p);
    match family {
        Family::XiSmooth => z.xi = Field::from_fn(&grid, |x, t| eps * bump(x, t)),
        Family::EtaSmooth => z.eta = Field::from_fn(&grid, |x, t| eps * bump(x, t)),
        Family::RhoConst => z.rho = Control::constant(&grid, p.m(), eps),
        Family::RhoSin => z.rho = Control::from_fn(&grid, p.m(), |_, t| eps * (2.0 * pi * t / horizon).sin()),
        Family::MuSigmaLinear => {
            let mu = p.mu();
            let sigma: Vec<f64> = (0..grid.n_t).map(|c| eps * (horizon - grid.t(c + 1))).collect();
            z.rho = Control::from_fn(&grid, p.m(), |j, t| mu[j] * eps * (horizon - t));
            z.rho_class = RhoClass::MuSigma {
                sigma,
                dsigma_dt: vec![-eps; grid.n_t],
            };
        }
        Family::Mixed => {
            if eps > 0.0 {
                let shape = Field::from_fn(&grid, bump);
                let s = eps / shape.norm(NormKind::L2Q)?;
                z.xi = shape.scaled(s);
                z.eta = shape.scaled(s);
                let r = Control::from_fn(&grid, p.m(), |j, t| {
                    0.5 + 0.5 * (2.0 * pi * t / horizon + j as f64).sin()
                });
                z.rho = r.scaled(eps / r.norm(NormKind::LinfTime)?);
            }
        }
    }
    z.check_bound(c_pe)?;
    Ok(z)
}

pub fn solve_perturbed_system(
    p: &ProblemSpec,
    z: &Perturbation,
    opts: &OptimizerOptions,
    warm_start: &Control,
) -> Result<SolveReport> {
    solve_ocp(p, opts, Some(warm_start), z.hooks())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KappaOptions {
    pub optimizer: OptimizerOptions,
    pub c_pe: f64,
    /// `‖u_ζ - ū‖_{L1}` beyond which a row is excluded; `None` uses half the default
    /// control radius of the diagnostics.
    pub locality_radius: Option<f64>,
}

impl Default for KappaOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerOptions {
                restart_count: 0,
                ..Default::default()
            },
            c_pe: DEFAULT_C_PE,
            locality_radius: None,
        }
    }
}

/// `8` log-spaced points in `[1e-4, 1e-1]`.
pub fn default_epsilon_grid() -> Vec<f64> {
    log_space(1e-4, 1e-1, 8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaRow {
    pub family: Family,
    pub epsilon: f64,
    pub d_z: f64,
    pub u_diff_l1: f64,
    pub y_diff_l2: f64,
    pub p_diff_l2: f64,
    pub d_y: f64,
    pub ratio: Option<f64>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    pub family: Family,
    pub rows: usize,
    pub excluded: usize,
    pub kappa_max: Option<f64>,
    /// Log-log slope of `d_Y` against `d_Z` over resolved rows.
    pub slope: Option<f64>,
    pub slope_ok: bool,
    pub monotone: bool,
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub vi_tol: f64,
    /// `10 · vi_tol`: `d_Y` at or below this is treated as unresolved.
    pub floor: f64,
    pub locality_radius: f64,
    pub c_pe: f64,
    pub seed: u64,
    pub kappa_max: Option<f64>,
    pub kappa_median: Option<f64>,
    /// `exp(mean(log d_Y - log d_Z))` over resolved rows: the fit with slope fixed at 1.
    pub kappa_fit: Option<f64>,
    pub zero_perturbation_dy: f64,
    pub all_finite: bool,
    pub bounded: bool,
    pub empty: bool,
    pub families: Vec<FamilySummary>,
    #[serde(skip)]
    pub rows: Vec<KappaRow>,
}

impl KappaReport {
    /// Finite ratios, `κ̂_max ≤ 10 · median`, monotone trend in every family and the
    /// zero perturbation reproducing `ψ̄`.
    pub fn passed(&self) -> bool {
        !self.empty
            && self.all_finite
            && self.bounded
            && self.families.iter().all(|f| f.monotone)
            && self.zero_perturbation_dy <= self.floor
    }
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln() / n, b + y.ln() / n));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in points {
        sxy += (x.ln() - mx) * (y.ln() - my);
        sxx += (x.ln() - mx).powi(2);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Sweeps `families × eps_grid` in parallel around the stationary triple `ψ̄`.
pub fn estimate_kappa(
    p: &ProblemSpec,
    reference: &OptimalityTriple,
    families: &[Family],
    eps_grid: &[f64],
    opts: &KappaOptions,
) -> Result<KappaReport> {
    let vi_tol = opts.optimizer.vi_tol;
    let floor = 10.0 * vi_tol;
    let locality = opts.locality_radius.unwrap_or(0.5 * default_control_radius(p));
    let mut eps_sorted = eps_grid.to_vec();
    eps_sorted.sort_by(f64::total_cmp);
    let cells: Vec<(Family, f64)> = families
        .iter()
        .flat_map(|f| eps_sorted.iter().map(move |e| (*f, *e)))
        .collect();

    let zero = solve_perturbed_system(p, &Perturbation::zero(p), &opts.optimizer, &reference.u)?;
    let zero_perturbation_dy = metric_dy(&zero.triple, reference)?;

    let solved: Vec<Result<(KappaRow, bool)>> = cells
        .into_par_iter()
        .map(|(family, eps)| {
            let z = make_perturbation(family, eps, p, opts.c_pe)?;
            let rep = solve_perturbed_system(p, &z, &opts.optimizer, &reference.u)?;
            let parts = DyParts::between(&rep.triple, reference)?;
            let d_z = family_dz(&z)?;
            let d_y = parts.total();
            Ok((
                KappaRow {
                    family,
                    epsilon: eps,
                    d_z,
                    u_diff_l1: parts.u_l1,
                    y_diff_l2: parts.y_l2,
                    p_diff_l2: parts.p_l2,
                    d_y,
                    ratio: (d_z > 0.0).then(|| d_y / d_z),
                    excluded: parts.u_l1 > locality,
                },
                rep.converged,
            ))
        })
        .collect();

    let mut rows = Vec::with_capacity(solved.len());
    let mut converged = Vec::with_capacity(solved.len());
    for r in solved {
        let (row, ok) = r?;
        rows.push(row);
        converged.push(ok);
    }

    let used: Vec<&KappaRow> = rows.iter().filter(|r| !r.excluded && r.ratio.is_some()).collect();
    let all_finite = used.iter().all(|r| r.ratio.is_some_and(f64::is_finite));
    let kappa_max = used.iter().filter_map(|r| r.ratio).reduce(f64::max);
    let resolved: Vec<&&KappaRow> = used.iter().filter(|r| r.d_y > floor).collect();
    let mut resolved_ratios: Vec<f64> = resolved.iter().filter_map(|r| r.ratio).collect();
    let kappa_fit = (!resolved.is_empty()).then(|| {
        let n = resolved.len() as f64;
        (resolved.iter().map(|r| (r.d_y / r.d_z).ln()).sum::<f64>() / n).exp()
    });
    let kappa_median = median(&mut resolved_ratios);
    let bounded = match (kappa_max, kappa_median) {
        (Some(mx), Some(md)) => mx <= 10.0 * md,
        (Some(mx), None) => mx <= floor,
        _ => false,
    };

    let mut summaries = Vec::new();
    for &family in families {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].family == family).collect();
        let fam: Vec<&KappaRow> = idx.iter().map(|&i| &rows[i]).collect();
        let kept: Vec<&&KappaRow> = fam.iter().filter(|r| !r.excluded).collect();
        let pts: Vec<(f64, f64)> = kept
            .iter()
            .filter(|r| r.d_y > floor && r.d_z > 0.0)
            .map(|r| (r.d_z, r.d_y))
            .collect();
        let s = slope(&pts);
        let floored: Vec<f64> = kept.iter().map(|r| r.d_y.max(floor)).collect();
        summaries.push(FamilySummary {
            family,
            rows: fam.len(),
            excluded: fam.len() - kept.len(),
            kappa_max: kept.iter().filter_map(|r| r.ratio).reduce(f64::max),
            slope: s,
            slope_ok: s.is_none_or(|s| s >= 0.9),
            monotone: floored.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)),
            unconverged: idx.iter().filter(|&&i| !converged[i]).count(),
        });
    }

    Ok(KappaReport {
        vi_tol,
        floor,
        locality_radius: locality,
        c_pe: opts.c_pe,
        seed: opts.optimizer.seed,
        kappa_max,
        kappa_median,
        kappa_fit,
        zero_perturbation_dy,
        all_finite,
        bounded,
        empty: used.is_empty(),
        families: summaries,
        rows,
    })
}
