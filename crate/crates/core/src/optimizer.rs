//! Stationary points of the discrete problem via conditional gradient (default) or
//! projected gradient, with Armijo backtracking and seeded multistart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Control, ControlBounds, Field};
use crate::problem::{
    objective_from_state, perturbed_switching, solve_adjoint, solve_state, vi_residual_from_switching, Hooks,
    OptimalityTriple, ProblemSpec, SwitchingFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ConditionalGradient,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub method: Method,
    pub max_iter: usize,
    pub vi_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub restart_count: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            method: Method::ConditionalGradient,
            max_iter: 500,
            vi_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            max_backtracks: 60,
            restart_count: 3,
            seed: 0,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Argument(format!("optimizer option {what}")));
        if !(self.vi_tol > 0.0) {
            return bad("vi_tol must be > 0");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial_step must be > 0");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1");
        }
        Ok(())
    }
}

/// Outcome of one start of a multistart run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub start: usize,
    pub objective: f64,
    pub vi_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub triple: OptimalityTriple,
    pub sigma: SwitchingFunction,
    pub objective: f64,
    pub vi_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    /// Index of the start that produced this report.
    pub start: usize,
    pub starts: Vec<StartSummary>,
}

pub fn project_box(u: &Control, bounds: &ControlBounds) -> Control {
    let mut out = u.clone();
    for (idx, v) in out.values.indexed_iter_mut() {
        *v = v.clamp(bounds.lower[idx], bounds.upper[idx]);
    }
    out
}

pub fn bang_bang_from_switching(p: &ProblemSpec, sigma: &SwitchingFunction, fallback: &Control) -> Control {
    let mut out = fallback.clone();
    for (idx, v) in out.values.indexed_iter_mut() {
        let s = sigma.values[idx];
        if s > 0.0 {
            *v = p.bounds.lower[idx];
        } else if s < 0.0 {
            *v = p.bounds.upper[idx];
        }
    }
    out
}

/// Uniform random admissible control.
pub fn random_admissible(p: &ProblemSpec, rng: &mut ChaCha8Rng) -> Control {
    let mut u = p.bounds.midpoint(&p.grid);
    for (idx, v) in u.values.indexed_iter_mut() {
        *v = rng.gen_range(p.bounds.lower[idx]..=p.bounds.upper[idx]);
    }
    u
}

struct Iterate {
    u: Control,
    y: Field,
    objective: f64,
}

fn evaluate(p: &ProblemSpec, u: Control, hooks: Hooks<'_>) -> Result<Iterate> {
    let y = solve_state(p, &u, hooks)?;
    let objective = objective_from_state(p, &y, &u, hooks)?;
    Ok(Iterate { u, y, objective })
}

fn solve_single(
    p: &ProblemSpec,
    opts: &OptimizerOptions,
    u0: Control,
    hooks: Hooks<'_>,
    start: usize,
) -> Result<SolveReport> {
    let mut it = evaluate(p, project_box(&u0, &p.bounds), hooks)?;
    let mut history = vec![it.objective];
    // previous (u, σ) for the Barzilai-Borwein trial step of projected gradient
    let mut prev: Option<(Control, SwitchingFunction)> = None;
    let mut iterations = 0;
    loop {
        let adj = solve_adjoint(p, &it.y, &it.u, hooks.extra_linear_y)?;
        let triple = OptimalityTriple {
            y: it.y.clone(),
            p: adj,
            u: it.u.clone(),
        };
        let sigma = perturbed_switching(p, &triple, hooks)?;
        let gap = vi_residual_from_switching(&sigma, &it.u, &p.bounds);
        let finish = |converged: bool, history: Vec<f64>, iterations: usize, it: Iterate| SolveReport {
            objective: it.objective,
            vi_residual: gap,
            iterations,
            converged,
            history,
            start,
            starts: Vec::new(),
            sigma: sigma.clone(),
            triple,
        };
        if gap <= opts.vi_tol {
            return Ok(finish(true, history, iterations, it));
        }
        if iterations >= opts.max_iter {
            return Ok(finish(false, history, iterations, it));
        }
        iterations += 1;

        let accepted = match opts.method {
            Method::ConditionalGradient => {
                let vertex = bang_bang_from_switching(p, &sigma, &it.u);
                let d = vertex.sub(&it.u)?;
                let slope = sigma.pair(&d)?;
                let mut s = opts.initial_step.min(1.0);
                let mut found = None;
                for _ in 0..=opts.max_backtracks {
                    let cand = evaluate(p, project_box(&it.u.axpy(s, &d)?, &p.bounds), hooks)?;
                    if cand.objective <= it.objective + opts.armijo_c * s * slope {
                        found = Some(cand);
                        break;
                    }
                    s *= opts.backtrack;
                }
                found
            }
            Method::ProjectedGradient => {
                let grad = Control::from_values(&p.grid, sigma.values.clone())?;
                let mut s = opts.initial_step;
                if let Some((u_prev, s_prev)) = &prev {
                    let du = it.u.sub(u_prev)?;
                    let dg = &sigma.values - &s_prev.values;
                    let num = du.inner(&du)?;
                    let den = (&du.values * &dg).sum() * p.grid.dt();
                    if den > 0.0 && num > 0.0 {
                        s = num / den;
                    }
                }
                let mut found = None;
                for _ in 0..=opts.max_backtracks {
                    let trial = project_box(&it.u.axpy(-s, &grad)?, &p.bounds);
                    let pred = sigma.pair(&trial.sub(&it.u)?)?;
                    let cand = evaluate(p, trial, hooks)?;
                    if cand.objective <= it.objective + opts.armijo_c * pred {
                        found = Some(cand);
                        break;
                    }
                    s *= opts.backtrack;
                }
                prev = Some((it.u.clone(), sigma.clone()));
                found
            }
        };
        match accepted {
            Some(next) => {
                it = next;
                history.push(it.objective);
            }
            // line search exhausted: no further decrease is representable
            None => return Ok(finish(false, history, iterations, it)),
        }
    }
}

/// Solves from the warm start (or the box midpoint) and `restart_count` seeded random
/// starts in parallel; returns the best converged start, else the one with the
/// smallest residual.
pub fn solve_ocp(
    p: &ProblemSpec,
    opts: &OptimizerOptions,
    warm_start: Option<&Control>,
    hooks: Hooks<'_>,
) -> Result<SolveReport> {
    opts.validate()?;
    let first = match warm_start {
        Some(u) => {
            p.check_control(u)?;
            u.clone()
        }
        None => p.bounds.midpoint(&p.grid),
    };
    let mut starts = vec![first];
    for i in 0..opts.restart_count {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
        starts.push(random_admissible(p, &mut rng));
    }
    let results: Vec<Result<SolveReport>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, u0)| solve_single(p, opts, u0, hooks, i))
        .collect();

    let mut summaries = Vec::new();
    let mut best: Option<SolveReport> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rep) => {
                summaries.push(StartSummary {
                    start: rep.start,
                    objective: rep.objective,
                    vi_residual: rep.vi_residual,
                    iterations: rep.iterations,
                    converged: rep.converged,
                });
                let better = match &best {
                    None => true,
                    Some(b) => match (rep.converged, b.converged) {
                        (true, false) => true,
                        (false, true) => false,
                        (true, true) => rep.objective < b.objective,
                        (false, false) => rep.vi_residual < b.vi_residual,
                    },
                };
                if better {
                    best = Some(rep);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(mut rep) => {
            rep.starts = summaries;
            Ok(rep)
        }
        None => Err(first_err.expect("at least one start")),
    }
}
