//! Runs the selected stages and writes reports plus `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use parabolic_ocp::diagnostics::{
    check_explicit_bound, check_growth, check_structural, default_control_radius, default_epsilon_grid,
    estimate_coercivity, ratio_diagnostics, CoercivityOptions, Reference, Variant,
};
use parabolic_ocp::optimizer::{solve_ocp, SolveReport, StartSummary};
use parabolic_ocp::problem::{Hooks, ProblemSpec};
use parabolic_ocp::report::{control_csv, field_csv, switching_csv, write_csv, write_json};
use parabolic_ocp::smsr::{self, estimate_kappa, KappaOptions};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DiagnosticsConfig, ExperimentConfig, HarnessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Diagnose,
    Smsr,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<FileEntry>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    problem: &'a str,
    objective: f64,
    vi_residual: f64,
    iterations: usize,
    converged: bool,
    start: usize,
    starts: &'a [StartSummary],
    history: &'a [f64],
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    checks: Vec<Check>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }

    fn report<R: Serialize, T: Serialize>(&mut self, stem: &str, rows: &[R], summary: &T) -> Result<()> {
        let csv = self.path(&format!("{stem}.csv"));
        write_csv(&csv, rows)?;
        let json = self.path(&format!("{stem}.json"));
        write_json(&json, summary)?;
        Ok(())
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

/// Executes `command`; stage failures are recorded as failed checks rather than
/// returned, so the manifest is always written.
pub fn run(config: &ExperimentConfig, command: Command, out_dir: &Path) -> Result<Manifest> {
    let started_unix = unix_now();
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let resolved = serde_json::to_string_pretty(config)? + "\n";
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
        checks: Vec::new(),
    };
    out.text("config.resolved.json", &resolved)?;

    if let Err(e) = stages(config, command, &mut out) {
        out.check("stage_error", false, format!("{e:#}"));
    }

    let mut files = Vec::new();
    for name in &out.files {
        let bytes = std::fs::read(out_dir.join(name))?;
        files.push(FileEntry {
            name: name.clone(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let passed = out.checks.iter().all(|c| c.passed);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        config_sha256: sha256_hex(resolved.as_bytes()),
        seed: config.seed,
        workers: rayon::current_num_threads(),
        started_unix,
        finished_unix: unix_now(),
        files,
        checks: out.checks,
        passed,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn stages(config: &ExperimentConfig, command: Command, out: &mut Outputs) -> Result<()> {
    let p = config.build_problem()?;
    let report = solve_ocp(&p, &config.optimizer, None, Hooks::none())?;
    write_solution(&p, &report, out)?;
    out.check(
        "solve",
        report.converged,
        format!(
            "objective {:.6e}, residual {:.3e} after {} iterations",
            report.objective, report.vi_residual, report.iterations
        ),
    );

    let diagnostics = match (command, &config.diagnostics) {
        (Command::Diagnose, None) => Some(DiagnosticsConfig::full()),
        (Command::Diagnose | Command::All, Some(d)) => Some(d.clone()),
        _ => None,
    };
    if let Some(d) = diagnostics {
        run_diagnostics(config, &p, &report, &d, out)?;
    }

    let harness = match (command, &config.harness) {
        (Command::Smsr, None) => Some(HarnessConfig::default()),
        (Command::Smsr | Command::All, Some(h)) => Some(h.clone()),
        _ => None,
    };
    if let Some(h) = harness {
        run_harness(config, &p, &report, &h, out)?;
    }
    Ok(())
}

fn write_solution(p: &ProblemSpec, r: &SolveReport, out: &mut Outputs) -> Result<()> {
    out.text("control.csv", &control_csv(&r.triple.u))?;
    out.text("state.csv", &field_csv(&r.triple.y))?;
    out.text("adjoint.csv", &field_csv(&r.triple.p))?;
    out.text("switching.csv", &switching_csv(&r.sigma))?;
    let summary = SolveSummary {
        problem: &p.name,
        objective: r.objective,
        vi_residual: r.vi_residual,
        iterations: r.iterations,
        converged: r.converged,
        start: r.start,
        starts: &r.starts,
        history: &r.history,
    };
    let path = out.path("solve_report.json");
    write_json(&path, &summary)?;
    Ok(())
}

fn run_diagnostics(
    config: &ExperimentConfig,
    p: &ProblemSpec,
    report: &SolveReport,
    d: &DiagnosticsConfig,
    out: &mut Outputs,
) -> Result<()> {
    let reference = Reference::new(p, &report.triple)?;
    let seed = config.seed;
    let control_radius = default_control_radius(p);
    for (i, c) in d.coercivity.iter().enumerate() {
        let radius = c.radius.unwrap_or(match c.variant {
            Variant::A => 0.1,
            Variant::B => control_radius,
        });
        let opts = CoercivityOptions {
            k: c.k,
            variant: c.variant,
            radius,
            samples: c.samples,
            seed,
            cone: c.cone,
        };
        let r = estimate_coercivity(&reference, &opts)?;
        let stem = format!("coercivity_{i}_k{}_{:?}", c.k, c.variant);
        out.report(&stem, &r.rows, &r)?;
        out.check(
            stem,
            r.passed(),
            format!("gamma_hat {:?}, {} violations, {} excluded", r.gamma_hat, r.violations, r.excluded),
        );
    }
    if let Some(s) = &d.structural {
        let eps = s.epsilons.clone().unwrap_or_else(|| default_epsilon_grid(&report.sigma));
        let r = check_structural(&report.sigma, &eps, Some((&report.triple.u, &p.bounds)))?;
        out.report("structural", &r.rows, &r)?;
        let ok = r.kappa_hat.is_finite() && r.measures_monotone();
        out.check("structural", ok, format!("kappa_hat {:.4e}", r.kappa_hat));
    }
    if let Some(g) = &d.growth {
        let radius = g.radius.unwrap_or(control_radius);
        let r = check_growth(&reference, g.samples, radius, seed)?;
        out.report("growth", &r.rows, &r)?;
        out.check(
            "growth",
            r.passed(),
            format!("kappa_first {:?}, {} negative gaps", r.kappa_first, r.negative_gaps),
        );
    }
    if let Some(q) = &d.ratios {
        let r = ratio_diagnostics(p, &report.triple, q.samples, q.radius, &q.theta_grid, seed)?;
        out.report("ratios", &r.rows, &r)?;
        out.check(
            "ratios",
            r.comparison_within(q.accept[0], q.accept[1]),
            format!("comparison in [{:?}, {:?}]", r.comparison_min, r.comparison_max),
        );
    }
    if let Some(e) = &d.explicit_bound {
        let r = check_explicit_bound(p, &report.triple, e.samples, seed)?;
        out.report("explicit_bound", &r.rows, &r)?;
        out.check(
            "explicit_bound",
            r.violations == 0,
            format!("max ratio {:.4}, {} violations", r.max_ratio, r.violations),
        );
    }
    Ok(())
}

fn run_harness(
    config: &ExperimentConfig,
    p: &ProblemSpec,
    report: &SolveReport,
    h: &HarnessConfig,
    out: &mut Outputs,
) -> Result<()> {
    let opts = KappaOptions {
        optimizer: parabolic_ocp::optimizer::OptimizerOptions {
            restart_count: 0,
            ..config.optimizer.clone()
        },
        c_pe: h.c_pe,
        locality_radius: h.locality_radius,
    };
    let eps = h.epsilons.clone().unwrap_or_else(smsr::default_epsilon_grid);
    let r = estimate_kappa(p, &report.triple, &h.families, &eps, &opts)?;
    out.report("kappa", &r.rows, &r)?;
    out.check(
        "smsr",
        r.passed(),
        format!("kappa_max {:?}, median {:?}, fit {:?}", r.kappa_max, r.kappa_median, r.kappa_fit),
    );
    Ok(())
}
