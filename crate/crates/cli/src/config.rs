//! Experiment configuration: JSON in, validated [`ExperimentConfig`] out.
//!
//! Validation collects every problem it finds instead of stopping at the first one.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parabolic_ocp::diagnostics::{ConeSpec, Variant};
use parabolic_ocp::grid::{build_grid, ControlBounds, SpaceTimeGrid, SpatialProfile};
use parabolic_ocp::law::{Law, Polynomial};
use parabolic_ocp::optimizer::OptimizerOptions;
use parabolic_ocp::pde::{EllipticOperator, SolverOptions};
use parabolic_ocp::presets;
use parabolic_ocp::problem::{L1Class, ProblemSpec};
use parabolic_ocp::smsr::{Family, DEFAULT_C_PE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_left: f64,
    pub x_right: f64,
    pub horizon: f64,
    pub n_x: usize,
    pub n_t: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_left: 0.0,
            x_right: 1.0,
            horizon: 1.0,
            n_x: 99,
            n_t: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `f(y) = Σ f[k] y^k`, `L0(y) = Σ l0[k] y^k`, `L1_j(y) = Σ l1[j][k] y^k`, control
/// profiles as indicators of `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSpec {
    pub f: Vec<f64>,
    #[serde(default)]
    pub l0: Vec<f64>,
    pub l1: Vec<Vec<f64>>,
    pub g: Vec<[f64; 2]>,
    #[serde(default = "one")]
    pub diffusion: f64,
    #[serde(default = "two")]
    pub y_max: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemConfig {
    Name(String),
    Preset { preset: String },
    Inline { inline: InlineSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoercivityConfig {
    pub k: u8,
    pub variant: Variant,
    /// Defaults to `0.1` for variant `A` and `0.1 · T · max(u_b - u_a)` for `B`.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub cone: Option<ConeSpec>,
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StructuralConfig {
    /// Absolute ε values; defaults to 20 log-spaced points in `[1e-4, 1e-1] · ‖σ‖_∞`.
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub samples: usize,
    pub radius: Option<f64>,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioConfig {
    pub samples: usize,
    pub radius: f64,
    pub theta_grid: Vec<f64>,
    /// Accepted range of the comparison ratios.
    pub accept: [f64; 2],
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            radius: 1e-2,
            theta_grid: vec![0.25, 0.5, 0.75, 1.0],
            accept: [0.45, 3.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplicitBoundConfig {
    pub samples: usize,
}

impl Default for ExplicitBoundConfig {
    fn default() -> Self {
        Self { samples: 100 }
    }
}

/// Each present section selects that diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub coercivity: Vec<CoercivityConfig>,
    pub structural: Option<StructuralConfig>,
    pub growth: Option<GrowthConfig>,
    pub ratios: Option<RatioConfig>,
    pub explicit_bound: Option<ExplicitBoundConfig>,
}

impl DiagnosticsConfig {
    /// Every diagnostic with its defaults.
    pub fn full() -> Self {
        Self {
            coercivity: vec![CoercivityConfig {
                k: 0,
                variant: Variant::B,
                radius: None,
                samples: default_samples(),
                cone: None,
            }],
            structural: Some(StructuralConfig::default()),
            growth: Some(GrowthConfig::default()),
            ratios: Some(RatioConfig::default()),
            explicit_bound: Some(ExplicitBoundConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub families: Vec<Family>,
    /// Defaults to 8 log-spaced points in `[1e-4, 1e-1]`.
    pub epsilons: Option<Vec<f64>>,
    pub c_pe: f64,
    pub locality_radius: Option<f64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            families: vec![
                Family::XiSmooth,
                Family::EtaSmooth,
                Family::RhoConst,
                Family::MuSigmaLinear,
            ],
            epsilons: None,
            c_pe: DEFAULT_C_PE,
            locality_radius: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    problem: Option<ProblemConfig>,
    #[serde(default)]
    grid: GridConfig,
    bounds: Option<BoundsConfig>,
    #[serde(default)]
    optimizer: OptimizerOptions,
    diagnostics: Option<DiagnosticsConfig>,
    harness: Option<HarnessConfig>,
    output_dir: Option<PathBuf>,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub bounds: Option<BoundsConfig>,
    pub optimizer: OptimizerOptions,
    pub diagnostics: Option<DiagnosticsConfig>,
    pub harness: Option<HarnessConfig>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigErrors(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config_str(&text, None)
}

/// Parses and validates; `seed_override` stands in for a missing or replaced seed.
pub fn parse_config_str(text: &str, seed_override: Option<u64>) -> Result<ExperimentConfig, ConfigErrors> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigErrors(vec![format!("json: {e}")]))?;
    let mut errors = Vec::new();
    let seed = seed_override.or(raw.seed);
    if seed.is_none() {
        errors.push("seed: required for reproducibility".to_string());
    }
    let problem = match raw.problem {
        Some(p) => Some(p),
        None => {
            errors.push("problem: required (preset name or inline spec)".to_string());
            None
        }
    };
    let mut optimizer = raw.optimizer;
    if let Some(s) = seed {
        optimizer.seed = s;
    }
    if let Err(e) = optimizer.validate() {
        errors.push(format!("optimizer: {e}"));
    }
    let cfg = ExperimentConfig {
        seed: seed.unwrap_or_default(),
        problem: problem.clone().unwrap_or(ProblemConfig::Name(String::new())),
        grid: raw.grid,
        bounds: raw.bounds,
        optimizer,
        diagnostics: raw.diagnostics,
        harness: raw.harness,
        output_dir: raw.output_dir,
    };
    if problem.is_some() {
        if let Err(mut e) = cfg.build_problem_checked() {
            errors.append(&mut e);
        }
    }
    if let Some(d) = &cfg.diagnostics {
        validate_diagnostics(d, &mut errors);
    }
    if let Some(h) = &cfg.harness {
        validate_harness(h, &mut errors);
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}

fn positive(errors: &mut Vec<String>, field: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{field}: must be positive and finite, got {v}"));
    }
}

fn validate_diagnostics(d: &DiagnosticsConfig, errors: &mut Vec<String>) {
    for (i, c) in d.coercivity.iter().enumerate() {
        if c.k > 2 {
            errors.push(format!("diagnostics.coercivity[{i}].k: must be 0, 1 or 2, got {}", c.k));
        }
        if let Some(r) = c.radius {
            positive(errors, &format!("diagnostics.coercivity[{i}].radius"), r);
        }
        if c.samples == 0 {
            errors.push(format!("diagnostics.coercivity[{i}].samples: must be >= 1"));
        }
        if let Some(cone) = c.cone {
            positive(errors, &format!("diagnostics.coercivity[{i}].cone.tau"), cone.tau);
        }
    }
    if let Some(eps) = d.structural.as_ref().and_then(|s| s.epsilons.as_ref()) {
        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| w[1] <= w[0]) {
            errors.push("diagnostics.structural.epsilons: must be positive and increasing".into());
        }
    }
    if let Some(g) = &d.growth {
        if let Some(r) = g.radius {
            positive(errors, "diagnostics.growth.radius", r);
        }
    }
    if let Some(r) = &d.ratios {
        positive(errors, "diagnostics.ratios.radius", r.radius);
        if r.theta_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            errors.push("diagnostics.ratios.theta_grid: values must lie in [0, 1]".into());
        }
        if !(r.accept[0] < r.accept[1]) {
            errors.push("diagnostics.ratios.accept: lower must be < upper".into());
        }
    }
}

fn validate_harness(h: &HarnessConfig, errors: &mut Vec<String>) {
    if h.families.is_empty() {
        errors.push("harness.families: must name at least one family".into());
    }
    positive(errors, "harness.c_pe", h.c_pe);
    if let Some(eps) = &h.epsilons {
        if eps.is_empty() || eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            errors.push("harness.epsilons: must be nonempty, finite and >= 0".into());
        }
    }
    if let Some(r) = h.locality_radius {
        positive(errors, "harness.locality_radius", r);
    }
}

impl ExperimentConfig {
    pub fn space_time_grid(&self) -> parabolic_ocp::Result<SpaceTimeGrid> {
        let g = &self.grid;
        build_grid(g.x_left, g.x_right, g.horizon, g.n_x, g.n_t)
    }

    pub fn build_problem(&self) -> anyhow::Result<ProblemSpec> {
        self.build_problem_checked().map_err(|e| ConfigErrors(e).into())
    }

    fn build_problem_checked(&self) -> Result<ProblemSpec, Vec<String>> {
        let mut errors = Vec::new();
        let grid = match self.space_time_grid() {
            Ok(g) => g,
            Err(e) => return Err(vec![format!("grid: {e}")]),
        };
        let mut p = match &self.problem {
            ProblemConfig::Name(name) | ProblemConfig::Preset { preset: name } => {
                match presets::by_name(name, &grid) {
                    Ok(p) => p,
                    Err(e) => return Err(vec![format!("problem: {e}")]),
                }
            }
            ProblemConfig::Inline { inline } => match inline_problem(inline, &grid, self.bounds.as_ref()) {
                Ok(p) => p,
                Err(mut e) => {
                    errors.append(&mut e);
                    return Err(errors);
                }
            },
        };
        if let Some(b) = &self.bounds {
            match bounds_from(b, &grid, p.m()) {
                Ok(bounds) => p.bounds = bounds,
                Err(mut e) => errors.append(&mut e),
            }
        }
        if errors.is_empty() {
            if let Err(e) = p.validate() {
                errors.push(format!("problem: {e}"));
            }
        }
        if errors.is_empty() {
            Ok(p)
        } else {
            Err(errors)
        }
    }
}

fn bounds_from(b: &BoundsConfig, grid: &SpaceTimeGrid, m: usize) -> Result<ControlBounds, Vec<String>> {
    let mut errors = Vec::new();
    if b.lower.len() != m || b.upper.len() != m {
        errors.push(format!(
            "bounds: expected {m} lower and upper values, got {} and {}",
            b.lower.len(),
            b.upper.len()
        ));
        return Err(errors);
    }
    for j in 0..m {
        let (lo, hi) = (b.lower[j], b.upper[j]);
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            errors.push(format!("bounds.lower[{j}] = {lo} must be finite and < bounds.upper[{j}] = {hi}"));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    ControlBounds::uniform(grid, &b.lower, &b.upper).map_err(|e| vec![format!("bounds: {e}")])
}

fn inline_problem(s: &InlineSpec, grid: &SpaceTimeGrid, bounds: Option<&BoundsConfig>) -> Result<ProblemSpec, Vec<String>> {
    let mut errors = Vec::new();
    let m = s.g.len();
    if m == 0 {
        errors.push("problem.inline.g: at least one control profile is required".into());
    }
    if s.l1.len() != m {
        errors.push(format!("problem.inline.l1: {} laws for {m} control profiles", s.l1.len()));
    }
    for (j, [a, b]) in s.g.iter().enumerate() {
        if !(a < b) {
            errors.push(format!("problem.inline.g[{j}]: interval [{a}, {b}] is empty"));
        }
    }
    positive(&mut errors, "problem.inline.diffusion", s.diffusion);
    positive(&mut errors, "problem.inline.y_max", s.y_max);
    if bounds.is_none() {
        errors.push("bounds: required for an inline problem".into());
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let degree = |c: &[f64]| c.iter().rposition(|x| *x != 0.0).map_or(0, |d| d);
    let l1_class = match s.l1.iter().map(|c| degree(c)).max().unwrap_or(0) {
        0 => L1Class::IndependentOfY,
        1 => L1Class::AffineInY,
        _ => L1Class::General,
    };
    let l1: Vec<Law> = s
        .l1
        .iter()
        .enumerate()
        .map(|(j, c)| Arc::new(Polynomial::new(format!("L1_{j}"), c.clone())) as Law)
        .collect();
    let placeholder = ControlBounds::uniform(grid, &vec![-1.0; m], &vec![1.0; m]).expect("static bounds");
    Ok(ProblemSpec {
        name: "inline".into(),
        grid: *grid,
        op: EllipticOperator::constant(s.diffusion),
        f: Arc::new(Polynomial::new("f", s.f.clone())),
        l0: Arc::new(Polynomial::new("L0", s.l0.clone())),
        l1,
        g: s.g.iter().map(|[a, b]| SpatialProfile::indicator(grid, *a, *b)).collect(),
        bounds: placeholder,
        y0: SpatialProfile::zeros(grid),
        l1_class,
        solver: SolverOptions::default(),
        y_max: s.y_max,
    })
}
