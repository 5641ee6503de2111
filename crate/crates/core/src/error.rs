use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("norm {kind:?} is not defined for {target}")]
    NormKind {
        kind: crate::grid::NormKind,
        target: &'static str,
    },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("ellipticity violated: diffusion coefficient {value} at x = {x}")]
    Ellipticity { x: f64, value: f64 },

    #[error("negative zero-order coefficient {value} at level {level}, node {node}")]
    NegativeCoefficient { level: usize, node: usize, value: f64 },

    #[error("monotonicity violated: d/dy of `{law}` is {value} at (x = {x}, t = {t}, y = {y})")]
    Monotonicity {
        law: String,
        x: f64,
        t: f64,
        y: f64,
        value: f64,
    },

    #[error("Newton failed at time level {level} after {iterations} iterations; residuals {residuals:?}")]
    Newton {
        level: usize,
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("control supports overlap on node {node} (profiles {first} and {second}); supports must be pairwise disjoint")]
    OverlappingSupports {
        node: usize,
        first: usize,
        second: usize,
    },

    #[error("invalid problem: {0}")]
    Problem(String),

    #[error("variation violates the sign conditions at component {component}, cell {cell}")]
    SignCondition { component: usize, cell: usize },

    #[error("perturbation bound violated: |xi|_Lr = {norm} > C_pe = {bound}")]
    PerturbationBound { norm: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
