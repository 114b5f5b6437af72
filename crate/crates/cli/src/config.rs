use std::path::{Path, PathBuf};

use fva_core::fdpde::{Grid, Nonlinearity, SolveOptions};
use fva_core::objectives::{Integrand, ObjectiveSpec, ObservationSet, Pipeline};
use fva_core::shapefn::{HoldAll, ShapeFunction};
use fva_core::tracer::{ComponentSearch, TraceOptions};
use fva_core::verify::{GateMode, StudyInput};
use fva_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// JSON experiment description. Expressions use the shape-function grammar
/// in the variables `x1`, `x2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub g: String,
    pub h: String,
    pub f: String,
    pub beta: Nonlinearity,
    #[serde(default = "default_hold_all")]
    pub hold_all: HoldAll,
    pub n: usize,
    pub lambdas: Vec<f64>,
    #[serde(default = "default_r_list")]
    pub r_list: Vec<f64>,
    /// Level function of the compact subset used for the `H^2` comparison.
    pub omega: String,
    #[serde(default)]
    pub gate: GateMode,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub directions: DirectionConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output directory, relative to the working directory; `--out` wins.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    TrackingH2 {
        y_d: String,
        e: ObservationSet,
        #[serde(default)]
        points: Vec<[f64; 2]>,
    },
    Distributed {
        integrand: Integrand,
        #[serde(default = "zero")]
        y_d: String,
        #[serde(default = "zero")]
        psi: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    pub count: usize,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        DirectionConfig { count: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub solve_rtol: f64,
    pub trace_tol: f64,
    /// Violation threshold of the optimality check; `1e-4 (1 + |j|)` when absent.
    pub optimality: Option<f64>,
    /// Step of the finite-difference check reported by `objective`.
    pub fd_lambda: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solve_rtol: 1e-10,
            trace_tol: 1e-12,
            optimality: None,
            fd_lambda: 1e-3,
        }
    }
}

fn default_hold_all() -> HoldAll {
    HoldAll::square(2.0)
}

fn default_r_list() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

fn zero() -> String {
    "0".into()
}

/// A parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// SHA-256 of the raw configuration bytes.
    pub hash: String,
    pub g: ShapeFunction,
    pub h: ShapeFunction,
    pub f: ShapeFunction,
    pub omega: ShapeFunction,
    pub objective: ObjectiveSpec,
    pub pipeline: Pipeline,
}

pub enum LoadError {
    Io(std::io::Error),
    Json(serde_json::Error),
    Invalid(Error),
}

impl std::fmt::Display for LoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadError::Io(e) => write!(f, "cannot read config: {e}"),
            LoadError::Json(e) => write!(f, "invalid config: {e}"),
            LoadError::Invalid(e) => write!(f, "invalid config: {e}"),
        }
    }
}

pub fn load(path: &Path) -> std::result::Result<Experiment, LoadError> {
    let bytes = std::fs::read(path).map_err(LoadError::Io)?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes).map_err(LoadError::Json)?;
    let hash = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Experiment::new(config, hash).map_err(LoadError::Invalid)
}

impl Experiment {
    pub fn new(config: ExperimentConfig, hash: String) -> Result<Self> {
        config.hold_all.validate()?;
        config.beta.validate()?;
        let lambdas = &config.lambdas;
        if lambdas.is_empty()
            || lambdas.iter().any(|l| !(*l > 0.0))
            || lambdas.windows(2).any(|w| !(w[0] > w[1]))
        {
            return Err(Error::InvalidArgument(format!(
                "lambda list must be positive and strictly decreasing, got {lambdas:?}"
            )));
        }
        if config.r_list.iter().any(|r| !(*r >= 1.0)) {
            return Err(Error::InvalidArgument("r list entries must be >= 1".into()));
        }
        let g = ShapeFunction::parse_c2("g", &config.g)?;
        let h = ShapeFunction::parse_c2("h", &config.h)?;
        let f = ShapeFunction::parse_labeled("f", &config.f)?;
        let omega = ShapeFunction::parse_labeled("omega", &config.omega)?;
        let objective = match &config.objective {
            ObjectiveConfig::TrackingH2 { y_d, e, points } => ObjectiveSpec::TrackingH2 {
                y_d: ShapeFunction::parse_labeled("y_d", y_d)?,
                e: e.clone(),
                points: points.clone(),
            },
            ObjectiveConfig::Distributed {
                integrand,
                y_d,
                psi,
            } => ObjectiveSpec::Distributed {
                integrand: *integrand,
                y_d: ShapeFunction::parse_labeled("y_d", y_d)?,
                psi: ShapeFunction::parse_labeled("psi", psi)?,
            },
        };
        objective.validate(&config.hold_all)?;
        let pipeline = Pipeline {
            f: f.clone(),
            beta: config.beta.clone(),
            grid: Grid::new(config.hold_all, config.n)?,
            solve: SolveOptions {
                rtol: config.tolerances.solve_rtol,
                ..SolveOptions::default()
            },
            trace: TraceOptions {
                tol: config.tolerances.trace_tol,
                ..TraceOptions::default()
            },
            search: ComponentSearch::default(),
        };
        Ok(Experiment {
            config,
            hash,
            g,
            h,
            f,
            omega,
            objective,
            pipeline,
        })
    }

    pub fn study_input(&self) -> StudyInput {
        StudyInput {
            g: self.g.clone(),
            h: self.h.clone(),
            f: self.f.clone(),
            beta: self.config.beta.clone(),
            grid: self.pipeline.grid,
            lambdas: self.config.lambdas.clone(),
            r_list: self.config.r_list.clone(),
            omega: self.omega.clone(),
            solve: self.pipeline.solve.clone(),
            trace: self.pipeline.trace,
            search: self.pipeline.search,
        }
    }
}
