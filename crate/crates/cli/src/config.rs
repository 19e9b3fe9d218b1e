//! Job configuration: one JSON document, unknown keys rejected, defaults
//! equal to the two-dimensional benchmark (a = 1.2, b = 1.4, c = 0.015,
//! c1 = 0.01, t_max = 10, grid [-2, 2] x [-2.5, 2.5] with steps 0.0625, 0.1).

use clf_forge::local_clf::{LevelSearchConfig, LocalClf};
use clf_forge::mpc::MpcConfig;
use clf_forge::system::{make_example_2d, make_pvtol, ControlSystem};
use clf_forge::value_eval::{EvalParams, GridSpec};
use clf_forge::Error;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Example2d {
        #[serde(default = "default_a")]
        a: f64,
    },
    Pvtol {
        #[serde(default = "default_pvtol_alpha")]
        alpha: f64,
        #[serde(default = "default_pvtol_bound")]
        a1: f64,
        #[serde(default = "default_pvtol_bound")]
        a2: f64,
        #[serde(default = "default_lambda1")]
        lambda1: f64,
        #[serde(default = "default_lambda2")]
        lambda2: f64,
    },
}

fn default_a() -> f64 {
    1.2
}
fn default_pvtol_alpha() -> f64 {
    0.1
}
fn default_pvtol_bound() -> f64 {
    5.0
}
fn default_lambda1() -> f64 {
    0.2
}
fn default_lambda2() -> f64 {
    0.04
}
fn default_b() -> f64 {
    1.4
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::Example2d { a: default_a() }
    }
}

/// A scalar stands for that multiple of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn build(&self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
        match self {
            MatrixSpec::Scalar(s) if rows == cols => Ok(DMatrix::identity(rows, cols) * *s),
            MatrixSpec::Scalar(_) => Err(CliError::Config(format!("{what} must be given as a full {rows}x{cols} matrix"))),
            MatrixSpec::Full(m) => {
                let m = matrix_from_rows(m).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
                if m.nrows() != rows || m.ncols() != cols {
                    return Err(CliError::Config(format!(
                        "{what} is {}x{}, expected {rows}x{cols}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m)
            }
        }
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err("matrix rows must be non-empty and of equal length".into());
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClfConfig {
    /// Closed-form local CLF of the two-dimensional benchmark.
    Analytic {
        #[serde(default = "default_b")]
        b: f64,
    },
    /// LQR on the linearization.
    Riccati { q: MatrixSpec, r: MatrixSpec },
    /// Given feedback `S`, `P` from the Lyapunov equation with rate `alpha`.
    Lyapunov { s: MatrixSpec, alpha: f64 },
    /// `P` and `S` written by `local-clf` (`P.json`, `S.json`).
    Files { p: PathBuf, s: PathBuf, alpha: f64 },
}

impl Default for ClfConfig {
    fn default() -> Self {
        ClfConfig::Analytic { b: default_b() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Levels {
    pub c: f64,
    pub c1: f64,
    /// Radial search bound of analytic local CLFs.
    pub lambda_max: f64,
    /// Replace `c` by the level search suggestion and scale `c1` with it.
    pub search: bool,
}

impl Default for Levels {
    fn default() -> Self {
        Self { c: 0.015, c1: 0.01, lambda_max: 0.5, search: false }
    }
}

/// Either `counts` or `steps` per axis; steps 0.0625, 0.1 when neither is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Option<Vec<usize>>,
    pub steps: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lo: vec![-2.0, -2.5], hi: vec![2.0, 2.5], counts: None, steps: None }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<GridSpec, CliError> {
        let g = match (&self.counts, &self.steps) {
            (Some(c), None) => GridSpec::new(self.lo.clone(), self.hi.clone(), c.clone()),
            (None, Some(s)) => GridSpec::from_steps(self.lo.clone(), self.hi.clone(), s),
            (None, None) => GridSpec::from_steps(self.lo.clone(), self.hi.clone(), &[0.0625, 0.1]),
            _ => return Err(CliError::Config("grid needs exactly one of counts and steps".into())),
        };
        g.map_err(CliError::from_core)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Integrate the reverse characteristic launched from the target.
    pub reverse: bool,
    /// Forward initial costate; absent means the solved optimal costate at `x0`.
    pub p0: Option<Vec<f64>>,
    /// Forward default 1; reverse default the first terminal multiplier root.
    pub ptilde: Option<f64>,
    /// Reverse launch direction (normalized).
    pub xi: Option<Vec<f64>>,
    /// Horizon; defaults to `eval.t_max`.
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub system: SystemConfig,
    pub local_clf: ClfConfig,
    pub levels: Levels,
    pub level_search: LevelSearchConfig,
    pub eval: EvalParams,
    pub grid: GridConfig,
    /// Radii of additional ball-target evaluations in `eval`.
    pub ball_deltas: Vec<f64>,
    /// States of the `eval` command; `x0` is used when empty.
    pub states: Vec<Vec<f64>>,
    /// Initial state of `mpc` and forward `char-trace`.
    pub x0: Option<Vec<f64>>,
    pub trace: TraceConfig,
    /// `mpc.seed` is replaced by the job seed.
    pub mpc: MpcConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            local_clf: ClfConfig::default(),
            levels: Levels::default(),
            level_search: LevelSearchConfig::default(),
            eval: EvalParams::default(),
            grid: GridConfig::default(),
            ball_deltas: Vec::new(),
            states: Vec::new(),
            x0: None,
            trace: TraceConfig::default(),
            mpc: MpcConfig::default(),
            out: PathBuf::from("out"),
            seed: 0,
            workers: None,
        }
    }
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_system(&self) -> Result<Box<dyn ControlSystem>, CliError> {
        let sys: Box<dyn ControlSystem> = match self.system {
            SystemConfig::Example2d { a } => Box::new(make_example_2d(a).map_err(CliError::from_core)?),
            SystemConfig::Pvtol { alpha, a1, a2, lambda1, lambda2 } => {
                Box::new(make_pvtol(alpha, a1, a2, lambda1, lambda2).map_err(CliError::from_core)?)
            }
        };
        Ok(sys)
    }

    /// Local CLF with the configured levels (before any level search).
    pub fn build_clf(&self, sys: &dyn ControlSystem) -> Result<LocalClf, CliError> {
        let (c, c1) = (self.levels.c, self.levels.c1);
        let n = sys.state_dim();
        let m = sys.control_dim();
        match &self.local_clf {
            ClfConfig::Analytic { b } => match self.system {
                SystemConfig::Example2d { a } => LocalClf::example_2d(a, *b, c, c1)
                    .map(|clf| clf.with_lambda_max(self.levels.lambda_max))
                    .map_err(CliError::from_core),
                _ => Err(CliError::Config("analytic local CLF is only available for example2d".into())),
            },
            ClfConfig::Riccati { q, r } => {
                let q = q.build(n, n, "Q")?;
                let r = r.build(m, m, "R")?;
                LocalClf::from_riccati(sys, &q, &r, c, c1).map_err(CliError::from_core)
            }
            ClfConfig::Lyapunov { s, alpha } => {
                let s = s.build(m, n, "S")?;
                LocalClf::from_lyapunov(sys, s, *alpha, c, c1).map_err(CliError::from_core)
            }
            ClfConfig::Files { p, s, alpha } => {
                let p = read_matrix(p)?;
                let s = read_matrix(s)?;
                if p.nrows() != n || s.nrows() != m {
                    return Err(CliError::Numerical(format!(
                        "stored matrices do not fit the system (P {}x{}, S {}x{})",
                        p.nrows(),
                        p.ncols(),
                        s.nrows(),
                        s.ncols()
                    )));
                }
                LocalClf::quadratic(p, s, *alpha, c, c1).map_err(CliError::from_core)
            }
        }
    }

    /// Checks everything that does not need computation, so that config
    /// errors surface before any work or output.
    pub fn validate(&self) -> Result<(), CliError> {
        self.eval.validate().map_err(CliError::from_core)?;
        self.mpc.steps_per_recompute().map_err(CliError::from_core)?;
        if !(self.levels.c > self.levels.c1 && self.levels.c1 > 0.0) {
            return Err(CliError::Config("levels need c > c1 > 0".into()));
        }
        if self.ball_deltas.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(CliError::Config("ball radii must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Eval parameters with the reverse box defaulted to the grid rectangle
    /// inflated by 50%.
    pub fn eval_params(&self, n: usize) -> EvalParams {
        let mut params = self.eval.clone();
        if params.reverse_box.is_none() {
            params.reverse_box = self.grid.build().ok().filter(|g| g.dim() == n).map(|g| g.inflated(1.5));
        }
        params
    }

    pub fn state_dims_ok(&self, n: usize) -> Result<(), CliError> {
        let bad = self.states.iter().chain(self.x0.iter()).any(|x| x.len() != n)
            || self.trace.p0.as_ref().is_some_and(|p| p.len() != n)
            || self.trace.xi.as_ref().is_some_and(|p| p.len() != n);
        if bad {
            return Err(CliError::Config(format!("states, costates and directions must have dimension {n}")));
        }
        Ok(())
    }
}

/// Missing or unreadable stored matrices count as a missing local CLF.
fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Numerical(format!("local CLF unavailable: {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| CliError::Numerical(format!("local CLF unavailable: {}: {e}", path.display())))?;
    matrix_from_rows(&rows).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))
}

impl CliError {
    /// Parameter errors are config errors; anything else is numerical.
    pub fn from_core(e: Error) -> Self {
        match e {
            Error::InvalidParameter(msg) => CliError::Config(msg),
            other => CliError::Numerical(other.to_string()),
        }
    }
}
