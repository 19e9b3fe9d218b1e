use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("objective evaluation failed (non-finite value) at {point:?}")]
    EvaluationFailure { point: Vec<f64> },
    #[error("invalid bracket [{a}, {b}]: objective values {fa} and {fb} do not change sign")]
    Bracket { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64, y: Vec<f64> },
    #[error("non-finite state at t = {t}")]
    Blowup { t: f64, y: Vec<f64> },
    #[error("origin is not an equilibrium: |f(0, 0)| = {0}")]
    NotAnEquilibrium(f64),
    #[error("matrix is not Hurwitz (max real part of eigenvalues {max_real_part})")]
    NotHurwitz { max_real_part: f64 },
    #[error("pair (A, B) is not controllable (rank {rank} < {n})")]
    NotControllable { rank: usize, n: usize },
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("V_loc(lambda_max * xi) = {value} < level {level}")]
    LambdaMaxTooSmall { value: f64, level: f64 },
    #[error("gradient of the local CLF vanishes at {0:?}")]
    DegenerateGradient(Vec<f64>),
    #[error("no admissible level among the tested ones")]
    NoAdmissibleLevel,
    #[error("shooting failed: every reverse characteristic failed")]
    ShootingFailed,
    #[error("singular linear system")]
    Singular,
}
