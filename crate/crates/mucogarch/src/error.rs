use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NonSymmetricInput(f64),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("spectrum touches the closed negative real axis")]
    LogmBranchError,
    #[error("spectrum of the generator leaves the strip |Im z| * delta < pi")]
    StripViolation,
    #[error("operator does not preserve the symmetric subspace (defect {0:.3e})")]
    SubspaceNotPreserved(f64),
    #[error("parameter constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("jump covariance is not a multiple of the identity")]
    NonIsotropicJumps,
    #[error("unstable dynamics: max real part of spectrum {0:.6}")]
    UnstableDynamics(f64),
    #[error("second-moment operator is numerically singular (cond {0:.3e})")]
    SingularC(f64),
    #[error("A is numerically singular (cond {0:.3e})")]
    SingularA(f64),
    #[error("volatility lost positive semi-definiteness (min eigenvalue {0:.3e})")]
    NonPsdVolatility(f64),
    #[error("input is not positive semi-definite (min eigenvalue {0:.3e})")]
    NonPsdInput(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("eigenvector matrix is singular")]
    SingularS,
    #[error("weight matrix Xi is not positive definite")]
    NonPdXi,
    #[error("sampling beats optimizer by {0:.3e}")]
    OptimizerDisagreement(f64),
    #[error("lag-one autocovariance is singular on the symmetric subspace (cond {0:.3e})")]
    SingularAcov(f64),
    #[error("autocovariance does not preserve the symmetric subspace")]
    NotSymPreserving,
    #[error("expected a positive square, found {0:.3e}")]
    NegativeSquare(f64),
    #[error("A(1,2) and A(2,1) are indistinguishable (gap {0:.3e})")]
    DegenerateAsymmetry(f64),
    #[error("B is not stable (max real part {0:.6})")]
    UnstableB(f64),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("initial parameter is infeasible")]
    InfeasibleInit,
    #[error("weight matrix could not be inverted")]
    WeightNotInvertible,
    #[error("parameter too close to the boundary for finite differences (coordinate {0})")]
    BoundaryTooClose(usize),
    #[error("information matrix is singular (cond {0:.3e})")]
    SingularJ(f64),
    #[error("need at least 10 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
