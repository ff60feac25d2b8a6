use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resolvent evaluated at eigenvalue {eigenvalue} (lambda = {lambda})")]
    ResolventAtEigenvalue { lambda: Complex64, eigenvalue: Complex64 },
    #[error("infinitely many unstable modes: tail decay rate {decay_alpha} is not positive")]
    InfiniteUnstablePart { decay_alpha: f64 },
    #[error("stable spectrum reaches {abscissa}, above the required margin {margin}")]
    MarginViolation { abscissa: f64, margin: f64 },
    #[error("block {label} has Re >= 0 and cannot be moved into the tail")]
    UnstableModeDiscarded { label: i64 },
    #[error("tail input norm {best} >= epsilon {epsilon} even with every resolved block retained")]
    NotReachable { epsilon: f64, best: f64 },

    #[error("beta {beta} is not below the decay rate {alpha}")]
    BetaExceedsDecay { beta: f64, alpha: f64 },
    #[error("gain bounds evaluated at different beta ({0} vs {1})")]
    BetaMismatch(f64, f64),
    #[error("smoothness indices do not chain: {0}")]
    SmoothnessMismatch(String),
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NotHurwitz { abscissa: f64 },
    #[error("Lyapunov solve failed: {0}")]
    LyapunovSolveFailed(String),
    #[error("eigensolver did not converge")]
    EigensolverNoConvergence,

    #[error("not stabilizable: offending blocks {0:?}")]
    NotStabilizable(Vec<i64>),
    #[error("not detectable: offending blocks {0:?}")]
    NotDetectable(Vec<i64>),
    #[error("no certificate found: {0}")]
    CertificateNotFound(String),
    #[error("Riccati solve diverged: {0}")]
    RiccatiDivergence(String),

    #[error("quadrature did not converge (error estimate {estimate:e})")]
    QuadratureNotConverged { estimate: f64 },
    #[error("tail is unstable: {0}")]
    TailUnstable(String),
    #[error("kernel mode k = {k} has an ambiguous lifted coefficient {value:e}")]
    KernelResonance { k: usize, value: f64 },
    #[error("no admissible lift parameter in the grid: {0}")]
    NoAdmissibleParameter(String),

    #[error("matrix exponential overflow (norm {norm})")]
    Overflow { norm: f64 },
    #[error("trajectory is identically zero on the fitted window")]
    DegenerateTrajectory,
}
