use thiserror::Error;

/// Errors raised by the geometry, symbol, flow and measure layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the chart domain")]
    OutOfChart { point: Vec<f64> },
    #[error("point is not on the boundary (phi = {phi:e})")]
    NotOnBoundary { phi: f64 },
    #[error("point lies outside the domain (phi = {phi:e})")]
    OutsideDomain { phi: f64 },
    #[error("boundary differential is degenerate (|dphi| = {norm:e})")]
    DegenerateNormal { norm: f64 },
    #[error("smoothing kernel mass {mass} deviates from 1 by more than 1%")]
    SmoothingFailure { mass: f64 },
    #[error("chart Jacobian is degenerate: {0}")]
    ChartDegenerate(String),
    #[error("point is not characteristic (p = {p:e}, p(pi_par) = {p_par:e})")]
    NotCharacteristic { p: f64, p_par: f64 },
    #[error("tangential point is elliptic (p = {p:e}); no characteristic lift exists")]
    EllipticPoint { p: f64 },
    #[error("transversal second derivative H_z^2 p = {value:e} is degenerate")]
    DegenerateTransversal { value: f64 },
    #[error("integration step produced a non-finite state at s = {s}")]
    StepFailure { s: f64 },
    #[error("maximum number of integration steps ({0}) exceeded")]
    MaxStepsExceeded(usize),
    #[error("reflection requested at a non-hyperbolic point ({0})")]
    NotHyperbolic(String),
    #[error("projection onto the gliding manifold diverged (residual {residual:e})")]
    ProjectionDiverged { residual: f64 },
    #[error("maximum number of trajectory pieces ({0}) exceeded")]
    MaxPiecesExceeded(usize),
    #[error("construction left the chart at step {0}")]
    LeftChart(usize),
    #[error("test function does not vanish at trajectory endpoint s = {s} (a = {value:e})")]
    SupportLeak { s: f64, value: f64 },
    #[error("support sample set is empty")]
    EmptySupport,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
