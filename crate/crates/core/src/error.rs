use std::fmt;

/// A real interval with optionally closed endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub const REALS: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_closed: false,
        hi_closed: false,
    };

    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Self {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        if x.is_nan() {
            return false;
        }
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn contains_interior(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lo_closed { '[' } else { '(' };
        let close = if self.hi_closed { ']' } else { ')' };
        write!(f, "{open}{}, {}{close}", self.lo, self.hi)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{value} lies outside {interval}")]
    Domain { value: f64, interval: Interval },

    #[error("ratio value {h} is infeasible for the divergence (conjugate domain violated)")]
    ConjugateDomain { h: f64 },

    #[error("parameter {index} = {value} outside bounds [{lower}, {upper}]")]
    Bounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("{0}")]
    Support(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("matrix is numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("calibration route mismatch: {0}")]
    RouteMismatch(String),

    #[error("optimizer failed on {failed} of {total} fits")]
    OptimFailure { failed: usize, total: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing value in column `{column}`")]
    MissingValue { line: usize, column: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
