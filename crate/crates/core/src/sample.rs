//! Paired observations (x_i, y_i).

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// A single observed value, borrowed from a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value<'a> {
    Real(f64),
    Token(&'a str),
}

/// Category labels plus per-record codes into them.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    labels: Arc<Vec<String>>,
    codes: Vec<u32>,
}

impl CategoricalColumn {
    /// Builds a column from raw tokens; labels are kept in first-appearance order.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut labels: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            let code = match labels.iter().position(|l| l == t) {
                Some(c) => c,
                None => {
                    labels.push(t.to_string());
                    labels.len() - 1
                }
            };
            codes.push(code as u32);
        }
        Self {
            labels: Arc::new(labels),
            codes,
        }
    }

    /// Builds a column over a fixed label set.
    pub fn with_labels(labels: Vec<String>, codes: Vec<u32>) -> Result<Self> {
        if let Some(&c) = codes.iter().find(|&&c| c as usize >= labels.len()) {
            return Err(Error::InvalidInput(format!(
                "code {c} out of range for {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            labels: Arc::new(labels),
            codes,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn token(&self, i: usize) -> &str {
        &self.labels[self.codes[i] as usize]
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            labels: Arc::clone(&self.labels),
            codes: idx.iter().map(|&i| self.codes[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairedSample {
    Real { x: Vec<f64>, y: Vec<f64> },
    Categorical { x: CategoricalColumn, y: CategoricalColumn },
}

impl PairedSample {
    pub fn real(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_lengths(x.len(), y.len())?;
        if let Some(v) = x.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite observation {v}")));
        }
        Ok(Self::Real { x, y })
    }

    pub fn categorical<S: AsRef<str>>(x: &[S], y: &[S]) -> Result<Self> {
        check_lengths(x.len(), y.len())?;
        Ok(Self::Categorical {
            x: CategoricalColumn::from_tokens(x),
            y: CategoricalColumn::from_tokens(y),
        })
    }

    pub fn from_columns(x: CategoricalColumn, y: CategoricalColumn) -> Result<Self> {
        check_lengths(x.codes.len(), y.codes.len())?;
        Ok(Self::Categorical { x, y })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Real { x, .. } => x.len(),
            Self::Categorical { x, .. } => x.codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Self::Real { .. })
    }

    pub fn x(&self, i: usize) -> Value<'_> {
        match self {
            Self::Real { x, .. } => Value::Real(x[i]),
            Self::Categorical { x, .. } => Value::Token(x.token(i)),
        }
    }

    pub fn y(&self, i: usize) -> Value<'_> {
        match self {
            Self::Real { y, .. } => Value::Real(y[i]),
            Self::Categorical { y, .. } => Value::Token(y.token(i)),
        }
    }

    /// Real-valued columns, or `None` for categorical samples.
    pub fn as_real(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Self::Real { x, y } => Some((x, y)),
            Self::Categorical { .. } => None,
        }
    }

    /// The records at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        match self {
            Self::Real { x, y } => Self::Real {
                x: idx.iter().map(|&i| x[i]).collect(),
                y: idx.iter().map(|&i| y[i]).collect(),
            },
            Self::Categorical { x, y } => Self::Categorical {
                x: x.select(idx),
                y: y.select(idx),
            },
        }
    }

    /// Pairs x_{ix[k]} with y_{iy[k]}.
    pub fn recombine(&self, ix: &[usize], iy: &[usize]) -> Self {
        match self {
            Self::Real { x, y } => Self::Real {
                x: ix.iter().map(|&i| x[i]).collect(),
                y: iy.iter().map(|&i| y[i]).collect(),
            },
            Self::Categorical { x, y } => Self::Categorical {
                x: x.select(ix),
                y: y.select(iy),
            },
        }
    }

    /// Draws n pairs from the product of the empirical margins: the x and y
    /// indices are sampled independently with replacement.
    pub fn resample_product<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let n = self.len();
        let ix: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let iy: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        self.recombine(&ix, &iy)
    }
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 observations, got {left}")));
    }
    Ok(())
}
