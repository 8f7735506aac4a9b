//! Semiparametric families h_θ(x, y) for the density ratio dP/dP⊥.
//!
//! Three families are supported:
//!
//! * `ExpBilinear`: h_θ(x,y) = exp(α + Σ_k β_k ξ_k(x) ζ_k(y)) with the pairs
//!   (ξ_k, ζ_k) drawn from a small registry of monomials.
//! * `FiniteDiscrete`: the saturated exponential model on a K₁ × K₂ support,
//!   h_θ = exp(α + Σ_{(i,j)≠(1,1)} β_ij 1{x=a_i} 1{y=b_j}).
//! * `CopulaFgm`: h_θ(x,y) = 1 + θ(1 − 2u)(1 − 2v) evaluated at the rescaled
//!   empirical margins u = F̃₁(x), v = F̃₂(y).
//!
//! Every family is written as a bilinear predictor Σ_k β_k ξ_k(x) ζ_k(y)
//! (plus α for the exponential ones) followed by a link, which is what the
//! dual objective caches per observed value.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::sample::{PairedSample, Value};

/// Univariate factor of a basis term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisFn {
    One,
    Identity,
    Square,
    Cube,
}

impl BasisFn {
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            BasisFn::One => 1.0,
            BasisFn::Identity => v,
            BasisFn::Square => v * v,
            BasisFn::Cube => v * v * v,
        }
    }

    fn power(self) -> u32 {
        match self {
            BasisFn::One => 0,
            BasisFn::Identity => 1,
            BasisFn::Square => 2,
            BasisFn::Cube => 3,
        }
    }

    fn from_power(p: u32) -> Option<Self> {
        match p {
            0 => Some(BasisFn::One),
            1 => Some(BasisFn::Identity),
            2 => Some(BasisFn::Square),
            3 => Some(BasisFn::Cube),
            _ => None,
        }
    }

    fn label(self, var: char) -> String {
        match self.power() {
            0 => String::new(),
            1 => var.to_string(),
            p => format!("{var}{p}"),
        }
    }
}

/// A product term ξ(x)ζ(y) of the bilinear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisTerm {
    pub x: BasisFn,
    pub y: BasisFn,
}

impl BasisTerm {
    pub const fn new(x: BasisFn, y: BasisFn) -> Self {
        Self { x, y }
    }

    /// Parses a registry name such as `xy`, `x2`, `y^2`, `x*y2` or `1`.
    ///
    /// Returns `Ok(None)` for the constant term, which is already carried by α.
    pub fn parse(name: &str) -> Result<Option<Self>> {
        let bad = || Error::Config(format!("unknown basis term `{name}`"));
        let cleaned: String = name
            .trim()
            .to_ascii_lowercase()
            .replace('²', "2")
            .replace('³', "3")
            .replace('^', "")
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        if cleaned.is_empty() {
            return Err(bad());
        }
        let mut x = BasisFn::One;
        let mut y = BasisFn::One;
        let parts: Vec<&str> = cleaned.split('*').collect();
        if parts.len() > 2 {
            return Err(bad());
        }
        let mut seen_x = false;
        let mut seen_y = false;
        for part in parts {
            if part == "1" {
                continue;
            }
            let mut chars = part.chars().peekable();
            if part.is_empty() {
                return Err(bad());
            }
            while let Some(c) = chars.next() {
                let mut digits = String::new();
                while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                    digits.push(*d);
                    chars.next();
                }
                let p: u32 = if digits.is_empty() {
                    1
                } else {
                    digits.parse().map_err(|_| bad())?
                };
                let f = BasisFn::from_power(p).ok_or_else(bad)?;
                match c {
                    'x' if !seen_x && !seen_y => {
                        x = f;
                        seen_x = true;
                    }
                    'y' if !seen_y => {
                        y = f;
                        seen_y = true;
                    }
                    _ => return Err(bad()),
                }
            }
        }
        if x == BasisFn::One && y == BasisFn::One {
            return Ok(None);
        }
        Ok(Some(Self { x, y }))
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.x.label('x'), self.y.label('y'))
    }
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parameter θ = (α, β) or, for families without a normalizing coefficient, θ = β.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    intercept: bool,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, intercept: bool) -> Self {
        assert!(!intercept || !values.is_empty(), "intercept needs one coordinate");
        Self { values, intercept }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.intercept.then(|| self.values[0])
    }

    pub fn beta(&self) -> &[f64] {
        if self.intercept {
            &self.values[1..]
        } else {
            &self.values
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// h = exp(α + m_β)
    Exp,
    /// h = 1 + m_β
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    ExpBilinear { terms: Vec<BasisTerm> },
    FiniteDiscrete { x_levels: Vec<String>, y_levels: Vec<String> },
    CopulaFgm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioModel {
    family: Family,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

pub const DEFAULT_BOUND: f64 = 10.0;
pub const FINITE_ALPHA_BOUND: f64 = 40.0;
pub const FINITE_BETA_BOUND: f64 = 80.0;
pub const FGM_BOUND: f64 = 0.999;

impl RatioModel {
    pub fn expbilinear(terms: Vec<BasisTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("exponential model needs at least one basis term".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::Config(format!("duplicate basis term `{t}`")));
            }
        }
        let dim = 1 + terms.len();
        Ok(Self {
            family: Family::ExpBilinear { terms },
            lower: vec![-DEFAULT_BOUND; dim],
            upper: vec![DEFAULT_BOUND; dim],
        })
    }

    /// The exponential model with basis {x²·1, 1·y², x·y}, which contains the
    /// centered bivariate normal ratio.
    pub fn gaussian() -> Self {
        Self::expbilinear(vec![
            BasisTerm::new(BasisFn::Square, BasisFn::One),
            BasisTerm::new(BasisFn::One, BasisFn::Square),
            BasisTerm::new(BasisFn::Identity, BasisFn::Identity),
        ])
        .expect("static basis")
    }

    pub fn finite_discrete(x_levels: Vec<String>, y_levels: Vec<String>) -> Result<Self> {
        for levels in [&x_levels, &y_levels] {
            if levels.len() < 2 {
                return Err(Error::Config("finite model needs at least 2 levels per margin".into()));
            }
            for (i, l) in levels.iter().enumerate() {
                if levels[..i].contains(l) {
                    return Err(Error::Config(format!("duplicate level `{l}`")));
                }
            }
        }
        let dim = x_levels.len() * y_levels.len();
        let mut lower = vec![-FINITE_BETA_BOUND; dim];
        let mut upper = vec![FINITE_BETA_BOUND; dim];
        lower[0] = -FINITE_ALPHA_BOUND;
        upper[0] = FINITE_ALPHA_BOUND;
        Ok(Self {
            family: Family::FiniteDiscrete { x_levels, y_levels },
            lower,
            upper,
        })
    }

    /// Finite model over the levels {1, …, k} for both margins.
    pub fn finite_square(k: usize) -> Result<Self> {
        let levels: Vec<String> = (1..=k).map(|i| i.to_string()).collect();
        Self::finite_discrete(levels.clone(), levels)
    }

    /// Finite model whose levels are the categories observed in `sample`,
    /// sorted numerically when every label parses as a number.
    pub fn finite_from_sample(sample: &PairedSample) -> Result<Self> {
        match sample {
            PairedSample::Categorical { x, y } => {
                Self::finite_discrete(sorted_levels(x.labels()), sorted_levels(y.labels()))
            }
            PairedSample::Real { .. } => Err(Error::Support(
                "finite model requires a categorical sample".into(),
            )),
        }
    }

    pub fn copula_fgm() -> Self {
        Self {
            family: Family::CopulaFgm,
            lower: vec![-FGM_BOUND],
            upper: vec![FGM_BOUND],
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let dim = self.dim();
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: lower.len().max(upper.len()),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("each lower bound must be below its upper bound".into()));
        }
        let zero_inside = lower.iter().zip(&upper).all(|(l, u)| *l < 0.0 && 0.0 < *u);
        if !zero_inside {
            return Err(Error::Config("bounds must contain θ₀ = 0 in their interior".into()));
        }
        if matches!(self.family, Family::CopulaFgm) && (lower[0] < -1.0 || upper[0] > 1.0) {
            return Err(Error::Config("FGM parameter must stay within [-1, 1]".into()));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn link(&self) -> Link {
        match self.family {
            Family::CopulaFgm => Link::Linear,
            _ => Link::Exp,
        }
    }

    pub fn has_intercept(&self) -> bool {
        self.link() == Link::Exp
    }

    /// Number of bilinear terms d.
    pub fn n_terms(&self) -> usize {
        match &self.family {
            Family::ExpBilinear { terms } => terms.len(),
            Family::FiniteDiscrete { x_levels, y_levels } => x_levels.len() * y_levels.len() - 1,
            Family::CopulaFgm => 1,
        }
    }

    /// Total parameter dimension.
    pub fn dim(&self) -> usize {
        self.n_terms() + usize::from(self.has_intercept())
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// θ₀, the independence parameter.
    pub fn zero(&self) -> ParamVector {
        ParamVector::new(vec![0.0; self.dim()], self.has_intercept())
    }

    pub fn param(&self, values: Vec<f64>) -> Result<ParamVector> {
        let theta = ParamVector::new(values, self.has_intercept());
        self.check_theta(&theta)?;
        Ok(theta)
    }

    pub fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.dim() || theta.has_intercept() != self.has_intercept() {
            return Err(Error::LengthMismatch {
                left: self.dim(),
                right: theta.len(),
            });
        }
        for (index, ((&value, &lower), &upper)) in
            theta.as_slice().iter().zip(&self.lower).zip(&self.upper).enumerate()
        {
            if !(value >= lower && value <= upper) {
                return Err(Error::Bounds {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Whether the model can consume values of this sample kind.
    pub fn check_sample(&self, sample: &PairedSample) -> Result<()> {
        match (&self.family, sample.is_real()) {
            (Family::FiniteDiscrete { .. }, false) => Ok(()),
            (Family::FiniteDiscrete { .. }, true) => Err(Error::Support(
                "finite model requires categorical observations".into(),
            )),
            (_, true) => Ok(()),
            (_, false) => Err(Error::Support(
                "this model requires real-valued observations".into(),
            )),
        }
    }

    /// Writes ξ(x) into `out` (length d). For the FGM family, `x` is the margin value u.
    pub fn x_features(&self, x: Value<'_>, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.n_terms());
        match (&self.family, x) {
            (Family::ExpBilinear { terms }, Value::Real(v)) => {
                for (o, t) in out.iter_mut().zip(terms) {
                    *o = t.x.eval(v);
                }
            }
            (Family::FiniteDiscrete { x_levels, y_levels }, Value::Token(tok)) => {
                let i = level_index(x_levels, tok)?;
                let k2 = y_levels.len();
                out.fill(0.0);
                for j in 0..k2 {
                    if let Some(t) = cell_term(i, j, k2) {
                        out[t] = 1.0;
                    }
                }
            }
            (Family::CopulaFgm, Value::Real(u)) => out[0] = copula_score(u)?,
            (_, v) => return Err(Error::Support(format!("{v:?} does not fit the model"))),
        }
        Ok(())
    }

    /// Writes ζ(y) into `out` (length d). For the FGM family, `y` is the margin value v.
    pub fn y_features(&self, y: Value<'_>, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.n_terms());
        match (&self.family, y) {
            (Family::ExpBilinear { terms }, Value::Real(v)) => {
                for (o, t) in out.iter_mut().zip(terms) {
                    *o = t.y.eval(v);
                }
            }
            (Family::FiniteDiscrete { x_levels, y_levels }, Value::Token(tok)) => {
                let j = level_index(y_levels, tok)?;
                let k2 = y_levels.len();
                out.fill(0.0);
                for i in 0..x_levels.len() {
                    if let Some(t) = cell_term(i, j, k2) {
                        out[t] = 1.0;
                    }
                }
            }
            (Family::CopulaFgm, Value::Real(v)) => out[0] = copula_score(v)?,
            (_, v) => return Err(Error::Support(format!("{v:?} does not fit the model"))),
        }
        Ok(())
    }

    /// Linear predictor from cached features: α + Σβ_k ξ_k ζ_k (exp link) or Σβ_k ξ_k ζ_k.
    #[inline]
    pub(crate) fn predictor(&self, theta: &[f64], xi: &[f64], zeta: &[f64]) -> f64 {
        let (offset, beta) = if self.has_intercept() {
            (theta[0], &theta[1..])
        } else {
            (0.0, theta)
        };
        offset
            + beta
                .iter()
                .zip(xi)
                .zip(zeta)
                .map(|((b, a), c)| b * a * c)
                .sum::<f64>()
    }

    #[inline]
    pub(crate) fn apply_link(&self, lin: f64) -> f64 {
        match self.link() {
            Link::Exp => lin.exp(),
            Link::Linear => 1.0 + lin,
        }
    }

    fn features(&self, x: Value<'_>, y: Value<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.n_terms();
        let mut xi = vec![0.0; d];
        let mut zeta = vec![0.0; d];
        self.x_features(x, &mut xi)?;
        self.y_features(y, &mut zeta)?;
        Ok((xi, zeta))
    }

    pub fn h_eval(&self, theta: &ParamVector, x: Value<'_>, y: Value<'_>) -> Result<f64> {
        self.check_theta(theta)?;
        let (xi, zeta) = self.features(x, y)?;
        Ok(self.apply_link(self.predictor(theta.as_slice(), &xi, &zeta)))
    }

    /// ∂h_θ/∂θ at (x, y).
    pub fn h_grad(&self, theta: &ParamVector, x: Value<'_>, y: Value<'_>) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let (xi, zeta) = self.features(x, y)?;
        let h = self.apply_link(self.predictor(theta.as_slice(), &xi, &zeta));
        let scale = match self.link() {
            Link::Exp => h,
            Link::Linear => 1.0,
        };
        let mut grad = Vec::with_capacity(self.dim());
        if self.has_intercept() {
            grad.push(scale);
        }
        grad.extend(xi.iter().zip(&zeta).map(|(a, b)| scale * a * b));
        Ok(grad)
    }

    /// Compact descriptor, e.g. `expbilinear:x2,y2,xy`, `finite`, `fgm`.
    pub fn descriptor(&self) -> String {
        match &self.family {
            Family::ExpBilinear { terms } => {
                let names: Vec<String> = terms.iter().map(BasisTerm::name).collect();
                format!("expbilinear:{}", names.join(","))
            }
            Family::FiniteDiscrete { .. } => "finite".into(),
            Family::CopulaFgm => "fgm".into(),
        }
    }
}

/// Index of the β coordinate (0-based, excluding α) for cell (i, j); cell (0, 0) has none.
fn cell_term(i: usize, j: usize, k2: usize) -> Option<usize> {
    (i * k2 + j).checked_sub(1)
}

fn level_index(levels: &[String], tok: &str) -> Result<usize> {
    levels
        .iter()
        .position(|l| l == tok)
        .ok_or_else(|| Error::Support(format!("`{tok}` is not a level of the model")))
}

fn copula_score(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Support(format!("copula margin value {u} outside [0, 1]")));
    }
    Ok(1.0 - 2.0 * u)
}

fn sorted_levels(labels: &[String]) -> Vec<String> {
    let mut out = labels.to_vec();
    let numeric: Option<Vec<f64>> = out.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    if numeric.is_some() {
        out.sort_by(|a, b| {
            let fa: f64 = a.trim().parse().unwrap();
            let fb: f64 = b.trim().parse().unwrap();
            fa.partial_cmp(&fb).unwrap_or(Ordering::Equal)
        });
    } else {
        out.sort();
    }
    out
}

/// Coefficients (α, β_x², β_y², β_xy) of [`RatioModel::gaussian`] for a centered
/// bivariate normal with correlation ρ and common variance σ².
pub fn gaussian_coefficients(rho: f64, sigma: f64) -> ParamVector {
    let one_m = 1.0 - rho * rho;
    let s2 = sigma * sigma;
    let alpha = -0.5 * one_m.ln();
    let quad = -rho * rho / (2.0 * s2 * one_m);
    let cross = rho / (s2 * one_m);
    ParamVector::new(vec![alpha, quad, quad, cross], true)
}

/// Rescaled empirical margins u_i = rank(x_i)/(n+1), v_i = rank(y_i)/(n+1).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMargins {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Mid-ranks (1-based) of `values`; tied values share the average of their ranks.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn rank_transform(x: &[f64], y: &[f64]) -> Result<EmpiricalMargins> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("rank transform needs n >= 2".into()));
    }
    let scale = 1.0 / (x.len() as f64 + 1.0);
    Ok(EmpiricalMargins {
        u: mid_ranks(x).into_iter().map(|r| r * scale).collect(),
        v: mid_ranks(y).into_iter().map(|r| r * scale).collect(),
    })
}

/// Textual model description that can be resolved against a sample.
///
/// Accepted forms: `gaussian`, `expbilinear:<term>,<term>,…`, `finite`, `fgm`.
/// In the key-value configuration format a model is a section with keys
/// `family`, `basis`, `levels_x`, `levels_y`, `lower`, `upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    ExpBilinear(Vec<BasisTerm>),
    Finite {
        x_levels: Option<Vec<String>>,
        y_levels: Option<Vec<String>>,
    },
    Fgm,
}

impl ModelSpec {
    pub fn parse(desc: &str) -> Result<Self> {
        let desc = desc.trim();
        let (family, rest) = match desc.split_once(':') {
            Some((f, r)) => (f.trim(), Some(r)),
            None => (desc, None),
        };
        let kind = match (family.to_ascii_lowercase().as_str(), rest) {
            ("gaussian", None) => ModelKind::ExpBilinear(gaussian_terms()),
            ("expbilinear" | "exp", Some(list)) => ModelKind::ExpBilinear(parse_terms(list)?),
            ("finite", None) => ModelKind::Finite {
                x_levels: None,
                y_levels: None,
            },
            ("fgm", None) => ModelKind::Fgm,
            _ => return Err(Error::Config(format!("unknown model descriptor `{desc}`"))),
        };
        Ok(Self {
            kind,
            lower: None,
            upper: None,
        })
    }

    /// Reads a model from key-value pairs (one configuration section).
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let family = get("family").ok_or_else(|| Error::Config("model section needs `family`".into()))?;
        let kind = match family.trim().to_ascii_lowercase().as_str() {
            "gaussian" => ModelKind::ExpBilinear(gaussian_terms()),
            "expbilinear" | "exp" => {
                let basis = get("basis")
                    .ok_or_else(|| Error::Config("expbilinear model needs `basis`".into()))?;
                ModelKind::ExpBilinear(parse_terms(basis)?)
            }
            "finite" => ModelKind::Finite {
                x_levels: get("levels_x").map(split_list),
                y_levels: get("levels_y").map(split_list),
            },
            "fgm" => ModelKind::Fgm,
            other => return Err(Error::Config(format!("unknown model family `{other}`"))),
        };
        Ok(Self {
            kind,
            lower: get("lower").map(parse_floats).transpose()?,
            upper: get("upper").map(parse_floats).transpose()?,
        })
    }

    /// Short form accepted by [`parse`](Self::parse); bounds and explicit
    /// finite levels are not part of it.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            ModelKind::ExpBilinear(terms) => {
                let names: Vec<String> = terms.iter().map(BasisTerm::name).collect();
                format!("expbilinear:{}", names.join(","))
            }
            ModelKind::Finite { .. } => "finite".into(),
            ModelKind::Fgm => "fgm".into(),
        }
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        match &self.kind {
            ModelKind::ExpBilinear(terms) => {
                let names: Vec<String> = terms.iter().map(BasisTerm::name).collect();
                out.push_str("family = expbilinear\n");
                out.push_str(&format!("basis = {}\n", names.join(", ")));
            }
            ModelKind::Finite { x_levels, y_levels } => {
                out.push_str("family = finite\n");
                if let Some(l) = x_levels {
                    out.push_str(&format!("levels_x = {}\n", l.join(", ")));
                }
                if let Some(l) = y_levels {
                    out.push_str(&format!("levels_y = {}\n", l.join(", ")));
                }
            }
            ModelKind::Fgm => out.push_str("family = fgm\n"),
        }
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        if let Some(l) = &self.lower {
            out.push_str(&format!("lower = {}\n", join(l)));
        }
        if let Some(u) = &self.upper {
            out.push_str(&format!("upper = {}\n", join(u)));
        }
        out
    }

    /// Builds the model; finite models without explicit levels take them from `sample`.
    pub fn build(&self, sample: Option<&PairedSample>) -> Result<RatioModel> {
        let model = match &self.kind {
            ModelKind::ExpBilinear(terms) => RatioModel::expbilinear(terms.clone())?,
            ModelKind::Fgm => RatioModel::copula_fgm(),
            ModelKind::Finite { x_levels, y_levels } => {
                let from_sample = match sample {
                    Some(s) => Some(RatioModel::finite_from_sample(s)?),
                    None => None,
                };
                let pick = |explicit: &Option<Vec<String>>, axis: usize| -> Result<Vec<String>> {
                    if let Some(l) = explicit {
                        return Ok(l.clone());
                    }
                    match from_sample.as_ref().map(|m| m.family.clone()) {
                        Some(Family::FiniteDiscrete { x_levels, y_levels }) => {
                            Ok(if axis == 0 { x_levels } else { y_levels })
                        }
                        _ => Err(Error::Config("finite model needs levels or a sample".into())),
                    }
                };
                RatioModel::finite_discrete(pick(x_levels, 0)?, pick(y_levels, 1)?)?
            }
        };
        if self.lower.is_none() && self.upper.is_none() {
            return Ok(model);
        }
        let dim = model.dim();
        let expand = |v: &Option<Vec<f64>>, default: &[f64]| -> Result<Vec<f64>> {
            match v {
                None => Ok(default.to_vec()),
                Some(v) if v.len() == 1 => Ok(vec![v[0]; dim]),
                Some(v) if v.len() == dim => Ok(v.clone()),
                Some(v) => Err(Error::LengthMismatch {
                    left: dim,
                    right: v.len(),
                }),
            }
        };
        let lower = expand(&self.lower, model.lower())?;
        let upper = expand(&self.upper, model.upper())?;
        model.with_bounds(lower, upper)
    }
}

fn gaussian_terms() -> Vec<BasisTerm> {
    match RatioModel::gaussian().family {
        Family::ExpBilinear { terms } => terms,
        _ => unreachable!(),
    }
}

fn parse_terms(list: &str) -> Result<Vec<BasisTerm>> {
    let mut terms = Vec::new();
    for name in list.split(',') {
        if let Some(t) = BasisTerm::parse(name)? {
            terms.push(t);
        }
    }
    Ok(terms)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

pub(crate) fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("not a number: `{}`", t.trim())))
        })
        .collect()
}
