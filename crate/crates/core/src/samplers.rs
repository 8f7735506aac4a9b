//! Seeded generators for the simulation families.
//!
//! Every generator takes a caller-owned RNG. [`stream_rng`] derives
//! independent ChaCha8 streams from a base seed so that replicate r of a study
//! always sees the same draws, whatever the thread schedule.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sample::{CategoricalColumn, PairedSample};

/// RNG for sub-stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixture of the uniform law on {1..K}² and the uniform law on its diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteMixtureSpec {
    pub k: usize,
    pub theta: f64,
}

impl FiniteMixtureSpec {
    pub fn new(k: usize, theta: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("need K >= 2, got {k}")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidInput(format!("mixing weight {theta} outside [0, 1]")));
        }
        Ok(Self { k, theta })
    }

    /// p_{xy} = (1 − θ)/K² + (θ/K)·1{x = y}
    pub fn cell_probability(&self, x: usize, y: usize) -> f64 {
        let k = self.k as f64;
        (1.0 - self.theta) / (k * k) + if x == y { self.theta / k } else { 0.0 }
    }

    /// Category labels "1", …, "K".
    pub fn labels(&self) -> Vec<String> {
        (1..=self.k).map(|i| i.to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub rho: f64,
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(rho: f64, sigma: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("correlation {rho} must lie in (-1, 1)")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("standard deviation {sigma} must be positive")));
        }
        Ok(Self { rho, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgmSpec {
    pub theta: f64,
}

impl FgmSpec {
    pub fn new(theta: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&theta) {
            return Err(Error::InvalidInput(format!("FGM parameter {theta} outside [-1, 1]")));
        }
        Ok(Self { theta })
    }
}

pub fn sample_finite<R: Rng + ?Sized>(spec: &FiniteMixtureSpec, n: usize, rng: &mut R) -> Result<PairedSample> {
    let k = spec.k as u32;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(0..k);
        let diagonal = rng.random::<f64>() < spec.theta;
        let y = if diagonal { x } else { rng.random_range(0..k) };
        xs.push(x);
        ys.push(y);
    }
    PairedSample::from_columns(
        CategoricalColumn::with_labels(spec.labels(), xs)?,
        CategoricalColumn::with_labels(spec.labels(), ys)?,
    )
}

/// Standard normals come from rand_distr's ziggurat sampler, so streams stay
/// reproducible only under the rand_distr version pinned in Cargo.lock.
pub fn sample_gaussian<R: Rng + ?Sized>(spec: &GaussianSpec, n: usize, rng: &mut R) -> Result<PairedSample> {
    let c = (1.0 - spec.rho * spec.rho).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        x.push(spec.sigma * z1);
        y.push(spec.sigma * (spec.rho * z1 + c * z2));
    }
    PairedSample::real(x, y)
}

/// Solves v[1 + a(1 − v)] = w for v ∈ [0, 1], where a = θ(1 − 2u).
pub fn fgm_conditional_inverse(a: f64, w: f64) -> f64 {
    if a.abs() < 1e-12 || w <= 0.0 {
        return w;
    }
    let b = 1.0 + a;
    let disc = b * b - 4.0 * a * w;
    assert!(disc >= -1e-12, "negative discriminant {disc} (a = {a}, w = {w})");
    // rationalized root, stable as a → 0
    (2.0 * w / (b + disc.max(0.0).sqrt())).min(1.0)
}

/// Draws (u, v) from the FGM copula by conditional inversion.
pub fn sample_fgm<R: Rng + ?Sized>(spec: &FgmSpec, n: usize, rng: &mut R) -> Result<PairedSample> {
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let ui: f64 = rng.sample(Open01);
        let w: f64 = rng.sample(Open01);
        u.push(ui);
        v.push(fgm_conditional_inverse(spec.theta * (1.0 - 2.0 * ui), w));
    }
    PairedSample::real(u, v)
}
