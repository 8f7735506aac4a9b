//! Limit law of 2nÎ_KL under independence for exponential models
//!
//! ```text
//! h_θ(x, y) = exp(α + Σ_k β_k ξ_k(x) ζ_k(y))
//! ```
//!
//! Under H₀ the statistic converges to ZᵀZ with Z ~ N(0, C),
//! C = Σ₁^{−1/2} Σ₂ Σ₁^{−1/2}, where Σ₁ = E⊥[WWᵀ], W = (1, ξ₁ζ₁, …, ξ_dζ_d), and
//! Σ₂ is the delta-method covariance of √n M'_n(0).
//!
//! All moments are taken under the product law, so they factor into moments
//! of ξ(X) and of ζ(Y) separately. Finite margins (observed values or a
//! categorical law) are enumerated exactly; continuous reference margins are
//! integrated by Monte Carlo.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{Link, RatioModel};
use crate::numeric::upper_quantile;
use crate::samplers::stream_rng;
use crate::sample::Value;

const EIGEN_FLOOR: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;
const ZTZ_CHUNK: usize = 4096;

/// Where the moments of one margin come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginSource {
    /// Observed real values, each with weight 1/n.
    Empirical(Vec<f64>),
    /// Observed category tokens, each with weight 1/n.
    Categorical(Vec<String>),
    /// A finite law on labelled categories.
    Levels { labels: Vec<String>, probs: Vec<f64> },
    /// N(0, σ²), integrated by Monte Carlo.
    Normal { sigma: f64 },
    /// Uniform(0, 1), integrated by Monte Carlo.
    Uniform01,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// First and second moments of a margin's feature vector.
#[derive(Debug, Clone)]
struct FeatureMoments {
    mean: DVector<f64>,
    second: DMatrix<f64>,
}

impl FeatureMoments {
    fn covariance(&self) -> DMatrix<f64> {
        &self.second - &self.mean * self.mean.transpose()
    }
}

fn accumulate<'a, I>(model: &RatioModel, axis: Axis, weighted: I) -> Result<FeatureMoments>
where
    I: Iterator<Item = (Value<'a>, f64)>,
{
    let d = model.n_terms();
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    let mut buf = vec![0.0; d];
    let mut total = 0.0;
    for (v, w) in weighted {
        match axis {
            Axis::X => model.x_features(v, &mut buf)?,
            Axis::Y => model.y_features(v, &mut buf)?,
        }
        let f = DVector::from_column_slice(&buf);
        mean.axpy(w, &f, 1.0);
        second.ger(w, &f, &f, 1.0);
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::InvalidInput("margin has no mass".into()));
    }
    Ok(FeatureMoments {
        mean: mean / total,
        second: second / total,
    })
}

fn margin_moments(model: &RatioModel, axis: Axis, source: &MarginSource, m: usize, seed: u64) -> Result<FeatureMoments> {
    let stream = match axis {
        Axis::X => 1,
        Axis::Y => 2,
    };
    match source {
        MarginSource::Empirical(values) => accumulate(model, axis, values.iter().map(|&v| (Value::Real(v), 1.0))),
        MarginSource::Categorical(tokens) => {
            accumulate(model, axis, tokens.iter().map(|t| (Value::Token(t.as_str()), 1.0)))
        }
        MarginSource::Levels { labels, probs } => {
            if labels.len() != probs.len() {
                return Err(Error::LengthMismatch {
                    left: labels.len(),
                    right: probs.len(),
                });
            }
            accumulate(model, axis, labels.iter().zip(probs).map(|(l, &p)| (Value::Token(l.as_str()), p)))
        }
        MarginSource::Normal { sigma } => {
            if m == 0 {
                return Err(Error::InvalidInput("need at least one moment draw".into()));
            }
            let mut rng = stream_rng(seed, stream);
            let draws: Vec<f64> = (0..m).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            accumulate(model, axis, draws.into_iter().map(|v| (Value::Real(v), 1.0)))
        }
        MarginSource::Uniform01 => {
            if m == 0 {
                return Err(Error::InvalidInput("need at least one moment draw".into()));
            }
            let mut rng = stream_rng(seed, stream);
            let draws: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Open01)).collect();
            accumulate(model, axis, draws.into_iter().map(|v| (Value::Real(v), 1.0)))
        }
    }
}

fn check_model(model: &RatioModel) -> Result<()> {
    if model.link() != Link::Exp {
        return Err(Error::RouteMismatch(
            "the limit law is available for exponential models only".into(),
        ));
    }
    Ok(())
}

/// Σ₁ = E⊥[WWᵀ] from the factorized moments.
fn sigma1_from(mx: &FeatureMoments, my: &FeatureMoments) -> DMatrix<f64> {
    let d = mx.mean.len();
    let mut s = DMatrix::zeros(d + 1, d + 1);
    s[(0, 0)] = 1.0;
    for k in 0..d {
        let e = mx.mean[k] * my.mean[k];
        s[(0, k + 1)] = e;
        s[(k + 1, 0)] = e;
        for l in 0..d {
            s[(k + 1, l + 1)] = mx.second[(k, l)] * my.second[(k, l)];
        }
    }
    s
}

/// Σ₂ = JΣ_VJᵀ padded with a zero first row and column, where
/// V = (1, ξ(X), ζ(Y), ξ(X)⊙ζ(Y)) and ψ(x₀, x, y, z) = (0, x_k y_k − z_k).
fn sigma2_from(mx: &FeatureMoments, my: &FeatureMoments) -> DMatrix<f64> {
    let d = mx.mean.len();
    let dim = 1 + 3 * d;
    let (xs, ys, zs) = (1, 1 + d, 1 + 2 * d);
    let cx = mx.covariance();
    let cy = my.covariance();
    let (ax, ay) = (&mx.mean, &my.mean);

    // covariance of V under the product law; the constant slot stays zero
    let mut cov = DMatrix::zeros(dim, dim);
    for k in 0..d {
        for l in 0..d {
            cov[(xs + k, xs + l)] = cx[(k, l)];
            cov[(ys + k, ys + l)] = cy[(k, l)];
            // Cov(ξ_k, ξ_l ζ_l) = Cov(ξ_k, ξ_l) E[ζ_l]
            let xz = cx[(k, l)] * ay[l];
            cov[(xs + k, zs + l)] = xz;
            cov[(zs + l, xs + k)] = xz;
            let yz = cy[(k, l)] * ax[l];
            cov[(ys + k, zs + l)] = yz;
            cov[(zs + l, ys + k)] = yz;
            cov[(zs + k, zs + l)] =
                mx.second[(k, l)] * my.second[(k, l)] - ax[k] * ay[k] * ax[l] * ay[l];
        }
    }

    let mut jac = DMatrix::zeros(d, dim);
    for k in 0..d {
        jac[(k, xs + k)] = ay[k];
        jac[(k, ys + k)] = ax[k];
        jac[(k, zs + k)] = -1.0;
    }
    let block = &jac * cov * jac.transpose();
    let mut s = DMatrix::zeros(d + 1, d + 1);
    s.view_mut((1, 1), (d, d)).copy_from(&block);
    symmetrize(s)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn sigma1_under_h0(model: &RatioModel, marg_x: &MarginSource, marg_y: &MarginSource, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_model(model)?;
    let mx = margin_moments(model, Axis::X, marg_x, m, seed)?;
    let my = margin_moments(model, Axis::Y, marg_y, m, seed)?;
    let s = sigma1_from(&mx, &my);
    inverse_sqrt(&s)?;
    Ok(s)
}

pub fn sigma2_under_h0(model: &RatioModel, marg_x: &MarginSource, marg_y: &MarginSource, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_model(model)?;
    let mx = margin_moments(model, Axis::X, marg_x, m, seed)?;
    let my = margin_moments(model, Axis::Y, marg_y, m, seed)?;
    Ok(sigma2_from(&mx, &my))
}

/// Σ^{−1/2} of a symmetric positive-definite matrix, with the eigenvalue floor.
fn inverse_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let inv: DVector<f64> = eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

#[derive(Debug, Clone)]
pub struct AsymptoticCovariances {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub c_matrix: DMatrix<f64>,
    /// Eigenvalues of C, negative round-off clipped to zero.
    eigenvalues: Vec<f64>,
}

impl AsymptoticCovariances {
    pub fn from_parts(sigma1: DMatrix<f64>, sigma2: DMatrix<f64>) -> Result<Self> {
        if sigma1.shape() != sigma2.shape() || !sigma1.is_square() {
            return Err(Error::LengthMismatch {
                left: sigma1.nrows(),
                right: sigma2.nrows(),
            });
        }
        let sigma1 = symmetrize(sigma1);
        let sigma2 = symmetrize(sigma2);
        let root = inverse_sqrt(&sigma1)?;
        let c_matrix = symmetrize(&root * &sigma2 * &root);
        let eigenvalues = SymmetricEigen::new(c_matrix.clone())
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0))
            .collect();
        Ok(Self {
            sigma1,
            sigma2,
            c_matrix,
            eigenvalues,
        })
    }

    /// Σ₁, Σ₂ and C for `model` under the product of the two margins.
    pub fn under_h0(model: &RatioModel, marg_x: &MarginSource, marg_y: &MarginSource, m: usize, seed: u64) -> Result<Self> {
        check_model(model)?;
        let mx = margin_moments(model, Axis::X, marg_x, m, seed)?;
        let my = margin_moments(model, Axis::Y, marg_y, m, seed)?;
        Self::from_parts(sigma1_from(&mx, &my), sigma2_from(&mx, &my))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// n_draws independent realizations of ZᵀZ = Σ λ_i ε_i².
    pub fn sample_ztz(&self, n_draws: usize, seed: u64) -> Vec<f64> {
        let lambdas: Vec<f64> = self.eigenvalues.iter().copied().filter(|&l| l > 0.0).collect();
        let chunks = n_draws.div_ceil(ZTZ_CHUNK);
        let parts: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, c as u64);
                let len = ZTZ_CHUNK.min(n_draws - c * ZTZ_CHUNK);
                (0..len)
                    .map(|_| {
                        lambdas
                            .iter()
                            .map(|l| {
                                let e: f64 = rng.sample(StandardNormal);
                                l * e * e
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        parts.concat()
    }
}

/// Upper α quantile of ZᵀZ from `n_draws` Monte-Carlo draws.
pub fn limit_quantile_ztz(cov: &AsymptoticCovariances, alpha: f64, n_draws: usize, seed: u64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "level must lie in (0, 1)");
    assert!(n_draws > 0, "need at least one draw");
    upper_quantile(&cov.sample_ztz(n_draws, seed), alpha)
}

/// Degrees of freedom (K₁ − 1)(K₂ − 1) of the finite-discrete limit.
pub fn chisq_df_finite(k1: usize, k2: usize) -> Result<usize> {
    if k1 < 2 || k2 < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two levels per margin, got {k1} x {k2}"
        )));
    }
    Ok((k1 - 1) * (k2 - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::chisq_critical;
    use crate::models::BasisTerm;
    use approx::assert_relative_eq;

    fn xy_model() -> RatioModel {
        RatioModel::expbilinear(vec![BasisTerm::parse("xy").unwrap().unwrap()]).unwrap()
    }

    #[test]
    fn sigma1_identity_for_product_term() {
        let normal = MarginSource::Normal { sigma: 1.0 };
        let s = sigma1_under_h0(&xy_model(), &normal, &normal, 1_000_000, 1).unwrap();
        assert_eq!(s[(0, 0)], 1.0);
        assert_relative_eq!(s, DMatrix::identity(2, 2), epsilon = 5e-3);
    }

    #[test]
    fn finite_uniform_moments_by_enumeration() {
        let model = RatioModel::finite_square(2).unwrap();
        let levels = MarginSource::Levels {
            labels: vec!["1".into(), "2".into()],
            probs: vec![0.5, 0.5],
        };
        let s1 = sigma1_under_h0(&model, &levels, &levels, 0, 0).unwrap();
        // enumerate the four equally likely cells directly
        let mut direct = DMatrix::zeros(4, 4);
        for a in 0..2 {
            for b in 0..2 {
                let mut w = DVector::zeros(4);
                w[0] = 1.0;
                let cell = a * 2 + b;
                if cell > 0 {
                    w[cell] = 1.0;
                }
                direct += &w * w.transpose() * 0.25;
            }
        }
        assert_relative_eq!(s1, direct, epsilon = 1e-15);

        let s2 = sigma2_under_h0(&model, &levels, &levels, 0, 0).unwrap();
        assert!(s2.row(0).iter().chain(s2.column(0).iter()).all(|&v| v == 0.0));
        let block = s2.view((1, 1), (3, 3)).clone_owned();
        let rank = SymmetricEigen::new(block).eigenvalues.iter().filter(|&&l| l > 1e-12).count();
        assert_eq!(rank, 1);
    }

    #[test]
    fn sigma2_matches_product_of_covariances() {
        // Var(XY) = E[X²]E[Y²] for centered independent margins
        let x = MarginSource::Empirical(vec![-1.0, 0.0, 1.0, 2.0, -2.0]);
        let y = MarginSource::Empirical(vec![-3.0, 3.0, 1.0, -1.0]);
        let s2 = sigma2_under_h0(&xy_model(), &x, &y, 0, 0).unwrap();
        assert_relative_eq!(s2[(1, 1)], 2.0 * 5.0, epsilon = 1e-12);

        let model = RatioModel::gaussian();
        let x = MarginSource::Empirical(vec![0.3, -1.2, 2.0, 0.7, -0.1]);
        let y = MarginSource::Empirical(vec![1.5, -0.4, 0.2, -2.2]);
        let s2 = sigma2_under_h0(&model, &x, &y, 0, 0).unwrap();
        let mx = margin_moments(&model, Axis::X, &x, 0, 0).unwrap();
        let my = margin_moments(&model, Axis::Y, &y, 0, 0).unwrap();
        let hadamard = mx.covariance().component_mul(&my.covariance());
        assert_relative_eq!(s2.view((1, 1), (3, 3)).clone_owned(), hadamard, epsilon = 1e-12);
    }

    #[test]
    fn sigma2_matches_simulated_score_variance() {
        // direct Monte Carlo of √n M'_n(0) for the xy term with standard normal margins
        let n = 200;
        let reps = 2000;
        let mut rng = stream_rng(99, 0);
        let mut scores = Vec::with_capacity(reps);
        for _ in 0..reps {
            let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let nf = n as f64;
            let joint = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / nf;
            let prod = x.iter().sum::<f64>() * y.iter().sum::<f64>() / (nf * nf);
            scores.push(nf.sqrt() * (joint - prod));
        }
        let var = scores.iter().map(|s| s * s).sum::<f64>() / reps as f64;
        let normal = MarginSource::Normal { sigma: 1.0 };
        let s2 = sigma2_under_h0(&xy_model(), &normal, &normal, 200_000, 3).unwrap();
        assert!((var - s2[(1, 1)]).abs() < 0.1, "{var} vs {}", s2[(1, 1)]);
    }

    #[test]
    fn gaussian_basis_limit_is_chi2_1() {
        let normal = MarginSource::Normal { sigma: 1.0 };
        let cov = AsymptoticCovariances::under_h0(&RatioModel::gaussian(), &normal, &normal, 1_000_000, 7).unwrap();
        let mut eig = cov.eigenvalues().to_vec();
        eig.sort_by(f64::total_cmp);
        assert!(eig[..3].iter().all(|&l| l < 0.01), "{eig:?}");
        assert!((eig[3] - 1.0).abs() < 0.01, "{eig:?}");
        assert_relative_eq!(cov.c_matrix.clone(), cov.c_matrix.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn ztz_quantiles() {
        let id = AsymptoticCovariances::from_parts(DMatrix::identity(2, 2), {
            let mut s = DMatrix::zeros(2, 2);
            s[(1, 1)] = 1.0;
            s
        })
        .unwrap();
        let q = limit_quantile_ztz(&id, 0.01, 100_000, 5);
        assert!((q - chisq_critical(0.01, 1.0)).abs() < 0.15, "{q}");
        assert_eq!(q, limit_quantile_ztz(&id, 0.01, 100_000, 5));

        let zero = AsymptoticCovariances::from_parts(DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(limit_quantile_ztz(&zero, 0.05, 1000, 1), 0.0);

        let scaled = AsymptoticCovariances::from_parts(DMatrix::identity(2, 2), &id.sigma2 * 4.0).unwrap();
        assert_relative_eq!(limit_quantile_ztz(&scaled, 0.05, 10_000, 2), 4.0 * limit_quantile_ztz(&id, 0.05, 10_000, 2), max_relative = 1e-12);
    }

    #[test]
    fn singular_sigma1_rejected() {
        // a constant margin makes the xy column collinear with the intercept
        let x = MarginSource::Empirical(vec![1.0, 1.0]);
        let y = MarginSource::Empirical(vec![2.0, 2.0]);
        assert!(matches!(
            sigma1_under_h0(&xy_model(), &x, &y, 0, 0),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn df_formula() {
        assert_eq!(chisq_df_finite(2, 2).unwrap(), 1);
        assert_eq!(chisq_df_finite(3, 3).unwrap(), 4);
        assert_eq!(chisq_df_finite(2, 3).unwrap(), 2);
        assert!(chisq_df_finite(1, 3).is_err());
    }

    #[test]
    fn fgm_has_no_limit_law() {
        let u = MarginSource::Uniform01;
        assert!(matches!(
            AsymptoticCovariances::under_h0(&RatioModel::copula_fgm(), &u, &u, 10, 0),
            Err(Error::RouteMismatch(_))
        ));
    }
}
