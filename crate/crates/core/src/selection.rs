//! k-fold cross-validation over candidate ratio models.
//!
//! For candidate ℓ and fold i, θ̂ is fitted on the retained records and scored
//! on the held-out fold by the same dual objective, both sums running over
//! held-out indices only. The criterion C_V(ℓ) is the mean fold score and the
//! candidate with the largest criterion is selected.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::estimator::ObjectiveContext;
use crate::models::{ParamVector, RatioModel};
use crate::sample::PairedSample;
use crate::samplers::stream_rng;

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub k: usize,
    pub candidates: Vec<RatioModel>,
    pub divergence: DivergenceSpec,
    pub seed: u64,
}

impl CvConfig {
    pub const DEFAULT_FOLDS: usize = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub theta_hat: ParamVector,
    pub converged: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub descriptor: String,
    pub dim: usize,
    /// C_V(ℓ), or `None` when some fold failed.
    pub score: Option<f64>,
    pub folds: Vec<FoldFit>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub candidates: Vec<CandidateReport>,
    pub selected: usize,
}

impl CvReport {
    pub fn scores(&self) -> Vec<Option<f64>> {
        self.candidates.iter().map(|c| c.score).collect()
    }
}

/// Seeded shuffle of 0..n cut into k folds of sizes ⌊n/k⌋ or ⌈n/k⌉.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    folds
}

fn fit_fold(sample: &PairedSample, model: &RatioModel, divergence: DivergenceSpec, held_out: &[usize]) -> Result<FoldFit> {
    let n = sample.len();
    let mut is_held = vec![false; n];
    held_out.iter().for_each(|&i| is_held[i] = true);
    let train: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
    let fit_ctx = ObjectiveContext::new(divergence, model.clone(), sample.subset(&train))?;
    let est = fit_ctx.estimate();
    if !est.converged {
        return Err(Error::OptimFailure { failed: 1, total: 1 });
    }
    let score_ctx = ObjectiveContext::new(divergence, model.clone(), sample.subset(held_out))?;
    let score = score_ctx.objective(&est.theta_hat)?;
    Ok(FoldFit {
        theta_hat: est.theta_hat,
        converged: est.converged,
        score,
    })
}

pub fn cross_validate(sample: &PairedSample, cfg: &CvConfig) -> Result<CvReport> {
    let n = sample.len();
    if cfg.candidates.is_empty() {
        return Err(Error::Config("no candidate models".into()));
    }
    if cfg.k < 2 || cfg.k > n {
        return Err(Error::InvalidInput(format!("need 2 <= k <= n, got k = {} with n = {n}", cfg.k)));
    }
    if n - n.div_ceil(cfg.k) < 2 {
        return Err(Error::InvalidInput("each training part needs at least 2 records".into()));
    }
    for model in &cfg.candidates {
        model.check_sample(sample)?;
    }
    let folds = fold_assignment(n, cfg.k, cfg.seed);
    let jobs: Vec<(usize, usize)> = (0..cfg.candidates.len())
        .flat_map(|c| (0..cfg.k).map(move |f| (c, f)))
        .collect();
    let fits: Vec<Result<FoldFit>> = jobs
        .par_iter()
        .map(|&(c, f)| fit_fold(sample, &cfg.candidates[c], cfg.divergence, &folds[f]))
        .collect();

    let mut fits = fits.into_iter();
    let mut candidates = Vec::with_capacity(cfg.candidates.len());
    for model in &cfg.candidates {
        let mut folds_ok = Vec::with_capacity(cfg.k);
        let mut failure = None;
        for fit in fits.by_ref().take(cfg.k) {
            match fit {
                Ok(f) => folds_ok.push(f),
                Err(e) => {
                    failure.get_or_insert(e.to_string());
                }
            }
        }
        let score = failure
            .is_none()
            .then(|| folds_ok.iter().map(|f| f.score).sum::<f64>() / cfg.k as f64);
        candidates.push(CandidateReport {
            descriptor: model.descriptor(),
            dim: model.dim(),
            score,
            folds: folds_ok,
            failure,
        });
    }

    let selected = select(&candidates);
    let selected = selected.ok_or(Error::OptimFailure {
        failed: candidates.len(),
        total: candidates.len(),
    })?;
    Ok(CvReport { candidates, selected })
}

/// Index of the best qualified candidate; ties go to the smaller dimension.
fn select(candidates: &[CandidateReport]) -> Option<usize> {
    let mut selected: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some(score) = c.score else { continue };
        selected = match selected {
            None => Some(i),
            Some(j) => {
                let best = candidates[j].score.unwrap();
                let tie = (score - best).abs() <= 1e-12 * best.abs().max(1e-12);
                if (!tie && score > best) || (tie && c.dim < candidates[j].dim) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BasisTerm;
    use crate::samplers::{sample_gaussian, GaussianSpec};

    #[test]
    fn folds_partition_indices() {
        for (n, k) in [(10, 3), (12, 4), (7, 7), (101, 5)] {
            let folds = fold_assignment(n, k, 5);
            assert_eq!(folds.len(), k);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert_eq!(fold_assignment(20, 4, 9), fold_assignment(20, 4, 9));
    }

    fn gaussian_sample(n: usize, seed: u64) -> PairedSample {
        sample_gaussian(&GaussianSpec::new(0.6, 1.0).unwrap(), n, &mut stream_rng(seed, 0)).unwrap()
    }

    #[test]
    fn single_candidate_is_selected() {
        let cfg = CvConfig {
            k: 5,
            candidates: vec![RatioModel::gaussian()],
            divergence: DivergenceSpec::KL,
            seed: 3,
        };
        let report = cross_validate(&gaussian_sample(60, 1), &cfg).unwrap();
        assert_eq!(report.selected, 0);
        assert_eq!(report.candidates[0].folds.len(), 5);
        assert_eq!(report, cross_validate(&gaussian_sample(60, 1), &cfg).unwrap());
    }

    #[test]
    fn leave_one_out_is_well_defined() {
        let model = RatioModel::expbilinear(vec![BasisTerm::parse("xy").unwrap().unwrap()]).unwrap();
        let cfg = CvConfig {
            k: 12,
            candidates: vec![model, RatioModel::copula_fgm()],
            divergence: DivergenceSpec::KL,
            seed: 4,
        };
        let report = cross_validate(&gaussian_sample(12, 2), &cfg).unwrap();
        assert!(report.candidates.iter().all(|c| c.folds.len() == 12));
        assert!(report.candidates.iter().all(|c| c.score.is_some()));
    }

    #[test]
    fn ties_prefer_fewer_parameters() {
        let report = |score: Option<f64>, dim: usize| CandidateReport {
            descriptor: String::new(),
            dim,
            score,
            folds: Vec::new(),
            failure: None,
        };
        assert_eq!(select(&[report(Some(0.2), 4), report(Some(0.2), 2)]), Some(1));
        assert_eq!(select(&[report(Some(0.2), 2), report(Some(0.2), 4)]), Some(0));
        assert_eq!(select(&[report(Some(0.1), 2), report(Some(0.3), 4)]), Some(1));
        assert_eq!(select(&[report(None, 2), report(Some(-0.3), 4)]), Some(1));
        assert_eq!(select(&[report(None, 2)]), None);
    }

    #[test]
    fn rejects_bad_fold_counts() {
        let cfg = CvConfig {
            k: 1,
            candidates: vec![RatioModel::gaussian()],
            divergence: DivergenceSpec::KL,
            seed: 0,
        };
        assert!(cross_validate(&gaussian_sample(20, 1), &cfg).is_err());
    }
}
