use phimi::samplers::{sample_gaussian, stream_rng, GaussianSpec};
use phimi::selection::{cross_validate, CvConfig};
use phimi::{BasisTerm, DivergenceSpec, RatioModel};
use rayon::prelude::*;

#[test]
fn cv_prefers_true_basis_over_noise() {
    let noise = RatioModel::expbilinear(vec![BasisTerm::parse("x3*y2").unwrap().unwrap()]).unwrap();
    let spec = GaussianSpec::new(0.5, 1.0).unwrap();
    let runs = 100u64;
    let hits = (0..runs)
        .into_par_iter()
        .filter(|&r| {
            let sample = sample_gaussian(&spec, 500, &mut stream_rng(31, r)).unwrap();
            let cfg = CvConfig {
                k: CvConfig::DEFAULT_FOLDS,
                candidates: vec![noise.clone(), RatioModel::gaussian()],
                divergence: DivergenceSpec::KL,
                seed: 1000 + r,
            };
            cross_validate(&sample, &cfg).unwrap().selected == 1
        })
        .count();
    assert!(hits >= 90, "true model chosen {hits}/{runs}");
}
