//! Empirical dual objective
//!
//! ```text
//! M_n(θ) = (1/n) Σ_i f_θ(x_i, y_i) − (1/n²) Σ_i Σ_j g_θ(x_i, y_j)
//! f_θ = φ'(h_θ),   g_θ = h_θ φ'(h_θ) − φ(h_θ)
//! ```
//!
//! and its maximization over the parameter box.
//!
//! Repeated values are grouped into weighted atoms before evaluation: the
//! first sum runs over distinct observed pairs, the double sum over distinct
//! x-values times distinct y-values. This is exact (the n² product measure
//! is a weighted sum over atoms) and makes categorical samples cost K₁K₂ per
//! evaluation instead of n².

use rayon::prelude::*;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::models::{mid_ranks, Family, Link, ParamVector, RatioModel};
use crate::numeric::NeumaierSum;
use crate::optim::{maximize_box, OptimOptions, OptimResult};
use crate::sample::{PairedSample, Value};

/// Row count × column count above which the double sum is split across threads.
const PARALLEL_CELLS: usize = 1 << 16;

/// Projected-gradient level at which an estimate is reported as converged.
pub const CONVERGENCE_TOL: f64 = 1e-6;
const FINITE_GRAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    divergence: DivergenceSpec,
    model: RatioModel,
    sample: PairedSample,
    d: usize,
    /// ξ(x) per x-atom, row-major (atoms × d)
    xi: Vec<f64>,
    wx: Vec<f64>,
    zeta: Vec<f64>,
    wy: Vec<f64>,
    /// (x-atom, y-atom, weight) per distinct observed pair
    joint: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEstimate {
    pub theta_hat: ParamVector,
    pub i_hat: f64,
    pub objective_evals: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// Groups observations into atoms: returns (atom of each observation, representative index per atom).
fn atoms_real(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut atom = vec![0; values.len()];
    let mut reps = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos == 0 || values[i] != values[order[pos - 1]] {
            reps.push(i);
        }
        atom[i] = reps.len() - 1;
    }
    (atom, reps)
}

fn atoms_codes(codes: &[u32]) -> (Vec<usize>, Vec<usize>) {
    let max = codes.iter().copied().max().unwrap_or(0) as usize;
    let mut slot = vec![usize::MAX; max + 1];
    let mut reps = Vec::new();
    let atom = codes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let c = c as usize;
            if slot[c] == usize::MAX {
                slot[c] = reps.len();
                reps.push(i);
            }
            slot[c]
        })
        .collect();
    (atom, reps)
}

impl ObjectiveContext {
    /// Builds the context; for the FGM family the sample is real-valued raw data
    /// and is replaced by its rescaled empirical margins here.
    pub fn new(divergence: DivergenceSpec, model: RatioModel, sample: PairedSample) -> Result<Self> {
        model.check_sample(&sample)?;
        let n = sample.len();
        let margins;
        let values: &PairedSample = if matches!(model.family(), Family::CopulaFgm) {
            let (x, y) = sample.as_real().expect("checked real");
            // held-out folds may hold a single record, so no n ≥ 2 requirement here
            let scale = 1.0 / (n as f64 + 1.0);
            let u = mid_ranks(x).into_iter().map(|r| r * scale).collect();
            let v = mid_ranks(y).into_iter().map(|r| r * scale).collect();
            margins = PairedSample::Real { x: u, y: v };
            &margins
        } else {
            &sample
        };
        let ((ax, rx), (ay, ry)) = match values {
            PairedSample::Real { x, y } => (atoms_real(x), atoms_real(y)),
            PairedSample::Categorical { x, y } => (atoms_codes(x.codes()), atoms_codes(y.codes())),
        };
        let d = model.n_terms();
        let inv_n = 1.0 / n as f64;

        let mut xi = vec![0.0; rx.len() * d];
        for (a, &i) in rx.iter().enumerate() {
            model.x_features(values.x(i), &mut xi[a * d..(a + 1) * d])?;
        }
        let mut zeta = vec![0.0; ry.len() * d];
        for (b, &j) in ry.iter().enumerate() {
            model.y_features(values.y(j), &mut zeta[b * d..(b + 1) * d])?;
        }
        let mut wx = vec![0.0; rx.len()];
        ax.iter().for_each(|&a| wx[a] += inv_n);
        let mut wy = vec![0.0; ry.len()];
        ay.iter().for_each(|&b| wy[b] += inv_n);

        let mut pairs: Vec<(usize, usize)> = ax.iter().copied().zip(ay.iter().copied()).collect();
        pairs.sort_unstable();
        let mut joint: Vec<(usize, usize, f64)> = Vec::new();
        for p in pairs {
            match joint.last_mut() {
                Some(last) if (last.0, last.1) == p => last.2 += inv_n,
                _ => joint.push((p.0, p.1, inv_n)),
            }
        }

        Ok(Self {
            divergence,
            model,
            sample,
            d,
            xi,
            wx,
            zeta,
            wy,
            joint,
        })
    }

    /// Same divergence and model on another sample.
    pub fn with_sample(&self, sample: PairedSample) -> Result<Self> {
        Self::new(self.divergence, self.model.clone(), sample)
    }

    pub fn divergence(&self) -> DivergenceSpec {
        self.divergence
    }

    pub fn model(&self) -> &RatioModel {
        &self.model
    }

    pub fn sample(&self) -> &PairedSample {
        &self.sample
    }

    pub fn n(&self) -> usize {
        self.sample.len()
    }

    /// Number of distinct x-values and y-values.
    pub fn atom_counts(&self) -> (usize, usize) {
        (self.wx.len(), self.wy.len())
    }

    /// Value, f-derivative and g-derivative with respect to the linear predictor,
    /// or `None` if h is infeasible for φ.
    #[inline]
    fn pieces(&self, div: &DivergenceSpec, lin: f64) -> Option<(f64, f64, f64, f64)> {
        match self.model.link() {
            Link::Exp => {
                let (h, f, g, s) = div.kernel_exp(lin)?;
                let sh = s * h;
                Some((f, g, sh, sh * h))
            }
            Link::Linear => {
                let h = 1.0 + lin;
                let (f, g, s) = div.kernel(h)?;
                Some((f, g, s, s * h))
            }
        }
    }

    /// Shared evaluation: value and (optionally) gradient.
    fn eval(&self, theta: &[f64], want_grad: bool) -> Option<(f64, Vec<f64>)> {
        self.eval_for(&self.divergence, theta, want_grad)
    }

    fn eval_for(&self, div: &DivergenceSpec, theta: &[f64], want_grad: bool) -> Option<(f64, Vec<f64>)> {
        let d = self.d;
        let intercept = self.model.has_intercept();
        let (alpha, beta) = if intercept { (theta[0], &theta[1..]) } else { (0.0, theta) };
        let off = usize::from(intercept);
        let dim = theta.len();

        // first term over observed pairs
        let mut f_sum = NeumaierSum::new();
        let mut f_grad = vec![0.0; if want_grad { dim } else { 0 }];
        for &(a, b, w) in &self.joint {
            let xa = &self.xi[a * d..(a + 1) * d];
            let zb = &self.zeta[b * d..(b + 1) * d];
            let lin = alpha + beta.iter().zip(xa).zip(zb).map(|((c, p), q)| c * p * q).sum::<f64>();
            let (f, _, df, _) = self.pieces(div, lin)?;
            f_sum.add(w * f);
            if want_grad {
                if intercept {
                    f_grad[0] += w * df;
                }
                for k in 0..d {
                    f_grad[off + k] += w * df * xa[k] * zb[k];
                }
            }
        }

        // double sum over the product of margins, one row per x-atom
        let row = |a: usize| -> Option<(f64, Vec<f64>)> {
            let xa = &self.xi[a * d..(a + 1) * d];
            let c: Vec<f64> = beta.iter().zip(xa).map(|(b, x)| b * x).collect();
            let mut g_row = 0.0;
            let mut dg0 = 0.0;
            let mut r = vec![0.0; if want_grad { d } else { 0 }];
            for (b, &wb) in self.wy.iter().enumerate() {
                let zb = &self.zeta[b * d..(b + 1) * d];
                let lin = alpha + c.iter().zip(zb).map(|(p, q)| p * q).sum::<f64>();
                let (_, g, _, dg) = self.pieces(div, lin)?;
                g_row += wb * g;
                if want_grad {
                    let q = wb * dg;
                    dg0 += q;
                    for k in 0..d {
                        r[k] += q * zb[k];
                    }
                }
            }
            let wa = self.wx[a];
            let mut grad = Vec::new();
            if want_grad {
                grad = vec![0.0; dim];
                if intercept {
                    grad[0] = wa * dg0;
                }
                for k in 0..d {
                    grad[off + k] = wa * xa[k] * r[k];
                }
            }
            Some((wa * g_row, grad))
        };
        let rows: Vec<Option<(f64, Vec<f64>)>> = if self.wx.len() * self.wy.len() >= PARALLEL_CELLS {
            (0..self.wx.len()).into_par_iter().map(row).collect()
        } else {
            (0..self.wx.len()).map(row).collect()
        };
        let mut g_sum = NeumaierSum::new();
        let mut g_grad: Vec<NeumaierSum> = vec![NeumaierSum::new(); if want_grad { dim } else { 0 }];
        for r in rows {
            let (v, gr) = r?;
            g_sum.add(v);
            for (acc, c) in g_grad.iter_mut().zip(gr) {
                acc.add(c);
            }
        }
        let value = f_sum.value() - g_sum.value();
        let grad = f_grad.iter().zip(&g_grad).map(|(f, g)| f - g.value()).collect();
        Some((value, grad))
    }

    fn infeasible(&self, theta: &ParamVector) -> Error {
        // report the first ratio value that falls outside the kernel's domain
        let d = self.d;
        for a in 0..self.wx.len() {
            for b in 0..self.wy.len() {
                let lin = self.model.predictor(
                    theta.as_slice(),
                    &self.xi[a * d..(a + 1) * d],
                    &self.zeta[b * d..(b + 1) * d],
                );
                if self.pieces(&self.divergence, lin).is_none() {
                    return Error::ConjugateDomain { h: self.model.apply_link(lin) };
                }
            }
        }
        Error::ConjugateDomain { h: f64::NAN }
    }

    /// M_n(θ).
    pub fn objective(&self, theta: &ParamVector) -> Result<f64> {
        self.model.check_theta(theta)?;
        match self.eval(theta.as_slice(), false) {
            Some((v, _)) => Ok(v),
            None => Err(self.infeasible(theta)),
        }
    }

    /// ∇M_n(θ).
    pub fn objective_grad(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.model.check_theta(theta)?;
        match self.eval(theta.as_slice(), true) {
            Some((_, g)) => Ok(g),
            None => Err(self.infeasible(theta)),
        }
    }

    /// Maximizes M_n from θ₀. The finite family is driven to a tighter gradient
    /// level than the reported convergence threshold: cells without observations
    /// send their coordinates toward the box, and the gap to the supremum there is
    /// of the order of the gradient itself.
    pub fn estimate(&self) -> DualEstimate {
        let mut opts = OptimOptions::default();
        if matches!(self.model.family(), Family::FiniteDiscrete { .. }) {
            opts.grad_tol = FINITE_GRAD_TOL;
        }
        self.estimate_with(&opts)
    }

    pub fn estimate_with(&self, opts: &OptimOptions) -> DualEstimate {
        let lower = self.model.lower();
        let upper = self.model.upper();
        let f = |t: &[f64]| self.eval(t, true);
        let zero = self.model.zero();
        let tol = opts.grad_tol.max(CONVERGENCE_TOL);
        let settle = |mut r: OptimResult| {
            r.converged = r.grad_norm <= tol;
            r
        };
        let mut evals = 0;
        let mut best = settle(
            maximize_box(&f, zero.as_slice(), lower, upper, opts).expect("θ₀ is always feasible"),
        );
        evals += best.evals;
        let consider = |r: OptimResult, best: &mut OptimResult| {
            let better = (r.converged && !best.converged)
                || (r.converged == best.converged && r.value > best.value);
            if better {
                *best = r;
            }
        };

        // Under the exponential link M_n is concave in θ only for 0 ≤ γ ≤ 1.
        // Outside that range the objective flattens as h → 0, so the KL fit
        // (concave, same pointwise maximizer h = dP/dP⊥) is used as a second start.
        let gamma = self.divergence.gamma();
        if self.model.link() == Link::Exp && !(0.0..=1.0).contains(&gamma) {
            let kl = |t: &[f64]| self.eval_for(&DivergenceSpec::KL, t, true);
            if let Some(warm) = maximize_box(&kl, zero.as_slice(), lower, upper, opts) {
                evals += warm.evals;
                if let Some(r) = maximize_box(&f, &warm.x, lower, upper, opts) {
                    evals += r.evals;
                    consider(settle(r), &mut best);
                }
            }
        }
        if !best.converged {
            for start in multistart_points(lower, upper) {
                if let Some(r) = maximize_box(&f, &start, lower, upper, opts) {
                    evals += r.evals;
                    consider(settle(r), &mut best);
                }
            }
        }
        DualEstimate {
            theta_hat: ParamVector::new(best.x, self.model.has_intercept()),
            i_hat: best.value,
            objective_evals: evals,
            converged: best.converged,
            grad_norm: best.grad_norm,
        }
    }
}

/// Five deterministic starting points spread around θ₀ inside the box.
fn multistart_points(lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let patterns: [(f64, bool); 5] = [(0.05, false), (-0.05, false), (0.1, true), (-0.2, true), (0.3, false)];
    patterns
        .iter()
        .map(|&(scale, alternate)| {
            lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(i, (&l, &u))| {
                    let sign = if alternate && i % 2 == 1 { -1.0 } else { 1.0 };
                    let half = if scale * sign > 0.0 { u } else { -l };
                    (scale * sign * half).clamp(l, u)
                })
                .collect()
        })
        .collect()
}

/// Direct plug-in estimate Σ φ(p̂_xy / (p̂_x p̂_y)) p̂_x p̂_y over the K₁ × K₂ cells.
pub fn plugin_estimate(
    divergence: &DivergenceSpec,
    sample: &PairedSample,
    x_levels: &[String],
    y_levels: &[String],
) -> Result<f64> {
    let PairedSample::Categorical { .. } = sample else {
        return Err(Error::Support("plug-in estimate requires a categorical sample".into()));
    };
    let (k1, k2) = (x_levels.len(), y_levels.len());
    let mut counts = vec![0usize; k1 * k2];
    for i in 0..sample.len() {
        let (Value::Token(x), Value::Token(y)) = (sample.x(i), sample.y(i)) else {
            unreachable!()
        };
        let a = x_levels.iter().position(|l| l == x).ok_or_else(|| Error::Support(format!("`{x}` is not a level of X")))?;
        let b = y_levels.iter().position(|l| l == y).ok_or_else(|| Error::Support(format!("`{y}` is not a level of Y")))?;
        counts[a * k2 + b] += 1;
    }
    let n = sample.len() as f64;
    let px: Vec<f64> = (0..k1).map(|a| counts[a * k2..(a + 1) * k2].iter().sum::<usize>() as f64 / n).collect();
    let py: Vec<f64> = (0..k2).map(|b| (0..k1).map(|a| counts[a * k2 + b]).sum::<usize>() as f64 / n).collect();
    let mut total = NeumaierSum::new();
    for a in 0..k1 {
        for b in 0..k2 {
            let prod = px[a] * py[b];
            if prod == 0.0 {
                continue;
            }
            let ratio = counts[a * k2 + b] as f64 / n / prod;
            total.add(divergence.phi(ratio)? * prod);
        }
    }
    Ok(total.value())
}
