//! Box-constrained quasi-Newton maximization.
//!
//! Projected BFGS with a dense inverse-Hessian approximation (the parameter
//! dimensions here are small), an Armijo backtracking search along the
//! projected path, and an optional step expansion when the full step is
//! accepted and the slope has barely decayed. Objective evaluations that
//! return `None` are treated as −∞ and simply shrink the step.

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    /// Stop when the projected gradient ∞-norm falls to this level.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// ∞-norm of the projected gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const MAX_EXPAND: usize = 10;

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) -> bool {
    let mut clipped = false;
    for ((v, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        if *v < l {
            *v = l;
            clipped = true;
        } else if *v > u {
            *v = u;
            clipped = true;
        }
    }
    clipped
}

fn projected_grad_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&l, &u))| ((xi + gi).clamp(l, u) - xi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Counter<'f, F> {
    f: &'f F,
    evals: usize,
}

impl<F> Counter<'_, F>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evals += 1;
        (self.f)(x).filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))
    }
}

/// Maximizes `f` over the box [lower, upper] starting from `x0` (projected into the box).
///
/// `f` returns the value and gradient, or `None` when the point is infeasible.
/// Returns `None` only when the starting point itself is infeasible.
pub fn maximize_box<F>(f: &F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &OptimOptions) -> Option<OptimResult>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n);
    let mut counter = Counter { f, evals: 0 };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = counter.eval(&x)?;

    let identity = |n: usize| {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        h
    };
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let pg = projected_grad_norm(&x, &g, lower, upper);
        if pg <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // variables pinned at a bound with the gradient pushing outward
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] < 0.0) || (x[i] >= upper[i] && g[i] > 0.0)))
            .collect();
        let mut p = vec![0.0; n];
        for i in 0..n {
            if free[i] {
                p[i] = (0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum();
            }
        }
        if dot(&p, &g) <= 0.0 {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                p[i] = if free[i] { g[i] } else { 0.0 };
            }
        }
        if fresh {
            // unscaled gradient step: keep the first trial move modest
            let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if pmax > 1.0 {
                p.iter_mut().for_each(|v| *v /= pmax);
            }
        }

        let trial = |t: f64| {
            let mut xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let clipped = project(&mut xt, lower, upper);
            (xt, clipped)
        };
        let slope0 = dot(&g, &p);

        let mut t = 1.0;
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>, bool)> = None;
        for _ in 0..MAX_BACKTRACK {
            let (xt, clipped) = trial(t);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|&s| s == 0.0) {
                break;
            }
            if let Some((ft, gt)) = counter.eval(&xt) {
                if ft >= fx + ARMIJO * dot(&g, &step) && ft >= fx {
                    accepted = Some((xt, ft, gt, clipped));
                    break;
                }
            }
            t *= 0.5;
        }

        // expansion: the full step was accepted cleanly and the slope persists
        if let Some((_, _, ref gt, false)) = accepted {
            if t == 1.0 && dot(gt, &p) > 0.9 * slope0 {
                let mut te = 1.0;
                for _ in 0..MAX_EXPAND {
                    te *= 2.0;
                    let (xt, clipped) = trial(te);
                    let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
                    match counter.eval(&xt) {
                        Some((ft, gt)) if ft > accepted.as_ref().unwrap().1 && ft >= fx + ARMIJO * dot(&g, &step) => {
                            let keep_going = !clipped && dot(&gt, &p) > 0.9 * slope0;
                            accepted = Some((xt, ft, gt, clipped));
                            if !keep_going {
                                break;
                            }
                        }
                        _ => break,
                    }
                }
            }
        }

        let Some((xn, fxn, gn, _)) = accepted else {
            if fresh {
                // no ascent even along the projected gradient
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // curvature pair of −f
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let small_change = (fxn - fx).abs() <= 1e-15 * fx.abs().max(1.0)
            && s.iter().zip(&xn).all(|(si, xi)| si.abs() <= 1e-14 * xi.abs().max(1.0));
        x = xn;
        fx = fxn;
        g = gn;

        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        if small_change {
            break;
        }
    }

    let grad_norm = projected_grad_norm(&x, &g, lower, upper);
    Some(OptimResult {
        x,
        value: fx,
        grad_norm,
        iterations,
        evals: counter.evals,
        converged: converged || grad_norm <= opts.grad_tol,
    })
}

/// H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ with ρ = 1/(sᵀy).
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
