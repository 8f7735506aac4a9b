//! Power-divergence kernels φ_γ, their derivatives and convex conjugates.
//!
//! The family is
//!
//! ```text
//! φ_γ(x) = (x^γ − γx + γ − 1) / (γ(γ − 1))     γ ∉ {0, 1}
//! φ_0(x) = −log x + x − 1
//! φ_1(x) = x log x − x + 1
//! ```
//!
//! normalized so that φ(1) = φ'(1) = 0 and φ''(1) = 1. The five classical
//! members (modified KL, KL, modified χ², χ², Hellinger) are evaluated through
//! their closed forms; every other γ goes through the general expression.

use std::fmt;

use crate::error::{Error, Interval, Result};

/// Distance from 0 and 1 below which a non-exact γ is rejected.
const GAMMA_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    gamma: f64,
}

impl DivergenceSpec {
    /// Modified Kullback-Leibler, γ = 0.
    pub const KLM: DivergenceSpec = DivergenceSpec { gamma: 0.0 };
    /// Kullback-Leibler, γ = 1.
    pub const KL: DivergenceSpec = DivergenceSpec { gamma: 1.0 };
    /// Hellinger, γ = 1/2.
    pub const HELLINGER: DivergenceSpec = DivergenceSpec { gamma: 0.5 };
    /// Modified χ², γ = −1.
    pub const CHISQM: DivergenceSpec = DivergenceSpec { gamma: -1.0 };
    /// Pearson χ², γ = 2.
    pub const CHISQ: DivergenceSpec = DivergenceSpec { gamma: 2.0 };

    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("gamma must be finite, got {gamma}")));
        }
        let near_zero = gamma != 0.0 && gamma.abs() < GAMMA_GUARD;
        let near_one = gamma != 1.0 && (gamma - 1.0).abs() < GAMMA_GUARD;
        if near_zero || near_one {
            return Err(Error::Domain {
                value: gamma,
                interval: if near_zero {
                    Interval::new(-GAMMA_GUARD, GAMMA_GUARD, false, false)
                } else {
                    Interval::new(1.0 - GAMMA_GUARD, 1.0 + GAMMA_GUARD, false, false)
                },
            });
        }
        Ok(Self { gamma })
    }

    /// Looks up one of the named members (`kl`, `klm`, `chisq`, `chisqm`, `hellinger`).
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kl" => Some(Self::KL),
            "klm" | "kl-m" | "modified-kl" => Some(Self::KLM),
            "chisq" | "chi2" | "chisquare" => Some(Self::CHISQ),
            "chisqm" | "chi2m" | "modified-chisq" => Some(Self::CHISQM),
            "hellinger" | "h" => Some(Self::HELLINGER),
            _ => None,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn name(&self) -> String {
        match self.gamma {
            g if g == 0.0 => "klm".into(),
            g if g == 1.0 => "kl".into(),
            g if g == 0.5 => "hellinger".into(),
            g if g == -1.0 => "chisqm".into(),
            g if g == 2.0 => "chisq".into(),
            g => format!("gamma={g}"),
        }
    }

    /// Domain of φ.
    pub fn dom_phi(&self) -> Interval {
        let g = self.gamma;
        if g == 2.0 {
            Interval::REALS
        } else if g > 0.0 {
            Interval::new(0.0, f64::INFINITY, true, false)
        } else {
            Interval::new(0.0, f64::INFINITY, false, false)
        }
    }

    /// Domain of the conjugate φ*.
    pub fn dom_conj(&self) -> Interval {
        let g = self.gamma;
        if g >= 1.0 {
            Interval::REALS
        } else if g == 0.0 {
            Interval::new(f64::NEG_INFINITY, 1.0, false, false)
        } else {
            // sup of φ' is 1/(1−γ); attained in the closure only for γ < 0
            Interval::new(f64::NEG_INFINITY, 1.0 / (1.0 - g), false, g < 0.0)
        }
    }

    fn check_phi_domain(&self, x: f64) -> Result<()> {
        let dom = self.dom_phi();
        if dom.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                interval: dom,
            })
        }
    }

    fn check_interior(&self, x: f64) -> Result<()> {
        let dom = self.dom_phi();
        if dom.contains_interior(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                interval: dom,
            })
        }
    }

    pub fn phi(&self, x: f64) -> Result<f64> {
        self.check_phi_domain(x)?;
        if x == 1.0 {
            return Ok(0.0);
        }
        Ok(match self.gamma {
            g if g == 0.0 => -x.ln() + x - 1.0,
            g if g == 1.0 => {
                if x == 0.0 {
                    1.0
                } else {
                    x * x.ln() - x + 1.0
                }
            }
            g if g == 2.0 => 0.5 * (x - 1.0) * (x - 1.0),
            g if g == -1.0 => 0.5 * (x - 1.0) * (x - 1.0) / x,
            g if g == 0.5 => {
                let r = x.sqrt() - 1.0;
                2.0 * r * r
            }
            g => power_phi(g, x),
        })
    }

    pub fn phi_prime(&self, x: f64) -> Result<f64> {
        self.check_interior(x)?;
        Ok(match self.gamma {
            g if g == 0.0 => 1.0 - 1.0 / x,
            g if g == 1.0 => x.ln(),
            g if g == 2.0 => x - 1.0,
            g => (x.powf(g - 1.0) - 1.0) / (g - 1.0),
        })
    }

    pub fn phi_second(&self, x: f64) -> Result<f64> {
        self.check_interior(x)?;
        Ok(match self.gamma {
            g if g == 2.0 => 1.0,
            g if g == 1.0 => 1.0 / x,
            g if g == 0.0 => 1.0 / (x * x),
            g => x.powf(g - 2.0),
        })
    }

    /// Convex conjugate φ*(t) = sup_x {tx − φ(x)}.
    pub fn phi_conj(&self, t: f64) -> Result<f64> {
        let dom = self.dom_conj();
        if !dom.contains(t) {
            return Err(Error::Domain {
                value: t,
                interval: dom,
            });
        }
        Ok(match self.gamma {
            g if g == 0.0 => -(1.0 - t).ln(),
            g if g == 1.0 => t.exp_m1(),
            g if g == 2.0 => 0.5 * t * t + t,
            g if g == -1.0 => 1.0 - (1.0 - 2.0 * t).sqrt(),
            g if g == 0.5 => 2.0 * t / (2.0 - t),
            g => power_conj(g, t),
        })
    }

    /// x φ'(x) − φ(x), which equals φ*(φ'(x)) on the interior of the domain.
    pub fn conj_of_prime(&self, x: f64) -> Result<f64> {
        let d = self.phi_prime(x)?;
        Ok(x * d - self.phi(x)?)
    }

    /// Evaluates the dual-objective pieces at a ratio value h.
    ///
    /// Returns `(f, g, φ''(h))` with f = φ'(h) and g = hφ'(h) − φ(h), or `None`
    /// when h is not an interior point of dom φ (or is not finite).
    #[inline]
    pub(crate) fn kernel(&self, h: f64) -> Option<(f64, f64, f64)> {
        if !h.is_finite() {
            return None;
        }
        let g = self.gamma;
        if g == 2.0 {
            return Some((h - 1.0, 0.5 * (h * h - 1.0), 1.0));
        }
        if h <= 0.0 {
            return None;
        }
        Some(if g == 1.0 {
            (h.ln(), h - 1.0, 1.0 / h)
        } else if g == 0.0 {
            (1.0 - 1.0 / h, h.ln(), 1.0 / (h * h))
        } else if g == 0.5 {
            let r = h.sqrt();
            (2.0 - 2.0 / r, 2.0 * (r - 1.0), 1.0 / (h * r))
        } else {
            let hg1 = h.powf(g - 1.0);
            ((hg1 - 1.0) / (g - 1.0), (hg1 * h - 1.0) / g, hg1 / h)
        })
    }

    /// Like [`kernel`](Self::kernel) but for h = exp(η), using η directly
    /// where the closed forms allow it.
    #[inline]
    pub(crate) fn kernel_exp(&self, eta: f64) -> Option<(f64, f64, f64, f64)> {
        let h = eta.exp();
        if !h.is_finite() {
            return None;
        }
        if self.gamma == 1.0 {
            // f = η, g = h − 1, φ''(h) = 1/h
            return Some((h, eta, h - 1.0, 1.0 / h));
        }
        if h == 0.0 {
            return None;
        }
        self.kernel(h).map(|(f, g, s)| (h, f, g, s))
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// General power-family expression, valid for γ ∉ {0, 1}.
fn power_phi(g: f64, x: f64) -> f64 {
    (x.powf(g) - g * x + g - 1.0) / (g * (g - 1.0))
}

/// Closed form of sup_x {tx − φ_γ(x)} for γ ∉ {0, 1}; the caller checks the domain.
fn power_conj(g: f64, t: f64) -> f64 {
    let base = 1.0 + (g - 1.0) * t;
    if g > 1.0 && base <= 0.0 {
        // supremum attained at x = 0
        return -1.0 / g;
    }
    (base.powf(g / (g - 1.0)) - 1.0) / g
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn spec_strategy() -> impl Strategy<Value = DivergenceSpec> {
        prop_oneof![
            Just(DivergenceSpec::KLM),
            Just(DivergenceSpec::KL),
            Just(DivergenceSpec::CHISQM),
            Just(DivergenceSpec::CHISQ),
            Just(DivergenceSpec::HELLINGER),
            (-3.0f64..4.0)
                .prop_filter("avoid 0 and 1", |g| g.abs() > 1e-3 && (g - 1.0).abs() > 1e-3)
                .prop_map(|g| DivergenceSpec::new(g).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn conjugate_identity(spec in spec_strategy(), lx in -3.0f64..3.0) {
            let x = 10f64.powf(lx);
            let lhs = spec.phi_conj(spec.phi_prime(x).unwrap()).unwrap();
            let rhs = spec.conj_of_prime(x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{} {} {}", spec, lhs, rhs);
        }

        #[test]
        fn phi_nonnegative_and_zero_only_at_one(spec in spec_strategy(), lx in -3.0f64..3.0) {
            let x = 10f64.powf(lx);
            let v = spec.phi(x).unwrap();
            prop_assert!(v >= 0.0);
            if (x - 1.0).abs() > 1e-3 {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn phi_prime_increasing(spec in spec_strategy(), lx in -3.0f64..3.0, dl in 1e-3f64..0.5) {
            let a = 10f64.powf(lx);
            let b = 10f64.powf(lx + dl);
            prop_assert!(spec.phi_prime(b).unwrap() > spec.phi_prime(a).unwrap());
        }

        #[test]
        fn finite_difference_derivative(spec in spec_strategy(), lx in -1.0f64..1.0) {
            let x = 10f64.powf(lx);
            let err = |h: f64| {
                let fd = (spec.phi(x + h).unwrap() - spec.phi(x - h).unwrap()) / (2.0 * h);
                (spec.phi_prime(x).unwrap() - fd).abs()
            };
            // O(h²): shrinking h by 10 shrinks the error by roughly 100
            let e1 = err(1e-2);
            let e2 = err(1e-3);
            prop_assert!(e2 <= e1 / 50.0 + 1e-11, "{} {} {}", spec, e1, e2);
        }
    }
}
