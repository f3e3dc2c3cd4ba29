//! Utility functions applied to the discounted accumulated cost.

use serde::{Deserialize, Serialize};

use crate::error::{DimgError, Result};

/// A strictly increasing utility on `[0, ∞)`.
///
/// Convex members model a risk-averse decision maker (costs are minimized),
/// concave members a risk-seeking one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Utility {
    Identity,
    /// `(exp(λ s) − 1) / λ`, with `λ ≠ 0`.
    Exponential {
        lambda: f64,
    },
    /// `s^p`, with `p > 0`.
    Power {
        exponent: f64,
    },
}

impl Utility {
    /// Evaluate `U(s)`; negative arguments are rejected.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(DimgError::domain(format!(
                "utility argument must be a nonnegative real, got {s}"
            )));
        }
        Ok(self.eval_unchecked(s))
    }

    /// Evaluate without the sign check. Callers guarantee `s >= 0`.
    pub(crate) fn eval_unchecked(&self, s: f64) -> f64 {
        match *self {
            Utility::Identity => s,
            Utility::Exponential { lambda } => (lambda * s).exp_m1() / lambda,
            Utility::Power { exponent } => s.powf(exponent),
        }
    }

    /// `U⁻¹`, used to report certainty equivalents.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        let s = match *self {
            Utility::Identity => u,
            Utility::Exponential { lambda } => (lambda * u).ln_1p() / lambda,
            Utility::Power { exponent } => {
                if u < 0.0 {
                    f64::NAN
                } else {
                    u.powf(1.0 / exponent)
                }
            }
        };
        if s.is_finite() && s >= -1e-12 {
            Ok(s.max(0.0))
        } else {
            Err(DimgError::domain(format!("{u} is outside the range of the utility")))
        }
    }

    /// Parameter sanity: the map must be well defined and strictly increasing.
    pub fn check(&self) -> std::result::Result<(), String> {
        match *self {
            Utility::Identity => Ok(()),
            Utility::Exponential { lambda } => {
                if lambda.is_finite() && lambda != 0.0 {
                    Ok(())
                } else {
                    Err(format!(
                        "exponential curvature must be finite and nonzero, got {lambda}"
                    ))
                }
            }
            Utility::Power { exponent } => {
                if exponent.is_finite() && exponent > 0.0 {
                    Ok(())
                } else {
                    Err(format!("power exponent must be positive, got {exponent}"))
                }
            }
        }
    }
}

/// Free-function form of [`Utility::eval`].
pub fn utility_eval(u: &Utility, s: f64) -> Result<f64> {
    u.eval(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_exact() {
        assert_eq!(Utility::Identity.eval(0.0).unwrap(), 0.0);
        assert_eq!(Utility::Identity.eval(3.25).unwrap(), 3.25);
    }

    #[test]
    fn exponential_values() {
        let u = Utility::Exponential { lambda: 1.0 };
        assert_eq!(u.eval(0.0).unwrap(), 0.0);
        // e − 1 to 15 digits
        assert!((u.eval(1.0).unwrap() - 1.718_281_828_459_045).abs() < 1e-14);
    }

    #[test]
    fn exponential_small_curvature_approaches_identity() {
        let u = Utility::Exponential { lambda: 1e-9 };
        for s in [0.0, 0.5, 2.0, 7.0] {
            assert!((u.eval(s).unwrap() - s).abs() < 1e-7);
        }
    }

    #[test]
    fn negative_argument_is_domain_error() {
        assert!(matches!(Utility::Identity.eval(-1e-3), Err(DimgError::Domain(_))));
        assert!(Utility::Power { exponent: 2.0 }.eval(f64::NAN).is_err());
    }

    #[test]
    fn parameter_checks() {
        assert!(Utility::Exponential { lambda: 0.0 }.check().is_err());
        assert!(Utility::Power { exponent: -1.0 }.check().is_err());
        assert!(Utility::Power { exponent: 0.5 }.check().is_ok());
    }

    #[test]
    fn inverse_round_trips() {
        for u in [
            Utility::Identity,
            Utility::Exponential { lambda: -0.7 },
            Utility::Exponential { lambda: 1.3 },
            Utility::Power { exponent: 1.5 },
        ] {
            for s in [0.0, 0.3, 1.0, 4.0] {
                let back = u.inverse(u.eval(s).unwrap()).unwrap();
                assert!((back - s).abs() < 1e-12, "{u:?} {s} {back}");
            }
        }
    }

    fn any_utility() -> impl Strategy<Value = Utility> {
        prop_oneof![
            Just(Utility::Identity),
            (-2.0f64..2.0)
                .prop_filter("nonzero", |l| l.abs() > 1e-3)
                .prop_map(|lambda| Utility::Exponential { lambda }),
            (0.2f64..3.0).prop_map(|exponent| Utility::Power { exponent }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn strictly_increasing(u in any_utility(), s in 0.0f64..20.0, gap in 1e-6f64..5.0) {
            // Beyond λs ≈ −36 the exponential family saturates in floating point.
            if let Utility::Exponential { lambda } = u {
                prop_assume!(lambda * (s + gap) > -30.0);
            }
            prop_assert!(u.eval(s).unwrap() < u.eval(s + gap).unwrap());
        }
    }
}
