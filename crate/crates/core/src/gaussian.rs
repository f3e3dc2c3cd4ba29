//! The two-stage linear-Gaussian example in closed form.
//!
//! ```text
//! x_{n+1} = h y_n + ω_{n+1}
//! y_{n+1} = b̃ y_n + b̂ a_n + ε_{n+1},    ω, ε ~ N(0, 1) i.i.d.,  y_0 ~ N(0, 1)
//! c(y, a) = y² + a² + ĉ a y,   r(y, a) = y² + a² + r̂ a y
//! ```
//!
//! With `ι = ĉ b̃ h / (2(h² + 1))` the DM's stage-1 action is
//! `a₁* = −(ĉ b̂ / 2) a₀ − ι x₁`. Restricting the IM to jointly Gaussian
//! designs with the consistent Y-marginal leaves the stage problem
//!
//! ```text
//! min_{m, v > 0, |r| ≤ 1}  ι²(m² + v²) + K ι m + r̂ ι r v,   K = ĉ b̂ a₀ − r̂(b̃ y₀ + b̂ a₀)
//! ```
//!
//! solved by `m* = −K/(2ι)`, `r* = −sign(r̂ ι)`, `v* = |r̂ / (2ι)|`.

use serde::{Deserialize, Serialize};

use crate::error::{DimgError, Result};
use crate::quadrature::{golden_section, grid_refine_2d, StandardNormalRule};

/// Nodes per Gaussian dimension in every quadrature oracle.
pub const QUADRATURE_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianScenario {
    pub h: f64,
    pub b_tilde: f64,
    pub b_hat: f64,
    pub c_hat: f64,
    pub r_hat: f64,
    pub dm_discount: f64,
    pub a0: f64,
    pub y0: f64,
    pub x1: f64,
}

impl GaussianScenario {
    /// All coefficients one, `β = 0.9`, conditioning values `a₀ = 0.5`, `y₀ = 1`, `x₁ = 1`.
    pub fn unit() -> Self {
        GaussianScenario {
            h: 1.0,
            b_tilde: 1.0,
            b_hat: 1.0,
            c_hat: 1.0,
            r_hat: 1.0,
            dm_discount: 0.9,
            a0: 0.5,
            y0: 1.0,
            x1: 1.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = [
            self.h,
            self.b_tilde,
            self.b_hat,
            self.c_hat,
            self.r_hat,
            self.dm_discount,
            self.a0,
            self.y0,
            self.x1,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DimgError::domain("Gaussian scenario parameters must be finite"));
        }
        if !(self.c_hat > 0.0 && self.r_hat > 0.0) {
            return Err(DimgError::domain("cost couplings ĉ and r̂ must be positive"));
        }
        if !(self.dm_discount > 0.0 && self.dm_discount < 1.0) {
            return Err(DimgError::domain("β must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `K = ĉ b̂ a₀ − r̂ (b̃ y₀ + b̂ a₀)`.
    pub fn mean_coefficient(&self) -> f64 {
        self.c_hat * self.b_hat * self.a0 - self.r_hat * (self.b_tilde * self.y0 + self.b_hat * self.a0)
    }
}

pub fn iota(c_hat: f64, b_tilde: f64, h: f64) -> f64 {
    c_hat * b_tilde * h / (2.0 * (h * h + 1.0))
}

/// `a₁* = −(ĉ b̂ / 2) a₀ − ι x₁`.
pub fn dm_stage1_policy(s: &GaussianScenario) -> f64 {
    -(s.c_hat * s.b_hat / 2.0) * s.a0 - iota(s.c_hat, s.b_tilde, s.h) * s.x1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ImDesign {
    Optimal {
        mean: f64,
        std_dev: f64,
        correlation: f64,
        objective: f64,
    },
    /// `ι = 0`: the observation does not move the DM's action, so the stage
    /// objective ignores the design.
    NoLeverage,
}

/// `ι²(m² + v²) + K ι m + r̂ ι r v`.
pub fn stage_objective(s: &GaussianScenario, m: f64, v: f64, r: f64) -> f64 {
    let i = iota(s.c_hat, s.b_tilde, s.h);
    i * i * (m * m + v * v) + s.mean_coefficient() * i * m + s.r_hat * i * r * v
}

/// Closed-form optimal Gaussian design of stage 1.
pub fn im_stage1_design(s: &GaussianScenario) -> ImDesign {
    let i = iota(s.c_hat, s.b_tilde, s.h);
    if i == 0.0 {
        return ImDesign::NoLeverage;
    }
    let k = s.mean_coefficient();
    let mean = -k / (2.0 * i);
    let correlation = if s.r_hat * i > 0.0 { -1.0 } else { 1.0 };
    let std_dev = (s.r_hat / (2.0 * i)).abs();
    ImDesign::Optimal {
        mean,
        std_dev,
        correlation,
        objective: stage_objective(s, mean, std_dev, correlation),
    }
}

/// `CV = r̂ / |r̂ (b̃ y₀ + b̂ a₀) − ĉ b̂ a₀|`.
pub fn coefficient_of_variation(s: &GaussianScenario) -> Result<f64> {
    let den = s.mean_coefficient().abs();
    if den <= 1e-12 {
        return Err(DimgError::domain(
            "coefficient of variation is infinite: the optimal mean vanishes",
        ));
    }
    Ok(s.r_hat / den)
}

/// `(r̂, |r̂ − ĉ|, CV)` along a grid of `r̂` values, other parameters fixed.
pub fn cv_profile(s: &GaussianScenario, r_hats: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    r_hats
        .iter()
        .map(|&r| {
            let t = GaussianScenario { r_hat: r, ..*s };
            Ok((r, (r - s.c_hat).abs(), coefficient_of_variation(&t)?))
        })
        .collect()
}

/// `E[c(y₀, a₀) + β c(y₁, a₁) | x₁]` by quadrature over `y₀` (weighted by
/// the likelihood of `x₁`) and the transition noise of `y₁`.
pub fn expected_two_stage_cost(s: &GaussianScenario, a1: f64, rule: &StandardNormalRule) -> f64 {
    let c = |y: f64, a: f64| y * y + a * a + s.c_hat * a * y;
    let likelihood = |y0: f64| (-(s.x1 - s.h * y0).powi(2) / 2.0).exp();
    let norm = rule.expect(likelihood);
    let joint = rule.expect(|y0| {
        let inner = rule.expect(|e| {
            let y1 = s.b_tilde * y0 + s.b_hat * s.a0 + e;
            c(y0, s.a0) + s.dm_discount * c(y1, a1)
        });
        likelihood(y0) * inner
    });
    joint / norm
}

/// Minimizer of [`expected_two_stage_cost`] by golden-section search.
pub fn policy_oracle(s: &GaussianScenario) -> f64 {
    let rule = StandardNormalRule::new(QUADRATURE_NODES);
    golden_section(|a| expected_two_stage_cost(s, a, &rule), -100.0, 100.0, 1e-9)
}

/// Minimizer `(m, v)` of the stage objective by grid search and refinement,
/// with the correlation at its better extreme.
pub fn design_oracle(s: &GaussianScenario) -> (f64, f64) {
    let f = |m: f64, v: f64| stage_objective(s, m, v, -1.0).min(stage_objective(s, m, v, 1.0));
    grid_refine_2d(f, (-200.0, 200.0), (1e-9, 200.0), 201, 1e-7)
}

/// Differences between the closed forms and their numerical oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleGaps {
    pub policy: f64,
    pub design_mean: f64,
    pub design_std_dev: f64,
}

/// CLI-facing record of the example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianRecord {
    pub iota: f64,
    pub a1: f64,
    pub design: ImDesign,
    pub cv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_gaps: Option<OracleGaps>,
}

pub fn gaussian_record(s: &GaussianScenario, verify: bool) -> Result<GaussianRecord> {
    s.check()?;
    let design = im_stage1_design(s);
    let cv = match design {
        ImDesign::Optimal { .. } => coefficient_of_variation(s).ok(),
        ImDesign::NoLeverage => None,
    };
    let a1 = dm_stage1_policy(s);
    let oracle_gaps = if verify {
        let policy = (policy_oracle(s) - a1).abs();
        let (design_mean, design_std_dev) = match design {
            ImDesign::Optimal { mean, std_dev, .. } => {
                let (m, v) = design_oracle(s);
                ((m - mean).abs(), (v - std_dev).abs())
            }
            ImDesign::NoLeverage => (0.0, 0.0),
        };
        Some(OracleGaps {
            policy,
            design_mean,
            design_std_dev,
        })
    } else {
        None
    };
    Ok(GaussianRecord {
        iota: iota(s.c_hat, s.b_tilde, s.h),
        a1,
        design,
        cv,
        oracle_gaps,
    })
}
