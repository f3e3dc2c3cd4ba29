//! The two-state discrete example with a switching action.
//!
//! The hidden state `y ∈ {y¹, y²}` switches with probability equal to the
//! action `a ∈ (0, 1)`, and the observation is `x_{n+1} = y_n + ω_{n+1}` with
//! `ω ∈ {ω¹, ω²}` drawn with probabilities `τ` and `1 − τ`. The four
//! candidates `x^{i,j} = y^i + ω^j` are assumed distinct. Costs are
//! `c(y, a) = y² + a² + ĉ a y` and `r(y, a) = γ(y² + a² + r̂ a y)`.

use serde::{Deserialize, Serialize};

use crate::error::{DimgError, Result};
use crate::model::{validate_model, Point, PomdpModel};
use crate::utility::Utility;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteExample {
    pub y_values: [f64; 2],
    pub omega: [f64; 2],
    pub tau: f64,
    pub c_hat: f64,
    pub r_hat: f64,
    pub im_cost_weight: f64,
    pub initial_hidden_law: [f64; 2],
    pub dm_discount: f64,
    pub im_discount: f64,
    /// Interior grid points `k/(grid+1)`, `k = 1..=grid`, stand in for `(0, 1)`.
    pub grid: usize,
}

impl Default for DiscreteExample {
    fn default() -> Self {
        DiscreteExample {
            y_values: [-1.0, 1.0],
            omega: [-0.5, 0.5],
            tau: 0.6,
            c_hat: 1.0,
            r_hat: 1.5,
            im_cost_weight: 1.0,
            initial_hidden_law: [0.5, 0.5],
            dm_discount: 0.9,
            im_discount: 0.95,
            grid: 19,
        }
    }
}

/// Index of `x^{i,j}` in the observable space, `i, j ∈ {0, 1}`.
pub fn x_index(i: usize, j: usize) -> usize {
    2 * i + j
}

/// `φ_y(y' | y, a)`: stay with probability `1 − a`.
pub fn phi_y(y_next: usize, y: usize, a: f64) -> f64 {
    if y_next == y {
        1.0 - a
    } else {
        a
    }
}

/// `φ_x(x^{i,j} | y)`: `τ` for `j = 0`, `1 − τ` for `j = 1`, when `i = y`.
pub fn phi_x(x: usize, y: usize, tau: f64) -> f64 {
    let (i, j) = (x / 2, x % 2);
    match (i == y, j) {
        (true, 0) => tau,
        (true, _) => 1.0 - tau,
        _ => 0.0,
    }
}

/// `a_1*(x_1, a_0) = −ĉ (y¹𝔪¹ + y²𝔪²) / (2(𝔪¹ + 𝔪²))` with
/// `𝔪¹ = φ_x(x₁|y¹)(1−a₀)Q0^{y¹} + φ_x(x₁|y²) a₀ Q0^{y²}` and
/// `𝔪² = φ_x(x₁|y¹) a₀ Q0^{y¹} + φ_x(x₁|y²)(1−a₀) Q0^{y²}`.
pub fn discrete_example_policy(
    c_hat: f64,
    tau: f64,
    q0y: [f64; 2],
    y_values: [f64; 2],
    a0: f64,
    x1: usize,
) -> Result<f64> {
    let f1 = phi_x(x1, 0, tau);
    let f2 = phi_x(x1, 1, tau);
    let m1 = f1 * (1.0 - a0) * q0y[0] + f2 * a0 * q0y[1];
    let m2 = f1 * a0 * q0y[0] + f2 * (1.0 - a0) * q0y[1];
    if m1 + m2 <= 0.0 {
        return Err(DimgError::domain(format!(
            "observation {x1} has zero probability, the policy formula is undefined"
        )));
    }
    Ok(-c_hat * (y_values[0] * m1 + y_values[1] * m2) / (2.0 * (m1 + m2)))
}

impl DiscreteExample {
    pub fn action_values(&self) -> Vec<f64> {
        let step = 1.0 / (self.grid + 1) as f64;
        (1..=self.grid).map(|k| k as f64 * step).collect()
    }

    /// The example as a two-stage finite model; `Q0X` is uniform.
    pub fn build(&self) -> Result<PomdpModel> {
        if self.grid == 0 {
            return Err(DimgError::domain("action grid needs at least one point"));
        }
        let xs: Vec<Point> = (0..4)
            .map(|x| {
                let (i, j) = (x / 2, x % 2);
                Point::new(format!("x{}{}", i + 1, j + 1), Some(self.y_values[i] + self.omega[j]))
            })
            .collect();
        let mut distinct: Vec<f64> = xs.iter().filter_map(|p| p.value).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() != 4 {
            return Err(DimgError::domain("the four observation candidates must be distinct"));
        }
        let ys = vec![
            Point::new("y1", Some(self.y_values[0])),
            Point::new("y2", Some(self.y_values[1])),
        ];
        let actions: Vec<Point> = self
            .action_values()
            .into_iter()
            .map(|a| Point::new(format!("{a:.4}"), Some(a)))
            .collect();
        let na = actions.len();
        let mut kernel = Vec::with_capacity(4 * 2 * na * 8);
        let mut dm_cost = Vec::with_capacity(4 * 2 * na);
        let mut im_cost = Vec::with_capacity(4 * 2 * na);
        for _x in 0..4 {
            for y in 0..2 {
                let yv = self.y_values[y];
                for act in &actions {
                    let a = act.value.expect("grid actions carry values");
                    for x_next in 0..4 {
                        for y_next in 0..2 {
                            kernel.push(phi_y(y_next, y, a) * phi_x(x_next, y, self.tau));
                        }
                    }
                    dm_cost.push(yv * yv + a * a + self.c_hat * a * yv);
                    im_cost.push(self.im_cost_weight * (yv * yv + a * a + self.r_hat * a * yv));
                }
            }
        }
        let model = PomdpModel {
            observable_states: xs,
            hidden_states: ys,
            actions,
            feasible_actions: vec![(0..na).collect(); 4],
            kernel,
            initial_hidden_law: self.initial_hidden_law.to_vec(),
            initial_observable_law: Some(vec![0.25; 4]),
            dm_cost,
            im_cost,
            dm_discount: self.dm_discount,
            im_discount: self.im_discount,
            horizon: 2,
            utility: Utility::Identity,
        };
        let report = validate_model(&model);
        if !report.is_ok() {
            return Err(DimgError::InvalidModel(report));
        }
        Ok(model)
    }
}
