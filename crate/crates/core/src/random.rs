//! Random desk-scale instances for property tests and benchmarks.

use rand::Rng;

use crate::dm::Policy;
use crate::model::{Point, PomdpModel};
use crate::utility::Utility;

/// Size and parameter ranges of generated instances.
#[derive(Debug, Clone, Copy)]
pub struct RandomModelConfig {
    pub max_observable: usize,
    pub max_hidden: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    /// Probability that a kernel entry is forced to zero.
    pub zero_entry_prob: f64,
    pub max_cost: f64,
    pub random_utility: bool,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        RandomModelConfig {
            max_observable: 3,
            max_hidden: 3,
            max_actions: 2,
            max_horizon: 4,
            zero_entry_prob: 0.3,
            max_cost: 2.0,
            random_utility: true,
        }
    }
}

fn random_law<R: Rng + ?Sized>(rng: &mut R, n: usize, zero_prob: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < zero_prob {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        let k = rng.random_range(0..n);
        w[k] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// A valid model with sizes drawn uniformly up to the configured maxima,
/// `β ∈ [0.3, 0.95]`, `α ∈ [0.5, 1]`, costs uniform on `[0, max_cost]`,
/// random nonempty feasible sets and a configured `Q0X`.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomModelConfig) -> PomdpModel {
    let nx = rng.random_range(1..=cfg.max_observable);
    let ny = rng.random_range(1..=cfg.max_hidden);
    let na = rng.random_range(1..=cfg.max_actions);
    let horizon = rng.random_range(1..=cfg.max_horizon);
    let feasible_actions = (0..nx)
        .map(|_| {
            let mut d: Vec<usize> = (0..na).filter(|_| rng.random::<f64>() < 0.7).collect();
            if d.is_empty() {
                d.push(rng.random_range(0..na));
            }
            d
        })
        .collect();
    let mut kernel = Vec::with_capacity(nx * ny * na * nx * ny);
    for _ in 0..nx * ny * na {
        kernel.extend(random_law(rng, nx * ny, cfg.zero_entry_prob));
    }
    let costs = |rng: &mut R| -> Vec<f64> { (0..nx * ny * na).map(|_| rng.random::<f64>() * cfg.max_cost).collect() };
    let dm_cost = costs(rng);
    let im_cost = costs(rng);
    let utility = if cfg.random_utility {
        match rng.random_range(0..3) {
            0 => Utility::Identity,
            1 => {
                let mut lambda: f64 = rng.random_range(-1.0..1.0);
                if lambda.abs() < 0.05 {
                    lambda = 0.5;
                }
                Utility::Exponential { lambda }
            }
            _ => Utility::Power {
                exponent: rng.random_range(0.5..2.0),
            },
        }
    } else {
        Utility::Identity
    };
    PomdpModel {
        observable_states: Point::indexed("x", nx),
        hidden_states: Point::indexed("y", ny),
        actions: Point::indexed("a", na),
        feasible_actions,
        kernel,
        initial_hidden_law: random_law(rng, ny, cfg.zero_entry_prob),
        initial_observable_law: Some(random_law(rng, nx, cfg.zero_entry_prob)),
        dm_cost,
        im_cost,
        dm_discount: rng.random_range(0.3..0.95),
        im_discount: rng.random_range(0.5..1.0),
        horizon,
        utility,
    }
}

/// A history-dependent policy with uniformly drawn feasible actions.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, model: &PomdpModel) -> Policy {
    Policy::from_fn(model, |h| {
        let d = &model.feasible_actions[h.last_state()];
        d[rng.random_range(0..d.len())]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_models_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = random_model(&mut rng, &RandomModelConfig::default());
            let report = validate_model(&m);
            assert!(report.is_ok(), "{report}");
        }
    }
}
