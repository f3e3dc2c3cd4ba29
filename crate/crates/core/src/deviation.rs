//! The impact of manipulation on the decision maker.
//!
//! The DM keeps its policy (it is unaware of the manipulation) while the
//! state process follows the designed laws. This module evaluates the
//! resulting objective `J̃` exactly along two summation orders, measures the
//! per-stage distortions `ε_n`, evaluates the performance-deviation bound
//!
//! ```text
//! |J̃ − J| ≤ ε_0 U(c̄ (1−β^N)/(1−β)) + Σ_{k=1}^{N−1} ε_k U(c̄ (1−β^k)/(1−β))
//! ```
//!
//! and estimates both objectives by seeded Monte-Carlo simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::{hidden_marginal, reference_joint, ManipulationPlan};
use crate::dm::Policy;
use crate::error::{DimgError, Result};
use crate::exec::{self, Execution};
use crate::history::{JointHistory, ObsHistory};
use crate::lp;
use crate::model::{DistributionXY, PomdpModel};
use crate::utility::Utility;

/// Tolerance added to the bound when checking it.
pub const BOUND_TOL: f64 = 1e-7;

/// Histories reached with probability at most this are left out of `ε_n`.
pub const REACH_TOL: f64 = 1e-12;

/// Trajectories per Monte-Carlo batch; each batch owns one RNG stream.
pub const BATCH_SIZE: usize = 4096;

/// The law of `(X_n, Y_n)` at `jh` under the plan, or the truth without one.
fn law_at(model: &PomdpModel, plan: Option<&ManipulationPlan>, jh: &JointHistory) -> Result<DistributionXY> {
    match plan {
        Some(p) => p.joint_at(model, jh),
        None => {
            reference_joint(model, jh).ok_or_else(|| DimgError::domain("the model has no initial observable law Q0X"))
        }
    }
}

/// `E[U(Σ_{k<N} β^k c(X_k, Y_k, A_k))]` by walking every joint path.
///
/// Without a plan this is `J_{Nπ} = Σ_x Q0X(x) J_{Nπ}(x)`.
pub fn evaluate_dm_objective(model: &PomdpModel, policy: &Policy, plan: Option<&ManipulationPlan>) -> Result<f64> {
    model.require_initial_observable()?;
    fn walk(
        model: &PomdpModel,
        policy: &Policy,
        plan: Option<&ManipulationPlan>,
        jh: &JointHistory,
        prob: f64,
        cost: f64,
    ) -> Result<f64> {
        let n = jh.len();
        let z = model.dm_discount.powi(n as i32);
        let p = law_at(model, plan, jh)?;
        let mut total = 0.0;
        for x in 0..model.nx() {
            let a = policy.action(&jh.observable_with(x));
            for y in 0..model.ny() {
                let pxy = p.get(x, y);
                if pxy <= 0.0 {
                    continue;
                }
                let s = cost + z * model.c(x, y, a);
                total += if n + 1 == model.horizon {
                    prob * pxy * model.utility.eval_unchecked(s)
                } else {
                    walk(model, policy, plan, &jh.extended(x, y, a), prob * pxy, s)?
                };
            }
        }
        Ok(total)
    }
    walk(model, policy, plan, &JointHistory::empty(), 1.0, 0.0)
}

/// Atom of the manipulated information state: hidden path, cost, weight.
#[derive(Debug, Clone)]
struct PathAtom {
    hidden: Vec<usize>,
    cost: f64,
    weight: f64,
}

fn merge_path_atoms(mut atoms: Vec<PathAtom>) -> Vec<PathAtom> {
    atoms.retain(|a| a.weight > 0.0);
    atoms.sort_by(|l, r| l.hidden.cmp(&r.hidden).then(l.cost.total_cmp(&r.cost)));
    let mut out: Vec<PathAtom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.last_mut() {
            Some(prev) if prev.hidden == a.hidden && a.cost - prev.cost <= 1e-12 => {
                prev.weight += a.weight;
            }
            _ => out.push(a),
        }
    }
    out
}

/// The same objective through manipulated information states.
///
/// Observable histories are expanded forward; each carries an unnormalized
/// measure over (hidden path, accumulated cost) pushed through the designed
/// laws. The hidden path is kept because designs condition on it. The last
/// step moves with the true kernel, and the result is `Σ U(s) w` over all
/// terminal states.
pub fn evaluate_dm_objective_info_state(
    model: &PomdpModel,
    policy: &Policy,
    plan: Option<&ManipulationPlan>,
) -> Result<f64> {
    model.require_initial_observable()?;
    let p0 = law_at(model, plan, &JointHistory::empty())?;
    let mut layer: Vec<(ObsHistory, Vec<PathAtom>)> = (0..model.nx())
        .map(|x| {
            let atoms = (0..model.ny())
                .map(|y| PathAtom {
                    hidden: vec![y],
                    cost: 0.0,
                    weight: p0.get(x, y),
                })
                .collect();
            (ObsHistory::initial(x), merge_path_atoms(atoms))
        })
        .filter(|(_, atoms)| !atoms.is_empty())
        .collect();
    for n in 0..model.horizon {
        let z = model.dm_discount.powi(n as i32);
        let last = n + 1 == model.horizon;
        let mut next = Vec::new();
        for (h, atoms) in &layer {
            let x = h.last_state();
            let a = policy.action(h);
            let mut laws = Vec::with_capacity(atoms.len());
            for atom in atoms {
                let y = atom.hidden[n];
                let law = if last {
                    model.kernel_distribution(x, y, a)
                } else {
                    let jh = JointHistory {
                        states: h.states.clone(),
                        hidden: atom.hidden.clone(),
                        actions: h.actions.iter().copied().chain([a]).collect(),
                    };
                    law_at(model, plan, &jh)?
                };
                laws.push(law);
            }
            for x_next in 0..model.nx() {
                let mut raw = Vec::new();
                for (atom, law) in atoms.iter().zip(&laws) {
                    let y = atom.hidden[n];
                    let s = atom.cost + z * model.c(x, y, a);
                    for y_next in 0..model.ny() {
                        let w = atom.weight * law.get(x_next, y_next);
                        if w > 0.0 {
                            let mut hidden = atom.hidden.clone();
                            hidden.push(y_next);
                            raw.push(PathAtom {
                                hidden,
                                cost: s,
                                weight: w,
                            });
                        }
                    }
                }
                let merged = merge_path_atoms(raw);
                if !merged.is_empty() {
                    next.push((h.extended(a, x_next), merged));
                }
            }
        }
        layer = next;
    }
    Ok(layer
        .iter()
        .flat_map(|(_, atoms)| atoms)
        .map(|a| model.utility.eval_unchecked(a.cost) * a.weight)
        .sum())
}

/// `ε_0, …, ε_{N−1}` in the L1 convention.
///
/// `ε_0 = Σ|P_0 − Q0X ⊗ Q0Y|`; for `n ≥ 1`, `ε_n` is the largest L1 distance
/// between `P_n(jh)` and `Q(·,·| last tuple of jh)` over histories reached
/// with probability above [`REACH_TOL`] under the plan.
pub fn epsilon_profile(model: &PomdpModel, plan: &ManipulationPlan) -> Result<Vec<f64>> {
    let q0 = model
        .initial_joint()
        .ok_or_else(|| DimgError::domain("the model has no initial observable law Q0X"))?;
    let ex = plan.to_ex_ante(model)?;
    let reach = |jh: &JointHistory| {
        let mut r = 1.0;
        for k in 0..jh.len() {
            let prefix = JointHistory {
                states: jh.states[..k].to_vec(),
                hidden: jh.hidden[..k].to_vec(),
                actions: jh.actions[..k].to_vec(),
            };
            match ex.stages[k].get(&prefix) {
                Some(p) => r *= p.get(jh.states[k], jh.hidden[k]),
                None => return 0.0,
            }
        }
        r
    };
    let mut eps = vec![0.0; ex.stages.len()];
    for (n, stage) in ex.stages.iter().enumerate() {
        for (jh, p) in stage {
            let q = match n {
                0 => q0.clone(),
                _ if reach(jh) > REACH_TOL => reference_joint(model, jh).expect("stage ≥ 1"),
                _ => continue,
            };
            eps[n] = f64::max(eps[n], lp::l1(&p.p, &q.p));
        }
    }
    Ok(eps)
}

/// Right-hand side of the performance-deviation bound.
pub fn bound_rhs(u: &Utility, c_bar: f64, beta: f64, horizon: usize, eps: &[f64]) -> Result<f64> {
    if eps.len() != horizon {
        return Err(DimgError::domain(format!(
            "distortion profile has {} entries, horizon is {horizon}",
            eps.len()
        )));
    }
    let coef = |k: usize| u.eval(c_bar * (1.0 - beta.powi(k as i32)) / (1.0 - beta));
    let mut total = eps[0] * coef(horizon)?;
    for (k, e) in eps.iter().enumerate().skip(1) {
        total += e * coef(k)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSection {
    pub samples: usize,
    pub seed: u64,
    pub j_true_mean: f64,
    pub j_true_std_error: f64,
    pub j_manipulated_mean: f64,
    pub j_manipulated_std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub j_true: f64,
    pub j_manipulated: f64,
    pub deviation: f64,
    pub epsilon: Vec<f64>,
    pub c_bar: f64,
    pub bound_rhs: f64,
    pub slack: f64,
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSection>,
}

/// Exact evaluation of both sides of the deviation bound.
pub fn check_bound(model: &PomdpModel, policy: &Policy, plan: &ManipulationPlan) -> Result<DeviationReport> {
    let j_true = evaluate_dm_objective(model, policy, None)?;
    let j_manipulated = evaluate_dm_objective(model, policy, Some(plan))?;
    let epsilon = epsilon_profile(model, plan)?;
    let c_bar = model.max_dm_cost();
    let rhs = bound_rhs(&model.utility, c_bar, model.dm_discount, model.horizon, &epsilon)?;
    let deviation = (j_manipulated - j_true).abs();
    let slack = rhs - deviation;
    Ok(DeviationReport {
        j_true,
        j_manipulated,
        deviation,
        epsilon,
        c_bar,
        bound_rhs: rhs,
        slack,
        holds: slack >= -BOUND_TOL,
        monte_carlo: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Persistency {
    Achieved { horizon: usize },
    NotAchievable { cap: usize },
}

/// Least `N` with `ε̄ Σ_{j=1}^{N} U(c̄ (1−β^j)/(1−β)) ≥ goal`.
pub fn minimal_persistency(
    u: &Utility,
    c_bar: f64,
    beta: f64,
    eps_bar: f64,
    goal: f64,
    cap: usize,
) -> Result<Persistency> {
    if !(eps_bar > 0.0 && goal > 0.0) {
        return Err(DimgError::domain("distortion budget and goal must be positive"));
    }
    if !(beta > 0.0 && beta < 1.0) || !(c_bar >= 0.0) {
        return Err(DimgError::domain("need 0 < β < 1 and c̄ ≥ 0"));
    }
    let mut sum = 0.0;
    for n in 1..=cap {
        sum += u.eval(c_bar * (1.0 - beta.powi(n as i32)) / (1.0 - beta))?;
        if eps_bar * sum >= goal {
            return Ok(Persistency::Achieved { horizon: n });
        }
    }
    Ok(Persistency::NotAchievable { cap })
}

/// One simulated stage, for CSV export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub trajectory: usize,
    pub stage: usize,
    pub x: usize,
    pub y: usize,
    pub a: usize,
    pub c: f64,
    pub s: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub samples: usize,
    pub seed: u64,
    pub mean: f64,
    pub std_error: f64,
    pub trajectories: Vec<TrajectoryRow>,
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            if u < p {
                return i;
            }
            u -= p;
            last = i;
        }
    }
    last
}

/// Draw `(x_n, y_n)` at `jh`.
fn sample_pair<R: Rng + ?Sized>(
    model: &PomdpModel,
    plan: Option<&ManipulationPlan>,
    jh: &JointHistory,
    rng: &mut R,
) -> Result<(usize, usize)> {
    match plan {
        Some(ManipulationPlan::Interim(p)) => {
            let y = sample_index(rng, &hidden_marginal(model, jh));
            let rows = p
                .stages
                .get(jh.len())
                .and_then(|s| s.get(jh))
                .ok_or_else(|| DimgError::domain(format!("plan undefined at history [{}]", jh.key())))?;
            Ok((sample_index(rng, &rows[y]), y))
        }
        Some(ManipulationPlan::ExAnte(_)) => {
            let d = law_at(model, plan, jh)?;
            let i = sample_index(rng, &d.p);
            Ok((i / d.ny, i % d.ny))
        }
        None => match jh.last() {
            None => {
                let q0x = model.require_initial_observable()?;
                Ok((sample_index(rng, q0x), sample_index(rng, &model.initial_hidden_law)))
            }
            Some((x, y, a)) => {
                let i = sample_index(rng, model.kernel_row(x, y, a));
                Ok((i / model.ny(), i % model.ny()))
            }
        },
    }
}

/// Seeded Monte-Carlo estimate of `E[U(S_N)]`.
///
/// Trajectories are drawn in batches of [`BATCH_SIZE`]; batch `b` uses the
/// ChaCha8 stream `b` of the root seed, so sequential and parallel runs
/// produce identical numbers. The first `keep` trajectories are returned.
pub fn simulate_trajectories(
    model: &PomdpModel,
    policy: &Policy,
    plan: Option<&ManipulationPlan>,
    count: usize,
    seed: u64,
    keep: usize,
    exec: Execution,
) -> Result<SimulationResult> {
    if count == 0 {
        return Err(DimgError::domain("sample count must be at least 1"));
    }
    model.require_initial_observable()?;
    let batches: Vec<usize> = (0..count.div_ceil(BATCH_SIZE)).collect();
    let results = exec::try_map(exec, &batches, |&b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let start = b * BATCH_SIZE;
        let end = (start + BATCH_SIZE).min(count);
        let mut values = Vec::with_capacity(end - start);
        let mut rows = Vec::new();
        for t in start..end {
            let mut jh = JointHistory::empty();
            let mut s = 0.0;
            let mut z = 1.0;
            for n in 0..model.horizon {
                let (x, y) = sample_pair(model, plan, &jh, &mut rng)?;
                let a = policy.action(&jh.observable_with(x));
                let c = model.c(x, y, a);
                s += z * c;
                z *= model.dm_discount;
                if t < keep {
                    rows.push(TrajectoryRow {
                        trajectory: t,
                        stage: n,
                        x,
                        y,
                        a,
                        c,
                        s,
                    });
                }
                jh = jh.extended(x, y, a);
            }
            values.push(model.utility.eval_unchecked(s));
        }
        Ok::<_, DimgError>((values, rows))
    })?;
    let mut values = Vec::with_capacity(count);
    let mut trajectories = Vec::new();
    for (v, rows) in results {
        values.extend(v);
        trajectories.extend(rows);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(SimulationResult {
        samples: count,
        seed,
        mean,
        std_error: (var / n).sqrt(),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        let u = Utility::Identity;
        assert_eq!(bound_rhs(&u, 1.0, 0.5, 2, &[0.0, 0.0]).unwrap(), 0.0);
        let v = bound_rhs(&u, 1.0, 0.5, 2, &[0.1, 0.2]).unwrap();
        assert!((v - 0.35).abs() < 1e-15);
        assert!(bound_rhs(&u, 1.0, 0.5, 3, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn persistency_examples() {
        let u = Utility::Identity;
        assert_eq!(
            minimal_persistency(&u, 1.0, 0.5, 0.1, 0.3, 100).unwrap(),
            Persistency::Achieved { horizon: 3 }
        );
        assert_eq!(
            minimal_persistency(&u, 1.0, 0.5, 0.1, 0.1, 100).unwrap(),
            Persistency::Achieved { horizon: 1 }
        );
        // partial sums are bounded by ε̄ c̄ N/(1−β), so a huge goal fails
        assert_eq!(
            minimal_persistency(&u, 1.0, 0.5, 0.1, 1e6, 50).unwrap(),
            Persistency::NotAchievable { cap: 50 }
        );
        assert!(minimal_persistency(&u, 1.0, 0.5, 0.0, 1.0, 5).is_err());
    }

    #[test]
    fn sampling_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let i = sample_index(&mut rng, &[0.0, 0.3, 0.0, 0.7, 0.0]);
            assert!(i == 1 || i == 3);
        }
    }
}
