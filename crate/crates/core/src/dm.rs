//! The decision maker's risk-sensitive POMDP, solved by backward induction
//! on the information-state MDP.
//!
//! Nodes of the search tree are observable histories `h_n` together with the
//! unnormalized state `μ_n(·|h_n)` and the discount weight `z = β^n`. The
//! tree is built forward (only histories whose information state is nonempty
//! are kept), then valued backward:
//!
//! ```text
//! V_0(x, μ, z)     = Σ_{(y,s)} U(s) μ(y, s)
//! V_{k+1}(x, μ, z) = min_{a ∈ D(x)} Σ_{x'} V_k(x', Ψ(x, a, x', μ, z), β z)
//! ```

use std::collections::BTreeMap;

use crate::error::{DimgError, Result};
use crate::exec::{self, Execution};
use crate::history::ObsHistory;
use crate::info_state::{update_unchecked, InformationState};
use crate::model::PomdpModel;
use crate::utility::Utility;

/// Default cap on the number of history nodes in the search tree.
pub const DEFAULT_HISTORY_CAP: usize = 2_000_000;

/// Relative tolerance under which two backed-up values count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// A deterministic history-dependent policy `(g_0, …, g_{N−1})`.
///
/// Histories missing from the table (those the DM considers impossible)
/// fall back to the lowest feasible action of the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    stages: Vec<BTreeMap<ObsHistory, usize>>,
    fallback: Vec<usize>,
}

impl Policy {
    pub fn new(model: &PomdpModel, stages: Vec<BTreeMap<ObsHistory, usize>>) -> Self {
        Policy {
            stages,
            fallback: model.feasible_actions.iter().map(|d| d[0]).collect(),
        }
    }

    /// Tabulate `f` on every feasible observable history of stages `0..N`.
    pub fn from_fn(model: &PomdpModel, mut f: impl FnMut(&ObsHistory) -> usize) -> Self {
        let mut stages = Vec::with_capacity(model.horizon);
        let mut layer: Vec<ObsHistory> = (0..model.nx()).map(ObsHistory::initial).collect();
        for n in 0..model.horizon {
            let mut table = BTreeMap::new();
            let mut next = Vec::new();
            for h in layer {
                let x = h.last_state();
                let a = f(&h);
                debug_assert!(model.is_feasible(x, a));
                if n + 1 < model.horizon {
                    for &b in &model.feasible_actions[x] {
                        for x_next in 0..model.nx() {
                            next.push(h.extended(b, x_next));
                        }
                    }
                }
                table.insert(h, a);
            }
            stages.push(table);
            layer = next;
        }
        Policy::new(model, stages)
    }

    /// The prescribed action at `h`, if tabulated.
    pub fn lookup(&self, h: &ObsHistory) -> Option<usize> {
        self.stages.get(h.stage())?.get(h).copied()
    }

    /// `g_n(h_n)`, falling back to the lowest feasible action.
    pub fn action(&self, h: &ObsHistory) -> usize {
        self.lookup(h).unwrap_or(self.fallback[h.last_state()])
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// All tabulated `(history, action)` pairs, stage by stage.
    pub fn entries(&self) -> impl Iterator<Item = (&ObsHistory, usize)> {
        self.stages.iter().flat_map(|t| t.iter().map(|(h, &a)| (h, a)))
    }

    pub fn stage(&self, n: usize) -> &BTreeMap<ObsHistory, usize> {
        &self.stages[n]
    }
}

/// `V_{N−n}` at every node of stage `n`, keyed by the generating history.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub stages: Vec<BTreeMap<ObsHistory, f64>>,
}

impl ValueTable {
    pub fn value(&self, h: &ObsHistory) -> Option<f64> {
        self.stages.get(h.stage())?.get(h).copied()
    }
}

#[derive(Debug, Clone)]
pub struct DmSolution {
    pub policy: Policy,
    pub values: ValueTable,
    /// `J_N(x) = V_N(x, Q0Y ⊗ δ_0, 1)` per initial observable state.
    pub initial_values: Vec<f64>,
}

impl DmSolution {
    /// `Σ_x Q0X(x) J_N(x)`, when the observable prior is configured.
    pub fn expected_value(&self, model: &PomdpModel) -> Result<f64> {
        let q0x = model.require_initial_observable()?;
        Ok(q0x.iter().zip(&self.initial_values).map(|(p, v)| p * v).sum())
    }
}

/// `V_0(μ) = Σ U(s) w`; zero for the empty state.
pub fn terminal_value(u: &Utility, mu: &InformationState) -> f64 {
    mu.atoms()
        .iter()
        .map(|a| u.eval_unchecked(a.cost.max(0.0)) * a.weight)
        .sum()
}

/// Index of the smallest value, ties resolved towards the earliest entry.
fn argmin(values: impl IntoIterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (a, v) in values {
        match best {
            Some((_, b)) if v >= b - TIE_TOL * b.abs().max(1.0) => {}
            _ => best = Some((a, v)),
        }
    }
    best
}

/// One Bellman backup at history `h` with state `mu` and weight `z`.
///
/// `value_next(h', μ', z')` evaluates the continuation at each successor.
/// Returns the minimal value and the minimizing action. An empty state is
/// worth zero and gets the lowest feasible action.
pub fn bellman_backup(
    model: &PomdpModel,
    h: &ObsHistory,
    mu: &InformationState,
    z: f64,
    mut value_next: impl FnMut(&ObsHistory, &InformationState, f64) -> f64,
) -> Result<(f64, usize)> {
    let x = h.last_state();
    let feasible = model
        .feasible_actions
        .get(x)
        .filter(|d| !d.is_empty())
        .ok_or_else(|| DimgError::domain(format!("no feasible action in observable state {x}")))?;
    if mu.is_empty() {
        return Ok((0.0, feasible[0]));
    }
    let z_next = z * model.dm_discount;
    let mut scored = Vec::with_capacity(feasible.len());
    for &a in feasible {
        let mut total = 0.0;
        for x_next in 0..model.nx() {
            let child = update_unchecked(model, x, a, x_next, mu, z);
            if !child.is_empty() {
                total += value_next(&h.extended(a, x_next), &child, z_next);
            }
        }
        scored.push((a, total));
    }
    let (a, v) = argmin(scored).expect("nonempty feasible set");
    Ok((v, a))
}

struct Node {
    history: ObsHistory,
    mu: InformationState,
    /// Per feasible action, the indices of nonempty children in the next layer.
    children: Vec<(usize, Vec<usize>)>,
}

/// Exact backward induction over every history with a nonempty state.
pub fn solve(model: &PomdpModel, cap: usize, exec: Execution) -> Result<DmSolution> {
    let horizon = model.horizon;
    let mut layers: Vec<Vec<Node>> = Vec::with_capacity(horizon + 1);
    let init = InformationState::initial(model);
    layers.push(
        (0..model.nx())
            .map(|x| Node {
                history: ObsHistory::initial(x),
                mu: init.clone(),
                children: Vec::new(),
            })
            .collect(),
    );
    let mut total = model.nx();
    let mut z = 1.0;
    for _ in 0..horizon {
        let layer = layers.last_mut().expect("nonempty");
        let expansions: Vec<Vec<(usize, Vec<(usize, InformationState)>)>> = exec::map(exec, layer, |node| {
            let x = node.history.last_state();
            model.feasible_actions[x]
                .iter()
                .map(|&a| {
                    let kids = (0..model.nx())
                        .filter_map(|x_next| {
                            let child = update_unchecked(model, x, a, x_next, &node.mu, z);
                            (!child.is_empty()).then_some((x_next, child))
                        })
                        .collect();
                    (a, kids)
                })
                .collect()
        });
        let mut next = Vec::new();
        for (node, expansion) in layer.iter_mut().zip(expansions) {
            for (a, kids) in expansion {
                let mut idx = Vec::with_capacity(kids.len());
                for (x_next, mu) in kids {
                    idx.push(next.len());
                    next.push(Node {
                        history: node.history.extended(a, x_next),
                        mu,
                        children: Vec::new(),
                    });
                }
                node.children.push((a, idx));
            }
        }
        total += next.len();
        if total > cap {
            return Err(DimgError::Resource {
                what: format!("{total} decision-maker history nodes"),
                cap,
            });
        }
        layers.push(next);
        z *= model.dm_discount;
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); horizon + 1];
    values[horizon] = exec::map(exec, &layers[horizon], |n| terminal_value(&model.utility, &n.mu));
    let mut policy_stages = vec![BTreeMap::new(); horizon];
    for n in (0..horizon).rev() {
        let next_values = &values[n + 1];
        let backed: Vec<(f64, usize)> = exec::map(exec, &layers[n], |node| {
            let scored = node
                .children
                .iter()
                .map(|(a, idx)| (*a, idx.iter().map(|&i| next_values[i]).sum::<f64>()));
            let (a, v) = argmin(scored).expect("nonempty feasible set");
            (v, a)
        });
        for (node, &(_, a)) in layers[n].iter().zip(&backed) {
            policy_stages[n].insert(node.history.clone(), a);
        }
        values[n] = backed.into_iter().map(|(v, _)| v).collect();
    }

    let table = ValueTable {
        stages: layers
            .iter()
            .zip(&values)
            .map(|(layer, vals)| {
                layer
                    .iter()
                    .zip(vals)
                    .map(|(node, &v)| (node.history.clone(), v))
                    .collect()
            })
            .collect(),
    };
    Ok(DmSolution {
        policy: Policy::new(model, policy_stages),
        initial_values: values[0].clone(),
        values: table,
    })
}

/// `V_{Nπ}` by chaining the fixed-policy operators `T_f`.
fn chained_value(model: &PomdpModel, policy: &Policy, h: &ObsHistory, mu: &InformationState, z: f64) -> f64 {
    if mu.is_empty() {
        return 0.0;
    }
    if h.stage() == model.horizon {
        return terminal_value(&model.utility, mu);
    }
    let x = h.last_state();
    let a = policy.action(h);
    (0..model.nx())
        .map(|x_next| {
            let child = update_unchecked(model, x, a, x_next, mu, z);
            chained_value(model, policy, &h.extended(a, x_next), &child, z * model.dm_discount)
        })
        .sum()
}

/// `E[U(Σ β^k c)]` by walking every joint path `(x_k, y_k)` directly.
fn path_value(model: &PomdpModel, policy: &Policy, h: &ObsHistory, y: usize, prob: f64, cost: f64, z: f64) -> f64 {
    if h.stage() == model.horizon {
        return prob * model.utility.eval_unchecked(cost);
    }
    let x = h.last_state();
    let a = policy.action(h);
    let s = cost + z * model.c(x, y, a);
    let mut total = 0.0;
    for x_next in 0..model.nx() {
        let hn = h.extended(a, x_next);
        for y_next in 0..model.ny() {
            let q = model.q(x, y, a, x_next, y_next);
            if q > 0.0 {
                total += path_value(model, policy, &hn, y_next, prob * q, s, z * model.dm_discount);
            }
        }
    }
    total
}

/// Cost-iteration identity per initial state: `(chained T_f value, direct
/// path expectation)`.
pub fn cost_iteration_check(model: &PomdpModel, policy: &Policy) -> Vec<(f64, f64)> {
    let init = InformationState::initial(model);
    (0..model.nx())
        .map(|x| {
            let h = ObsHistory::initial(x);
            let lhs = chained_value(model, policy, &h, &init, 1.0);
            let rhs = model
                .initial_hidden_law
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(y, &p)| path_value(model, policy, &h, y, p, 0.0, 1.0))
                .sum();
            (lhs, rhs)
        })
        .collect()
}

/// `J_{Nπ}(x)` for a fixed policy, per initial state.
pub fn policy_value(model: &PomdpModel, policy: &Policy) -> Vec<f64> {
    let init = InformationState::initial(model);
    (0..model.nx())
        .map(|x| chained_value(model, policy, &ObsHistory::initial(x), &init, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info_state::Atom;
    use crate::model::Point;

    fn constant_cost_model(kappa: f64, beta: f64, horizon: usize) -> PomdpModel {
        PomdpModel {
            observable_states: Point::indexed("x", 2),
            hidden_states: Point::indexed("y", 2),
            actions: Point::indexed("a", 2),
            feasible_actions: vec![vec![0, 1], vec![0, 1]],
            kernel: (0..32).map(|i| if i % 4 == 0 { 0.4 } else { 0.2 }).collect(),
            initial_hidden_law: vec![0.5, 0.5],
            initial_observable_law: Some(vec![0.5, 0.5]),
            dm_cost: vec![kappa; 8],
            im_cost: vec![0.0; 8],
            dm_discount: beta,
            im_discount: 1.0,
            horizon,
            utility: Utility::Identity,
        }
    }

    #[test]
    fn terminal_values() {
        let mu = InformationState::from_atoms([
            Atom {
                hidden: 0,
                cost: 2.0,
                weight: 0.5,
            },
            Atom {
                hidden: 1,
                cost: 4.0,
                weight: 0.25,
            },
        ]);
        assert!((terminal_value(&Utility::Identity, &mu) - 2.0).abs() < 1e-15);
        assert_eq!(terminal_value(&Utility::Identity, &InformationState::empty()), 0.0);
        let one = InformationState::from_atoms([Atom {
            hidden: 0,
            cost: 1.0,
            weight: 1.0,
        }]);
        let e = terminal_value(&Utility::Exponential { lambda: 1.0 }, &one);
        assert!((e - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn geometric_value_under_constant_cost() {
        let m = constant_cost_model(1.5, 0.7, 3);
        let sol = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap();
        let expect = 1.5 * (1.0 - 0.7f64.powi(3)) / 0.3;
        for v in &sol.initial_values {
            assert!((v - expect).abs() < 1e-12);
        }
        for (l, r) in cost_iteration_check(&m, &sol.policy) {
            assert!((l - expect).abs() < 1e-12 && (r - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_action_cost_picks_zero() {
        let mut m = constant_cost_model(0.0, 0.5, 1);
        m.actions = vec![
            Point::new("0", Some(0.0)),
            Point::new("0.5", Some(0.5)),
            Point::new("1", Some(1.0)),
        ];
        m.feasible_actions = vec![vec![0, 1, 2], vec![0, 1, 2]];
        m.kernel = vec![0.25; 2 * 2 * 3 * 4];
        m.dm_cost = (0..12).map(|i| [0.0, 0.25, 1.0][i % 3]).collect();
        m.im_cost = vec![0.0; 12];
        let sol = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap();
        assert_eq!(sol.policy.action(&ObsHistory::initial(0)), 0);
    }

    #[test]
    fn empty_state_backup() {
        let m = constant_cost_model(1.0, 0.5, 2);
        let (v, a) = bellman_backup(
            &m,
            &ObsHistory::initial(1),
            &InformationState::empty(),
            1.0,
            |_, _, _| 7.0,
        )
        .unwrap();
        assert_eq!((v, a), (0.0, 0));
    }

    #[test]
    fn cap_is_enforced() {
        let m = constant_cost_model(1.0, 0.5, 3);
        assert!(matches!(
            solve(&m, 10, Execution::Sequential),
            Err(DimgError::Resource { cap: 10, .. })
        ));
    }

    #[test]
    fn single_stage_expectation() {
        let mut m = constant_cost_model(0.0, 0.5, 1);
        m.feasible_actions = vec![vec![0], vec![0]];
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    m.dm_cost[(x * 2 + y) * 2 + a] = if y == 0 { 1.0 } else { 4.0 };
                }
            }
        }
        m.initial_hidden_law = vec![0.3, 0.7];
        let sol = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap();
        assert!((sol.initial_values[0] - (0.3 + 2.8)).abs() < 1e-12);
        let (l, r) = cost_iteration_check(&m, &sol.policy)[1];
        assert!((l - 3.1).abs() < 1e-12 && (r - 3.1).abs() < 1e-12);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut m = constant_cost_model(1.0, 0.8, 3);
        for (i, c) in m.dm_cost.iter_mut().enumerate() {
            *c = (i as f64 * 0.37).sin().abs();
        }
        let s = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap();
        let p = solve(&m, DEFAULT_HISTORY_CAP, Execution::Parallel).unwrap();
        assert_eq!(s.initial_values, p.initial_values);
        assert_eq!(s.policy, p.policy);
    }
}
