//! Unnormalized information states over (hidden state, accumulated cost).
//!
//! An information state is a finite measure on `Y × ℝ₊` stored as sorted
//! atoms. The update operator Ψ pushes every atom through the kernel row of
//! the realized observation and shifts its cost coordinate by the discounted
//! stage cost:
//!
//! ```text
//! Ψ(x, a, x', μ, z)({(y', s')}) = Σ_{(y, s)} q(x', y' | x, y, a) μ(y, s) · 1[s' = s + z c(x, y, a)]
//! ```
//!
//! No normalization happens here. The mass of `μ_n` equals the product of the
//! normalization constants `D_1 ⋯ D_n`, i.e. the probability of the observed
//! states given `x_0` and the actions.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dm::Policy;
use crate::error::{DimgError, Result};
use crate::history::ObsHistory;
use crate::model::PomdpModel;

/// Atoms whose cost coordinates differ by at most this much are merged.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    #[serde(rename = "y")]
    pub hidden: usize,
    #[serde(rename = "s")]
    pub cost: f64,
    #[serde(rename = "w")]
    pub weight: f64,
}

/// A finite unnormalized measure on `Y × ℝ₊`.
///
/// Atoms are sorted by `(hidden, cost)`, carry strictly positive weight and
/// have pairwise distinct keys after merging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InformationState {
    atoms: Vec<Atom>,
}

impl InformationState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalize a raw atom list: drop nonpositive weights, sort, merge.
    pub fn from_atoms(raw: impl IntoIterator<Item = Atom>) -> Self {
        let mut atoms: Vec<Atom> = raw.into_iter().filter(|a| a.weight > 0.0).collect();
        atoms.sort_by(|l, r| l.hidden.cmp(&r.hidden).then(l.cost.total_cmp(&r.cost)));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(prev) if prev.hidden == atom.hidden && atom.cost - prev.cost <= MERGE_TOL => {
                    let w = prev.weight + atom.weight;
                    prev.cost = (prev.cost * prev.weight + atom.cost * atom.weight) / w;
                    prev.weight = w;
                }
                _ => merged.push(atom),
            }
        }
        InformationState { atoms: merged }
    }

    /// `μ_0 = Q0Y ⊗ δ_0`.
    pub fn initial(model: &PomdpModel) -> Self {
        Self::from_atoms(model.initial_hidden_law.iter().enumerate().map(|(y, &w)| Atom {
            hidden: y,
            cost: 0.0,
            weight: w,
        }))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `μ^Y`.
    pub fn hidden_marginal(&self, ny: usize) -> Vec<f64> {
        let mut out = vec![0.0; ny];
        for a in &self.atoms {
            out[a.hidden] += a.weight;
        }
        out
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_atoms(self.atoms.iter().map(|a| Atom {
            weight: a.weight * k,
            ..*a
        }))
    }

    /// Atomwise sum of two measures.
    pub fn sum(&self, other: &Self) -> Self {
        Self::from_atoms(self.atoms.iter().chain(&other.atoms).copied())
    }

    /// Weight at `(y, s)` up to the merge tolerance; zero when absent.
    pub fn weight_at(&self, hidden: usize, cost: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.hidden == hidden && (a.cost - cost).abs() <= 1e-9)
            .map(|a| a.weight)
            .sum()
    }
}

/// Apply Ψ for one observed transition `x --a--> x_next` with discount weight `z`.
pub fn update(
    model: &PomdpModel,
    x: usize,
    a: usize,
    x_next: usize,
    mu: &InformationState,
    z: f64,
) -> Result<InformationState> {
    model.require_feasible(x, a)?;
    if x_next >= model.nx() {
        return Err(DimgError::domain(format!("observable state {x_next} out of range")));
    }
    Ok(update_unchecked(model, x, a, x_next, mu, z))
}

pub(crate) fn update_unchecked(
    model: &PomdpModel,
    x: usize,
    a: usize,
    x_next: usize,
    mu: &InformationState,
    z: f64,
) -> InformationState {
    let ny = model.ny();
    let mut raw = Vec::with_capacity(mu.atoms.len() * ny);
    for atom in &mu.atoms {
        let row = &model.kernel_row(x, atom.hidden, a)[x_next * ny..(x_next + 1) * ny];
        let s = atom.cost + z * model.c(x, atom.hidden, a);
        for (y_next, &q) in row.iter().enumerate() {
            raw.push(Atom {
                hidden: y_next,
                cost: s,
                weight: q * atom.weight,
            });
        }
    }
    InformationState::from_atoms(raw)
}

/// `D_n = Σ_y q^X(x_next | x_prev, y, a) μ^Y_prev(y) / mass(μ_prev)`.
///
/// Computed from the normalized hidden marginal of the previous state, so the
/// product `D_1 ⋯ D_n` equals the mass of `μ_n`.
pub fn normalization_constant(
    model: &PomdpModel,
    mu_prev: &InformationState,
    x_prev: usize,
    a: usize,
    x_next: usize,
) -> Result<f64> {
    model.require_feasible(x_prev, a)?;
    let mass = mu_prev.mass();
    if !(mass > 0.0) {
        return Err(DimgError::domain(
            "normalization constant of a zero-mass information state",
        ));
    }
    let ny = model.ny();
    let marginal = mu_prev.hidden_marginal(ny);
    let mut d = 0.0;
    for (y, &w) in marginal.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let qx: f64 = model.kernel_row(x_prev, y, a)[x_next * ny..(x_next + 1) * ny]
            .iter()
            .sum();
        d += qx * w / mass;
    }
    Ok(d)
}

/// `μ_0, …, μ_n` and `D_0, …, D_n` along one observable history.
#[derive(Debug, Clone)]
pub struct Recursion {
    pub states: Vec<InformationState>,
    pub constants: Vec<f64>,
}

impl Recursion {
    pub fn last(&self) -> &InformationState {
        self.states.last().expect("recursion holds μ_0")
    }

    /// `∏_{k ≤ n} D_k`.
    pub fn constant_product(&self) -> f64 {
        self.constants.iter().product()
    }

    pub fn dump(&self) -> InformationStateDump {
        let last = self.last();
        InformationStateDump {
            atoms: last.atoms().to_vec(),
            masses: self.states.iter().map(InformationState::mass).collect(),
            d_sequence: self.constants.clone(),
        }
    }
}

/// JSON debug dump of the final state of a recursion.
#[derive(Debug, Clone, Serialize)]
pub struct InformationStateDump {
    pub atoms: Vec<Atom>,
    pub masses: Vec<f64>,
    pub d_sequence: Vec<f64>,
}

/// Run the information-state recursion along `h`.
///
/// With a policy, every action of `h` must equal the policy's prescription
/// at the corresponding prefix. Once an observation has zero probability the
/// remaining states are empty and the remaining constants are zero.
pub fn run_recursion(model: &PomdpModel, policy: Option<&Policy>, h: &ObsHistory) -> Result<Recursion> {
    h.check(model)?;
    let mut states = vec![InformationState::initial(model)];
    let mut constants = vec![1.0];
    let mut z = 1.0;
    for k in 0..h.stage() {
        let (x, a, x_next) = (h.states[k], h.actions[k], h.states[k + 1]);
        if let Some(pi) = policy {
            let prefix = ObsHistory {
                states: h.states[..=k].to_vec(),
                actions: h.actions[..k].to_vec(),
            };
            let prescribed = pi.action(&prefix);
            if prescribed != a {
                return Err(DimgError::domain(format!(
                    "history action {a} at stage {k} differs from the policy's {prescribed}"
                )));
            }
        }
        let prev = states.last().expect("nonempty");
        let d = if prev.is_empty() {
            0.0
        } else {
            normalization_constant(model, prev, x, a, x_next)?
        };
        let next = update_unchecked(model, x, a, x_next, prev, z);
        constants.push(d);
        states.push(next);
        z *= model.dm_discount;
    }
    Ok(Recursion { states, constants })
}

/// Conditional law of `(Y_n, S_n)` given an observable history, by brute force.
#[derive(Debug, Clone)]
pub struct OracleLaw {
    /// `(y, s) ↦ ℙ(Y_n = y, S_n = s | h_n)`, keyed with merged cost values.
    pub conditional: Vec<(usize, f64, f64)>,
    /// `ℙ(X_1 = x_1, …, X_n = x_n | X_0 = x_0, actions)`.
    pub history_probability: f64,
}

/// Enumerate every hidden path `y_0, …, y_n` consistent with `h` and sum
/// path probabilities and costs directly.
///
/// Independent of Ψ: each path's probability is the product of `Q0Y(y_0)`
/// and the kernel entries along the path, and its cost is summed in one go.
pub fn joint_enumeration_oracle(model: &PomdpModel, h: &ObsHistory, path_cap: usize) -> Result<OracleLaw> {
    h.check(model)?;
    let n = h.stage();
    let ny = model.ny();
    let paths = (ny as f64).powi(n as i32 + 1);
    if paths > path_cap as f64 {
        return Err(DimgError::Resource {
            what: format!("{paths} hidden paths"),
            cap: path_cap,
        });
    }
    let total = ny.pow(n as u32 + 1);
    let mut joint: BTreeMap<(usize, u64), (f64, f64)> = BTreeMap::new();
    let mut path = vec![0usize; n + 1];
    let mut history_probability = 0.0;
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % ny;
            c /= ny;
        }
        let mut p = model.initial_hidden_law[path[0]];
        let mut cost_terms = Vec::with_capacity(n);
        let mut disc = 1.0;
        for k in 0..n {
            if p == 0.0 {
                break;
            }
            let (x, a) = (h.states[k], h.actions[k]);
            p *= model.q(x, path[k], a, h.states[k + 1], path[k + 1]);
            cost_terms.push(disc * model.c(x, path[k], a));
            disc *= model.dm_discount;
        }
        if p == 0.0 {
            continue;
        }
        let s: f64 = cost_terms.iter().sum();
        history_probability += p;
        // bucket by cost rounded to 1e-10 so equal costs from distinct paths meet
        let bucket = (s * 1e10).round() as u64;
        let entry = joint.entry((path[n], bucket)).or_insert((0.0, 0.0));
        entry.0 += p;
        entry.1 += p * s;
    }
    let conditional = if history_probability > 0.0 {
        joint
            .into_iter()
            .map(|((y, _), (p, ps))| (y, ps / p, p / history_probability))
            .collect()
    } else {
        Vec::new()
    };
    Ok(OracleLaw {
        conditional,
        history_probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point, PomdpModel};
    use crate::utility::Utility;

    fn uniform_2x2x1() -> PomdpModel {
        PomdpModel {
            observable_states: Point::indexed("x", 2),
            hidden_states: Point::indexed("y", 2),
            actions: Point::indexed("a", 1),
            feasible_actions: vec![vec![0], vec![0]],
            kernel: vec![0.25; 16],
            initial_hidden_law: vec![0.5, 0.5],
            initial_observable_law: None,
            dm_cost: vec![1.0; 4],
            im_cost: vec![0.0; 4],
            dm_discount: 0.5,
            im_discount: 1.0,
            horizon: 2,
            utility: Utility::Identity,
        }
    }

    #[test]
    fn initial_states() {
        let mut m = uniform_2x2x1();
        let mu = InformationState::initial(&m);
        assert_eq!(mu.atoms().len(), 2);
        assert_eq!(mu.weight_at(0, 0.0), 0.5);
        m.initial_hidden_law = vec![1.0, 0.0];
        let mu = InformationState::initial(&m);
        assert_eq!(
            mu.atoms(),
            &[Atom {
                hidden: 0,
                cost: 0.0,
                weight: 1.0
            }]
        );
        m.initial_hidden_law = vec![0.3, 0.7];
        let w: Vec<f64> = InformationState::initial(&m).atoms().iter().map(|a| a.weight).collect();
        assert_eq!(w, vec![0.3, 0.7]);
    }

    #[test]
    fn uniform_update() {
        let m = uniform_2x2x1();
        let mu = InformationState::initial(&m);
        let next = update(&m, 0, 0, 1, &mu, 1.0).unwrap();
        assert_eq!(next.atoms().len(), 2);
        assert!((next.weight_at(0, 1.0) - 0.25).abs() < 1e-15);
        assert!((next.weight_at(1, 1.0) - 0.25).abs() < 1e-15);
        assert!((next.mass() - 0.5).abs() < 1e-15);
        let d = normalization_constant(&m, &mu, 0, 0, 1).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unreachable_observation_empties_the_state() {
        let mut m = uniform_2x2x1();
        m.kernel.iter_mut().for_each(|v| *v = 0.0);
        for row in m.kernel.chunks_exact_mut(4) {
            row[0] = 1.0; // (x0, y0)
        }
        let mu = InformationState::initial(&m);
        assert!(update(&m, 0, 0, 1, &mu, 1.0).unwrap().is_empty());
        assert_eq!(normalization_constant(&m, &mu, 0, 0, 0).unwrap(), 1.0);
        assert!(normalization_constant(&m, &InformationState::empty(), 0, 0, 0).is_err());
    }

    #[test]
    fn merging_and_pruning() {
        let mu = InformationState::from_atoms([
            Atom {
                hidden: 1,
                cost: 2.0,
                weight: 0.25,
            },
            Atom {
                hidden: 0,
                cost: 1.0,
                weight: 0.0,
            },
            Atom {
                hidden: 1,
                cost: 2.0 + 5e-13,
                weight: 0.25,
            },
            Atom {
                hidden: 0,
                cost: 3.0,
                weight: 0.5,
            },
        ]);
        assert_eq!(mu.atoms().len(), 2);
        assert_eq!(mu.atoms()[0].hidden, 0);
        assert!((mu.atoms()[1].weight - 0.5).abs() < 1e-15);
        assert!((mu.atoms()[1].cost - (2.0 + 2.5e-13)).abs() < 1e-15);
    }

    #[test]
    fn empty_history_recursion() {
        let m = uniform_2x2x1();
        let rec = run_recursion(&m, None, &ObsHistory::initial(1)).unwrap();
        assert_eq!(rec.states.len(), 1);
        assert_eq!(rec.constants, vec![1.0]);
        assert_eq!(rec.last(), &InformationState::initial(&m));
    }

    #[test]
    fn infeasible_action_rejected() {
        let mut m = uniform_2x2x1();
        m.actions.push(Point::new("b", None));
        m.kernel.extend(vec![0.25; 16]);
        m.kernel = {
            // rebuild kernel for 2 actions: all rows uniform
            vec![0.25; 2 * 2 * 2 * 4]
        };
        m.dm_cost = vec![1.0; 8];
        m.im_cost = vec![0.0; 8];
        assert!(update(&m, 0, 1, 0, &InformationState::initial(&m), 1.0).is_err());
    }

    #[test]
    fn oracle_uniform_symmetry() {
        let m = uniform_2x2x1();
        let h = ObsHistory::initial(0).extended(0, 1).extended(0, 0);
        let law = joint_enumeration_oracle(&m, &h, 1000).unwrap();
        assert!((law.history_probability - 0.25).abs() < 1e-15);
        assert_eq!(law.conditional.len(), 2);
        for (_, s, p) in law.conditional {
            assert!((p - 0.5).abs() < 1e-15);
            assert!((s - 1.5).abs() < 1e-15);
        }
        assert!(matches!(
            joint_enumeration_oracle(&m, &h, 4),
            Err(DimgError::Resource { .. })
        ));
    }
}
