//! Independent oracles shared by the integration tests.
//!
//! Everything here walks joint paths `(x_k, y_k)` by brute force and never
//! touches information states, stage LPs or the library's evaluators.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dimg_core::design::ExAntePlan;
use dimg_core::dm::Policy;
use dimg_core::{JointHistory, ObsHistory, PomdpModel};

/// `E[U(Σ β^k c(x_k, y_k, a_k)) | X_0 = x0]` with `Y_0 ~ Q0Y`, for any
/// history-dependent action rule.
pub fn path_expectation(model: &PomdpModel, act: &dyn Fn(&ObsHistory) -> usize, x0: usize) -> f64 {
    fn walk(
        m: &PomdpModel,
        act: &dyn Fn(&ObsHistory) -> usize,
        h: &ObsHistory,
        y: usize,
        prob: f64,
        cost: f64,
        disc: f64,
    ) -> f64 {
        if h.states.len() == m.horizon + 1 {
            return prob * m.utility.eval(cost).unwrap();
        }
        let x = *h.states.last().unwrap();
        let a = act(h);
        let s = cost + disc * m.c(x, y, a);
        let mut total = 0.0;
        for xn in 0..m.nx() {
            let mut states = h.states.clone();
            states.push(xn);
            let mut actions = h.actions.clone();
            actions.push(a);
            let hn = ObsHistory { states, actions };
            for yn in 0..m.ny() {
                let q = m.q(x, y, a, xn, yn);
                if q > 0.0 {
                    total += walk(m, act, &hn, yn, prob * q, s, disc * m.dm_discount);
                }
            }
        }
        total
    }
    let h = ObsHistory {
        states: vec![x0],
        actions: vec![],
    };
    (0..m_ny(model))
        .filter(|&y| model.initial_hidden_law[y] > 0.0)
        .map(|y| walk(model, act, &h, y, model.initial_hidden_law[y], 0.0, 1.0))
        .sum()
}

fn m_ny(m: &PomdpModel) -> usize {
    m.hidden_states.len()
}

/// The designed or true law of `(X_n, Y_n)` at a conditioning history.
fn law(model: &PomdpModel, plan: Option<&ExAntePlan>, jh: &JointHistory) -> Vec<f64> {
    if let Some(p) = plan {
        if let Some(d) = p.stages.get(jh.states.len()).and_then(|s| s.get(jh)) {
            return d.p.clone();
        }
        assert!(jh.states.len() >= p.stages.len(), "plan lacks history {jh:?}");
    }
    true_law(model, jh)
}

/// `Q0X ⊗ Q0Y` at stage 0, else the kernel row of the last tuple.
pub fn true_law(model: &PomdpModel, jh: &JointHistory) -> Vec<f64> {
    let (nx, ny) = (model.nx(), model.ny());
    match jh.states.len() {
        0 => {
            let q0x = model.initial_observable_law.as_ref().expect("Q0X");
            let mut out = vec![0.0; nx * ny];
            for x in 0..nx {
                for y in 0..ny {
                    out[x * ny + y] = q0x[x] * model.initial_hidden_law[y];
                }
            }
            out
        }
        n => {
            let (x, y, a) = (jh.states[n - 1], jh.hidden[n - 1], jh.actions[n - 1]);
            (0..nx * ny).map(|i| model.q(x, y, a, i / ny, i % ny)).collect()
        }
    }
}

fn extend(jh: &JointHistory, x: usize, y: usize, a: usize) -> JointHistory {
    let mut out = jh.clone();
    out.states.push(x);
    out.hidden.push(y);
    out.actions.push(a);
    out
}

fn obs(jh: &JointHistory, x: usize) -> ObsHistory {
    let mut states = jh.states.clone();
    states.push(x);
    ObsHistory {
        states,
        actions: jh.actions.clone(),
    }
}

/// `E[U(S_N)]` when stages `0..plan.len()` follow the plan (or the truth).
pub fn dm_objective(model: &PomdpModel, policy: &Policy, plan: Option<&ExAntePlan>) -> f64 {
    fn walk(
        m: &PomdpModel,
        pi: &Policy,
        plan: Option<&ExAntePlan>,
        jh: &JointHistory,
        prob: f64,
        cost: f64,
        disc: f64,
    ) -> f64 {
        if jh.states.len() == m.horizon {
            return prob * m.utility.eval(cost).unwrap();
        }
        let p = law(m, plan, jh);
        let ny = m.ny();
        let mut total = 0.0;
        for (i, &w) in p.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let (x, y) = (i / ny, i % ny);
            let a = pi.action(&obs(jh, x));
            total += walk(
                m,
                pi,
                plan,
                &extend(jh, x, y, a),
                prob * w,
                cost + disc * m.c(x, y, a),
                disc * m.dm_discount,
            );
        }
        total
    }
    walk(
        model,
        policy,
        plan,
        &JointHistory {
            states: vec![],
            hidden: vec![],
            actions: vec![],
        },
        1.0,
        0.0,
        1.0,
    )
}

/// `E[Σ_k α^k (r(x_k, y_k, a_k) + ρ_k)]` under the plan, `ρ` in L1.
pub fn im_objective(model: &PomdpModel, policy: &Policy, plan: &ExAntePlan) -> f64 {
    fn walk(m: &PomdpModel, pi: &Policy, plan: &ExAntePlan, jh: &JointHistory, disc: f64) -> f64 {
        let p = law(m, Some(plan), jh);
        let q = true_law(m, jh);
        let rho: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        let ny = m.ny();
        let mut total = disc * rho;
        for (i, &w) in p.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let (x, y) = (i / ny, i % ny);
            let a = pi.action(&obs(jh, x));
            let mut v = disc * m.r(x, y, a);
            if jh.states.len() + 1 < m.horizon {
                v += walk(m, pi, plan, &extend(jh, x, y, a), disc * m.im_discount);
            }
            total += w * v;
        }
        total
    }
    walk(
        model,
        policy,
        plan,
        &JointHistory {
            states: vec![],
            hidden: vec![],
            actions: vec![],
        },
        1.0,
    )
}

/// L1 distortion per stage over histories reached with probability above `tol`.
pub fn epsilon(model: &PomdpModel, policy: &Policy, plan: &ExAntePlan, tol: f64) -> Vec<f64> {
    let mut eps = vec![0.0; plan.stages.len()];
    let mut frontier = vec![(
        JointHistory {
            states: vec![],
            hidden: vec![],
            actions: vec![],
        },
        1.0,
    )];
    for (n, e) in eps.iter_mut().enumerate() {
        let mut next = Vec::new();
        for (jh, reach) in frontier {
            if n > 0 && reach <= tol {
                continue;
            }
            let p = law(model, Some(plan), &jh);
            let q = true_law(model, &jh);
            *e = f64::max(*e, p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum());
            let ny = model.ny();
            for (i, &w) in p.iter().enumerate() {
                if w > 0.0 {
                    let (x, y) = (i / ny, i % ny);
                    let a = policy.action(&obs(&jh, x));
                    next.push((extend(&jh, x, y, a), reach * w));
                }
            }
        }
        frontier = next;
    }
    eps
}

/// Every deterministic behavior from `x0`: one action per observable
/// history reachable by the behavior itself, unless the count exceeds `cap`.
pub fn enumerate_behaviors(model: &PomdpModel, x0: usize, cap: usize) -> Option<Vec<BTreeMap<ObsHistory, usize>>> {
    fn count(m: &PomdpModel, x: usize, stage: usize) -> f64 {
        if stage == m.horizon {
            return 1.0;
        }
        m.feasible_actions[x]
            .iter()
            .map(|_| (0..m.nx()).map(|xn| count(m, xn, stage + 1)).product::<f64>())
            .sum()
    }
    if count(model, x0, 0) > cap as f64 {
        return None;
    }
    fn expand(m: &PomdpModel, h: ObsHistory) -> Vec<BTreeMap<ObsHistory, usize>> {
        if h.states.len() == m.horizon + 1 {
            return vec![BTreeMap::new()];
        }
        let x = *h.states.last().unwrap();
        let mut out = Vec::new();
        for &a in &m.feasible_actions[x] {
            let mut partial = vec![BTreeMap::from([(h.clone(), a)])];
            for xn in 0..m.nx() {
                let mut states = h.states.clone();
                states.push(xn);
                let mut actions = h.actions.clone();
                actions.push(a);
                let subs = expand(m, ObsHistory { states, actions });
                partial = partial
                    .iter()
                    .flat_map(|base| {
                        subs.iter().map(move |sub| {
                            let mut b = base.clone();
                            b.extend(sub.iter().map(|(k, v)| (k.clone(), *v)));
                            b
                        })
                    })
                    .collect();
            }
            out.extend(partial);
        }
        out
    }
    Some(expand(
        model,
        ObsHistory {
            states: vec![x0],
            actions: vec![],
        },
    ))
}

/// Minimum of `Σ_x g_x p_x + w Σ_x |p_x − q_x|` over `p ≥ 0`, `Σ p = mass`,
/// by enumerating breakpoint vertices: all coordinates but one sit at `0` or
/// `q_x`, the remaining one absorbs the mass. `q = None` drops the L1 term.
pub fn separable_l1_min(g: &[f64], q: Option<&[f64]>, w: f64, mass: f64) -> f64 {
    let n = g.len();
    let f = |p: &[f64]| -> f64 {
        let lin: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let dist: f64 = q.map_or(0.0, |q| p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum());
        lin + w * dist
    };
    if mass == 0.0 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for free in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != free).collect();
        for mask in 0..(1usize << others.len()) {
            let mut p = vec![0.0; n];
            for (bit, &i) in others.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    p[i] = q.map_or(0.0, |q| q[i]);
                }
            }
            let rest = mass - p.iter().sum::<f64>();
            if rest < -1e-15 {
                continue;
            }
            p[free] = rest.max(0.0);
            best = best.min(f(&p));
        }
    }
    best
}
