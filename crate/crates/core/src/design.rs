//! The information manipulator's design problem.
//!
//! Given the DM's policy, the IM chooses at every stage `n` and conditioning
//! joint history `jh = (x_0, y_0, a_0, …, x_{n−1}, y_{n−1}, a_{n−1})` a law
//! `P_n` of `(X_n, Y_n)` whose Y-marginal equals the true one. Its stage cost
//! is `α^n (∫ r dP_n + ρ_n(P_n))` with `ρ_n(P) = Σ |p − q|` against the true
//! joint law. The ex ante value recursion is
//!
//! ```text
//! W_0 ≡ 0
//! W_{N−n}(jh) = min_P  Σ_{x,y} p(x,y) [α^n r(x,y,a) + W_{N−n−1}(jh·(x,y,a))] + α^n ρ_n(P)
//! ```
//!
//! with `a = g_n(h_{n−1}, a_{n−1}, x)`. Each minimization is a small LP. The
//! interim recursion optimizes the conditional law of `X_n` given the
//! realized `Y_n` and carries values `W^Y(jh, y)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dm::Policy;
use crate::error::{DimgError, Result};
use crate::exec::{self, Execution};
use crate::history::JointHistory;
use crate::lp::{self, lp_solve, StageLinearProgram, VarTag};
use crate::model::{kernel_x_marginal, y_marginal_unchecked, DistributionXY, PomdpModel};

/// Tolerance of the stagewise-consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-8;

/// Y-marginal mass under which a conditional row is filled by fallback.
pub const DISINTEGRATION_TOL: f64 = 1e-12;

/// Default cap on the number of conditioning histories.
pub const DEFAULT_DESIGN_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExAnte,
    Interim,
}

/// Per stage, the designed joint law at every conditioning history.
#[derive(Debug, Clone, PartialEq)]
pub struct ExAntePlan {
    pub stages: Vec<BTreeMap<JointHistory, DistributionXY>>,
}

/// Per stage and history, the designed kernel `φ_n(· | y)` for every `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterimPlan {
    pub stages: Vec<BTreeMap<JointHistory, Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManipulationPlan {
    ExAnte(ExAntePlan),
    Interim(InterimPlan),
}

impl ManipulationPlan {
    pub fn scheme(&self) -> Scheme {
        match self {
            ManipulationPlan::ExAnte(_) => Scheme::ExAnte,
            ManipulationPlan::Interim(_) => Scheme::Interim,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ManipulationPlan::ExAnte(p) => p.stages.len(),
            ManipulationPlan::Interim(p) => p.stages.len(),
        }
    }

    /// The joint law the plan induces at `jh`; interim kernels are
    /// multiplied by the true Y-marginal.
    pub fn joint_at(&self, model: &PomdpModel, jh: &JointHistory) -> Result<DistributionXY> {
        let missing = || DimgError::domain(format!("plan undefined at history [{}]", jh.key()));
        match self {
            ManipulationPlan::ExAnte(p) => p
                .stages
                .get(jh.len())
                .and_then(|s| s.get(jh))
                .cloned()
                .ok_or_else(missing),
            ManipulationPlan::Interim(p) => {
                let rows = p.stages.get(jh.len()).and_then(|s| s.get(jh)).ok_or_else(missing)?;
                Ok(DistributionXY::from_conditional(rows, &hidden_marginal(model, jh)))
            }
        }
    }

    /// Materialize as an ex ante plan.
    pub fn to_ex_ante(&self, model: &PomdpModel) -> Result<ExAntePlan> {
        match self {
            ManipulationPlan::ExAnte(p) => Ok(p.clone()),
            ManipulationPlan::Interim(p) => Ok(ExAntePlan {
                stages: p
                    .stages
                    .iter()
                    .map(|s| {
                        s.iter()
                            .map(|(jh, rows)| {
                                let m = hidden_marginal(model, jh);
                                (jh.clone(), DistributionXY::from_conditional(rows, &m))
                            })
                            .collect()
                    })
                    .collect(),
            }),
        }
    }
}

/// File form of a plan: per stage, one entry per conditioning history.
///
/// `law` is the joint table `[x][y]` for ex ante plans and the kernel rows
/// `[y][x]` for interim plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    pub scheme: Scheme,
    pub stages: Vec<Vec<PlanEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub history: JointHistory,
    pub law: Vec<Vec<f64>>,
    /// Stage LP value at this history, when exported by a solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Consistency residual, when exported with a check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

impl From<&ManipulationPlan> for PlanDoc {
    fn from(plan: &ManipulationPlan) -> Self {
        let stages = match plan {
            ManipulationPlan::ExAnte(p) => p
                .stages
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|(jh, d)| PlanEntry {
                            history: jh.clone(),
                            law: d.p.chunks(d.ny).map(<[f64]>::to_vec).collect(),
                            value: None,
                            residual: None,
                        })
                        .collect()
                })
                .collect(),
            ManipulationPlan::Interim(p) => p
                .stages
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|(jh, rows)| PlanEntry {
                            history: jh.clone(),
                            law: rows.clone(),
                            value: None,
                            residual: None,
                        })
                        .collect()
                })
                .collect(),
        };
        PlanDoc {
            scheme: plan.scheme(),
            stages,
        }
    }
}

impl PlanDoc {
    /// Rebuild the plan, checking shapes, entries and history placement
    /// against `model`. Consistency is left to [`check_consistency`].
    pub fn into_plan(self, model: &PomdpModel) -> Result<ManipulationPlan> {
        let (nx, ny) = (model.nx(), model.ny());
        if self.stages.len() != model.horizon {
            return Err(DimgError::Parse(format!(
                "plan has {} stages, model horizon is {}",
                self.stages.len(),
                model.horizon
            )));
        }
        let (rows, cols) = match self.scheme {
            Scheme::ExAnte => (nx, ny),
            Scheme::Interim => (ny, nx),
        };
        let mut stages = Vec::with_capacity(self.stages.len());
        for (n, stage) in self.stages.into_iter().enumerate() {
            let mut table = BTreeMap::new();
            for e in stage {
                let h = &e.history;
                if h.len() != n || h.hidden.len() != n || h.actions.len() != n {
                    return Err(DimgError::Parse(format!(
                        "stage {n} entry has a history of length {}",
                        h.len()
                    )));
                }
                let bad_index = h.states.iter().any(|&x| x >= nx)
                    || h.hidden.iter().any(|&y| y >= ny)
                    || h.actions.iter().any(|&a| a >= model.na());
                if bad_index {
                    return Err(DimgError::Parse(format!(
                        "history [{}] indexes outside the model",
                        h.key()
                    )));
                }
                if e.law.len() != rows || e.law.iter().any(|r| r.len() != cols) {
                    return Err(DimgError::Parse(format!("law at [{}] is not {rows}x{cols}", h.key())));
                }
                if e.law.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(DimgError::Parse(format!(
                        "law at [{}] has a negative or non-finite entry",
                        h.key()
                    )));
                }
                if table.insert(e.history, e.law).is_some() {
                    return Err(DimgError::Parse(format!("stage {n} repeats a history")));
                }
            }
            stages.push(table);
        }
        Ok(match self.scheme {
            Scheme::ExAnte => ManipulationPlan::ExAnte(ExAntePlan {
                stages: stages
                    .into_iter()
                    .map(|s| {
                        s.into_iter()
                            .map(|(jh, law)| (jh, DistributionXY::from_table(nx, ny, law.concat())))
                            .collect()
                    })
                    .collect(),
            }),
            Scheme::Interim => ManipulationPlan::Interim(InterimPlan { stages }),
        })
    }
}

/// The true law of `Y_n` given `jh`: `Q0Y` at stage 0, `q^Y(·|x, y, a)` after.
pub fn hidden_marginal(model: &PomdpModel, jh: &JointHistory) -> Vec<f64> {
    match jh.last() {
        None => model.initial_hidden_law.clone(),
        Some((x, y, a)) => y_marginal_unchecked(model, x, y, a),
    }
}

/// The true joint law at `jh`, against which `ρ_n` is measured.
///
/// At stage 0 this is `Q0X ⊗ Q0Y`; without `Q0X` there is no reference and
/// `ρ_0` vanishes.
pub fn reference_joint(model: &PomdpModel, jh: &JointHistory) -> Option<DistributionXY> {
    match jh.last() {
        None => model.initial_joint(),
        Some((x, y, a)) => Some(model.kernel_distribution(x, y, a)),
    }
}

/// Conditional reference `ψ(x | y)` for the interim stage problem, when defined.
fn reference_conditional(model: &PomdpModel, jh: &JointHistory, y: usize) -> Option<Vec<f64>> {
    match jh.last() {
        None => model.initial_observable_law.clone(),
        Some(_) => {
            let q = reference_joint(model, jh)?;
            let m: f64 = (0..q.nx).map(|x| q.get(x, y)).sum();
            (m > 0.0).then(|| (0..q.nx).map(|x| q.get(x, y) / m).collect())
        }
    }
}

/// Every conditioning history of stages `0..N`.
///
/// Observable states range over all of `X` (a designed law may put mass
/// where the truth puts none); hidden states range over the support of the
/// true Y-marginal, which consistency forces on every plan.
pub fn design_histories(model: &PomdpModel, policy: &Policy, cap: usize) -> Result<Vec<Vec<JointHistory>>> {
    let mut stages = vec![vec![JointHistory::empty()]];
    let mut total = 1usize;
    for _ in 1..model.horizon {
        let prev = stages.last().expect("nonempty");
        let mut next = Vec::new();
        for jh in prev {
            let m = hidden_marginal(model, jh);
            for x in 0..model.nx() {
                let a = policy.action(&jh.observable_with(x));
                for (y, &w) in m.iter().enumerate() {
                    if w > 0.0 {
                        next.push(jh.extended(x, y, a));
                    }
                }
            }
        }
        total += next.len();
        if total > cap {
            return Err(DimgError::Resource {
                what: format!("{total} conditioning histories"),
                cap,
            });
        }
        stages.push(next);
    }
    Ok(stages)
}

/// Stage LP of the ex ante scheme at `jh`.
///
/// Variables are `p[x, y]` for every cell and one auxiliary per cell where
/// the reference law is positive (rows `aux ≥ ±(p − q)`); cells where the
/// reference is zero contribute `|p − 0| = p` directly to the objective.
/// `continuation(jh')` must return `W_{N−n−1}(jh')`.
pub fn build_stage_lp_ex_ante(
    model: &PomdpModel,
    policy: &Policy,
    jh: &JointHistory,
    continuation: &dyn Fn(&JointHistory) -> Option<f64>,
) -> Result<StageLinearProgram> {
    let n = jh.len();
    let weight = model.im_discount.powi(n as i32);
    let last_stage = n + 1 == model.horizon;
    let marginal = hidden_marginal(model, jh);
    let reference = reference_joint(model, jh);
    let (nx, ny) = (model.nx(), model.ny());

    let mut lp = StageLinearProgram::new();
    let mut pvar = vec![0; nx * ny];
    for x in 0..nx {
        let a = policy.action(&jh.observable_with(x));
        for y in 0..ny {
            let mut coef = weight * model.r(x, y, a);
            if !last_stage && marginal[y] > 0.0 {
                let next = jh.extended(x, y, a);
                coef += continuation(&next)
                    .ok_or_else(|| DimgError::domain(format!("missing continuation value at [{}]", next.key())))?;
            }
            if reference.as_ref().is_some_and(|q| q.get(x, y) == 0.0) {
                coef += weight;
            }
            pvar[x * ny + y] = lp.add_var(VarTag::Joint { x, y }, coef, 0.0, 1.0);
        }
    }
    if let Some(q) = &reference {
        for x in 0..nx {
            for y in 0..ny {
                let qv = q.get(x, y);
                if qv > 0.0 {
                    let p = pvar[x * ny + y];
                    let aux = lp.add_var(VarTag::Aux { x, y }, weight, 0.0, f64::INFINITY);
                    lp.add_le(&[(p, 1.0), (aux, -1.0)], qv);
                    lp.add_le(&[(p, -1.0), (aux, -1.0)], -qv);
                }
            }
        }
    }
    let all: Vec<(usize, f64)> = pvar.iter().map(|&j| (j, 1.0)).collect();
    lp.add_eq(&all, 1.0);
    for (y, &m) in marginal.iter().enumerate() {
        let row: Vec<(usize, f64)> = (0..nx).map(|x| (pvar[x * ny + y], 1.0)).collect();
        lp.add_eq(&row, m);
    }
    Ok(lp)
}

/// Stage LP of the interim scheme at `(jh, y)`: variables `φ[x]`.
///
/// `continuation(jh', y')` must return `W^Y_{N−n−1}(jh', y')`.
pub fn build_stage_lp_interim(
    model: &PomdpModel,
    policy: &Policy,
    jh: &JointHistory,
    y: usize,
    continuation: &dyn Fn(&JointHistory, usize) -> Option<f64>,
) -> Result<StageLinearProgram> {
    let n = jh.len();
    let weight = model.im_discount.powi(n as i32);
    let last_stage = n + 1 == model.horizon;
    let reference = reference_conditional(model, jh, y);
    let nx = model.nx();

    let mut lp = StageLinearProgram::new();
    let mut vars = Vec::with_capacity(nx);
    for x in 0..nx {
        let a = policy.action(&jh.observable_with(x));
        let mut coef = weight * model.r(x, y, a);
        if !last_stage {
            let next = jh.extended(x, y, a);
            for (y_next, q) in y_marginal_unchecked(model, x, y, a).into_iter().enumerate() {
                if q > 0.0 {
                    let w = continuation(&next, y_next).ok_or_else(|| {
                        DimgError::domain(format!("missing continuation value at [{}], y={y_next}", next.key()))
                    })?;
                    coef += q * w;
                }
            }
        }
        if reference.as_ref().is_some_and(|psi| psi[x] == 0.0) {
            coef += weight;
        }
        vars.push(lp.add_var(VarTag::Marginal { x }, coef, 0.0, 1.0));
    }
    if let Some(psi) = &reference {
        for (x, &qv) in psi.iter().enumerate() {
            if qv > 0.0 {
                let aux = lp.add_var(VarTag::Aux { x, y }, weight, 0.0, f64::INFINITY);
                lp.add_le(&[(vars[x], 1.0), (aux, -1.0)], qv);
                lp.add_le(&[(vars[x], -1.0), (aux, -1.0)], -qv);
            }
        }
    }
    let all: Vec<(usize, f64)> = vars.iter().map(|&j| (j, 1.0)).collect();
    lp.add_eq(&all, 1.0);
    Ok(lp)
}

fn solve_stage(lp: &StageLinearProgram, what: impl FnOnce() -> String) -> Result<(f64, Vec<f64>)> {
    lp_solve(lp)?
        .optimal()
        .map_err(|e| DimgError::Lp(format!("{e} at {}\n{}", what(), lp.dump())))
}

/// `W` per stage, keyed by conditioning history (stage `n` holds `W_{N−n}`).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignValueTable {
    pub stages: Vec<BTreeMap<JointHistory, f64>>,
}

/// `W^Y` per stage and history, one entry per hidden state (`None` off the
/// support of the true Y-marginal).
#[derive(Debug, Clone, PartialEq)]
pub struct InterimValueTable {
    pub stages: Vec<BTreeMap<JointHistory, Vec<Option<f64>>>>,
}

#[derive(Debug, Clone)]
pub struct ExAnteSolution {
    pub plan: ExAntePlan,
    pub values: DesignValueTable,
    /// `W_N`, the value of the stage-0 problem.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct InterimSolution {
    pub plan: InterimPlan,
    pub values: InterimValueTable,
    /// `Σ_y W^Y_N(y) Q0Y(y)`.
    pub value: f64,
}

/// Backward ex ante recursion over every conditioning history.
pub fn solve_ex_ante(model: &PomdpModel, policy: &Policy, cap: usize, exec: Execution) -> Result<ExAnteSolution> {
    let histories = design_histories(model, policy, cap)?;
    let horizon = model.horizon;
    let mut values: Vec<BTreeMap<JointHistory, f64>> = vec![BTreeMap::new(); horizon];
    let mut plan: Vec<BTreeMap<JointHistory, DistributionXY>> = vec![BTreeMap::new(); horizon];
    for n in (0..horizon).rev() {
        let next = if n + 1 < horizon { Some(&values[n + 1]) } else { None };
        let cont = |h: &JointHistory| next.map_or(Some(0.0), |t| t.get(h).copied());
        let solved = exec::try_map(exec, &histories[n], |jh| {
            let lp = build_stage_lp_ex_ante(model, policy, jh, &cont)?;
            let (v, x) = solve_stage(&lp, || format!("[{}]", jh.key()))?;
            let p = DistributionXY::from_table(model.nx(), model.ny(), x[..model.nx() * model.ny()].to_vec());
            Ok::<_, DimgError>((v, p))
        })?;
        for (jh, (v, p)) in histories[n].iter().zip(solved) {
            values[n].insert(jh.clone(), v);
            plan[n].insert(jh.clone(), p);
        }
    }
    let value = values[0][&JointHistory::empty()];
    Ok(ExAnteSolution {
        plan: ExAntePlan { stages: plan },
        values: DesignValueTable { stages: values },
        value,
    })
}

/// Backward interim recursion over every `(history, y)` pair.
pub fn solve_interim(model: &PomdpModel, policy: &Policy, cap: usize, exec: Execution) -> Result<InterimSolution> {
    let histories = design_histories(model, policy, cap)?;
    let horizon = model.horizon;
    let ny = model.ny();
    let mut values: Vec<BTreeMap<JointHistory, Vec<Option<f64>>>> = vec![BTreeMap::new(); horizon];
    let mut plan: Vec<BTreeMap<JointHistory, Vec<Vec<f64>>>> = vec![BTreeMap::new(); horizon];
    for n in (0..horizon).rev() {
        let next = if n + 1 < horizon { Some(&values[n + 1]) } else { None };
        let cont = |h: &JointHistory, y: usize| match next {
            None => Some(0.0),
            Some(t) => t.get(h).and_then(|row| row[y]),
        };
        let solved = exec::try_map(exec, &histories[n], |jh| {
            let m = hidden_marginal(model, jh);
            let mut vals = vec![None; ny];
            let mut rows = Vec::with_capacity(ny);
            for y in 0..ny {
                if m[y] > 0.0 {
                    let lp = build_stage_lp_interim(model, policy, jh, y, &cont)?;
                    let (v, x) = solve_stage(&lp, || format!("[{}], y={y}", jh.key()))?;
                    vals[y] = Some(v);
                    rows.push(x[..model.nx()].to_vec());
                } else {
                    rows.push(fallback_row(model, jh, y));
                }
            }
            Ok::<_, DimgError>((vals, rows))
        })?;
        for (jh, (v, rows)) in histories[n].iter().zip(solved) {
            values[n].insert(jh.clone(), v);
            plan[n].insert(jh.clone(), rows);
        }
    }
    let top = &values[0][&JointHistory::empty()];
    let value = model
        .initial_hidden_law
        .iter()
        .zip(top)
        .map(|(q, w)| q * w.unwrap_or(0.0))
        .sum();
    Ok(InterimSolution {
        plan: InterimPlan { stages: plan },
        values: InterimValueTable { stages: values },
        value,
    })
}

/// Row used where the Y-marginal leaves `φ(· | y)` undetermined: the true
/// conditional when defined, else the true X-marginal (`Q0X`, or uniform,
/// at stage 0).
fn fallback_row(model: &PomdpModel, jh: &JointHistory, y: usize) -> Vec<f64> {
    if let Some(psi) = reference_conditional(model, jh, y) {
        return psi;
    }
    match jh.last() {
        Some((x, yp, a)) => kernel_x_marginal(model, x, yp, a).expect("history actions are feasible"),
        None => vec![1.0 / model.nx() as f64; model.nx()],
    }
}

/// `φ(x | y) = p(x, y) / p^Y(y)`, with fallback rows where `p^Y(y) ≤ 1e-12`.
pub fn disintegrate(plan: &ExAntePlan, model: &PomdpModel) -> Result<InterimPlan> {
    let mut stages = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let mut out = BTreeMap::new();
        for (jh, p) in stage {
            let truth = hidden_marginal(model, jh);
            let py = p.y_marginal();
            let gap = py.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > CONSISTENCY_TOL {
                return Err(DimgError::domain(format!(
                    "plan is not stagewise consistent at [{}] (residual {gap:e})",
                    jh.key()
                )));
            }
            let rows = (0..p.ny)
                .map(|y| {
                    if py[y] > DISINTEGRATION_TOL {
                        (0..p.nx).map(|x| p.get(x, y) / py[y]).collect()
                    } else {
                        fallback_row(model, jh, y)
                    }
                })
                .collect();
            out.insert(jh.clone(), rows);
        }
        stages.push(out);
    }
    Ok(InterimPlan { stages })
}

/// Nested forward evaluation of `E[Σ α^k (r + ρ_k)]` under the plan.
pub fn evaluate_im_objective(model: &PomdpModel, policy: &Policy, plan: &ManipulationPlan) -> Result<f64> {
    im_value(model, policy, plan, &JointHistory::empty())
}

fn im_value(model: &PomdpModel, policy: &Policy, plan: &ManipulationPlan, jh: &JointHistory) -> Result<f64> {
    let n = jh.len();
    let weight = model.im_discount.powi(n as i32);
    let p = plan.joint_at(model, jh)?;
    let rho = match reference_joint(model, jh) {
        Some(q) => lp::l1(&p.p, &q.p),
        None => 0.0,
    };
    let mut total = weight * rho;
    for x in 0..model.nx() {
        let a = policy.action(&jh.observable_with(x));
        for y in 0..model.ny() {
            let pxy = p.get(x, y);
            if pxy <= 0.0 {
                continue;
            }
            let mut v = weight * model.r(x, y, a);
            if n + 1 < model.horizon {
                v += im_value(model, policy, plan, &jh.extended(x, y, a))?;
            }
            total += pxy * v;
        }
    }
    Ok(total)
}

/// Per-history consistency residuals of a plan.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    /// `(stage, history key, max-norm residual)`.
    pub entries: Vec<(usize, String, f64)>,
    pub max_residual: f64,
    pub pass: bool,
}

/// Max-norm residual of `P^Y = q^Y(·|cond)` and of total mass one (ex ante),
/// or of every row summing to one (interim).
pub fn check_consistency(plan: &ManipulationPlan, model: &PomdpModel) -> ConsistencyReport {
    let mut entries = Vec::new();
    match plan {
        ManipulationPlan::ExAnte(p) => {
            for (n, stage) in p.stages.iter().enumerate() {
                for (jh, d) in stage {
                    entries.push((n, jh.key(), consistency_residual(model, jh, d)));
                }
            }
        }
        ManipulationPlan::Interim(p) => {
            for (n, stage) in p.stages.iter().enumerate() {
                for (jh, rows) in stage {
                    let r = rows
                        .iter()
                        .map(|row| {
                            let neg = row.iter().fold(0.0f64, |m, &v| m.max(-v));
                            (row.iter().sum::<f64>() - 1.0).abs().max(neg)
                        })
                        .fold(0.0, f64::max);
                    entries.push((n, jh.key(), r));
                }
            }
        }
    }
    let max_residual = entries.iter().map(|e| e.2).fold(0.0, f64::max);
    ConsistencyReport {
        entries,
        max_residual,
        pass: max_residual <= CONSISTENCY_TOL,
    }
}

/// Max-norm residual of one ex ante table at `jh`.
pub fn consistency_residual(model: &PomdpModel, jh: &JointHistory, d: &DistributionXY) -> f64 {
    let truth = hidden_marginal(model, jh);
    let marg = d
        .y_marginal()
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let neg = d.p.iter().fold(0.0f64, |m, &v| m.max(-v));
    marg.max((d.mass() - 1.0).abs()).max(neg)
}

/// The plan that reproduces the true law everywhere (requires `Q0X`).
pub fn truthful_plan(model: &PomdpModel, policy: &Policy, cap: usize) -> Result<ExAntePlan> {
    model.require_initial_observable()?;
    let histories = design_histories(model, policy, cap)?;
    Ok(ExAntePlan {
        stages: histories
            .into_iter()
            .map(|stage| {
                stage
                    .into_iter()
                    .map(|jh| {
                        let q = reference_joint(model, &jh).expect("Q0X present");
                        (jh, q)
                    })
                    .collect()
            })
            .collect(),
    })
}

/// `(1 − t) P + t R` at every history, `R` a random consistent law.
///
/// For each `y` in the support of the true marginal, `R(·, y)` spreads the
/// marginal mass over `X` with uniformly drawn weights.
pub fn perturbed_plan<R: Rng + ?Sized>(model: &PomdpModel, plan: &ExAntePlan, t: f64, rng: &mut R) -> ExAntePlan {
    let stages = plan
        .stages
        .iter()
        .map(|stage| {
            stage
                .iter()
                .map(|(jh, p)| {
                    let m = hidden_marginal(model, jh);
                    let mut out = p.clone();
                    for (y, &my) in m.iter().enumerate() {
                        let w: Vec<f64> = (0..p.nx).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let s: f64 = w.iter().sum();
                        for x in 0..p.nx {
                            let i = x * p.ny + y;
                            out.p[i] = (1.0 - t) * p.p[i] + t * my * w[x] / s;
                        }
                    }
                    (jh.clone(), out)
                })
                .collect()
        })
        .collect();
    ExAntePlan { stages }
}

/// Residuals of `W_{N−n}(jh) = Σ_y W^Y_{N−n}(jh, y) q^Y(y | cond)` at every
/// history, keyed `(stage, history key)`.
pub fn relation_residuals(
    model: &PomdpModel,
    ex_ante: &ExAnteSolution,
    interim: &InterimSolution,
) -> Vec<(usize, String, f64)> {
    let mut out = Vec::new();
    for (n, stage) in ex_ante.values.stages.iter().enumerate() {
        for (jh, &w) in stage {
            let m = hidden_marginal(model, jh);
            let wy = interim.values.stages[n].get(jh);
            let rhs: f64 = match wy {
                Some(row) => m.iter().zip(row).map(|(q, v)| q * v.unwrap_or(0.0)).sum(),
                None => f64::NAN,
            };
            out.push((n, jh.key(), (w - rhs).abs()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dm::{solve, DEFAULT_HISTORY_CAP};
    use crate::model::Point;
    use crate::utility::Utility;

    fn two_by_two(im_cost: Vec<f64>, horizon: usize) -> PomdpModel {
        PomdpModel {
            observable_states: Point::indexed("x", 2),
            hidden_states: Point::indexed("y", 2),
            actions: Point::indexed("a", 2),
            feasible_actions: vec![vec![0, 1], vec![0, 1]],
            kernel: (0..32)
                .map(|i| [0.4, 0.1, 0.2, 0.3, 0.25, 0.25, 0.1, 0.4][i % 8])
                .collect(),
            initial_hidden_law: vec![0.6, 0.4],
            initial_observable_law: Some(vec![0.3, 0.7]),
            dm_cost: vec![1.0, 0.2, 0.5, 0.9, 0.0, 1.4, 0.3, 0.6],
            im_cost,
            dm_discount: 0.8,
            im_discount: 0.9,
            horizon,
            utility: Utility::Identity,
        }
    }

    #[test]
    fn zero_im_cost_gives_truthful_plan() {
        let m = two_by_two(vec![0.0; 8], 2);
        let pi = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap().policy;
        let sol = solve_ex_ante(&m, &pi, DEFAULT_DESIGN_CAP, Execution::Sequential).unwrap();
        assert!(sol.value.abs() < 1e-12);
        for stage in &sol.plan.stages {
            for (jh, p) in stage {
                let q = reference_joint(&m, jh).unwrap();
                assert!(lp::l1(&p.p, &q.p) < 1e-9);
            }
        }
        let interim = solve_interim(&m, &pi, DEFAULT_DESIGN_CAP, Execution::Sequential).unwrap();
        assert!(interim.value.abs() < 1e-12);
    }

    #[test]
    fn relation_and_disintegration() {
        let m = two_by_two(vec![0.0, 2.0, 1.0, 0.5, 1.5, 0.0, 0.2, 1.0], 3);
        let pi = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap().policy;
        let ea = solve_ex_ante(&m, &pi, DEFAULT_DESIGN_CAP, Execution::Sequential).unwrap();
        let it = solve_interim(&m, &pi, DEFAULT_DESIGN_CAP, Execution::Sequential).unwrap();
        assert!((ea.value - it.value).abs() < 1e-9);
        for (_, key, r) in relation_residuals(&m, &ea, &it) {
            assert!(r < 1e-9, "{key}: {r}");
        }
        let plan = ManipulationPlan::ExAnte(ea.plan.clone());
        assert!(check_consistency(&plan, &m).pass);
        let direct = evaluate_im_objective(&m, &pi, &plan).unwrap();
        assert!((direct - ea.value).abs() < 1e-9);
        let interim = ManipulationPlan::Interim(disintegrate(&ea.plan, &m).unwrap());
        let back = evaluate_im_objective(&m, &pi, &interim).unwrap();
        assert!((back - ea.value).abs() < 1e-9);
        let truthful = ManipulationPlan::ExAnte(truthful_plan(&m, &pi, DEFAULT_DESIGN_CAP).unwrap());
        assert!(ea.value <= evaluate_im_objective(&m, &pi, &truthful).unwrap() + 1e-9);
    }

    #[test]
    fn perturbed_marginal_is_reported() {
        let m = two_by_two(vec![0.0; 8], 2);
        let pi = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap().policy;
        let mut plan = truthful_plan(&m, &pi, DEFAULT_DESIGN_CAP).unwrap();
        let key = JointHistory::empty().extended(1, 0, pi.action(&crate::ObsHistory::initial(1)));
        let d = plan.stages[1].get_mut(&key).unwrap();
        d.p[0] += 0.01;
        d.p[1] -= 0.01;
        let report = check_consistency(&ManipulationPlan::ExAnte(plan.clone()), &m);
        assert!(!report.pass);
        assert!((report.max_residual - 0.01).abs() < 1e-12);
        assert!(disintegrate(&plan, &m).is_err());
    }

    #[test]
    fn product_plan_disintegrates_to_its_x_marginal() {
        let m = two_by_two(vec![0.0; 8], 1);
        let px = [0.2, 0.8];
        let p = DistributionXY::from_table(2, 2, vec![px[0] * 0.6, px[0] * 0.4, px[1] * 0.6, px[1] * 0.4]);
        let mut stage = BTreeMap::new();
        stage.insert(JointHistory::empty(), p);
        let phi = disintegrate(&ExAntePlan { stages: vec![stage] }, &m).unwrap();
        for row in &phi.stages[0][&JointHistory::empty()] {
            assert!((row[0] - 0.2).abs() < 1e-12 && (row[1] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_doc_round_trip() {
        let m = two_by_two(vec![0.0, 2.0, 1.0, 0.5, 1.5, 0.0, 0.2, 1.0], 2);
        let pi = solve(&m, DEFAULT_HISTORY_CAP, Execution::Sequential).unwrap().policy;
        let ea = ManipulationPlan::ExAnte(
            solve_ex_ante(&m, &pi, DEFAULT_DESIGN_CAP, Execution::Sequential)
                .unwrap()
                .plan,
        );
        let it = ManipulationPlan::Interim(
            solve_interim(&m, &pi, DEFAULT_DESIGN_CAP, Execution::Sequential)
                .unwrap()
                .plan,
        );
        for plan in [ea, it] {
            let text = serde_json::to_string(&PlanDoc::from(&plan)).unwrap();
            let back: PlanDoc = serde_json::from_str(&text).unwrap();
            assert_eq!(back.into_plan(&m).unwrap(), plan);
        }
        let mut doc = PlanDoc::from(&ManipulationPlan::ExAnte(
            truthful_plan(&m, &pi, DEFAULT_DESIGN_CAP).unwrap(),
        ));
        doc.stages[0][0].law[0].pop();
        assert!(matches!(doc.into_plan(&m), Err(DimgError::Parse(_))));
    }
}
