//! The pipelines behind each subcommand.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use dimg_core::design::{
    check_consistency, disintegrate, evaluate_im_objective, hidden_marginal, relation_residuals, solve_ex_ante,
    solve_interim, ConsistencyReport, ExAnteSolution, InterimSolution, ManipulationPlan, PlanDoc, Scheme,
    DEFAULT_DESIGN_CAP,
};
use dimg_core::deviation::{check_bound, simulate_trajectories, MonteCarloSection, TrajectoryRow};
use dimg_core::dm::{cost_iteration_check, solve, DEFAULT_HISTORY_CAP};
use dimg_core::gaussian::{cv_profile, gaussian_record, GaussianScenario, ImDesign};
use dimg_core::model::Violation;
use dimg_core::scenario::{load_scenario, Scenario};
use dimg_core::{DimgError, Execution, PomdpModel, Result};

use crate::output::{num, Meta, OutputDir};

/// Relation residuals and oracle gaps above this fail a run.
pub const VERIFY_TOL: f64 = 1e-7;

/// Closed forms against their numerical oracles.
pub const GAUSSIAN_VERIFY_TOL: f64 = 1e-4;

/// Trajectories exported to CSV per simulated run.
pub const TRAJECTORY_ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Everything that determines a run's outputs, minus the output directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: &'static str,
    pub scenario: String,
    pub out: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub grid: Option<usize>,
    pub cap: Option<usize>,
    pub scheme: Scheme,
    pub verify: bool,
    pub format: Format,
    pub plan: Option<PathBuf>,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    command: &'a str,
    scenario: serde_json::Value,
    seed: u64,
    samples: usize,
    grid: Option<usize>,
    cap: Option<usize>,
    scheme: Scheme,
    verify: bool,
    format: Format,
    plan: Option<serde_json::Value>,
}

/// Why a run ended without success.
#[derive(Debug)]
pub enum Failure {
    /// Validation, consistency, verification or bound failure.
    Check(String),
    Error(DimgError),
}

impl From<DimgError> for Failure {
    fn from(e: DimgError) -> Self {
        Failure::Error(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Error(DimgError::InvalidModel(_) | DimgError::Lp(_)) => 1,
            Failure::Error(DimgError::Resource { .. }) => 3,
            Failure::Error(DimgError::Parse(_) | DimgError::Io { .. } | DimgError::Domain(_)) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(m) => write!(f, "{m}"),
            Failure::Error(e) => write!(f, "{e}"),
        }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

fn read_json(path: &std::path::Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|source| DimgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DimgError::Parse(format!("{}: {e}", path.display())))
}

impl RunConfig {
    fn meta(&self, scenario_name: &str, scenario: serde_json::Value) -> Result<Meta> {
        let plan = self.plan.as_deref().map(read_json).transpose()?;
        let hashed = HashedConfig {
            command: self.command,
            scenario,
            seed: self.seed,
            samples: self.samples,
            grid: self.grid,
            cap: self.cap,
            scheme: self.scheme,
            verify: self.verify,
            format: self.format,
            plan,
        };
        Ok(Meta::new(self.command, scenario_name, &hashed, self.seed))
    }

    fn open(&self, scenario: &Scenario) -> Result<OutputDir> {
        let doc = serde_json::to_value(scenario.to_doc()).expect("scenario documents serialize");
        OutputDir::create(&self.out, self.meta(scenario.name(), doc)?)
    }

    fn load(&self) -> Result<Scenario> {
        load_scenario(&self.scenario, self.grid)
    }

    fn dm_cap(&self) -> usize {
        self.cap.unwrap_or(DEFAULT_HISTORY_CAP)
    }

    fn design_cap(&self) -> usize {
        self.cap.unwrap_or(DEFAULT_DESIGN_CAP)
    }
}

fn announce(out: &OutputDir) {
    for p in &out.written {
        println!("wrote {}", p.display());
    }
}

#[derive(Serialize)]
struct ViolationOut {
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<Violation>,
}

#[derive(Serialize)]
struct ValidationOut {
    valid: bool,
    kind: &'static str,
    violations: Vec<ViolationOut>,
}

pub fn validate(cfg: &RunConfig) -> Outcome {
    let (result, kind) = match cfg.load() {
        Ok(s @ Scenario::Finite { .. }) => (Ok(s), "finite"),
        Ok(s @ Scenario::Gaussian { .. }) => (Ok(s), "gaussian"),
        Err(DimgError::InvalidModel(report)) => (Err(report.violations), "finite"),
        Err(DimgError::Domain(msg)) => (
            Err(vec![Violation::Parameter {
                field: "params".into(),
                detail: msg,
            }]),
            "gaussian",
        ),
        Err(e) => return Err(e.into()),
    };
    let (name, scenario_value) = match &result {
        Ok(s) => (s.name().to_string(), serde_json::to_value(s.to_doc()).unwrap()),
        Err(_) => {
            let v = read_json(std::path::Path::new(&cfg.scenario))?;
            let name = v.get("name").and_then(|n| n.as_str()).unwrap_or_default().to_string();
            (name, v)
        }
    };
    let mut out = OutputDir::create(&cfg.out, cfg.meta(&name, scenario_value)?)?;
    let violations = result.err().unwrap_or_default();
    let body = ValidationOut {
        valid: violations.is_empty(),
        kind,
        violations: violations
            .iter()
            .map(|v| ViolationOut {
                message: v.to_string(),
                detail: Some(v.clone()),
            })
            .collect(),
    };
    match cfg.format {
        Format::Json => out.json("validation.json", &body)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = body
                .violations
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), v.message.clone()])
                .collect();
            out.csv("validation.csv", &["index", "message"], &rows)?;
        }
    }
    announce(&out);
    if body.valid {
        println!("scenario '{name}' is valid");
        Ok(())
    } else {
        for v in &body.violations {
            println!("violation: {}", v.message);
        }
        Err(Failure::Check(format!(
            "scenario '{name}' has {} violation(s)",
            body.violations.len()
        )))
    }
}

#[derive(Serialize)]
struct PolicyEntry {
    stage: usize,
    history: String,
    states: Vec<usize>,
    actions: Vec<usize>,
    action: usize,
    action_label: String,
}

#[derive(Serialize)]
struct PolicyOut {
    horizon: usize,
    observable_states: Vec<String>,
    actions: Vec<String>,
    entries: Vec<PolicyEntry>,
}

#[derive(Serialize)]
struct ValueEntry {
    stage: usize,
    history: String,
    value: f64,
}

#[derive(Serialize)]
struct InitialValue {
    x: usize,
    label: String,
    value: f64,
}

#[derive(Serialize)]
struct CostIterationGap {
    max_gap: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SolveDmOut {
    horizon: usize,
    dm_discount: f64,
    initial_values: Vec<InitialValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_value: Option<f64>,
    histories_per_stage: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_iteration: Option<CostIterationGap>,
}

fn labels(points: &[dimg_core::model::Point]) -> Vec<String> {
    points.iter().map(|p| p.label.clone()).collect()
}

fn finite(s: &Scenario) -> Result<&PomdpModel> {
    s.model()
}

pub fn solve_dm(cfg: &RunConfig) -> Outcome {
    let scenario = cfg.load()?;
    let model = finite(&scenario)?;
    let sol = solve(model, cfg.dm_cap(), Execution::default())?;
    let mut out = cfg.open(&scenario)?;

    let entries = sol
        .policy
        .entries()
        .map(|(h, a)| PolicyEntry {
            stage: h.stage(),
            history: h.key(),
            states: h.states.clone(),
            actions: h.actions.clone(),
            action: a,
            action_label: model.actions[a].label.clone(),
        })
        .collect();
    out.json(
        "policy.json",
        &PolicyOut {
            horizon: model.horizon,
            observable_states: labels(&model.observable_states),
            actions: labels(&model.actions),
            entries,
        },
    )?;

    let values: Vec<ValueEntry> = sol
        .values
        .stages
        .iter()
        .enumerate()
        .flat_map(|(n, t)| {
            t.iter().map(move |(h, &v)| ValueEntry {
                stage: n,
                history: h.key(),
                value: v,
            })
        })
        .collect();
    match cfg.format {
        Format::Json => out.json("values.json", &serde_json::json!({ "values": values }))?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = values
                .iter()
                .map(|e| vec![e.stage.to_string(), e.history.clone(), num(e.value)])
                .collect();
            out.csv("values.csv", &["stage", "history", "value"], &rows)?;
        }
    }

    let cost_iteration = cfg.verify.then(|| {
        let max_gap = cost_iteration_check(model, &sol.policy)
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        CostIterationGap {
            max_gap,
            pass: max_gap < VERIFY_TOL,
        }
    });
    let summary = SolveDmOut {
        horizon: model.horizon,
        dm_discount: model.dm_discount,
        initial_values: sol
            .initial_values
            .iter()
            .enumerate()
            .map(|(x, &v)| InitialValue {
                x,
                label: model.observable_states[x].label.clone(),
                value: v,
            })
            .collect(),
        expected_value: sol.expected_value(model).ok(),
        histories_per_stage: sol.values.stages.iter().map(|t| t.len()).collect(),
        cost_iteration,
    };
    out.json("solve_dm.json", &summary)?;
    announce(&out);
    for v in &summary.initial_values {
        println!("J_N({}) = {}", v.label, num(v.value));
    }
    if let Some(c) = &summary.cost_iteration {
        println!("cost-iteration gap = {:e}", c.max_gap);
        if !c.pass {
            return Err(Failure::Check(format!(
                "cost-iteration gap {:e} exceeds {VERIFY_TOL:e}",
                c.max_gap
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanOut {
    consistency_max_residual: f64,
    consistency_pass: bool,
    plan: PlanDoc,
}

/// The plan document with each entry's stage value and consistency residual.
fn annotated_plan(
    model: &PomdpModel,
    plan: &ManipulationPlan,
    ea: &ExAnteSolution,
    it: &InterimSolution,
    consistency: &ConsistencyReport,
) -> PlanDoc {
    let residuals: BTreeMap<(usize, &str), f64> = consistency
        .entries
        .iter()
        .map(|(n, key, r)| ((*n, key.as_str()), *r))
        .collect();
    let mut doc = PlanDoc::from(plan);
    for (n, stage) in doc.stages.iter_mut().enumerate() {
        for e in stage {
            let jh = &e.history;
            e.value = match plan.scheme() {
                Scheme::ExAnte => ea.values.stages[n].get(jh).copied(),
                Scheme::Interim => it.values.stages[n].get(jh).map(|w| {
                    let q = hidden_marginal(model, jh);
                    q.iter().zip(w).map(|(q, w)| q * w.unwrap_or(0.0)).sum()
                }),
            };
            e.residual = residuals.get(&(n, jh.key().as_str())).copied();
        }
    }
    doc
}

#[derive(Serialize)]
struct DesignOut {
    scheme: Scheme,
    /// `W_N` of the ex ante recursion.
    ex_ante_value: f64,
    /// `Σ_y W^Y_N(y) Q0Y(y)` of the interim recursion.
    interim_value: f64,
    /// Exact IM objective of the emitted plan.
    plan_objective: f64,
    /// IM objective of the disintegrated ex ante plan.
    disintegrated_objective: f64,
    relation_max_residual: f64,
    consistency_max_residual: f64,
    pass: bool,
}

pub fn design(cfg: &RunConfig) -> Outcome {
    let scenario = cfg.load()?;
    let model = finite(&scenario)?;
    let exec = Execution::default();
    let policy = solve(model, cfg.dm_cap(), exec)?.policy;
    let ea = solve_ex_ante(model, &policy, cfg.design_cap(), exec)?;
    let it = solve_interim(model, &policy, cfg.design_cap(), exec)?;
    let relation = relation_residuals(model, &ea, &it)
        .iter()
        .map(|r| r.2)
        .fold(0.0, f64::max);
    let disintegrated = ManipulationPlan::Interim(disintegrate(&ea.plan, model)?);
    let disintegrated_objective = evaluate_im_objective(model, &policy, &disintegrated)?;
    let plan = match cfg.scheme {
        Scheme::ExAnte => ManipulationPlan::ExAnte(ea.plan.clone()),
        Scheme::Interim => ManipulationPlan::Interim(it.plan.clone()),
    };
    let plan_objective = evaluate_im_objective(model, &policy, &plan)?;
    let consistency = check_consistency(&plan, model);
    let pass = consistency.pass && relation < VERIFY_TOL;

    let mut out = cfg.open(&scenario)?;
    out.json(
        "plan.json",
        &PlanOut {
            consistency_max_residual: consistency.max_residual,
            consistency_pass: consistency.pass,
            plan: annotated_plan(model, &plan, &ea, &it, &consistency),
        },
    )?;
    let fmt_w = |w: Option<f64>| w.map_or_else(String::new, num);
    match (cfg.scheme, cfg.format) {
        (Scheme::ExAnte, Format::Json) => {
            let rows: Vec<ValueEntry> = ea
                .values
                .stages
                .iter()
                .enumerate()
                .flat_map(|(n, t)| {
                    t.iter().map(move |(jh, &w)| ValueEntry {
                        stage: n,
                        history: jh.key(),
                        value: w,
                    })
                })
                .collect();
            out.json("design_values.json", &serde_json::json!({ "values": rows }))?;
        }
        (Scheme::ExAnte, Format::Csv) => {
            let rows: Vec<Vec<String>> = ea
                .values
                .stages
                .iter()
                .enumerate()
                .flat_map(|(n, t)| t.iter().map(move |(jh, &w)| vec![n.to_string(), jh.key(), num(w)]))
                .collect();
            out.csv("design_values.csv", &["stage", "history", "w"], &rows)?;
        }
        (Scheme::Interim, Format::Json) => {
            let rows: Vec<serde_json::Value> = it
                .values
                .stages
                .iter()
                .enumerate()
                .flat_map(|(n, t)| {
                    t.iter()
                        .map(move |(jh, w)| serde_json::json!({ "stage": n, "history": jh.key(), "w_y": w }))
                })
                .collect();
            out.json("design_values.json", &serde_json::json!({ "values": rows }))?;
        }
        (Scheme::Interim, Format::Csv) => {
            let mut rows = Vec::new();
            for (n, t) in it.values.stages.iter().enumerate() {
                for (jh, w) in t {
                    for (y, v) in w.iter().enumerate() {
                        rows.push(vec![
                            n.to_string(),
                            jh.key(),
                            model.hidden_states[y].label.clone(),
                            fmt_w(*v),
                        ]);
                    }
                }
            }
            out.csv("design_values.csv", &["stage", "history", "y", "w"], &rows)?;
        }
    }
    let summary = DesignOut {
        scheme: cfg.scheme,
        ex_ante_value: ea.value,
        interim_value: it.value,
        plan_objective,
        disintegrated_objective,
        relation_max_residual: relation,
        consistency_max_residual: consistency.max_residual,
        pass,
    };
    out.json("design.json", &summary)?;
    announce(&out);
    println!("W_N (ex ante) = {}", num(ea.value));
    println!("interim value = {}", num(it.value));
    println!("relation residual = {relation:e}");
    println!("consistency residual = {:e}", consistency.max_residual);
    if !pass {
        return Err(Failure::Check(format!(
            "design checks failed: relation residual {relation:e}, consistency residual {:e}",
            consistency.max_residual
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct DeviationOut {
    plan_source: String,
    scheme: Scheme,
    #[serde(flatten)]
    report: dimg_core::deviation::DeviationReport,
}

fn trajectory_rows(run: &str, rows: &[TrajectoryRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|t| {
            vec![
                run.to_string(),
                t.trajectory.to_string(),
                t.stage.to_string(),
                t.x.to_string(),
                t.y.to_string(),
                t.a.to_string(),
                num(t.c),
                num(t.s),
            ]
        })
        .collect()
}

pub fn deviation(cfg: &RunConfig) -> Outcome {
    let scenario = cfg.load()?;
    let model = finite(&scenario)?;
    model.require_initial_observable()?;
    let exec = Execution::default();
    let policy = solve(model, cfg.dm_cap(), exec)?.policy;
    let (plan, source) = match &cfg.plan {
        Some(path) => {
            let doc: PlanDoc = serde_json::from_value(strip_meta(read_json(path)?)?)
                .map_err(|e| DimgError::Parse(format!("{}: {e}", path.display())))?;
            let plan = doc.into_plan(model)?;
            let c = check_consistency(&plan, model);
            if !c.pass {
                return Err(Failure::Check(format!(
                    "plan {} violates stagewise consistency (max residual {:e})",
                    path.display(),
                    c.max_residual
                )));
            }
            (plan, path.display().to_string())
        }
        None => match cfg.scheme {
            Scheme::ExAnte => (
                ManipulationPlan::ExAnte(solve_ex_ante(model, &policy, cfg.design_cap(), exec)?.plan),
                "designed".to_string(),
            ),
            Scheme::Interim => (
                ManipulationPlan::Interim(solve_interim(model, &policy, cfg.design_cap(), exec)?.plan),
                "designed".to_string(),
            ),
        },
    };
    let mut report = check_bound(model, &policy, &plan)?;
    let mut trajectories = Vec::new();
    if cfg.samples > 0 {
        let keep = if cfg.format == Format::Csv { TRAJECTORY_ROWS } else { 0 };
        let truth = simulate_trajectories(model, &policy, None, cfg.samples, cfg.seed, keep, exec)?;
        let manip = simulate_trajectories(model, &policy, Some(&plan), cfg.samples, cfg.seed, keep, exec)?;
        trajectories.extend(trajectory_rows("true", &truth.trajectories));
        trajectories.extend(trajectory_rows("manipulated", &manip.trajectories));
        report.monte_carlo = Some(MonteCarloSection {
            samples: cfg.samples,
            seed: cfg.seed,
            j_true_mean: truth.mean,
            j_true_std_error: truth.std_error,
            j_manipulated_mean: manip.mean,
            j_manipulated_std_error: manip.std_error,
        });
    }
    let mut out = cfg.open(&scenario)?;
    let body = DeviationOut {
        plan_source: source,
        scheme: plan.scheme(),
        report,
    };
    out.json("deviation.json", &body)?;
    if cfg.format == Format::Csv {
        let eps: Vec<Vec<String>> = body
            .report
            .epsilon
            .iter()
            .enumerate()
            .map(|(k, e)| vec![k.to_string(), num(*e)])
            .collect();
        out.csv("epsilon.csv", &["stage", "epsilon"], &eps)?;
        let r = &body.report;
        let row = vec![
            body.plan_source.clone(),
            num(r.j_true),
            num(r.j_manipulated),
            num(r.deviation),
            num(r.c_bar),
            num(r.bound_rhs),
            num(r.slack),
            r.holds.to_string(),
        ];
        out.csv(
            "deviation.csv",
            &[
                "plan",
                "j_true",
                "j_manipulated",
                "deviation",
                "c_bar",
                "bound_rhs",
                "slack",
                "holds",
            ],
            &[row],
        )?;
        if !trajectories.is_empty() {
            out.csv(
                "trajectories.csv",
                &["run", "trajectory", "stage", "x", "y", "a", "c", "s"],
                &trajectories,
            )?;
        }
    }
    announce(&out);
    let r = &body.report;
    println!("J = {}, J~ = {}", num(r.j_true), num(r.j_manipulated));
    println!(
        "deviation = {}, bound = {}, slack = {}",
        num(r.deviation),
        num(r.bound_rhs),
        num(r.slack)
    );
    if let Some(mc) = &r.monte_carlo {
        println!(
            "monte carlo ({} samples, seed {}): J = {} ± {}, J~ = {} ± {}",
            mc.samples,
            mc.seed,
            num(mc.j_true_mean),
            num(mc.j_true_std_error),
            num(mc.j_manipulated_mean),
            num(mc.j_manipulated_std_error)
        );
    }
    if !r.holds {
        return Err(Failure::Check(format!(
            "deviation bound violated, slack {}",
            num(r.slack)
        )));
    }
    Ok(())
}

/// Accept both a bare plan document and a `plan.json` written by `design`.
fn strip_meta(v: serde_json::Value) -> Result<serde_json::Value> {
    match v {
        serde_json::Value::Object(mut map) if map.contains_key("meta") => map
            .remove("plan")
            .ok_or_else(|| DimgError::Parse("plan file has no 'plan' field".into())),
        other => Ok(other),
    }
}

#[derive(Serialize)]
struct GaussianOut {
    params: GaussianScenario,
    #[serde(flatten)]
    record: dimg_core::gaussian::GaussianRecord,
}

pub fn gaussian(cfg: &RunConfig) -> Outcome {
    let scenario = cfg.load()?;
    let Scenario::Gaussian { params, name } = &scenario else {
        return Err(DimgError::domain(format!("scenario '{}' is not a Gaussian scenario", scenario.name())).into());
    };
    let record = gaussian_record(params, cfg.verify)?;
    let mut out = cfg.open(&scenario)?;
    let body = GaussianOut {
        params: *params,
        record,
    };
    out.json("gaussian.json", &body)?;
    if cfg.format == Format::Csv {
        let grid: Vec<f64> = (1..=40).map(|k| params.c_hat * k as f64 / 10.0).collect();
        let rows: Vec<Vec<String>> = grid
            .iter()
            .filter_map(|&r| cv_profile(params, &[r]).ok())
            .flatten()
            .map(|(r, d, cv)| vec![num(r), num(d), num(cv)])
            .collect();
        out.csv("cv_profile.csv", &["r_hat", "abs_r_minus_c", "cv"], &rows)?;
    }
    announce(&out);
    let r = &body.record;
    println!("scenario '{name}': iota = {}, a1* = {}", num(r.iota), num(r.a1));
    match r.design {
        ImDesign::Optimal { mean, std_dev, .. } => {
            println!("design: mean = {}, std dev = {}", num(mean), num(std_dev))
        }
        ImDesign::NoLeverage => println!("design: no leverage (iota = 0)"),
    }
    if let Some(g) = &r.oracle_gaps {
        let worst = g.policy.max(g.design_mean).max(g.design_std_dev);
        println!(
            "oracle gaps: policy {:e}, mean {:e}, std dev {:e}",
            g.policy, g.design_mean, g.design_std_dev
        );
        if worst > GAUSSIAN_VERIFY_TOL {
            return Err(Failure::Check(format!(
                "oracle gap {worst:e} exceeds {GAUSSIAN_VERIFY_TOL:e}"
            )));
        }
    }
    Ok(())
}
