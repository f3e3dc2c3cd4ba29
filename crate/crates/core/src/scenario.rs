//! Scenario files: JSON documents describing a finite game or the
//! linear-Gaussian example, plus the bundled built-in scenarios.
//!
//! A finite scenario nests its tables by index:
//!
//! ```json
//! {
//!   "kind": "finite",
//!   "name": "tiny",
//!   "observable_states": [{"label": "x0"}],
//!   "hidden_states": [{"label": "y0"}],
//!   "actions": [{"label": "a0", "value": 0.5}],
//!   "kernel": [[[[[1.0]]]]],
//!   "dm_cost": [[[1.0]]],
//!   "im_cost": [[[0.0]]],
//!   "initial_hidden_law": [1.0],
//!   "initial_observable_law": [1.0],
//!   "dm_discount": 0.9,
//!   "im_discount": 0.9,
//!   "horizon": 3,
//!   "utility": {"family": "identity"}
//! }
//! ```
//!
//! `kernel[x][y][a][x'][y']`, `dm_cost[x][y][a]` and `im_cost[x][y][a]`.
//! `feasible_actions` (indices per observable state) defaults to every
//! action, and `im_cost_weight` multiplies `im_cost` on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discrete_example::DiscreteExample;
use crate::error::{DimgError, Result};
use crate::gaussian::GaussianScenario;
use crate::model::{validate_model, Point, PomdpModel};
use crate::utility::Utility;

/// Names accepted after the `builtin:` prefix.
pub const BUILTIN_NAMES: [&str; 3] = ["paper-discrete", "gaslight", "paper-gaussian"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteScenarioDoc {
    #[serde(default)]
    pub name: String,
    pub observable_states: Vec<Point>,
    pub hidden_states: Vec<Point>,
    pub actions: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_actions: Option<Vec<Vec<usize>>>,
    pub kernel: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    pub dm_cost: Vec<Vec<Vec<f64>>>,
    pub im_cost: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im_cost_weight: Option<f64>,
    pub initial_hidden_law: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_observable_law: Option<Vec<f64>>,
    pub dm_discount: f64,
    pub im_discount: f64,
    pub horizon: usize,
    pub utility: Utility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianScenarioDoc {
    #[serde(default)]
    pub name: String,
    pub params: GaussianScenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioDoc {
    Finite(FiniteScenarioDoc),
    Gaussian(GaussianScenarioDoc),
}

/// A loaded and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Finite { name: String, model: PomdpModel },
    Gaussian { name: String, params: GaussianScenario },
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::Finite { name, .. } | Scenario::Gaussian { name, .. } => name,
        }
    }

    pub fn model(&self) -> Result<&PomdpModel> {
        match self {
            Scenario::Finite { model, .. } => Ok(model),
            Scenario::Gaussian { name, .. } => Err(DimgError::domain(format!(
                "scenario '{name}' is a Gaussian scenario, not a finite model"
            ))),
        }
    }

    pub fn to_doc(&self) -> ScenarioDoc {
        match self {
            Scenario::Finite { name, model } => ScenarioDoc::Finite(export_model(name, model)),
            Scenario::Gaussian { name, params } => ScenarioDoc::Gaussian(GaussianScenarioDoc {
                name: name.clone(),
                params: *params,
            }),
        }
    }
}

fn flatten_checked<T: Clone>(field: &str, nested: &[Vec<T>], inner: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(nested.len() * inner);
    for (i, row) in nested.iter().enumerate() {
        if row.len() != inner {
            return Err(DimgError::Parse(format!(
                "{field}[{i}] has {} entries, expected {inner}",
                row.len()
            )));
        }
        out.extend(row.iter().cloned());
    }
    Ok(out)
}

fn flatten_table3(field: &str, t: &[Vec<Vec<f64>>], nx: usize, ny: usize, na: usize) -> Result<Vec<f64>> {
    if t.len() != nx {
        return Err(DimgError::Parse(format!("{field} has {} rows, expected {nx}", t.len())));
    }
    let rows: Vec<Vec<f64>> = t
        .iter()
        .enumerate()
        .map(|(x, by_y)| {
            if by_y.len() != ny {
                return Err(DimgError::Parse(format!(
                    "{field}[{x}] has {} entries, expected {ny}",
                    by_y.len()
                )));
            }
            flatten_checked(&format!("{field}[{x}]"), by_y, na)
        })
        .collect::<Result<_>>()?;
    flatten_checked(field, &rows, ny * na)
}

/// Convert a parsed document into a validated model.
pub fn build_finite(doc: &FiniteScenarioDoc) -> Result<PomdpModel> {
    let (nx, ny, na) = (doc.observable_states.len(), doc.hidden_states.len(), doc.actions.len());
    if doc.kernel.len() != nx {
        return Err(DimgError::Parse(format!(
            "kernel has {} rows, expected {nx}",
            doc.kernel.len()
        )));
    }
    let mut kernel = Vec::with_capacity(nx * ny * na * nx * ny);
    for (x, by_y) in doc.kernel.iter().enumerate() {
        if by_y.len() != ny {
            return Err(DimgError::Parse(format!(
                "kernel[{x}] has {} entries, expected {ny}",
                by_y.len()
            )));
        }
        for (y, by_a) in by_y.iter().enumerate() {
            if by_a.len() != na {
                return Err(DimgError::Parse(format!(
                    "kernel[{x}][{y}] has {} entries, expected {na}",
                    by_a.len()
                )));
            }
            for (a, row) in by_a.iter().enumerate() {
                if row.len() != nx {
                    return Err(DimgError::Parse(format!(
                        "kernel[{x}][{y}][{a}] has {} entries, expected {nx}",
                        row.len()
                    )));
                }
                kernel.extend(flatten_checked(&format!("kernel[{x}][{y}][{a}]"), row, ny)?);
            }
        }
    }
    let dm_cost = flatten_table3("dm_cost", &doc.dm_cost, nx, ny, na)?;
    let weight = doc.im_cost_weight.unwrap_or(1.0);
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(DimgError::Parse(format!(
            "im_cost_weight {weight} must be finite and nonnegative"
        )));
    }
    let im_cost = flatten_table3("im_cost", &doc.im_cost, nx, ny, na)?
        .into_iter()
        .map(|v| weight * v)
        .collect();
    let model = PomdpModel {
        observable_states: doc.observable_states.clone(),
        hidden_states: doc.hidden_states.clone(),
        actions: doc.actions.clone(),
        feasible_actions: doc
            .feasible_actions
            .clone()
            .unwrap_or_else(|| vec![(0..na).collect(); nx]),
        kernel,
        initial_hidden_law: doc.initial_hidden_law.clone(),
        initial_observable_law: doc.initial_observable_law.clone(),
        dm_cost,
        im_cost,
        dm_discount: doc.dm_discount,
        im_discount: doc.im_discount,
        horizon: doc.horizon,
        utility: doc.utility,
    };
    let report = validate_model(&model);
    if !report.is_ok() {
        return Err(DimgError::InvalidModel(report));
    }
    Ok(model)
}

/// The model as a nested document; `im_cost_weight` is left implicit.
pub fn export_model(name: &str, m: &PomdpModel) -> FiniteScenarioDoc {
    let (nx, ny, na) = (m.nx(), m.ny(), m.na());
    let table3 = |t: &[f64]| -> Vec<Vec<Vec<f64>>> {
        (0..nx)
            .map(|x| {
                (0..ny)
                    .map(|y| t[(x * ny + y) * na..(x * ny + y + 1) * na].to_vec())
                    .collect()
            })
            .collect()
    };
    let kernel = (0..nx)
        .map(|x| {
            (0..ny)
                .map(|y| {
                    (0..na)
                        .map(|a| m.kernel_row(x, y, a).chunks(ny).map(<[f64]>::to_vec).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    FiniteScenarioDoc {
        name: name.to_string(),
        observable_states: m.observable_states.clone(),
        hidden_states: m.hidden_states.clone(),
        actions: m.actions.clone(),
        feasible_actions: Some(m.feasible_actions.clone()),
        kernel,
        dm_cost: table3(&m.dm_cost),
        im_cost: table3(&m.im_cost),
        im_cost_weight: None,
        initial_hidden_law: m.initial_hidden_law.clone(),
        initial_observable_law: m.initial_observable_law.clone(),
        dm_discount: m.dm_discount,
        im_discount: m.im_discount,
        horizon: m.horizon,
        utility: m.utility,
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| DimgError::Parse(e.to_string()))?;
    match doc {
        ScenarioDoc::Finite(f) => {
            let model = build_finite(&f)?;
            Ok(Scenario::Finite { name: f.name, model })
        }
        ScenarioDoc::Gaussian(g) => {
            g.params.check()?;
            Ok(Scenario::Gaussian {
                name: g.name,
                params: g.params,
            })
        }
    }
}

/// Load a scenario from a path, or a built-in one from `builtin:NAME`.
///
/// `grid` sets the action-grid resolution of built-ins that discretize an
/// interval; file scenarios carry their own action set.
pub fn load_scenario(spec: &str, grid: Option<usize>) -> Result<Scenario> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return builtin(name, grid);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|source| DimgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn builtin(name: &str, grid: Option<usize>) -> Result<Scenario> {
    match name {
        "paper-discrete" => {
            let mut ex = DiscreteExample::default();
            if let Some(g) = grid {
                ex.grid = g;
            }
            Ok(Scenario::Finite {
                name: name.into(),
                model: ex.build()?,
            })
        }
        "gaslight" => Ok(Scenario::Finite {
            name: name.into(),
            model: gaslight_model()?,
        }),
        "paper-gaussian" => Ok(Scenario::Gaussian {
            name: name.into(),
            params: GaussianScenario::unit(),
        }),
        other => Err(DimgError::Parse(format!(
            "unknown built-in scenario '{other}', expected one of {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Defensive deception on a network target.
///
/// The hidden state says whether the target is compromisable (`C`) or not
/// (`U`); the attacker sees a weak or strong signal of either. Attacking a
/// compromisable target tends to get it hardened, and the observation
/// depends on the next hidden state only. The attacker is the DM; the
/// defender designs what the attacker sees.
pub fn gaslight_model() -> Result<PomdpModel> {
    let xs = ["WC", "SC", "WU", "SU"];
    let ys = ["C", "U"];
    let acts = ["wait", "attack"];
    // Observation law given the next hidden state, in the order of `xs`.
    let signal = [[0.3, 0.6, 0.07, 0.03], [0.07, 0.03, 0.3, 0.6]];
    // Probability that the next hidden state is `C`, by (y, a).
    let stay_c = [[0.9, 0.6], [0.15, 0.15]];
    let attacker_cost = [[1.0, 0.2], [0.3, 2.0]];
    let defender_cost = [[0.5, 3.0], [0.2, 0.0]];
    let (nx, ny, na) = (xs.len(), ys.len(), acts.len());
    let mut kernel = Vec::with_capacity(nx * ny * na * nx * ny);
    let mut dm_cost = Vec::with_capacity(nx * ny * na);
    let mut im_cost = Vec::with_capacity(nx * ny * na);
    for _x in 0..nx {
        for y in 0..ny {
            for a in 0..na {
                let next_y = [stay_c[y][a], 1.0 - stay_c[y][a]];
                for x_next in 0..nx {
                    for y_next in 0..ny {
                        kernel.push(next_y[y_next] * signal[y_next][x_next]);
                    }
                }
                dm_cost.push(attacker_cost[y][a]);
                im_cost.push(defender_cost[y][a]);
            }
        }
    }
    let labels = |v: &[&str]| v.iter().map(|s| Point::new(*s, None)).collect::<Vec<_>>();
    let model = PomdpModel {
        observable_states: labels(&xs),
        hidden_states: labels(&ys),
        actions: labels(&acts),
        feasible_actions: vec![(0..na).collect(); nx],
        kernel,
        initial_hidden_law: vec![0.5, 0.5],
        initial_observable_law: Some(vec![0.25; nx]),
        dm_cost,
        im_cost,
        dm_discount: 0.9,
        im_discount: 0.95,
        horizon: 3,
        utility: Utility::Exponential { lambda: 0.3 },
    };
    let report = validate_model(&model);
    if !report.is_ok() {
        return Err(DimgError::InvalidModel(report));
    }
    Ok(model)
}
