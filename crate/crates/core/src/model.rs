//! The finite game instance: spaces, transition kernel, costs and discounts.
//!
//! States and actions are addressed by index into the ordered spaces. The
//! kernel is stored densely as `q[x][y][a][x'][y']`, and both cost tables as
//! `c[x][y][a]`. Everything here is immutable once built; [`validate_model`]
//! reports violated invariants as data rather than failing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DimgError, Result};
use crate::utility::Utility;

/// Tolerance for probability-mass checks.
pub const MASS_TOL: f64 = 1e-9;

/// A labeled point of a finite space, with an optional real embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Point {
    pub fn new(label: impl Into<String>, value: Option<f64>) -> Self {
        Point {
            label: label.into(),
            value,
        }
    }

    /// Points labeled `prefix0, prefix1, …` without embeddings.
    pub fn indexed(prefix: &str, n: usize) -> Vec<Point> {
        (0..n).map(|i| Point::new(format!("{prefix}{i}"), None)).collect()
    }
}

/// A finite partially observed decision problem together with the
/// manipulator's cost data.
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpModel {
    pub observable_states: Vec<Point>,
    pub hidden_states: Vec<Point>,
    pub actions: Vec<Point>,
    /// `D(x)`: feasible action indices per observable state, ascending.
    pub feasible_actions: Vec<Vec<usize>>,
    /// Flat `q[x][y][a][x'][y']`.
    pub kernel: Vec<f64>,
    pub initial_hidden_law: Vec<f64>,
    pub initial_observable_law: Option<Vec<f64>>,
    /// Flat `c[x][y][a]`.
    pub dm_cost: Vec<f64>,
    /// Flat `r[x][y][a]`, with any weighting scalar already absorbed.
    pub im_cost: Vec<f64>,
    pub dm_discount: f64,
    pub im_discount: f64,
    pub horizon: usize,
    pub utility: Utility,
}

impl PomdpModel {
    pub fn nx(&self) -> usize {
        self.observable_states.len()
    }

    pub fn ny(&self) -> usize {
        self.hidden_states.len()
    }

    pub fn na(&self) -> usize {
        self.actions.len()
    }

    #[inline]
    fn row_offset(&self, x: usize, y: usize, a: usize) -> usize {
        ((x * self.ny() + y) * self.na() + a) * self.nx() * self.ny()
    }

    #[inline]
    fn cost_index(&self, x: usize, y: usize, a: usize) -> usize {
        (x * self.ny() + y) * self.na() + a
    }

    /// `q(x', y' | x, y, a)`.
    #[inline]
    pub fn q(&self, x: usize, y: usize, a: usize, x_next: usize, y_next: usize) -> f64 {
        self.kernel[self.row_offset(x, y, a) + x_next * self.ny() + y_next]
    }

    /// The joint row `q(·, · | x, y, a)` laid out `[x'][y']`.
    pub fn kernel_row(&self, x: usize, y: usize, a: usize) -> &[f64] {
        let off = self.row_offset(x, y, a);
        &self.kernel[off..off + self.nx() * self.ny()]
    }

    #[inline]
    pub fn c(&self, x: usize, y: usize, a: usize) -> f64 {
        self.dm_cost[self.cost_index(x, y, a)]
    }

    #[inline]
    pub fn r(&self, x: usize, y: usize, a: usize) -> f64 {
        self.im_cost[self.cost_index(x, y, a)]
    }

    pub fn is_feasible(&self, x: usize, a: usize) -> bool {
        self.feasible_actions.get(x).is_some_and(|d| d.contains(&a))
    }

    pub(crate) fn require_feasible(&self, x: usize, a: usize) -> Result<()> {
        if x >= self.nx() || a >= self.na() {
            return Err(DimgError::domain(format!("state {x} or action {a} out of range")));
        }
        if !self.is_feasible(x, a) {
            return Err(DimgError::domain(format!(
                "action {} is not feasible in observable state {}",
                self.actions[a].label, self.observable_states[x].label
            )));
        }
        Ok(())
    }

    /// `c̄ = max c` over the whole table.
    pub fn max_dm_cost(&self) -> f64 {
        self.dm_cost.iter().copied().fold(0.0, f64::max)
    }

    /// The true joint law `Q(·,· | x, y, a)` as a distribution table.
    pub fn kernel_distribution(&self, x: usize, y: usize, a: usize) -> DistributionXY {
        DistributionXY::from_table(self.nx(), self.ny(), self.kernel_row(x, y, a).to_vec())
    }

    /// `Q0 = Q0X ⊗ Q0Y`, when the observable prior is configured.
    pub fn initial_joint(&self) -> Option<DistributionXY> {
        let q0x = self.initial_observable_law.as_ref()?;
        let mut p = Vec::with_capacity(self.nx() * self.ny());
        for &px in q0x {
            for &py in &self.initial_hidden_law {
                p.push(px * py);
            }
        }
        Some(DistributionXY::from_table(self.nx(), self.ny(), p))
    }

    /// `Q0X`, or a domain error when the scenario leaves it out.
    pub fn require_initial_observable(&self) -> Result<&[f64]> {
        self.initial_observable_law
            .as_deref()
            .ok_or_else(|| DimgError::domain("the model has no initial observable law Q0X"))
    }
}

/// `q^X(· | x, y, a) = Σ_{y'} q(·, y' | x, y, a)`.
pub fn kernel_x_marginal(model: &PomdpModel, x: usize, y: usize, a: usize) -> Result<Vec<f64>> {
    model.require_feasible(x, a)?;
    if y >= model.ny() {
        return Err(DimgError::domain(format!("hidden state {y} out of range")));
    }
    let ny = model.ny();
    Ok(model
        .kernel_row(x, y, a)
        .chunks_exact(ny)
        .map(|row| row.iter().sum())
        .collect())
}

/// `q^Y(· | x, y, a) = Σ_{x'} q(x', · | x, y, a)`.
pub fn kernel_y_marginal(model: &PomdpModel, x: usize, y: usize, a: usize) -> Result<Vec<f64>> {
    model.require_feasible(x, a)?;
    if y >= model.ny() {
        return Err(DimgError::domain(format!("hidden state {y} out of range")));
    }
    Ok(y_marginal_unchecked(model, x, y, a))
}

pub(crate) fn y_marginal_unchecked(model: &PomdpModel, x: usize, y: usize, a: usize) -> Vec<f64> {
    let ny = model.ny();
    let mut out = vec![0.0; ny];
    for row in model.kernel_row(x, y, a).chunks_exact(ny) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// A probability table over `X × Y`, laid out `[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionXY {
    pub nx: usize,
    pub ny: usize,
    pub p: Vec<f64>,
}

impl DistributionXY {
    pub fn from_table(nx: usize, ny: usize, p: Vec<f64>) -> Self {
        assert_eq!(p.len(), nx * ny, "distribution table has the wrong size");
        DistributionXY { nx, ny, p }
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::from_table(nx, ny, vec![0.0; nx * ny])
    }

    /// Build a joint table from a conditional kernel `φ(x | y)` and a
    /// Y-marginal `m(y)`: `p(x, y) = φ(x | y) m(y)`.
    pub fn from_conditional(rows: &[Vec<f64>], marginal: &[f64]) -> Self {
        let ny = marginal.len();
        let nx = rows.first().map_or(0, Vec::len);
        let mut p = vec![0.0; nx * ny];
        for (y, (row, &m)) in rows.iter().zip(marginal).enumerate() {
            for (x, &phi) in row.iter().enumerate() {
                p[x * ny + y] = phi * m;
            }
        }
        Self::from_table(nx, ny, p)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.ny + y]
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        self.p.chunks_exact(self.ny).map(|r| r.iter().sum()).collect()
    }

    pub fn y_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ny];
        for row in self.p.chunks_exact(self.ny) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Entries nonnegative and total mass one within [`MASS_TOL`].
    pub fn is_valid(&self) -> bool {
        self.p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (self.mass() - 1.0).abs() <= MASS_TOL
    }
}

/// One violated model invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Dimension {
        field: String,
        expected: usize,
        found: usize,
    },
    KernelEntry {
        x: String,
        y: String,
        a: String,
        value: f64,
    },
    KernelRowMass {
        x: String,
        y: String,
        a: String,
        sum: f64,
    },
    InitialLaw {
        field: String,
        detail: String,
    },
    EmptyFeasibleSet {
        x: String,
    },
    FeasibleActionOutOfRange {
        x: String,
        action: usize,
    },
    Cost {
        field: String,
        x: String,
        y: String,
        a: String,
        value: f64,
    },
    Parameter {
        field: String,
        detail: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { field, expected, found } => {
                write!(f, "{field}: expected {expected} entries, found {found}")
            }
            Violation::KernelEntry { x, y, a, value } => {
                write!(f, "kernel row ({x}, {y}, {a}) has entry {value} outside [0, 1]")
            }
            Violation::KernelRowMass { x, y, a, sum } => {
                write!(f, "kernel row ({x}, {y}, {a}) sums to {sum}")
            }
            Violation::InitialLaw { field, detail } => write!(f, "{field}: {detail}"),
            Violation::EmptyFeasibleSet { x } => write!(f, "feasible action set of {x} is empty"),
            Violation::FeasibleActionOutOfRange { x, action } => {
                write!(f, "feasible actions of {x} reference unknown action {action}")
            }
            Violation::Cost { field, x, y, a, value } => {
                write!(f, "{field}({x}, {y}, {a}) = {value} is not a finite nonnegative real")
            }
            Violation::Parameter { field, detail } => write!(f, "{field}: {detail}"),
        }
    }
}

/// The outcome of [`validate_model`]: ok iff `violations` is empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

fn check_law(field: &str, law: &[f64], n: usize, out: &mut Vec<Violation>) {
    if law.len() != n {
        out.push(Violation::Dimension {
            field: field.into(),
            expected: n,
            found: law.len(),
        });
        return;
    }
    if let Some(v) = law.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        out.push(Violation::InitialLaw {
            field: field.into(),
            detail: format!("entry {v} outside [0, 1]"),
        });
    }
    let sum: f64 = law.iter().sum();
    if (sum - 1.0).abs() > MASS_TOL {
        out.push(Violation::InitialLaw {
            field: field.into(),
            detail: format!("sums to {sum}"),
        });
    }
}

/// Check every structural invariant of the model.
pub fn validate_model(model: &PomdpModel) -> ValidationReport {
    let mut v = Vec::new();
    let (nx, ny, na) = (model.nx(), model.ny(), model.na());
    for (field, n) in [("observable_states", nx), ("hidden_states", ny), ("actions", na)] {
        if n == 0 {
            v.push(Violation::Dimension {
                field: field.into(),
                expected: 1,
                found: 0,
            });
        }
    }
    let dims_ok = [
        ("kernel", nx * ny * na * nx * ny, model.kernel.len()),
        ("dm_cost", nx * ny * na, model.dm_cost.len()),
        ("im_cost", nx * ny * na, model.im_cost.len()),
        ("feasible_actions", nx, model.feasible_actions.len()),
    ]
    .into_iter()
    .fold(true, |ok, (field, expected, found)| {
        if expected != found {
            v.push(Violation::Dimension {
                field: field.into(),
                expected,
                found,
            });
            false
        } else {
            ok
        }
    });

    if dims_ok && nx * ny * na > 0 {
        let xs = &model.observable_states;
        let ys = &model.hidden_states;
        let as_ = &model.actions;
        for x in 0..nx {
            for y in 0..ny {
                for a in 0..na {
                    let row = model.kernel_row(x, y, a);
                    if let Some(&bad) = row.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
                        v.push(Violation::KernelEntry {
                            x: xs[x].label.clone(),
                            y: ys[y].label.clone(),
                            a: as_[a].label.clone(),
                            value: bad,
                        });
                    }
                    let sum: f64 = row.iter().sum();
                    if !((sum - 1.0).abs() <= MASS_TOL) {
                        v.push(Violation::KernelRowMass {
                            x: xs[x].label.clone(),
                            y: ys[y].label.clone(),
                            a: as_[a].label.clone(),
                            sum,
                        });
                    }
                    for (field, val) in [("dm_cost", model.c(x, y, a)), ("im_cost", model.r(x, y, a))] {
                        if !(val.is_finite() && val >= 0.0) {
                            v.push(Violation::Cost {
                                field: field.into(),
                                x: xs[x].label.clone(),
                                y: ys[y].label.clone(),
                                a: as_[a].label.clone(),
                                value: val,
                            });
                        }
                    }
                }
            }
        }
        for (x, d) in model.feasible_actions.iter().enumerate() {
            if d.is_empty() {
                v.push(Violation::EmptyFeasibleSet { x: xs[x].label.clone() });
            }
            for &a in d {
                if a >= na {
                    v.push(Violation::FeasibleActionOutOfRange {
                        x: xs[x].label.clone(),
                        action: a,
                    });
                }
            }
            if d.windows(2).any(|w| w[0] >= w[1]) {
                v.push(Violation::Parameter {
                    field: format!("feasible_actions[{}]", xs[x].label),
                    detail: "indices must be strictly ascending".into(),
                });
            }
        }
    }

    check_law("initial_hidden_law", &model.initial_hidden_law, ny, &mut v);
    if let Some(q0x) = &model.initial_observable_law {
        check_law("initial_observable_law", q0x, nx, &mut v);
    }
    if !(model.dm_discount > 0.0 && model.dm_discount < 1.0) {
        v.push(Violation::Parameter {
            field: "dm_discount".into(),
            detail: format!("must lie in (0, 1), got {}", model.dm_discount),
        });
    }
    if !(model.im_discount > 0.0 && model.im_discount <= 1.0) {
        v.push(Violation::Parameter {
            field: "im_discount".into(),
            detail: format!("must lie in (0, 1], got {}", model.im_discount),
        });
    }
    if model.horizon == 0 {
        v.push(Violation::Parameter {
            field: "horizon".into(),
            detail: "must be a positive integer".into(),
        });
    }
    if let Err(detail) = model.utility.check() {
        v.push(Violation::Parameter {
            field: "utility".into(),
            detail,
        });
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2×2×2 model with the uniform kernel `q ≡ 0.25`.
    pub(crate) fn uniform_model() -> PomdpModel {
        PomdpModel {
            observable_states: Point::indexed("x", 2),
            hidden_states: Point::indexed("y", 2),
            actions: Point::indexed("a", 2),
            feasible_actions: vec![vec![0, 1], vec![0, 1]],
            kernel: vec![0.25; 32],
            initial_hidden_law: vec![0.5, 0.5],
            initial_observable_law: Some(vec![0.5, 0.5]),
            dm_cost: vec![1.0; 8],
            im_cost: vec![0.0; 8],
            dm_discount: 0.9,
            im_discount: 1.0,
            horizon: 2,
            utility: Utility::Identity,
        }
    }

    #[test]
    fn well_formed_model_validates() {
        assert!(validate_model(&uniform_model()).is_ok());
    }

    #[test]
    fn short_kernel_row_is_named() {
        let mut m = uniform_model();
        // row (x1, y0, a1) occupies [offset, offset + 4)
        let off = ((1 * 2 + 0) * 2 + 1) * 4;
        m.kernel[off] = 0.15;
        let report = validate_model(&m);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::KernelRowMass { x, y, a, sum } => {
                assert_eq!((x.as_str(), y.as_str(), a.as_str()), ("x1", "y0", "a1"));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn empty_feasible_set_is_named() {
        let mut m = uniform_model();
        m.feasible_actions[1].clear();
        let report = validate_model(&m);
        assert!(report
            .violations
            .contains(&Violation::EmptyFeasibleSet { x: "x1".into() }));
    }

    #[test]
    fn other_mutants_are_rejected() {
        let mutants: Vec<Box<dyn Fn(&mut PomdpModel)>> = vec![
            Box::new(|m| m.initial_hidden_law = vec![0.6, 0.6]),
            Box::new(|m| m.initial_observable_law = Some(vec![1.0, 0.1])),
            Box::new(|m| m.dm_cost[3] = -1.0),
            Box::new(|m| m.im_cost[0] = f64::INFINITY),
            Box::new(|m| m.dm_discount = 1.0),
            Box::new(|m| m.im_discount = 0.0),
            Box::new(|m| m.horizon = 0),
            Box::new(|m| m.kernel[0] = -0.25),
            Box::new(|m| m.kernel.pop().map(drop).unwrap_or(())),
            Box::new(|m| m.feasible_actions[0] = vec![5]),
            Box::new(|m| m.utility = Utility::Power { exponent: 0.0 }),
        ];
        for (i, mutate) in mutants.iter().enumerate() {
            let mut m = uniform_model();
            mutate(&mut m);
            assert!(!validate_model(&m).is_ok(), "mutant {i} accepted");
        }
    }

    #[test]
    fn marginals_of_uniform_kernel() {
        let m = uniform_model();
        assert_eq!(kernel_x_marginal(&m, 0, 1, 1).unwrap(), vec![0.5, 0.5]);
        assert_eq!(kernel_y_marginal(&m, 1, 0, 0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn marginals_of_deterministic_kernel() {
        let mut m = uniform_model();
        m.kernel.iter_mut().for_each(|v| *v = 0.0);
        // every row puts mass one on (x0, y1)
        for row in m.kernel.chunks_exact_mut(4) {
            row[1] = 1.0;
        }
        assert_eq!(kernel_x_marginal(&m, 0, 0, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(kernel_y_marginal(&m, 0, 0, 0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn infeasible_action_is_domain_error() {
        let mut m = uniform_model();
        m.feasible_actions[0] = vec![1];
        assert!(matches!(kernel_x_marginal(&m, 0, 0, 0), Err(DimgError::Domain(_))));
        assert!(kernel_y_marginal(&m, 0, 0, 1).is_ok());
    }

    #[test]
    fn distribution_marginals() {
        let d = DistributionXY::from_table(2, 3, vec![0.1, 0.2, 0.0, 0.3, 0.1, 0.3]);
        assert_eq!(d.x_marginal().len(), 2);
        assert!((d.x_marginal()[0] - 0.3).abs() < 1e-15);
        assert!((d.y_marginal()[2] - 0.3).abs() < 1e-15);
        assert!(d.is_valid());
        let back = DistributionXY::from_conditional(&[vec![0.25, 0.75], vec![1.0, 0.0]], &[0.4, 0.6]);
        for (got, want) in back.p.iter().zip([0.1, 0.6, 0.3, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }
}
