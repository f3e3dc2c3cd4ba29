//! Small dense linear programs and a bounded-variable primal simplex.
//!
//! Problems have the form
//!
//! ```text
//! minimize   cᵀx
//! subject to A_eq x  = b_eq
//!            A_ub x ≤ b_ub
//!            l ≤ x ≤ u        (l may be −∞, u may be +∞)
//! ```
//!
//! The solver keeps a full tableau, handles finite upper bounds in the ratio
//! test instead of as extra rows, and uses Bland's rule for both the entering
//! and the leaving choice. Phase 1 puts an artificial on every row.

use std::fmt::{self, Write as _};

use crate::error::{DimgError, Result};
use crate::model::DistributionXY;

pub const FEAS_TOL: f64 = 1e-8;
pub const OPT_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-9;
pub const ITERATION_CAP: usize = 100_000;

/// What a variable stands for in a stage design problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarTag {
    /// Joint probability `p(x, y)`.
    Joint {
        x: usize,
        y: usize,
    },
    /// Conditional probability `φ(x | ·)` of an interim design.
    Marginal {
        x: usize,
    },
    /// Auxiliary bounding `|p − q|` at cell `(x, y)`.
    Aux {
        x: usize,
        y: usize,
    },
    Free(usize),
}

impl fmt::Display for VarTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarTag::Joint { x, y } => write!(f, "p[{x},{y}]"),
            VarTag::Marginal { x } => write!(f, "phi[{x}]"),
            VarTag::Aux { x, y } => write!(f, "aux[{x},{y}]"),
            VarTag::Free(i) => write!(f, "v{i}"),
        }
    }
}

/// A dense LP with equality rows, inequality rows and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageLinearProgram {
    pub objective: Vec<f64>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ub_matrix: Vec<Vec<f64>>,
    pub ub_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub tags: Vec<VarTag>,
}

impl StageLinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Append a variable and return its index.
    pub fn add_var(&mut self, tag: VarTag, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.tags.push(tag);
        for row in self.eq_matrix.iter_mut().chain(self.ub_matrix.iter_mut()) {
            row.push(0.0);
        }
        self.objective.len() - 1
    }

    fn dense(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut row = vec![0.0; self.num_vars()];
        for &(j, v) in terms {
            row[j] += v;
        }
        row
    }

    /// `Σ coeff·x = rhs`.
    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.dense(terms);
        self.eq_matrix.push(row);
        self.eq_rhs.push(rhs);
    }

    /// `Σ coeff·x ≤ rhs`.
    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.dense(terms);
        self.ub_matrix.push(row);
        self.ub_rhs.push(rhs);
    }

    /// Dimension and bound consistency.
    pub fn check(&self) -> Result<()> {
        let n = self.num_vars();
        let shapes_ok = self.lower.len() == n
            && self.upper.len() == n
            && self.tags.len() == n
            && self.eq_matrix.len() == self.eq_rhs.len()
            && self.ub_matrix.len() == self.ub_rhs.len()
            && self.eq_matrix.iter().chain(&self.ub_matrix).all(|r| r.len() == n);
        if !shapes_ok {
            return Err(DimgError::Lp("inconsistent dimensions".into()));
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self
                .eq_matrix
                .iter()
                .chain(&self.ub_matrix)
                .flatten()
                .all(|v| v.is_finite())
            && self.eq_rhs.iter().chain(&self.ub_rhs).all(|v| v.is_finite());
        if !finite {
            return Err(DimgError::Lp("non-finite data".into()));
        }
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY)
        {
            return Err(DimgError::Lp("malformed bounds".into()));
        }
        Ok(())
    }

    /// `cᵀx`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |row: &[f64]| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        let eq = self.eq_matrix.iter().zip(&self.eq_rhs).map(|(r, b)| (dot(r) - b).abs());
        let ub = self
            .ub_matrix
            .iter()
            .zip(&self.ub_rhs)
            .map(|(r, b)| (dot(r) - b).max(0.0));
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0));
        eq.chain(ub).chain(bounds).fold(0.0, f64::max)
    }

    /// Plain-text listing of the problem, one row per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term = |row: &[f64]| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| format!("{v:+.6} {}", self.tags[j]))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "min {}", term(&self.objective));
        for (r, b) in self.eq_matrix.iter().zip(&self.eq_rhs) {
            let _ = writeln!(out, "  {} = {b:.6}", term(r));
        }
        for (r, b) in self.ub_matrix.iter().zip(&self.ub_rhs) {
            let _ = writeln!(out, "  {} <= {b:.6}", term(r));
        }
        for (j, tag) in self.tags.iter().enumerate() {
            let _ = writeln!(out, "  {:.6} <= {tag} <= {:.6}", self.lower[j], self.upper[j]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Result<(f64, Vec<f64>)> {
        match self {
            LpOutcome::Optimal { value, x } => Ok((value, x)),
            LpOutcome::Infeasible => Err(DimgError::Lp("infeasible".into())),
            LpOutcome::Unbounded => Err(DimgError::Lp("unbounded".into())),
        }
    }
}

/// How an original variable maps onto the nonnegative internal columns.
#[derive(Debug, Clone, Copy)]
enum Map {
    /// `x = l + t`.
    Shift(usize, f64),
    /// `x = u − t`.
    Mirror(usize, f64),
    /// `x = t⁺ − t⁻`.
    Split(usize, usize),
}

struct Tableau {
    /// `m × n` rows of `B⁻¹A`.
    t: Vec<Vec<f64>>,
    /// Current value of every column.
    val: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Reduced costs for the current phase.
    d: Vec<f64>,
    /// Columns allowed to enter.
    active: Vec<bool>,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn price(&mut self, cost: &[f64]) {
        let n = self.val.len();
        self.d = cost.to_vec();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for j in 0..n {
                    self.d[j] -= cb * self.t[r][j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.val.len();
        let piv = self.t[r][j];
        for v in self.t[r].iter_mut() {
            *v /= piv;
        }
        let row = self.t[r].clone();
        for (i, other) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = other[j];
            if f != 0.0 {
                for k in 0..n {
                    other[k] -= f * row[k];
                }
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for k in 0..n {
                self.d[k] -= f * row[k];
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.basis[r] = j;
        self.is_basic[j] = true;
    }

    fn at_upper(&self, j: usize) -> bool {
        self.upper[j].is_finite() && self.val[j] >= self.upper[j] - FEAS_TOL
    }

    fn step(&mut self) -> Step {
        let n = self.val.len();
        // Bland: lowest improving index
        let entering = (0..n).find(|&j| {
            if self.is_basic[j] || !self.active[j] {
                return false;
            }
            let can_rise = !self.at_upper(j);
            let can_fall = self.val[j] > FEAS_TOL;
            (self.d[j] < -OPT_TOL && can_rise) || (self.d[j] > OPT_TOL && can_fall)
        });
        let Some(j) = entering else {
            return Step::Optimal;
        };
        let sigma = if self.d[j] < 0.0 { 1.0 } else { -1.0 };
        let flip = if sigma > 0.0 {
            self.upper[j] - self.val[j]
        } else {
            self.val[j]
        };
        let mut best: Option<(usize, bool, f64)> = None;
        for (r, &b) in self.basis.iter().enumerate() {
            let delta = -sigma * self.t[r][j];
            let (to_upper, room) = if delta < -PIVOT_TOL {
                (false, self.val[b].max(0.0) / -delta)
            } else if delta > PIVOT_TOL && self.upper[b].is_finite() {
                (true, (self.upper[b] - self.val[b]).max(0.0) / delta)
            } else {
                continue;
            };
            let replace = match best {
                None => true,
                Some((br, _, bt)) => room < bt - 1e-12 || (room <= bt + 1e-12 && b < self.basis[br]),
            };
            if replace {
                best = Some((r, to_upper, room));
            }
        }
        let leave = match best {
            Some((r, up, t)) if t < flip => Some((r, up, t)),
            _ if flip.is_finite() => None,
            Some(found) => Some(found),
            None => return Step::Unbounded,
        };
        let t = leave.map_or(flip, |(_, _, t)| t);
        for r in 0..self.basis.len() {
            let b = self.basis[r];
            self.val[b] -= sigma * t * self.t[r][j];
        }
        self.val[j] += sigma * t;
        match leave {
            None => {
                self.val[j] = if sigma > 0.0 { self.upper[j] } else { 0.0 };
            }
            Some((r, to_upper, _)) => {
                let b = self.basis[r];
                self.val[b] = if to_upper { self.upper[b] } else { 0.0 };
                self.pivot(r, j);
            }
        }
        Step::Moved
    }

    fn run(&mut self, iterations: &mut usize) -> Result<Step> {
        loop {
            *iterations += 1;
            if *iterations > ITERATION_CAP {
                return Err(DimgError::Lp(format!("iteration cap {ITERATION_CAP} reached")));
            }
            match self.step() {
                Step::Moved => {}
                done => return Ok(done),
            }
        }
    }
}

/// Solve with the bounded-variable simplex.
pub fn lp_solve(lp: &StageLinearProgram) -> Result<LpOutcome> {
    lp.check()?;
    let n0 = lp.num_vars();
    if lp.lower.iter().zip(&lp.upper).any(|(l, u)| l > u) {
        return Ok(LpOutcome::Infeasible);
    }

    // internal columns: transformed originals, then slacks, then artificials
    let mut maps = Vec::with_capacity(n0);
    let mut upper = Vec::new();
    let mut cost = Vec::new();
    for j in 0..n0 {
        let (l, u, c) = (lp.lower[j], lp.upper[j], lp.objective[j]);
        if l.is_finite() {
            maps.push(Map::Shift(upper.len(), l));
            upper.push(u - l);
            cost.push(c);
        } else if u.is_finite() {
            maps.push(Map::Mirror(upper.len(), u));
            upper.push(f64::INFINITY);
            cost.push(-c);
        } else {
            maps.push(Map::Split(upper.len(), upper.len() + 1));
            upper.extend([f64::INFINITY, f64::INFINITY]);
            cost.extend([c, -c]);
        }
    }
    let n_struct = upper.len();
    let m_eq = lp.eq_matrix.len();
    let m_ub = lp.ub_matrix.len();
    let m = m_eq + m_ub;
    let n_slack = m_ub;
    let n = n_struct + n_slack + m;

    let mut rows = vec![vec![0.0; n]; m];
    let mut rhs = vec![0.0; m];
    for (i, (row, b)) in lp
        .eq_matrix
        .iter()
        .zip(&lp.eq_rhs)
        .chain(lp.ub_matrix.iter().zip(&lp.ub_rhs))
        .enumerate()
    {
        let mut b = *b;
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                Map::Shift(k, l) => {
                    rows[i][k] += a;
                    b -= a * l;
                }
                Map::Mirror(k, u) => {
                    rows[i][k] -= a;
                    b -= a * u;
                }
                Map::Split(p, q) => {
                    rows[i][p] += a;
                    rows[i][q] -= a;
                }
            }
        }
        if i >= m_eq {
            rows[i][n_struct + (i - m_eq)] = 1.0;
        }
        if b < 0.0 {
            for v in rows[i].iter_mut() {
                *v = -*v;
            }
            b = -b;
        }
        rows[i][n_struct + n_slack + i] = 1.0;
        rhs[i] = b;
    }
    upper.extend(std::iter::repeat_n(f64::INFINITY, n_slack + m));
    cost.extend(std::iter::repeat_n(0.0, n_slack + m));

    let mut val = vec![0.0; n];
    let basis: Vec<usize> = (0..m).map(|i| n_struct + n_slack + i).collect();
    let mut is_basic = vec![false; n];
    for (&b, &r) in basis.iter().zip(&rhs) {
        val[b] = r;
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        t: rows,
        val,
        upper,
        basis,
        is_basic,
        d: Vec::new(),
        active: vec![true; n],
    };
    let art_start = n_struct + n_slack;
    let phase1_cost: Vec<f64> = (0..n).map(|j| if j >= art_start { 1.0 } else { 0.0 }).collect();
    tab.price(&phase1_cost);
    let mut iterations = 0;
    tab.run(&mut iterations)?;
    let infeasibility: f64 = (art_start..n).map(|j| tab.val[j]).sum();
    let scale = 1.0 + rhs.iter().fold(0.0f64, |a, &b| a.max(b));
    if infeasibility > FEAS_TOL * scale {
        return Ok(LpOutcome::Infeasible);
    }

    // drive remaining artificials out or drop their rows
    let mut r = 0;
    while r < tab.basis.len() {
        let b = tab.basis[r];
        if b < art_start {
            r += 1;
            continue;
        }
        let candidate = (0..art_start).find(|&j| !tab.is_basic[j] && tab.t[r][j].abs() > PIVOT_TOL);
        match candidate {
            Some(j) => {
                tab.val[b] = 0.0;
                tab.pivot(r, j);
                r += 1;
            }
            None => {
                tab.is_basic[b] = false;
                tab.val[b] = 0.0;
                tab.t.remove(r);
                tab.basis.remove(r);
            }
        }
    }
    for j in art_start..n {
        tab.active[j] = false;
        tab.upper[j] = 0.0;
        tab.val[j] = 0.0;
    }
    tab.price(&cost);
    if let Step::Unbounded = tab.run(&mut iterations)? {
        return Ok(LpOutcome::Unbounded);
    }

    let x: Vec<f64> = maps
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let v = match *m {
                Map::Shift(k, l) => l + tab.val[k],
                Map::Mirror(k, u) => u - tab.val[k],
                Map::Split(p, q) => tab.val[p] - tab.val[q],
            };
            v.clamp(lp.lower[j], lp.upper[j])
        })
        .collect();
    let value = lp.objective_at(&x);
    Ok(LpOutcome::Optimal { value, x })
}

/// `Σ |p − q|` over all cells, i.e. twice the total-variation distance.
pub fn tv_l1_distance(p: &DistributionXY, q: &DistributionXY) -> Result<f64> {
    if p.nx != q.nx || p.ny != q.ny {
        return Err(DimgError::domain(format!(
            "shape {}x{} differs from {}x{}",
            p.nx, p.ny, q.nx, q.ny
        )));
    }
    Ok(l1(&p.p, &q.p))
}

pub(crate) fn l1(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free() -> VarTag {
        VarTag::Free(0)
    }

    #[test]
    fn pinned_variable() {
        let mut lp = StageLinearProgram::new();
        let x = lp.add_var(free(), 1.0, 0.0, 2.0);
        lp.add_eq(&[(x, 1.0)], 1.0);
        let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert!((v - 1.0).abs() < 1e-12 && (sol[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_only_problem() {
        let mut lp = StageLinearProgram::new();
        lp.add_var(free(), -1.0, 0.0, 1.0);
        let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert_eq!((v, sol[0]), (-1.0, 1.0));
    }

    #[test]
    fn one_dimensional_design() {
        // 5(1 − p) + |p − 0.5| + |(1 − p) − 0.5| with p0 = p, p1 = 1 − p
        let mut lp = StageLinearProgram::new();
        let p0 = lp.add_var(VarTag::Joint { x: 0, y: 0 }, 0.0, 0.0, 1.0);
        let p1 = lp.add_var(VarTag::Joint { x: 1, y: 0 }, 5.0, 0.0, 1.0);
        let a0 = lp.add_var(VarTag::Aux { x: 0, y: 0 }, 1.0, 0.0, f64::INFINITY);
        let a1 = lp.add_var(VarTag::Aux { x: 1, y: 0 }, 1.0, 0.0, f64::INFINITY);
        lp.add_eq(&[(p0, 1.0), (p1, 1.0)], 1.0);
        for (p, a) in [(p0, a0), (p1, a1)] {
            lp.add_le(&[(p, 1.0), (a, -1.0)], 0.5);
            lp.add_le(&[(p, -1.0), (a, -1.0)], -0.5);
        }
        let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        assert!((sol[p0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = StageLinearProgram::new();
        let x = lp.add_var(free(), 1.0, 0.0, 1.0);
        lp.add_eq(&[(x, 1.0)], 2.0);
        assert_eq!(lp_solve(&lp).unwrap(), LpOutcome::Infeasible);

        let mut lp = StageLinearProgram::new();
        let x = lp.add_var(free(), -1.0, 0.0, f64::INFINITY);
        let y = lp.add_var(free(), 0.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_eq(&[(x, 1.0), (y, -1.0)], 0.0);
        assert_eq!(lp_solve(&lp).unwrap(), LpOutcome::Unbounded);

        let mut lp = StageLinearProgram::new();
        lp.add_var(free(), 1.0, 2.0, 1.0);
        assert_eq!(lp_solve(&lp).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn free_and_mirrored_variables() {
        // min x + y, x free, y ≤ 3, x − y = −4, x ≥ −10 through a row
        let mut lp = StageLinearProgram::new();
        let x = lp.add_var(free(), 1.0, f64::NEG_INFINITY, f64::INFINITY);
        let y = lp.add_var(free(), 1.0, f64::NEG_INFINITY, 3.0);
        lp.add_eq(&[(x, 1.0), (y, -1.0)], -4.0);
        lp.add_le(&[(x, -1.0)], 10.0);
        let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert!((sol[x] + 10.0).abs() < 1e-12 && (sol[y] + 6.0).abs() < 1e-12);
        assert!((v + 16.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let mut lp = StageLinearProgram::new();
        let a = lp.add_var(free(), 1.0, 0.0, 1.0);
        let b = lp.add_var(free(), 2.0, 0.0, 1.0);
        lp.add_eq(&[(a, 1.0), (b, 1.0)], 1.0);
        lp.add_eq(&[(a, 2.0), (b, 2.0)], 2.0);
        let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
        assert!((v - 1.0).abs() < 1e-12 && (sol[a] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_distances() {
        let p = DistributionXY::from_table(2, 1, vec![0.7, 0.3]);
        let q = DistributionXY::from_table(2, 1, vec![0.5, 0.5]);
        assert!((tv_l1_distance(&p, &q).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(tv_l1_distance(&p, &p).unwrap(), 0.0);
        let e0 = DistributionXY::from_table(2, 1, vec![1.0, 0.0]);
        let e1 = DistributionXY::from_table(2, 1, vec![0.0, 1.0]);
        assert_eq!(tv_l1_distance(&e0, &e1).unwrap(), 2.0);
        assert!(tv_l1_distance(&p, &DistributionXY::zeros(1, 2)).is_err());
    }

    #[test]
    fn dump_lists_rows() {
        let mut lp = StageLinearProgram::new();
        let x = lp.add_var(VarTag::Joint { x: 0, y: 1 }, 1.0, 0.0, 1.0);
        lp.add_eq(&[(x, 1.0)], 1.0);
        let text = lp.dump();
        assert!(text.contains("p[0,1]") && text.contains("= 1.000000"));
    }
}
