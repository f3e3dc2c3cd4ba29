//! The simplex against brute-force vertex enumeration on small random LPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dimg_core::lp::{lp_solve, LpOutcome, StageLinearProgram, VarTag};

/// Rows `a·x ≤ b` (or `=` when `eq`), bounds included as rows.
struct Row {
    a: Vec<f64>,
    b: f64,
    eq: bool,
}

fn solve_square(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    Some((0..n).map(|i| rhs[i] / m[i][i]).collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Minimum over every basic feasible point; `None` when none is feasible.
fn vertex_oracle(cost: &[f64], rows: &[Row]) -> Option<f64> {
    let n = cost.len();
    let feasible = |x: &[f64]| {
        rows.iter().all(|r| {
            let v: f64 = r.a.iter().zip(x).map(|(a, b)| a * b).sum();
            if r.eq {
                (v - r.b).abs() <= 1e-9
            } else {
                v <= r.b + 1e-9
            }
        })
    };
    let mut best: Option<f64> = None;
    for pick in combinations(rows.len(), n) {
        let m = pick.iter().map(|&i| rows[i].a.clone()).collect();
        let rhs = pick.iter().map(|&i| rows[i].b).collect();
        if let Some(x) = solve_square(m, rhs) {
            if feasible(&x) {
                let v: f64 = cost.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
    }
    best
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut optimal, mut infeasible) = (0, 0);
    for _ in 0..300 {
        let n = rng.random_range(1..=3);
        let mut lp = StageLinearProgram::new();
        let mut rows = Vec::new();
        let mut cost = Vec::new();
        for j in 0..n {
            let lo = rng.random_range(-2.0..1.0);
            let hi = lo + rng.random_range(0.1..3.0);
            let c = rng.random_range(-2.0..2.0);
            lp.add_var(VarTag::Free(j), c, lo, hi);
            cost.push(c);
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push(Row {
                a: e.clone(),
                b: hi,
                eq: false,
            });
            rows.push(Row {
                a: e.iter().map(|v| -v).collect(),
                b: -lo,
                eq: false,
            });
        }
        for k in 0..rng.random_range(0..=3) {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = rng.random_range(-1.0..2.0);
            let terms: Vec<(usize, f64)> = a.iter().copied().enumerate().collect();
            let eq = k == 0 && rng.random::<f64>() < 0.4;
            if eq {
                lp.add_eq(&terms, b);
            } else {
                lp.add_le(&terms, b);
            }
            rows.push(Row { a, b, eq });
        }
        match (lp_solve(&lp).unwrap(), vertex_oracle(&cost, &rows)) {
            (LpOutcome::Optimal { value, x }, Some(v)) => {
                assert!(
                    (value - v).abs() < 1e-7,
                    "simplex {value} vs vertices {v}\n{}",
                    lp.dump()
                );
                assert!(lp.max_violation(&x) < 1e-8);
                optimal += 1;
            }
            (LpOutcome::Infeasible, None) => infeasible += 1,
            (got, want) => panic!("simplex {got:?} vs vertices {want:?}\n{}", lp.dump()),
        }
    }
    assert!(
        optimal > 100 && infeasible > 0,
        "{optimal} optimal, {infeasible} infeasible"
    );
}

#[test]
fn textbook_cases() {
    let mut lp = StageLinearProgram::new();
    let x = lp.add_var(VarTag::Free(0), 1.0, 0.0, 2.0);
    lp.add_eq(&[(x, 1.0)], 1.0);
    let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
    assert!((v - 1.0).abs() < 1e-12 && (sol[0] - 1.0).abs() < 1e-12);

    let mut lp = StageLinearProgram::new();
    lp.add_var(VarTag::Free(0), -1.0, 0.0, 1.0);
    let (v, sol) = lp_solve(&lp).unwrap().optimal().unwrap();
    assert!((v + 1.0).abs() < 1e-12 && (sol[0] - 1.0).abs() < 1e-12);
}
