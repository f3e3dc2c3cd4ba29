//! Numerical oracles: Gauss–Hermite quadrature and one-dimensional search.

use std::f64::consts::PI;

/// Nodes and weights for `∫ f(x) e^{−x²} dx ≈ Σ wᵢ f(xᵢ)`.
///
/// Roots of the Hermite polynomial are found by Newton's method from the
/// usual asymptotic starting guesses, using the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Expectation of `f(Z)` for `Z ~ N(0, 1)` with an `n`-node rule.
pub struct StandardNormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl StandardNormalRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let s = std::f64::consts::SQRT_2;
        let norm = PI.sqrt();
        StandardNormalRule {
            nodes: x.iter().map(|v| v * s).collect(),
            weights: w.iter().map(|v| v / norm).collect(),
        }
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Minimizer of a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// Minimize `f` over a box by a uniform grid followed by repeated
/// shrinking grids around the incumbent, down to spacing `tol`.
pub fn grid_refine_2d(
    f: impl Fn(f64, f64) -> f64,
    (mut x_lo, mut x_hi): (f64, f64),
    (mut y_lo, mut y_hi): (f64, f64),
    points: usize,
    tol: f64,
) -> (f64, f64) {
    let (x_min, y_min) = (x_lo, y_lo);
    let (x_max, y_max) = (x_hi, y_hi);
    let mut best = (x_lo, y_lo, f64::INFINITY);
    loop {
        let hx = (x_hi - x_lo) / (points - 1) as f64;
        let hy = (y_hi - y_lo) / (points - 1) as f64;
        for i in 0..points {
            for j in 0..points {
                let (x, y) = (x_lo + i as f64 * hx, y_lo + j as f64 * hy);
                let v = f(x, y);
                if v < best.2 {
                    best = (x, y, v);
                }
            }
        }
        if hx.max(hy) <= tol {
            return (best.0, best.1);
        }
        x_lo = (best.0 - 2.0 * hx).max(x_min);
        x_hi = (best.0 + 2.0 * hx).min(x_max);
        y_lo = (best.1 - 2.0 * hy).max(y_min);
        y_hi = (best.1 + 2.0 * hy).min(y_max);
    }
}
