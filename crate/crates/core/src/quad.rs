//! Cumulative quadrature kernels.
//!
//! Every antiderivative is computed as an initial-value problem
//! (`F' = f`, `F(x0) = 0`) swept across the whole grid by an adaptive
//! Dormand-Prince 5(4) pair. Steps are clipped so that each grid point is
//! an accepted step end; cubic Hermite interpolation between accepted
//! steps gives values anywhere else in the interval.

use crate::error::{Error, Result};
use crate::expr::EvalError;

/// Error-control settings for the adaptive sweeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_steps: 1_000_000,
        }
    }
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_steps: usize) -> Result<Self> {
        let ok = |t: f64| t.is_finite() && t > 0.0;
        if !ok(abs_tol) || !ok(rel_tol) {
            return Err(Error::Invalid(format!(
                "tolerances must be finite and positive (abs_tol = {abs_tol:?}, rel_tol = {rel_tol:?})"
            )));
        }
        if max_steps == 0 {
            return Err(Error::Invalid("max_steps must be positive".into()));
        }
        Ok(Tolerance {
            abs_tol,
            rel_tol,
            max_steps,
        })
    }
}

/// `n` uniformly spaced points from `x0` to `x1`, both ends included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    x0: f64,
    x1: f64,
    n: usize,
}

impl Grid {
    pub fn new(x0: f64, x1: f64, n: usize) -> Result<Self> {
        if !(x0.is_finite() && x1.is_finite() && x0 < x1) {
            return Err(Error::Invalid(format!(
                "grid needs finite x0 < x1 (got {x0:?}, {x1:?})"
            )));
        }
        if n < 2 {
            return Err(Error::Invalid(format!(
                "grid needs at least 2 points (got {n})"
            )));
        }
        Ok(Grid { x0, x1, n })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.x1 - self.x0) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.x1
        } else {
            self.x0 + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }
}

/// Accepted steps of a sweep, interpolated with cubic Hermite polynomials.
#[derive(Clone, Debug)]
pub struct DenseOutput<const N: usize> {
    t: Vec<f64>,
    y: Vec<[f64; N]>,
    dy: Vec<[f64; N]>,
}

impl<const N: usize> DenseOutput<N> {
    pub fn t_min(&self) -> f64 {
        self.t[0]
    }

    pub fn t_max(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    /// State at `x`, clamped to the swept interval.
    pub fn eval(&self, x: f64) -> [f64; N] {
        let x = x.clamp(self.t_min(), self.t_max());
        let i = match self.t.partition_point(|&t| t <= x) {
            0 => 0,
            p => (p - 1).min(self.t.len() - 2),
        };
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let s = (x - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        std::array::from_fn(|k| {
            h00 * self.y[i][k]
                + h10 * h * self.dy[i][k]
                + h01 * self.y[i + 1][k]
                + h11 * h * self.dy[i + 1][k]
        })
    }
}

/// Result of a sweep: the state at every grid point plus dense output.
#[derive(Clone, Debug)]
pub struct Sweep<const N: usize> {
    pub at_grid: Vec<[f64; N]>,
    pub dense: DenseOutput<N>,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = rhs(t, y)` from `y(grid.x0) = y0` across the grid.
///
/// `observe` sees every accepted step end and may abort the sweep.
pub fn sweep<const N: usize, F, O>(
    mut rhs: F,
    y0: [f64; N],
    grid: &Grid,
    tol: &Tolerance,
    mut observe: O,
) -> Result<Sweep<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    O: FnMut(f64, &[f64; N]) -> Result<()>,
{
    let span = grid.x1() - grid.x0();
    let mut t = grid.x0();
    let mut y = y0;
    let mut f = rhs(t, &y)?;
    let mut dense = DenseOutput {
        t: vec![t],
        y: vec![y],
        dy: vec![f],
    };
    let mut at_grid = Vec::with_capacity(grid.len());
    at_grid.push(y);

    let mut h = initial_step(&mut rhs, t, &y, &f, tol)?.min(span);
    let mut attempts = 0usize;

    for i in 1..grid.len() {
        let target = grid.point(i);
        let mut rejected = false;
        while t < target {
            attempts += 1;
            if attempts > tol.max_steps {
                return Err(Error::StepLimit {
                    x: t,
                    max_steps: tol.max_steps,
                });
            }
            if h <= 1e-14 * t.abs().max(span) {
                return Err(Error::StepUnderflow { x: t });
            }
            let remaining = target - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let step = if landing { remaining } else { h };

            let mut k = [[0.0; N]; 7];
            k[0] = f;
            for s in 1..7 {
                let ys: [f64; N] = std::array::from_fn(|c| {
                    y[c] + step * (0..s).map(|j| A[s][j] * k[j][c]).sum::<f64>()
                });
                k[s] = rhs(t + C[s] * step, &ys)?;
            }
            // Row 6 of A holds the 5th-order weights (FSAL).
            let y_new: [f64; N] = std::array::from_fn(|c| {
                y[c] + step * (0..6).map(|j| A[6][j] * k[j][c]).sum::<f64>()
            });
            let mut err = 0.0f64;
            for c in 0..N {
                let e = step * (0..7).map(|j| E[j] * k[j][c]).sum::<f64>();
                let sc = tol.abs_tol + tol.rel_tol * y[c].abs().max(y_new[c].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                if step <= 1e-14 * t.abs().max(span) {
                    return Err(Error::NonFinite { x: t });
                }
                h = step * 0.2;
                rejected = true;
                continue;
            }

            if err <= 1.0 {
                t = if landing { target } else { t + step };
                y = y_new;
                f = k[6];
                dense.t.push(t);
                dense.y.push(y);
                dense.dy.push(f);
                observe(t, &y)?;
                let mut factor = if err == 0.0 {
                    5.0
                } else {
                    0.9 * err.powf(-0.2)
                };
                factor = factor.clamp(0.2, 5.0);
                if rejected {
                    factor = factor.min(1.0);
                }
                // A clipped landing step says nothing about the natural size.
                h = if landing {
                    h.max(step * factor)
                } else {
                    step * factor
                };
                rejected = false;
            } else {
                h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                rejected = true;
            }
        }
        at_grid.push(y);
    }
    Ok(Sweep { at_grid, dense })
}

fn initial_step<const N: usize, F>(
    rhs: &mut F,
    t: f64,
    y: &[f64; N],
    f: &[f64; N],
    tol: &Tolerance,
) -> Result<f64>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let scale: [f64; N] = std::array::from_fn(|c| tol.abs_tol + tol.rel_tol * y[c].abs());
    let norm = |v: &[f64; N]| {
        (v.iter()
            .zip(&scale)
            .map(|(a, s)| (a / s).powi(2))
            .sum::<f64>()
            / N as f64)
            .sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(f);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: [f64; N] = std::array::from_fn(|c| y[c] + h0 * f[c]);
    let f1 = rhs(t + h0, &y1)?;
    let diff: [f64; N] = std::array::from_fn(|c| f1[c] - f[c]);
    let d2 = norm(&diff) / h0;
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / m).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

/// `F(x) = ∫_{x0}^{x} f(t) dt` at every grid point; `F(x0) = 0`.
pub fn cumulative_integral<F>(f: F, grid: &Grid, tol: &Tolerance) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64, EvalError>,
{
    let run = sweep(
        |t, _: &[f64; 1]| Ok([f(t)?]),
        [0.0],
        grid,
        tol,
        |_, _| Ok(()),
    )?;
    Ok(run.at_grid.into_iter().map(|[v]| v).collect())
}

/// `S(x) = e^{H(x)} (c0 + ∫_{x0}^{x} k e^{-H})` with `H = ∫_{x0}^{x} h`,
/// swept as `S' = h S + k`, `S(x0) = c0`.
#[derive(Clone, Debug)]
pub struct WeightedSolution {
    pub values: Vec<f64>,
    /// `H` at each grid point.
    pub exponent: Vec<f64>,
    dense: DenseOutput<2>,
}

impl WeightedSolution {
    /// `S` anywhere in the swept interval.
    pub fn eval(&self, x: f64) -> f64 {
        self.dense.eval(x)[0]
    }

    pub fn dense(&self) -> &DenseOutput<2> {
        &self.dense
    }
}

/// Largest `|H|` tolerated before `e^{±H}` leaves double range.
pub const EXPONENT_LIMIT: f64 = 700.0;

pub fn exp_weighted_dense<H, K>(
    h: H,
    k: K,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<WeightedSolution>
where
    H: Fn(f64) -> Result<f64, EvalError>,
    K: Fn(f64) -> Result<f64, EvalError>,
{
    if !c0.is_finite() {
        return Err(Error::Invalid(format!("c0 must be finite (got {c0:?})")));
    }
    let run = sweep(
        |t, state: &[f64; 2]| {
            let rate = h(t)?;
            Ok([rate * state[0] + k(t)?, rate])
        },
        [c0, 0.0],
        grid,
        tol,
        |t, state| {
            if state[1].abs() > EXPONENT_LIMIT {
                Err(Error::Overflow { x: t })
            } else {
                Ok(())
            }
        },
    )?;
    let (values, exponent) = run.at_grid.iter().map(|s| (s[0], s[1])).unzip();
    Ok(WeightedSolution {
        values,
        exponent,
        dense: run.dense,
    })
}

pub fn exp_weighted_solution<H, K>(
    h: H,
    k: K,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<Vec<f64>>
where
    H: Fn(f64) -> Result<f64, EvalError>,
    K: Fn(f64) -> Result<f64, EvalError>,
{
    exp_weighted_dense(h, k, c0, grid, tol).map(|s| s.values)
}
