//! Residual verification, an independent reference integrator, and
//! reproducible random problem families.

use std::fmt::Write as _;
use std::thread;

use crate::abel::{self, AbelProblem, ClosedForm, ConditionSamples, SpecialProblem, Variant};
use crate::error::{Error, Result};
use crate::expr::{parse_expr, Expr};
use crate::quad::{Grid, Tolerance};

/// Candidate values `y` and derivatives `y'` at abscissae `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yprime: Vec<f64>,
}

impl Samples {
    /// Samples a candidate given as `x -> (y, y')`.
    pub fn from_fn<F>(grid: &Grid, f: F) -> Result<Samples>
    where
        F: Fn(f64) -> Result<(f64, f64)>,
    {
        let x = grid.points();
        let (y, yprime) = x
            .iter()
            .map(|&xi| f(xi))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Samples { x, y, yprime })
    }

    /// Samples an expression together with its symbolic derivative.
    pub fn from_expr(grid: &Grid, e: &Expr) -> Result<Samples> {
        let d = e.differentiate();
        Samples::from_fn(grid, |x| Ok((e.eval(x)?, d.eval(x)?)))
    }
}

impl From<&ClosedForm> for Samples {
    fn from(cf: &ClosedForm) -> Self {
        Samples {
            x: cf.x.clone(),
            y: cf.y.clone(),
            yprime: cf.yprime.clone(),
        }
    }
}

/// Pointwise residual `LHS - RHS` of the governing equation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yprime: Vec<f64>,
    pub residual: Vec<f64>,
    /// `1 + max(|LHS|, |RHS|)` over the grid.
    pub scale: f64,
}

impl Trace {
    pub fn max_abs_residual(&self) -> f64 {
        max_abs(&self.residual)
    }

    /// Root-mean-square residual.
    pub fn l2_residual(&self) -> f64 {
        let n = self.residual.len() as f64;
        (self.residual.iter().map(|r| r * r).sum::<f64>() / n).sqrt()
    }

    /// Largest residual relative to `scale`.
    pub fn relative_residual(&self) -> f64 {
        self.max_abs_residual() / self.scale
    }

    /// CSV with header `x,y,yprime,residual`, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,yprime,residual\n");
        for i in 0..self.x.len() {
            writeln!(
                out,
                "{:?},{:?},{:?},{:?}",
                self.x[i], self.y[i], self.yprime[i], self.residual[i]
            )
            .expect("writing to a String");
        }
        out
    }
}

pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn check_samples(s: &Samples) -> Result<()> {
    let n = s.x.len();
    if n < 2 || s.y.len() != n || s.yprime.len() != n {
        return Err(Error::Invalid(format!(
            "samples need equal lengths >= 2 (x: {}, y: {}, yprime: {})",
            n,
            s.y.len(),
            s.yprime.len()
        )));
    }
    if s.x.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(
            "sample abscissae must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn trace_from<F>(s: &Samples, sides: F) -> Result<Trace>
where
    F: Fn(f64, f64, f64) -> Result<(f64, f64)>,
{
    check_samples(s)?;
    let mut residual = Vec::with_capacity(s.x.len());
    let mut scale = 0.0f64;
    for i in 0..s.x.len() {
        let (lhs, rhs) = sides(s.x[i], s.y[i], s.yprime[i])?;
        scale = scale.max(lhs.abs()).max(rhs.abs());
        residual.push(lhs - rhs);
    }
    Ok(Trace {
        x: s.x.clone(),
        y: s.y.clone(),
        yprime: s.yprime.clone(),
        residual,
        scale: 1.0 + scale,
    })
}

/// `(g0 + g1 y) y' - (f2 y^2 + f1 y + f0)` at each sample.
pub fn residual_general(p: &AbelProblem, s: &Samples) -> Result<Trace> {
    trace_from(s, |x, y, yp| {
        let c = p.at(x)?;
        Ok(((c.g0 + c.g1 * y) * yp, c.f2 * y * y + c.f1 * y + c.f0))
    })
}

/// Residual of the special form, with `g'` from symbolic differentiation.
pub fn residual_special(sp: &SpecialProblem, s: &Samples) -> Result<Trace> {
    trace_from(s, |x, y, yp| {
        let g = sp.g.eval(x)?;
        let gp = sp.g_prime().eval(x)?;
        let q = sp.q.eval(x)?;
        let a = sp.a.eval(x)?;
        let lhs = (gp + g * q * y) * yp;
        let rhs = -a * q * y * y + a * (q - gp / g) * y + a * gp / g;
        Ok((lhs, rhs))
    })
}

/// Smallest admissible `|g0 + g1 y|` along a reference trajectory.
pub const SINGULARITY_GUARD: f64 = 1e-9;

// Fehlberg 4(5) tableau; deliberately not the pair used by `quad`.
const RKF_C: [f64; 6] = [0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0];
const RKF_A: [[f64; 5]; 6] = [
    [0.0; 5],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const RKF_B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const RKF_B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -1.0 / 5.0,
    0.0,
];

/// Integrates `y' = (f2 y^2 + f1 y + f0) / (g0 + g1 y)` from `(x0, y0)`
/// with an adaptive Fehlberg 4(5) pair, landing on every grid point.
///
/// The residual column is recomputed from the same equation, so it is a
/// comparison target rather than a check.
pub fn rk_reference(
    p: &AbelProblem,
    x0: f64,
    y0: f64,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<Trace> {
    if x0 != grid.x0() {
        return Err(Error::GridMismatch(format!(
            "reference starts at {x0:?} but the grid starts at {:?}",
            grid.x0()
        )));
    }
    p.check_grid(grid)?;
    let slope = |x: f64, y: f64| -> Result<f64> {
        let c = p.at(x)?;
        let den = c.g0 + c.g1 * y;
        if den.abs() < SINGULARITY_GUARD || !den.is_finite() {
            return Err(Error::Singular { x });
        }
        Ok((c.f2 * y * y + c.f1 * y + c.f0) / den)
    };

    let span = grid.x1() - grid.x0();
    let mut x = x0;
    let mut y = y0;
    let mut h = (span / 100.0).min(grid.spacing());
    let mut attempts = 0usize;
    let mut ys = Vec::with_capacity(grid.len());
    ys.push(y0);
    slope(x, y)?;
    // Set when the last rejected trial met the singular set.
    let mut near_singular = false;

    for i in 1..grid.len() {
        let target = grid.point(i);
        while x < target {
            attempts += 1;
            if attempts > tol.max_steps {
                return Err(Error::StepLimit {
                    x,
                    max_steps: tol.max_steps,
                });
            }
            if h <= 1e-14 * x.abs().max(span) {
                return Err(if near_singular {
                    Error::Singular { x }
                } else {
                    Error::StepUnderflow { x }
                });
            }
            let remaining = target - x;
            let landing = h >= remaining * (1.0 - 1e-12);
            let step = if landing { remaining } else { h };

            let mut k = [0.0; 6];
            let mut stages = Ok(());
            for s in 0..6 {
                let ys = y + step * (0..s).map(|j| RKF_A[s][j] * k[j]).sum::<f64>();
                match slope(x + RKF_C[s] * step, ys) {
                    Ok(v) => k[s] = v,
                    Err(e) => {
                        stages = Err(e);
                        break;
                    }
                }
            }
            match stages {
                Ok(()) => {}
                Err(Error::Singular { .. }) => {
                    near_singular = true;
                    h = step * 0.25;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let y5 = y + step * (0..6).map(|j| RKF_B5[j] * k[j]).sum::<f64>();
            let y4 = y + step * (0..6).map(|j| RKF_B4[j] * k[j]).sum::<f64>();
            let sc = tol.abs_tol + tol.rel_tol * y.abs().max(y5.abs());
            let err = ((y5 - y4) / sc).abs();
            if !y5.is_finite() || !err.is_finite() {
                return Err(Error::NonFinite { x });
            }
            let factor = if err == 0.0 {
                4.0
            } else {
                0.84 * err.powf(-0.25)
            };
            if err <= 1.0 {
                x = if landing { target } else { x + step };
                y = y5;
                slope(x, y)?;
                near_singular = false;
                let next = step * factor.clamp(0.1, 4.0);
                h = if landing { h.max(next) } else { next };
            } else {
                h = step * factor.clamp(0.1, 1.0);
            }
        }
        ys.push(y);
    }

    let mut yprime = Vec::with_capacity(ys.len());
    let xs = grid.points();
    for (&xi, &yi) in xs.iter().zip(&ys) {
        yprime.push(slope(xi, yi)?);
    }
    residual_general(
        p,
        &Samples {
            x: xs,
            y: ys,
            yprime,
        },
    )
}

/// Largest pointwise `|y_cf - y_ref|` and where it occurs.
pub fn compare(cf: &ClosedForm, reference: &Trace) -> Result<(f64, f64)> {
    if cf.x.len() != reference.x.len() {
        return Err(Error::GridMismatch(format!(
            "{} closed-form points vs {} reference points",
            cf.x.len(),
            reference.x.len()
        )));
    }
    let mut best = (0.0f64, cf.x[0]);
    for i in 0..cf.x.len() {
        let (a, b) = (cf.x[i], reference.x[i]);
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::GridMismatch(format!(
                "abscissa {i} differs: {a:?} vs {b:?}"
            )));
        }
        let diff = (cf.y[i] - reference.y[i]).abs();
        if diff > best.0 {
            best = (diff, a);
        }
    }
    Ok(best)
}

/// Closed-form trace against the reference integrator started from the
/// closed form's own value at `x0`.
pub fn compare_with_reference(
    p: &AbelProblem,
    cf: &ClosedForm,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<(f64, f64)> {
    let reference = rk_reference(p, cf.x0, cf.y[0], grid, tol)?;
    compare(cf, &reference)
}

/// `sup |y_lambda(c0) - y_0(c0 + lambda(x0))|` for the Theorem 1 `f1`
/// formula. Analytically the lambda terms integrate to
/// `-lambda e^{-H} + lambda(x0)`, so this should vanish.
pub fn lambda_invariance_check(
    p: &AbelProblem,
    lambda: &Expr,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<f64> {
    lambda_invariance_with(p, lambda, c0, grid, tol, |p, l, c, g, t| {
        abel::theorem1_solve(p, l, c, g, t, Variant::F1)
    })
}

/// Same as [`lambda_invariance_check`] for an arbitrary solver.
pub fn lambda_invariance_with<S>(
    p: &AbelProblem,
    lambda: &Expr,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
    solve: S,
) -> Result<f64>
where
    S: Fn(&AbelProblem, &Expr, f64, &Grid, &Tolerance) -> Result<ClosedForm>,
{
    let shifted = solve(p, lambda, c0, grid, tol)?;
    let base = solve(
        p,
        &Expr::Const(0.0),
        c0 + lambda.eval(grid.x0())?,
        grid,
        tol,
    )?;
    Ok(shifted
        .y
        .iter()
        .zip(&base.y)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Largest gap between `y'` and a central difference of the dense `y`
/// at interior grid points.
pub fn finite_difference_gap(cf: &ClosedForm, step: f64) -> Result<f64> {
    let (lo, hi) = (cf.x[0], cf.x[cf.x.len() - 1]);
    let mut gap = 0.0f64;
    for (i, &x) in cf.x.iter().enumerate() {
        if x - step < lo || x + step > hi {
            continue;
        }
        let fd = (cf.eval_y(x + step)? - cf.eval_y(x - step)?) / (2.0 * step);
        gap = gap.max((fd - cf.yprime[i]).abs());
    }
    Ok(gap)
}

/// 64-bit linear congruential generator
/// `x <- 6364136223846793005 x + 1442695040888963407 (mod 2^64)`.
#[derive(Clone, Debug)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        self.state
    }

    /// High 53 bits as a uniform value in `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[-2, 2)`.
    pub fn next_coefficient(&mut self) -> f64 {
        -2.0 + 4.0 * self.next_unit()
    }

    /// `c0 + c1 x + ... ` with `terms` coefficients drawn in order.
    pub fn polynomial(&mut self, terms: usize) -> String {
        (0..terms)
            .map(|k| {
                let c = self.next_coefficient();
                match k {
                    0 => format!("({c:?})"),
                    1 => format!("({c:?})*x"),
                    _ => format!("({c:?})*x^{k}"),
                }
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

fn family_problem(texts: [String; 5]) -> AbelProblem {
    let [g0, g1, f0, f1, f2] = texts.map(|t| parse_expr(&t).expect("generated text parses"));
    AbelProblem::new(
        g0,
        g1,
        f0,
        f1,
        f2,
        abel::Domain::new(0.0, 1.0).expect("unit interval"),
    )
    .expect("generated coefficients are smooth on [0, 1]")
}

/// Problems on `[0, 1]` satisfying `g0 f1 = g1 (f0 + f2)` identically.
///
/// Draw order per problem: `g0`, `f1`, `f2` (3 coefficients each), then
/// `p` (2 coefficients); `g1 = 1 + p^2 + 0.5`, `f0 = g0 f1 / g1 - f2`.
pub fn gen_thm1_family(seed: u64, count: usize) -> Vec<AbelProblem> {
    let mut rng = Lcg::new(seed);
    (0..count)
        .map(|_| {
            let g0 = rng.polynomial(3);
            let f1 = rng.polynomial(3);
            let f2 = rng.polynomial(3);
            let g1 = format!("1 + ({})^2 + 0.5", rng.polynomial(2));
            let f0 = format!("({g0})*({f1})/({g1}) - ({f2})");
            family_problem([g0, g1, f0, f1, f2])
        })
        .collect()
}

/// Special-form problems on `[0, 1]`.
///
/// Draw order: `r` (2), `q` (3), `a` (3); `g = 1.5 + r^2`.
pub fn gen_special_family(seed: u64, count: usize) -> Vec<SpecialProblem> {
    let mut rng = Lcg::new(seed);
    (0..count)
        .map(|_| {
            let g = format!("1.5 + ({})^2", rng.polynomial(2));
            let q = rng.polynomial(3);
            let a = rng.polynomial(3);
            SpecialProblem::parse([&g, &q, &a], 0.0, 1.0)
                .expect("generated special problem is valid on [0, 1]")
        })
        .collect()
}

/// Problems with `g0 = g1` and `f0 = f1 - f2`, for which the Theorem 1
/// formula is an exact solution.
///
/// Draw order: `p` (2), `f2` (3), `f1` (3); `g0 = g1 = 1 + p^2 + 0.5`.
pub fn gen_exact_family(seed: u64, count: usize) -> Vec<AbelProblem> {
    let mut rng = Lcg::new(seed);
    (0..count)
        .map(|_| {
            let g = format!("1 + ({})^2 + 0.5", rng.polynomial(2));
            let f2 = rng.polynomial(3);
            let f1 = rng.polynomial(3);
            let f0 = format!("({f1}) - ({f2})");
            family_problem([g.clone(), g, f0, f1, f2])
        })
        .collect()
}

/// Runs `f` over `items` on scoped threads; results keep input order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, item)| f(c * chunk + i, item))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("verification worker panicked"))
            .collect()
    })
}

/// Aggregate statistics for one verified candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub method: String,
    pub variant: Option<String>,
    pub branch: Option<String>,
    pub k_form: Option<String>,
    pub lambda: String,
    pub c0: f64,
    pub x0: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub condition_max: Option<f64>,
    pub max_abs_residual: f64,
    pub l2_residual: f64,
    pub residual_scale: f64,
    pub comparison_max_diff: Option<f64>,
}

impl Report {
    pub fn new(
        cf: &ClosedForm,
        trace: &Trace,
        condition: Option<&ConditionSamples>,
        tol: &Tolerance,
    ) -> Report {
        Report {
            method: cf.method.to_string(),
            variant: cf.variant.map(|v| v.to_string()),
            branch: cf.branch.map(|b| b.to_string()),
            k_form: cf.k_form.map(|k| k.to_string()),
            lambda: cf.lambda.to_string(),
            c0: cf.c0,
            x0: cf.x0,
            abs_tol: tol.abs_tol,
            rel_tol: tol.rel_tol,
            condition_max: condition.map(|c| c.max_abs).or(cf.condition_max),
            max_abs_residual: trace.max_abs_residual(),
            l2_residual: trace.l2_residual(),
            residual_scale: trace.scale,
            comparison_max_diff: None,
        }
    }

    /// `key: value` lines.
    pub fn render(&self) -> String {
        let opt_str = |v: &Option<String>| v.clone().unwrap_or_else(|| "none".into());
        let opt_num = |v: Option<f64>| v.map_or_else(|| "none".into(), |v| format!("{v:?}"));
        let mut out = String::new();
        let mut line = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(": ");
            out.push_str(&value);
            out.push('\n');
        };
        line("method", self.method.clone());
        line("variant", opt_str(&self.variant));
        line("branch", opt_str(&self.branch));
        line("k_form", opt_str(&self.k_form));
        line("lambda", self.lambda.clone());
        line("c0", format!("{:?}", self.c0));
        line("x0", format!("{:?}", self.x0));
        line("abs_tol", format!("{:?}", self.abs_tol));
        line("rel_tol", format!("{:?}", self.rel_tol));
        line("condition_max", opt_num(self.condition_max));
        line("max_abs_residual", format!("{:?}", self.max_abs_residual));
        line("l2_residual", format!("{:?}", self.l2_residual));
        line("residual_scale", format!("{:?}", self.residual_scale));
        line("comparison_max_diff", opt_num(self.comparison_max_diff));
        out
    }
}
