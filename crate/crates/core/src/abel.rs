//! Second-kind Abel problems `(g0 + g1 y) y' = f2 y^2 + f1 y + f0` and
//! their quadrature closed forms.
//!
//! Every indefinite integral is taken as a definite integral from the left
//! end `x0` of the requested grid, so the integration constant `c0` is the
//! value of the exponential-weighted part at `x0`. All three constructions
//! share the form
//!
//! ```text
//! y = lambda + phi + S,    S' = h S + K,    S(x0) = c0
//! ```
//!
//! and differ only in the rate `h`, the kernel `K` and the shift `phi`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::expr::{self, add, div, mul, neg, pow, sub, Expr, Func};
use crate::quad::{self, Grid, Tolerance, WeightedSolution};

/// Number of uniform points at which coefficients are validated.
pub const VALIDATION_POINTS: usize = 257;
/// Smallest admissible `|g1|`, `|f2|` and `|g|`.
pub const NONZERO_GUARD: f64 = 1e-9;
/// Relative tolerance for "the Theorem 1 condition holds".
pub const CONDITION_TOL: f64 = 1e-8;
/// Relative tolerance for the pointwise quadratic satisfied by `phi`.
pub const PHI_EQUATION_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub a: f64,
    pub b: f64,
}

impl Domain {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Invalid(format!(
                "domain needs finite a < b (got [{a:?}, {b:?}])"
            )));
        }
        Ok(Domain { a, b })
    }

    pub fn validation_grid(&self) -> Grid {
        Grid::new(self.a, self.b, VALIDATION_POINTS).expect("domain is a valid interval")
    }

    fn contains(&self, grid: &Grid) -> bool {
        let slack = 1e-12 * (self.b - self.a);
        grid.x0() >= self.a - slack && grid.x1() <= self.b + slack
    }
}

fn check_evaluable(exprs: &[&Expr], grid: &Grid) -> Result<()> {
    for x in grid.points() {
        for e in exprs {
            e.eval(x)?;
        }
    }
    Ok(())
}

fn require_nonzero(e: &Expr, what: &'static str, grid: &Grid) -> Result<()> {
    for x in grid.points() {
        let value = e.eval(x)?;
        if value.abs() < NONZERO_GUARD {
            return Err(Error::NearZero { what, x, value });
        }
    }
    Ok(())
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Coefficient values of an Abel problem at one abscissa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub g0: f64,
    pub g1: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
}

/// `(g0 + g1 y) y' = f2 y^2 + f1 y + f0` on a closed interval.
#[derive(Clone, Debug, PartialEq)]
pub struct AbelProblem {
    pub g0: Expr,
    pub g1: Expr,
    pub f0: Expr,
    pub f1: Expr,
    pub f2: Expr,
    pub domain: Domain,
}

impl AbelProblem {
    /// Fails if any coefficient cannot be evaluated on the domain.
    pub fn new(g0: Expr, g1: Expr, f0: Expr, f1: Expr, f2: Expr, domain: Domain) -> Result<Self> {
        let problem = AbelProblem {
            g0,
            g1,
            f0,
            f1,
            f2,
            domain,
        };
        check_evaluable(&problem.exprs(), &domain.validation_grid())?;
        Ok(problem)
    }

    /// Parses the five coefficients in the order `g0, g1, f0, f1, f2`.
    pub fn parse(texts: [&str; 5], a: f64, b: f64) -> Result<Self> {
        let [g0, g1, f0, f1, f2] = texts;
        AbelProblem::new(
            expr::parse_expr(g0)?,
            expr::parse_expr(g1)?,
            expr::parse_expr(f0)?,
            expr::parse_expr(f1)?,
            expr::parse_expr(f2)?,
            Domain::new(a, b)?,
        )
    }

    pub fn exprs(&self) -> [&Expr; 5] {
        [&self.g0, &self.g1, &self.f0, &self.f1, &self.f2]
    }

    pub fn at(&self, x: f64) -> Result<Coefficients> {
        Ok(Coefficients {
            g0: self.g0.eval(x)?,
            g1: self.g1.eval(x)?,
            f0: self.f0.eval(x)?,
            f1: self.f1.eval(x)?,
            f2: self.f2.eval(x)?,
        })
    }

    /// Same problem with every coefficient negated.
    pub fn negated(&self) -> AbelProblem {
        AbelProblem {
            g0: neg(self.g0.clone()),
            g1: neg(self.g1.clone()),
            f0: neg(self.f0.clone()),
            f1: neg(self.f1.clone()),
            f2: neg(self.f2.clone()),
            domain: self.domain,
        }
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.domain.contains(grid) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "grid [{:?}, {:?}] leaves the domain [{:?}, {:?}]",
                grid.x0(),
                grid.x1(),
                self.domain.a,
                self.domain.b
            )))
        }
    }

    /// `f2 / g1`, the rate shared by Theorems 1 and 2.
    pub fn rate(&self) -> Expr {
        div(self.f2.clone(), self.g1.clone())
    }
}

/// `(g' + g q y) y' = -a q y^2 + a (q - g'/g) y + a g'/g`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecialProblem {
    pub g: Expr,
    pub q: Expr,
    pub a: Expr,
    pub domain: Domain,
    g_prime: Expr,
}

impl SpecialProblem {
    pub fn new(g: Expr, q: Expr, a: Expr, domain: Domain) -> Result<Self> {
        let g_prime = g.differentiate();
        let validation = domain.validation_grid();
        check_evaluable(&[&g, &q, &a, &g_prime], &validation)?;
        require_nonzero(&g, "g", &validation)?;
        Ok(SpecialProblem {
            g,
            q,
            a,
            domain,
            g_prime,
        })
    }

    pub fn parse(texts: [&str; 3], a: f64, b: f64) -> Result<Self> {
        let [g, q, coef_a] = texts;
        SpecialProblem::new(
            expr::parse_expr(g)?,
            expr::parse_expr(q)?,
            expr::parse_expr(coef_a)?,
            Domain::new(a, b)?,
        )
    }

    pub fn g_prime(&self) -> &Expr {
        &self.g_prime
    }

    /// The same equation written with general Abel coefficients.
    pub fn to_general(&self) -> Result<AbelProblem> {
        let log_slope = div(self.g_prime.clone(), self.g.clone());
        AbelProblem::new(
            self.g_prime.clone(),
            mul(self.g.clone(), self.q.clone()),
            mul(self.a.clone(), log_slope.clone()),
            mul(self.a.clone(), sub(self.q.clone(), log_slope)),
            neg(mul(self.a.clone(), self.q.clone())),
            self.domain,
        )
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.domain.contains(grid) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "grid [{:?}, {:?}] leaves the domain [{:?}, {:?}]",
                grid.x0(),
                grid.x1(),
                self.domain.a,
                self.domain.b
            )))
        }
    }
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Invalid(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Method {
    Proposition => "proposition",
    Theorem1 => "theorem1",
    Theorem2 => "theorem2",
});

keyword_enum!(Variant { F1 => "f1", F0 => "f0" });

keyword_enum!(Branch { Plus => "plus", Minus => "minus" });

keyword_enum!(KForm {
    Paper => "paper",
    Recomposed => "recomposed",
});

/// A constructed solution candidate sampled on a grid.
///
/// `y = lambda + phi + S` where `S' = rate * S + kernel`, `S(x0) = c0`.
/// `yprime` is taken from that identity, never from differencing.
#[derive(Clone, Debug)]
pub struct ClosedForm {
    pub method: Method,
    pub variant: Option<Variant>,
    pub branch: Option<Branch>,
    pub k_form: Option<KForm>,
    pub lambda: Expr,
    pub phi: Option<Expr>,
    pub rate: Expr,
    pub kernel: Expr,
    pub c0: f64,
    pub x0: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yprime: Vec<f64>,
    /// Max `|g0 f1 - g1 (f0 + f2)|` of the problem the formula was applied to.
    pub condition_max: Option<f64>,
    pub condition_violated: bool,
    lambda_prime: Expr,
    phi_prime: Option<Expr>,
    weighted: WeightedSolution,
}

impl ClosedForm {
    #[allow(clippy::too_many_arguments)]
    fn build(
        method: Method,
        lambda: &Expr,
        phi: Option<&Expr>,
        rate: Expr,
        kernel: Expr,
        c0: f64,
        grid: &Grid,
        tol: &Tolerance,
    ) -> Result<ClosedForm> {
        let weighted =
            quad::exp_weighted_dense(|x| rate.eval(x), |x| kernel.eval(x), c0, grid, tol)?;
        let lambda_prime = lambda.differentiate();
        let phi_prime = phi.map(Expr::differentiate);
        let x = grid.points();
        let mut y = Vec::with_capacity(x.len());
        let mut yprime = Vec::with_capacity(x.len());
        for (&xi, &s) in x.iter().zip(&weighted.values) {
            let (shift, shift_prime) = match (phi, &phi_prime) {
                (Some(p), Some(dp)) => (p.eval(xi)?, dp.eval(xi)?),
                _ => (0.0, 0.0),
            };
            y.push(lambda.eval(xi)? + shift + s);
            yprime
                .push(lambda_prime.eval(xi)? + shift_prime + rate.eval(xi)? * s + kernel.eval(xi)?);
        }
        Ok(ClosedForm {
            method,
            variant: None,
            branch: None,
            k_form: None,
            lambda: lambda.clone(),
            phi: phi.cloned(),
            rate,
            kernel,
            c0,
            x0: grid.x0(),
            x,
            y,
            yprime,
            condition_max: None,
            condition_violated: false,
            lambda_prime,
            phi_prime,
            weighted,
        })
    }

    /// Exponential-weighted part `S` at the grid points.
    pub fn weighted_values(&self) -> &[f64] {
        &self.weighted.values
    }

    fn shift_at(&self, x: f64) -> Result<(f64, f64)> {
        match (&self.phi, &self.phi_prime) {
            (Some(p), Some(dp)) => Ok((p.eval(x)?, dp.eval(x)?)),
            _ => Ok((0.0, 0.0)),
        }
    }

    /// `y` anywhere in the grid interval (dense output between steps).
    pub fn eval_y(&self, x: f64) -> Result<f64> {
        Ok(self.lambda.eval(x)? + self.shift_at(x)?.0 + self.weighted.eval(x))
    }

    pub fn eval_yprime(&self, x: f64) -> Result<f64> {
        let s = self.weighted.eval(x);
        Ok(self.lambda_prime.eval(x)?
            + self.shift_at(x)?.1
            + self.rate.eval(x)? * s
            + self.kernel.eval(x)?)
    }

    /// Largest `|y' - (lambda' + phi' + h (y - lambda - phi) + K)|` on the grid.
    pub fn derivative_identity_gap(&self) -> Result<f64> {
        let mut gap = 0.0f64;
        for (i, &x) in self.x.iter().enumerate() {
            let (shift, shift_prime) = self.shift_at(x)?;
            let lam = self.lambda.eval(x)?;
            let expected = self.lambda_prime.eval(x)?
                + shift_prime
                + self.rate.eval(x)? * (self.y[i] - lam - shift)
                + self.kernel.eval(x)?;
            gap = gap.max((self.yprime[i] - expected).abs());
        }
        Ok(gap)
    }
}

/// Pointwise `C(x) = g0 f1 - g1 (f0 + f2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSamples {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub max_abs: f64,
    /// `1 + max(|g0 f1|, |g1 (f0 + f2)|)` over the grid.
    pub scale: f64,
}

impl ConditionSamples {
    pub fn holds(&self) -> bool {
        self.max_abs <= CONDITION_TOL * self.scale
    }
}

pub fn thm1_condition_residual(p: &AbelProblem, grid: &Grid) -> Result<ConditionSamples> {
    let x = grid.points();
    let mut values = Vec::with_capacity(x.len());
    let mut sides = 0.0f64;
    for &xi in &x {
        let c = p.at(xi)?;
        let lhs = c.g0 * c.f1;
        let rhs = c.g1 * (c.f0 + c.f2);
        sides = sides.max(lhs.abs()).max(rhs.abs());
        values.push(lhs - rhs);
    }
    let max_abs = max_abs(&values);
    Ok(ConditionSamples {
        x,
        values,
        max_abs,
        scale: 1.0 + sides,
    })
}

/// Exact solution of the special form: `y = e^{-A}(c0 + ∫ (a/g) e^{A})`
/// with `A = ∫ a/g`.
pub fn proposition_solve(
    sp: &SpecialProblem,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<ClosedForm> {
    sp.check_grid(grid)?;
    require_nonzero(&sp.g, "g", grid)?;
    let ratio = div(sp.a.clone(), sp.g.clone());
    ClosedForm::build(
        Method::Proposition,
        &Expr::Const(0.0),
        None,
        neg(ratio.clone()),
        ratio,
        c0,
        grid,
        tol,
    )
}

/// Intermediate functions of the lambda reduction, sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaReduction {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
}

/// `(f_v - (g0/g1) f2) / g1` for the chosen coefficient `f_v`.
fn base_kernel(p: &AbelProblem, variant: Variant) -> Expr {
    let fv = match variant {
        Variant::F1 => p.f1.clone(),
        Variant::F0 => p.f0.clone(),
    };
    div(
        sub(fv, mul(div(p.g0.clone(), p.g1.clone()), p.f2.clone())),
        p.g1.clone(),
    )
}

/// Samples `u`, `g`, `q`, `a` of the reduction to the special form.
///
/// `u + lambda` solves the linear equation `(u+lambda)' = (f2/g1)(u+lambda) + k`
/// with `k = (f1 - (g0/g1) f2)/g1` and `u(x0) = c1 - lambda(x0)`;
/// `g = c2 + ∫ (g0 + g1 lambda)`, `q = g1 u / g`, `a = (g1 u' - f2 u) / q`.
pub fn reduce_with_lambda(
    p: &AbelProblem,
    lambda: &Expr,
    c1: f64,
    c2: f64,
    grid: &Grid,
    tol: &Tolerance,
) -> Result<LambdaReduction> {
    p.check_grid(grid)?;
    require_nonzero(&p.g1, "g1", grid)?;
    let rate = p.rate();
    let kernel = base_kernel(p, Variant::F1);
    let shifted = quad::exp_weighted_solution(|x| rate.eval(x), |x| kernel.eval(x), c1, grid, tol)?;
    let g_rate = add(p.g0.clone(), mul(p.g1.clone(), lambda.clone()));
    let g_integral = quad::cumulative_integral(|x| g_rate.eval(x), grid, tol)?;
    let lambda_prime = lambda.differentiate();

    let x = grid.points();
    let n = x.len();
    let (mut u, mut g, mut q, mut a) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (i, &xi) in x.iter().enumerate() {
        let c = p.at(xi)?;
        let lam = lambda.eval(xi)?;
        let ui = shifted[i] - lam;
        let ui_prime = rate.eval(xi)? * shifted[i] + kernel.eval(xi)? - lambda_prime.eval(xi)?;
        let gi = c2 + g_integral[i];
        if gi.abs() < NONZERO_GUARD {
            return Err(Error::NearZero {
                what: "g",
                x: xi,
                value: gi,
            });
        }
        let qi = c.g1 * ui / gi;
        if qi.abs() < 1e-12 {
            return Err(Error::NearZero {
                what: "q",
                x: xi,
                value: qi,
            });
        }
        u.push(ui);
        g.push(gi);
        q.push(qi);
        a.push((c.g1 * ui_prime - c.f2 * ui) / qi);
    }
    Ok(LambdaReduction { x, u, g, q, a })
}

/// Theorem 1 closed form: `y = lambda + S`, `S' = (f2/g1) S + K`,
/// `K = (f_v - (g0/g1) f2)/g1 + (f2/g1) lambda - lambda'`.
///
/// The integrability condition is not required; when it fails the result
/// is still produced and `condition_violated` is set.
pub fn theorem1_solve(
    p: &AbelProblem,
    lambda: &Expr,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
    variant: Variant,
) -> Result<ClosedForm> {
    p.check_grid(grid)?;
    require_nonzero(&p.g1, "g1", grid)?;
    let condition = thm1_condition_residual(p, grid)?;
    let rate = p.rate();
    let kernel = sub(
        add(base_kernel(p, variant), mul(rate.clone(), lambda.clone())),
        lambda.differentiate(),
    );
    let mut cf = ClosedForm::build(Method::Theorem1, lambda, None, rate, kernel, c0, grid, tol)?;
    cf.variant = Some(variant);
    cf.condition_max = Some(condition.max_abs);
    cf.condition_violated = !condition.holds();
    Ok(cf)
}

/// Residual predicted for the `f1` variant of Theorem 1 when the
/// condition holds: `f2 (1 - (g0/g1)^2)`.
///
/// Substituting `y' = (f2 y + f1 - g0 f2 / g1) / g1` into the equation
/// leaves `g0 f1 / g1 - g0^2 f2 / g1^2 - f0`, independent of `y`; the
/// condition turns `g0 f1 / g1` into `f0 + f2`.
pub fn predicted_residual_thm1(p: &AbelProblem, grid: &Grid) -> Result<Vec<f64>> {
    require_nonzero(&p.g1, "g1", grid)?;
    grid.points()
        .into_iter()
        .map(|x| {
            let c = p.at(x)?;
            let ratio = c.g0 / c.g1;
            Ok(c.f2 * (1.0 - ratio * ratio))
        })
        .collect()
}

/// One branch of the roots of `g1 f2 phi^2 + 2 g0 f2 phi + g0 f1 - g1 (f0 + f2) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiRoot {
    pub branch: Branch,
    pub expr: Expr,
    pub samples: Vec<f64>,
    /// The quadratic evaluated at `phi`, per grid point.
    pub equation_residual: Vec<f64>,
    /// `1 + ` the largest term magnitude of the quadratic over the grid.
    pub equation_scale: f64,
}

impl PhiRoot {
    pub fn satisfies_equation(&self) -> bool {
        max_abs(&self.equation_residual) <= PHI_EQUATION_TOL * self.equation_scale
    }
}

/// `D = (g0 f2)^2 - g1 f2 (g0 f1 - g1 (f0 + f2))`.
pub fn discriminant(p: &AbelProblem) -> Expr {
    let g0f2 = mul(p.g0.clone(), p.f2.clone());
    let condition = sub(
        mul(p.g0.clone(), p.f1.clone()),
        mul(p.g1.clone(), add(p.f0.clone(), p.f2.clone())),
    );
    sub(
        pow(g0f2, Expr::Const(2.0)),
        mul(mul(p.g1.clone(), p.f2.clone()), condition),
    )
}

/// `phi = (-g0 f2 ± sqrt(D)) / (g1 f2)`, built as an expression so that
/// `phi'` is available symbolically. The branch is fixed over the grid;
/// a discriminant that is negative or vanishes anywhere on it is an
/// error. Between samples, each local minimum of `D` is refined by a
/// golden-section search.
pub fn phi_roots(p: &AbelProblem, branch: Branch, grid: &Grid) -> Result<PhiRoot> {
    p.check_grid(grid)?;
    require_nonzero(&p.g1, "g1", grid)?;
    require_nonzero(&p.f2, "f2", grid)?;

    let disc = discriminant(p);
    let disc_at = |x: f64| -> Result<(f64, f64)> {
        let c = p.at(x)?;
        let square = (c.g0 * c.f2).powi(2);
        let product = c.g1 * c.f2 * (c.g0 * c.f1 - c.g1 * (c.f0 + c.f2));
        Ok((square - product, square.abs().max(product.abs())))
    };
    let xs = grid.points();
    let mut disc_values = Vec::with_capacity(xs.len());
    let mut disc_scale = 0.0f64;
    for &x in &xs {
        let (d, size) = disc_at(x)?;
        disc_scale = disc_scale.max(size);
        disc_values.push(d);
    }
    let threshold = 1e-12 * (1.0 + disc_scale);
    let classify = |x: f64, d: f64| -> Result<()> {
        if d < -threshold {
            Err(Error::ComplexRoot { x, discriminant: d })
        } else if d <= threshold {
            Err(Error::DiscriminantVanishes { x })
        } else {
            Ok(())
        }
    };
    for (&x, &d) in xs.iter().zip(&disc_values) {
        if d < -threshold {
            return Err(Error::ComplexRoot { x, discriminant: d });
        }
    }
    for (&x, &d) in xs.iter().zip(&disc_values) {
        classify(x, d)?;
    }
    // The solver also evaluates phi between grid points, where D can touch
    // zero (a double root) while every sample stays positive.
    let last = xs.len() - 1;
    for i in 0..=last {
        let left = if i == 0 {
            f64::INFINITY
        } else {
            disc_values[i - 1]
        };
        let right = if i == last {
            f64::INFINITY
        } else {
            disc_values[i + 1]
        };
        if disc_values[i] <= left && disc_values[i] <= right {
            let (lo, hi) = (xs[i.saturating_sub(1)], xs[(i + 1).min(last)]);
            let (x, d) = golden_minimum(|t| disc_at(t).map(|(d, _)| d), lo, hi)?;
            classify(x, d)?;
        }
    }

    let root = expr::call(Func::Sqrt, disc);
    let minus_b = neg(mul(p.g0.clone(), p.f2.clone()));
    let numerator = match branch {
        Branch::Plus => add(minus_b, root),
        Branch::Minus => sub(minus_b, root),
    };
    let phi = div(numerator, mul(p.g1.clone(), p.f2.clone()));

    let mut samples = Vec::with_capacity(grid.len());
    let mut equation_residual = Vec::with_capacity(grid.len());
    let mut terms = 0.0f64;
    for x in grid.points() {
        let c = p.at(x)?;
        let v = phi.eval(x)?;
        let quadratic = c.g1 * c.f2 * v * v;
        let linear = 2.0 * c.g0 * c.f2 * v;
        let g0f1 = c.g0 * c.f1;
        let g1f = c.g1 * (c.f0 + c.f2);
        terms = terms
            .max(quadratic.abs())
            .max(linear.abs())
            .max(g0f1.abs())
            .max(g1f.abs());
        samples.push(v);
        equation_residual.push(quadratic + linear + g0f1 - g1f);
    }
    Ok(PhiRoot {
        branch,
        expr: phi,
        samples,
        equation_residual,
        equation_scale: 1.0 + terms,
    })
}

/// Golden-section search for the minimum of `f` on `[lo, hi]`; returns
/// the best point seen, endpoints included.
fn golden_minimum<F>(f: F, lo: f64, hi: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best = (lo, f(lo)?);
    let fhi = f(hi)?;
    if fhi < best.1 {
        best = (hi, fhi);
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..80 {
        if fc < best.1 {
            best = (c, fc);
        }
        if fd < best.1 {
            best = (d, fd);
        }
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(best)
}

/// Coefficients of the equation for `w = y - phi`.
pub fn reduce_by_phi(p: &AbelProblem, phi: &Expr) -> Result<AbelProblem> {
    let phi_prime = phi.differentiate();
    let new_g0 = add(p.g0.clone(), mul(p.g1.clone(), phi.clone()));
    let new_f0 = sub(
        add(
            add(p.f0.clone(), mul(p.f1.clone(), phi.clone())),
            mul(p.f2.clone(), pow(phi.clone(), Expr::Const(2.0))),
        ),
        mul(new_g0.clone(), phi_prime.clone()),
    );
    let new_f1 = sub(
        add(
            p.f1.clone(),
            mul(mul(Expr::Const(2.0), p.f2.clone()), phi.clone()),
        ),
        mul(p.g1.clone(), phi_prime),
    );
    AbelProblem::new(new_g0, p.g1.clone(), new_f0, new_f1, p.f2.clone(), p.domain)
}

/// Kernel transcribed from the printed Theorem 2 formula:
/// `(g0 + g1 phi)(f1 - f2 + 2 f2 phi - g1 phi') / g1^2 + (f2/g1)(lambda - 1) - lambda'`.
fn paper_kernel(p: &AbelProblem, phi: &Expr, lambda: &Expr) -> Expr {
    let shifted_g0 = add(p.g0.clone(), mul(p.g1.clone(), phi.clone()));
    let bracket = sub(
        add(
            sub(p.f1.clone(), p.f2.clone()),
            mul(mul(Expr::Const(2.0), p.f2.clone()), phi.clone()),
        ),
        mul(p.g1.clone(), phi.differentiate()),
    );
    let first = div(
        mul(shifted_g0, bracket),
        pow(p.g1.clone(), Expr::Const(2.0)),
    );
    let second = mul(p.rate(), sub(lambda.clone(), Expr::Const(1.0)));
    sub(add(first, second), lambda.differentiate())
}

/// Theorem 2 closed form for one `phi` branch.
///
/// `Recomposed` applies [`theorem1_solve`] (variant `f1`) to the problem
/// for `w = y - phi` and shifts back; `Paper` uses the printed kernel
/// with `y = lambda + phi + S`.
pub fn theorem2_solve(
    p: &AbelProblem,
    lambda: &Expr,
    c0: f64,
    grid: &Grid,
    tol: &Tolerance,
    branch: Branch,
    k_form: KForm,
) -> Result<ClosedForm> {
    let root = phi_roots(p, branch, grid)?;
    let mut cf = match k_form {
        KForm::Recomposed => {
            let reduced = reduce_by_phi(p, &root.expr)?;
            let w = theorem1_solve(&reduced, lambda, c0, grid, tol, Variant::F1)?;
            let phi_prime = root.expr.differentiate();
            let mut y = w.y;
            let mut yprime = w.yprime;
            for (i, &x) in w.x.iter().enumerate() {
                y[i] += root.samples[i];
                yprime[i] += phi_prime.eval(x)?;
            }
            ClosedForm {
                method: Method::Theorem2,
                phi: Some(root.expr.clone()),
                phi_prime: Some(phi_prime),
                y,
                yprime,
                ..w
            }
        }
        KForm::Paper => {
            let condition = thm1_condition_residual(p, grid)?;
            let mut cf = ClosedForm::build(
                Method::Theorem2,
                lambda,
                Some(&root.expr),
                p.rate(),
                paper_kernel(p, &root.expr, lambda),
                c0,
                grid,
                tol,
            )?;
            cf.condition_max = Some(condition.max_abs);
            cf.condition_violated = !condition.holds();
            cf
        }
    };
    cf.variant = Some(Variant::F1);
    cf.branch = Some(branch);
    cf.k_form = Some(k_form);
    Ok(cf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn problem(texts: [&str; 5]) -> AbelProblem {
        AbelProblem::parse(texts, 0.0, 1.0).unwrap()
    }

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    fn zero() -> Expr {
        Expr::Const(0.0)
    }

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn condition_residual_examples() {
        let g = grid(9);
        let c = thm1_condition_residual(&problem(["1", "1", "1", "2", "1"]), &g).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert!(c.holds());
        let c = thm1_condition_residual(&problem(["0", "1", "-1", "0", "1"]), &g).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        let c = thm1_condition_residual(&problem(["1", "1", "0", "1", "0"]), &g).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert_eq!(c.max_abs, 1.0);
        assert_eq!(c.scale, 2.0);
        assert!(!c.holds());
    }

    #[test]
    fn problem_validation() {
        assert!(AbelProblem::parse(["log(x)", "1", "0", "0", "1"], 0.0, 1.0).is_err());
        assert!(AbelProblem::parse(["log(x)", "1", "0", "0", "1"], 0.5, 1.0).is_ok());
        assert!(AbelProblem::parse(["1", "1", "0", "0", "1"], 1.0, 0.0).is_err());
        assert!(SpecialProblem::parse(["x - 0.5", "1", "1"], 0.0, 1.0).is_err());
    }

    #[test]
    fn grid_must_stay_inside_domain() {
        let p = problem(["1", "1", "1", "2", "1"]);
        let outside = Grid::new(0.0, 2.0, 5).unwrap();
        let err = theorem1_solve(&p, &zero(), 1.0, &outside, &tol(), Variant::F1).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn proposition_constant_solution() {
        let sp = SpecialProblem::parse(["exp(x)", "1", "1"], 0.0, 1.0).unwrap();
        let cf = proposition_solve(&sp, 1.0, &grid(17), &tol()).unwrap();
        for (&y, &yp) in cf.y.iter().zip(&cf.yprime) {
            assert!((y - 1.0).abs() < 1e-12);
            assert!(yp.abs() < 1e-12);
        }
    }

    #[test]
    fn proposition_separable_solution() {
        // e^x (1 + y) y' = 1 - y^2  with y(0) = 2  =>  y = 1 + exp(e^{-x} - 1)
        let sp = SpecialProblem::parse(["exp(x)", "1", "1"], 0.0, 1.0).unwrap();
        let g = grid(17);
        let cf = proposition_solve(&sp, 2.0, &g, &tol()).unwrap();
        assert_eq!(cf.y[0], 2.0);
        for (x, y) in g.points().into_iter().zip(&cf.y) {
            let exact = 1.0 + ((-x).exp() - 1.0).exp();
            assert!((y - exact).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn proposition_starts_at_c0() {
        let sp = SpecialProblem::parse(["2 + sin(x)", "x - 3", "1 + x^2"], 0.0, 1.0).unwrap();
        for c0 in [-3.0, 0.0, 0.25] {
            let cf = proposition_solve(&sp, c0, &grid(5), &tol()).unwrap();
            assert_eq!(cf.y[0], c0);
        }
    }

    #[test]
    fn special_problem_as_general() {
        let sp = SpecialProblem::parse(["exp(x)", "1 + x", "2 - x"], 0.0, 1.0).unwrap();
        let general = sp.to_general().unwrap();
        let x = 0.3f64;
        let c = general.at(x).unwrap();
        let (g, gp, q, a) = (x.exp(), x.exp(), 1.0 + x, 2.0 - x);
        assert!((c.g0 - gp).abs() < 1e-14);
        assert!((c.g1 - g * q).abs() < 1e-14);
        assert!((c.f2 + a * q).abs() < 1e-14);
        assert!((c.f1 - a * (q - gp / g)).abs() < 1e-14);
        assert!((c.f0 - a * gp / g).abs() < 1e-14);
    }

    #[test]
    fn lambda_reduction_examples() {
        let p = problem(["0", "1", "-1", "0", "1"]);
        let g = grid(11);
        let r = reduce_with_lambda(&p, &zero(), 1.0, 5.0, &g, &tol()).unwrap();
        for (i, x) in g.points().into_iter().enumerate() {
            assert!((r.u[i] - x.exp()).abs() < 1e-8 * x.exp());
            assert_eq!(r.g[i], 5.0);
            assert!(r.a[i].abs() < 1e-12);
            assert!((r.q[i] - x.exp() / 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn lambda_reduction_guards_zero_g() {
        let p = problem(["0", "1", "-1", "0", "1"]);
        let err = reduce_with_lambda(&p, &zero(), 1.0, 0.0, &grid(5), &tol()).unwrap_err();
        assert!(matches!(err, Error::NearZero { what: "g", .. }));
    }

    #[test]
    fn theorem1_exact_instance() {
        let p = problem(["1", "1", "1", "2", "1"]);
        let g = grid(33);
        for c0 in [0.0, 1.0, -0.5] {
            let cf = theorem1_solve(&p, &zero(), c0, &g, &tol(), Variant::F1).unwrap();
            assert!(!cf.condition_violated);
            for (x, y) in g.points().into_iter().zip(&cf.y) {
                let exact = (c0 + 1.0) * x.exp() - 1.0;
                assert!((y - exact).abs() < 1e-8 * (1.0 + exact.abs()), "x = {x}");
            }
        }
    }

    #[test]
    fn theorem1_flags_condition_violation() {
        let p = problem(["1", "1", "0", "1", "0"]);
        let cf = theorem1_solve(&p, &zero(), 1.0, &grid(5), &tol(), Variant::F1).unwrap();
        assert!(cf.condition_violated);
        assert_eq!(cf.condition_max, Some(1.0));
    }

    #[test]
    fn theorem1_rejects_vanishing_g1() {
        let p = problem(["1", "x - 0.5", "0", "1", "1"]);
        let err = theorem1_solve(&p, &zero(), 1.0, &grid(5), &tol(), Variant::F1).unwrap_err();
        assert!(matches!(err, Error::NearZero { what: "g1", x, .. } if x == 0.5));
    }

    #[test]
    fn theorem1_variants_differ_only_in_kernel() {
        let p = problem(["1 + x", "2", "x", "1", "3"]);
        let f1 = theorem1_solve(&p, &zero(), 1.0, &grid(9), &tol(), Variant::F1).unwrap();
        let f0 = theorem1_solve(&p, &zero(), 1.0, &grid(9), &tol(), Variant::F0).unwrap();
        assert_eq!(f1.rate, f0.rate);
        assert_ne!(f1.kernel, f0.kernel);
        assert_eq!(f1.y[0], f0.y[0]);
        assert_ne!(f1.y[8], f0.y[8]);
    }

    #[test]
    fn closed_form_starts_at_lambda_plus_c0() {
        let p = problem(["1 + x", "2", "x", "1", "3"]);
        let lambda = parse_expr("cos(x) + 2").unwrap();
        let cf = theorem1_solve(&p, &lambda, 0.4, &grid(9), &tol(), Variant::F0).unwrap();
        assert!((cf.y[0] - 3.4).abs() < 1e-9);
    }

    #[test]
    fn derivative_identity_holds() {
        let p = problem(["1 + x", "2 + x^2", "x", "1", "3 - x"]);
        let lambda = parse_expr("x^3 - x").unwrap();
        let cf = theorem1_solve(&p, &lambda, 0.4, &grid(9), &tol(), Variant::F1).unwrap();
        let scale = 1.0 + cf.yprime.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(cf.derivative_identity_gap().unwrap() <= 1e-9 * scale);
    }

    #[test]
    fn dense_evaluation_matches_grid_samples() {
        let p = problem(["1 + x", "2 + x^2", "x", "1", "3 - x"]);
        let g = grid(9);
        let cf = theorem1_solve(
            &p,
            &parse_expr("sin(x)").unwrap(),
            0.4,
            &g,
            &tol(),
            Variant::F1,
        )
        .unwrap();
        for (i, x) in g.points().into_iter().enumerate() {
            assert!((cf.eval_y(x).unwrap() - cf.y[i]).abs() < 1e-14);
            assert!((cf.eval_yprime(x).unwrap() - cf.yprime[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn predicted_residual_examples() {
        let g = grid(5);
        let r = predicted_residual_thm1(&problem(["2 + x", "2 + x", "0", "1", "x^2"]), &g).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-15));
        let r = predicted_residual_thm1(&problem(["0", "1", "-1", "0", "1"]), &g).unwrap();
        assert!(r.iter().all(|&v| v == 1.0));
        let r = predicted_residual_thm1(&problem(["x", "3", "1", "2", "0"]), &g).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_roots_of_factorable_quadratic() {
        let p = problem(["1", "1", "0", "1", "1"]);
        let g = grid(5);
        let plus = phi_roots(&p, Branch::Plus, &g).unwrap();
        let minus = phi_roots(&p, Branch::Minus, &g).unwrap();
        assert!(plus.samples.iter().all(|v| v.abs() < 1e-15));
        assert!(minus.samples.iter().all(|v| (v + 2.0).abs() < 1e-15));
        assert!(plus.satisfies_equation() && minus.satisfies_equation());
    }

    #[test]
    fn phi_roots_when_g0_vanishes() {
        // Quadratic reduces to phi^2 - (f0 + 1) = 0.
        let p = problem(["0", "1", "x^2 + 1", "0.3", "1"]);
        let g = grid(9);
        let plus = phi_roots(&p, Branch::Plus, &g).unwrap();
        let minus = phi_roots(&p, Branch::Minus, &g).unwrap();
        for (i, x) in g.points().into_iter().enumerate() {
            let r = (x * x + 2.0).sqrt();
            assert!((plus.samples[i] - r).abs() < 1e-14);
            assert!((minus.samples[i] + r).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_roots_error_paths() {
        let g = grid(9);
        // g0 = 0: D = f0 + 1 = -2 < 0.
        let err = phi_roots(&problem(["0", "1", "-3", "0", "1"]), Branch::Plus, &g).unwrap_err();
        assert!(matches!(err, Error::ComplexRoot { x, .. } if x == 0.0));
        // Condition holds, so D = (g0 f2)^2 = x^2, which touches zero at x = 0.
        let err = phi_roots(&problem(["x", "1", "x - 1", "1", "1"]), Branch::Plus, &g).unwrap_err();
        assert!(matches!(err, Error::DiscriminantVanishes { x } if x == 0.0));
        // D = (x - 0.3)^2 is positive at every grid point but not between them.
        let err =
            phi_roots(&problem(["x - 0.3", "1", "-1", "0", "1"]), Branch::Plus, &g).unwrap_err();
        assert!(
            matches!(err, Error::DiscriminantVanishes { x } if (x - 0.3).abs() < 1e-6),
            "{err:?}"
        );
        // D = (x - 0.3)^2 - 1e-4 dips below zero between samples.
        let err = phi_roots(
            &problem(["x - 0.3", "1", "-1.0001", "0", "1"]),
            Branch::Minus,
            &g,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::ComplexRoot { x, discriminant } if (x - 0.3).abs() < 1e-6 && discriminant < 0.0)
        );
        let err =
            phi_roots(&problem(["1", "1", "0", "1", "x - 0.5"]), Branch::Plus, &g).unwrap_err();
        assert!(matches!(err, Error::NearZero { what: "f2", .. }));
    }

    #[test]
    fn reduction_by_zero_phi_is_identity() {
        let p = problem(["1 + x", "2", "x", "1", "3"]);
        let reduced = reduce_by_phi(&p, &zero()).unwrap();
        assert_eq!(reduced, p, "{:?}", reduced.exprs().map(|e| e.to_string()));
    }

    #[test]
    fn reduction_by_root_satisfies_condition() {
        let g = grid(17);
        for texts in [
            ["1", "1", "0", "1", "1"],
            ["1 + x", "2 + x", "x^2 + 3", "0.5 + x", "1 + x^2"],
            ["0", "1", "x^2 + 1", "0.3", "1"],
        ] {
            let p = problem(texts);
            for branch in [Branch::Plus, Branch::Minus] {
                let root = phi_roots(&p, branch, &g).unwrap();
                assert!(root.satisfies_equation(), "{texts:?}");
                let reduced = reduce_by_phi(&p, &root.expr).unwrap();
                let c = thm1_condition_residual(&reduced, &g).unwrap();
                assert!(
                    c.holds(),
                    "{texts:?} {branch}: {} vs {}",
                    c.max_abs,
                    c.scale
                );
            }
        }
    }

    #[test]
    fn theorem2_recomposed_reduces_to_theorem1_at_zero_root() {
        let p = problem(["1", "1", "1", "2", "1"]);
        let g = grid(17);
        let lambda = parse_expr("x").unwrap();
        // Condition holds, g0 f2 = 1 > 0: the plus branch is phi = 0.
        let t2 = theorem2_solve(
            &p,
            &lambda,
            1.0,
            &g,
            &tol(),
            Branch::Plus,
            KForm::Recomposed,
        )
        .unwrap();
        let t1 = theorem1_solve(&p, &lambda, 1.0, &g, &tol(), Variant::F1).unwrap();
        for i in 0..g.len() {
            assert!((t2.y[i] - t1.y[i]).abs() < 1e-9 * (1.0 + t1.y[i].abs()));
        }
        assert_eq!(t2.method, Method::Theorem2);
        assert_eq!(t2.k_form, Some(KForm::Recomposed));
        assert!(!t2.condition_violated);
    }

    #[test]
    fn theorem2_starts_at_lambda_phi_c0() {
        let p = problem(["1", "1", "0", "1", "1"]);
        let g = grid(9);
        for k_form in [KForm::Paper, KForm::Recomposed] {
            let cf = theorem2_solve(&p, &zero(), 0.5, &g, &tol(), Branch::Minus, k_form).unwrap();
            assert!((cf.y[0] - (0.5 - 2.0)).abs() < 1e-9);
            let scale = 1.0 + cf.yprime.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(cf.derivative_identity_gap().unwrap() <= 1e-9 * scale);
        }
    }

    #[test]
    fn keywords_parse() {
        assert_eq!("theorem2".parse::<Method>().unwrap(), Method::Theorem2);
        assert_eq!("f0".parse::<Variant>().unwrap(), Variant::F0);
        assert_eq!("minus".parse::<Branch>().unwrap(), Branch::Minus);
        assert_eq!("paper".parse::<KForm>().unwrap(), KForm::Paper);
        assert!("theorem3".parse::<Method>().is_err());
        assert_eq!(KForm::Recomposed.to_string(), "recomposed");
    }
}
