#![allow(dead_code)]

use abel_core::expr::Expr;
use abel_core::verify::Lcg;

/// Adaptive Simpson on [a, b].
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, eps, 40)
}

/// Running integrals of `f` from `xs[0]` to each `xs[i]`.
pub fn running_integral<F: Fn(f64) -> f64>(f: F, xs: &[f64], eps: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = vec![0.0];
    for w in xs.windows(2) {
        acc += simpson(&f, w[0], w[1], eps);
        out.push(acc);
    }
    out
}

/// Random expression text in `x` that stays smooth and moderate on [-2, 2]:
/// every unary call is fed something already bounded away from its
/// singularities.
pub fn random_expr(rng: &mut Lcg, depth: u32) -> String {
    let pick = rng.next_u64() % if depth == 0 { 2 } else { 13 };
    let sub = |rng: &mut Lcg| random_expr(rng, depth.saturating_sub(1));
    match pick {
        0 => "x".to_string(),
        1 => format!("({})", rng.next_coefficient()),
        2 => format!("({}) + ({})", sub(rng), sub(rng)),
        3 => format!("({}) - ({})", sub(rng), sub(rng)),
        4 => format!("({}) * ({})", sub(rng), sub(rng)),
        5 => format!("({}) / (2 + sin({}))", sub(rng), sub(rng)),
        6 => format!("sin({})", sub(rng)),
        7 => format!("cos({})", sub(rng)),
        8 => format!("exp(sin({}))", sub(rng)),
        9 => format!("log(2 + cos({}))", sub(rng)),
        10 => format!("sqrt(1 + ({})^2)", sub(rng)),
        11 => format!("tan(0.5*sin({}))", sub(rng)),
        _ => format!("-({})^{}", sub(rng), 2 + rng.next_u64() % 2),
    }
}

pub fn random_parsed(rng: &mut Lcg, depth: u32) -> Expr {
    let text = random_expr(rng, depth);
    text.parse()
        .unwrap_or_else(|e| panic!("generated `{text}` failed to parse: {e:?}"))
}

/// Ridders' extrapolated central difference starting from step `h`;
/// returns the estimate and its error estimate.
pub fn ridders_derivative(e: &Expr, x: f64, h: f64) -> (f64, f64) {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 12;
    let f = |t: f64| e.eval(t).expect("generated expressions are total");
    let central = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let mut a = [[0.0f64; TABLE]; TABLE];
    let mut h = h;
    a[0][0] = central(h);
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..TABLE {
        h /= SHRINK;
        a[0][i] = central(h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (best, err)
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
