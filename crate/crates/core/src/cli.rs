//! Command-line front end: problem files, subcommands and exit codes.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 check failed,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::abel::{
    self, AbelProblem, Branch, ClosedForm, Domain, KForm, Method, SpecialProblem, Variant,
};
use crate::error::Error;
use crate::expr::{parse_expr, Expr};
use crate::quad::{Grid, Tolerance};
use crate::verify::{self, Report, Samples, Trace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Relative residual bound used by `verify` and `sweep`.
pub const RESIDUAL_TOL: f64 = 1e-5;
/// Absolute bound on the closed-form/reference gap used by `compare`.
pub const COMPARE_TOL: f64 = 1e-5;

/// A problem-file error positioned at 1-based line and column.
#[derive(Debug, Clone, PartialEq)]
pub struct FileError {
    pub path: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {}",
            self.path, self.line, self.column, self.message
        )
    }
}

#[derive(Clone, Debug)]
pub enum ProblemKind {
    General(AbelProblem),
    Special(SpecialProblem),
}

/// Parsed `key = value` problem description.
#[derive(Clone, Debug)]
pub struct ProblemFile {
    pub kind: ProblemKind,
    pub lambda: Expr,
    pub c0: f64,
    pub x0: f64,
    pub grid_n: usize,
    pub tol: Tolerance,
}

const GENERAL_KEYS: [&str; 5] = ["g0", "g1", "f0", "f1", "f2"];
const SPECIAL_KEYS: [&str; 3] = ["g", "q", "a"];
const OTHER_KEYS: [&str; 7] = [
    "domain", "lambda", "c0", "x0", "grid_n", "abs_tol", "rel_tol",
];

struct Entry<'a> {
    value: &'a str,
    line: usize,
    column: usize,
}

impl ProblemFile {
    pub fn read(path: &Path) -> Result<ProblemFile, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        ProblemFile::parse(&text, &path.display().to_string())
    }

    /// `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<ProblemFile, CliError> {
        let at = |line: usize, column: usize, message: String| {
            CliError::File(FileError {
                path: origin.to_string(),
                line,
                column,
                message,
            })
        };

        let mut entries: Vec<(&str, Entry)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let Some(eq) = content.find('=') else {
                let col = column_of(raw, raw.len() - raw.trim_start().len());
                return Err(at(line_no, col, "expected `key = value`".into()));
            };
            let key = content[..eq].trim();
            let key_start = content.len() - content.trim_start().len();
            let value_part = &content[eq + 1..];
            let value = value_part.trim();
            let value_start = eq + 1 + (value_part.len() - value_part.trim_start().len());
            if !GENERAL_KEYS.contains(&key)
                && !SPECIAL_KEYS.contains(&key)
                && !OTHER_KEYS.contains(&key)
            {
                return Err(at(
                    line_no,
                    column_of(raw, key_start),
                    format!("unknown key `{key}`"),
                ));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(at(
                    line_no,
                    column_of(raw, key_start),
                    format!("duplicate key `{key}`"),
                ));
            }
            if value.is_empty() {
                return Err(at(
                    line_no,
                    column_of(raw, value_start),
                    format!("missing value for `{key}`"),
                ));
            }
            entries.push((
                key,
                Entry {
                    value,
                    line: line_no,
                    column: column_of(raw, value_start),
                },
            ));
        }
        let get = |key: &str| entries.iter().find(|(k, _)| *k == key).map(|(_, e)| e);

        let expr_of = |entry: &Entry| -> Result<Expr, CliError> {
            parse_expr(entry.value).map_err(|e| {
                at(
                    entry.line,
                    entry.column + entry.value[..e.offset].chars().count(),
                    format!("expected {}, found {}", e.expected, e.found),
                )
            })
        };
        let number_of = |entry: &Entry| -> Result<f64, CliError> {
            match entry.value.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(at(
                    entry.line,
                    entry.column,
                    format!("expected a finite number, found `{}`", entry.value),
                )),
            }
        };

        let general_present = GENERAL_KEYS.iter().filter(|k| get(k).is_some()).count();
        let special_present = SPECIAL_KEYS.iter().filter(|k| get(k).is_some()).count();
        let is_general = match (general_present, special_present) {
            (5, 0) => true,
            (0, 3) => false,
            _ => {
                return Err(at(
                    1,
                    1,
                    "give exactly one complete key set: g0, g1, f0, f1, f2 or g, q, a".into(),
                ))
            }
        };

        let Some(domain_entry) = get("domain") else {
            return Err(at(1, 1, "missing required key `domain`".into()));
        };
        let bounds: Vec<&str> = domain_entry
            .value
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parse_bound = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let (a, b) = match bounds.as_slice() {
            [lo, hi] => match (parse_bound(lo), parse_bound(hi)) {
                (Some(a), Some(b)) if a < b => (a, b),
                _ => {
                    return Err(at(
                        domain_entry.line,
                        domain_entry.column,
                        "domain needs two finite reals a < b".into(),
                    ))
                }
            },
            _ => {
                return Err(at(
                    domain_entry.line,
                    domain_entry.column,
                    "domain needs two finite reals a < b".into(),
                ))
            }
        };
        let domain = Domain::new(a, b)?;

        let kind = if is_general {
            let [g0, g1, f0, f1, f2] = GENERAL_KEYS.map(|k| get(k).expect("present"));
            ProblemKind::General(AbelProblem::new(
                expr_of(g0)?,
                expr_of(g1)?,
                expr_of(f0)?,
                expr_of(f1)?,
                expr_of(f2)?,
                domain,
            )?)
        } else {
            let [g, q, coef_a] = SPECIAL_KEYS.map(|k| get(k).expect("present"));
            ProblemKind::Special(SpecialProblem::new(
                expr_of(g)?,
                expr_of(q)?,
                expr_of(coef_a)?,
                domain,
            )?)
        };

        let lambda = match get("lambda") {
            Some(e) => expr_of(e)?,
            None => Expr::Const(0.0),
        };
        let c0 = get("c0").map(number_of).transpose()?.unwrap_or(1.0);
        let x0 = match get("x0") {
            Some(e) => {
                let v = number_of(e)?;
                if !(a..b).contains(&v) {
                    return Err(at(
                        e.line,
                        e.column,
                        format!("x0 must lie in [{a:?}, {b:?})"),
                    ));
                }
                v
            }
            None => a,
        };
        let grid_n = match get("grid_n") {
            Some(e) => match e.value.parse::<usize>() {
                Ok(n) if n >= 2 => n,
                _ => {
                    return Err(at(
                        e.line,
                        e.column,
                        format!("grid_n must be an integer >= 2, found `{}`", e.value),
                    ))
                }
            },
            None => 513,
        };
        let defaults = Tolerance::default();
        let tol_value = |key: &str, default: f64| -> Result<f64, CliError> {
            match get(key) {
                Some(e) => {
                    let v = number_of(e)?;
                    if v > 0.0 {
                        Ok(v)
                    } else {
                        Err(at(e.line, e.column, format!("{key} must be positive")))
                    }
                }
                None => Ok(default),
            }
        };
        let abs_tol = tol_value("abs_tol", defaults.abs_tol)?;
        let rel_tol = tol_value("rel_tol", defaults.rel_tol)?;
        let tol = Tolerance::new(abs_tol, rel_tol, defaults.max_steps)?;

        Ok(ProblemFile {
            kind,
            lambda,
            c0,
            x0,
            grid_n,
            tol,
        })
    }

    pub fn domain(&self) -> Domain {
        match &self.kind {
            ProblemKind::General(p) => p.domain,
            ProblemKind::Special(sp) => sp.domain,
        }
    }

    /// Grid from `x0` to the right end of the domain.
    pub fn grid(&self) -> Result<Grid, Error> {
        Grid::new(self.x0, self.domain().b, self.grid_n)
    }

    /// The equation in general Abel form.
    pub fn general(&self) -> Result<AbelProblem, Error> {
        match &self.kind {
            ProblemKind::General(p) => Ok(p.clone()),
            ProblemKind::Special(sp) => sp.to_general(),
        }
    }
}

fn column_of(line: &str, byte: usize) -> usize {
    line[..byte.min(line.len())].chars().count() + 1
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    File(FileError),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::File(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "abel",
    version,
    about = "Closed-form solutions of (g0 + g1*y)*y' = f2*y^2 + f1*y + f0 and their verification",
    after_help = "Expressions use +, -, *, /, ^ (right-associative, binds tighter than unary minus: -x^2 = -(x^2)), \
the variable x, constants pi and e, and sin, cos, tan, exp, log, sqrt.\n\
Exit codes: 0 ok, 1 usage/input error, 2 check failed, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the maximum of |g0*f1 - g1*(f0 + f2)| over the grid
    Check { file: PathBuf },
    /// Construct a closed form and write its trace CSV
    Solve {
        file: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Construct a closed form, write its trace and a residual report
    Verify {
        file: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a closed form with an adaptive Runge-Kutta reference
    Compare {
        file: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Verify a generated problem family, one CSV row per problem
    Sweep {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        c0: f64,
        #[arg(long, default_value_t = 513)]
        grid_n: usize,
    },
}

#[derive(Args, Debug)]
struct MethodArgs {
    #[arg(long, value_parser = parse_keyword::<Method>)]
    method: Method,
    #[arg(long, value_parser = parse_keyword::<Variant>, default_value = "f1")]
    variant: Variant,
    #[arg(long, value_parser = parse_keyword::<Branch>, default_value = "plus")]
    branch: Branch,
    #[arg(long = "k-form", value_parser = parse_keyword::<KForm>, default_value = "recomposed")]
    k_form: KForm,
}

fn parse_keyword<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Thm1,
    Special,
    Exact,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_error(e: std::io::Error) -> CliError {
    CliError::Usage(format!("write failed: {e}"))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Check { file } => {
            let pf = ProblemFile::read(&file)?;
            let grid = pf.grid()?;
            let condition = abel::thm1_condition_residual(&pf.general()?, &grid)?;
            writeln!(out, "condition_max: {:?}", condition.max_abs).map_err(io_error)?;
            writeln!(out, "condition_scale: {:?}", condition.scale).map_err(io_error)?;
            Ok(if condition.holds() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Solve {
            file,
            method,
            out: path,
        } => {
            let pf = ProblemFile::read(&file)?;
            let (_, trace, _) = solve(&pf, &method)?;
            emit_csv(&trace, path.as_deref(), out)?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            file,
            method,
            out: path,
        } => {
            let pf = ProblemFile::read(&file)?;
            let (cf, trace, _) = solve(&pf, &method)?;
            let condition = abel::thm1_condition_residual(&pf.general()?, &pf.grid()?)?;
            let report = Report::new(&cf, &trace, Some(&condition), &pf.tol);
            emit_csv(&trace, path.as_deref(), out)?;
            if path.is_none() {
                writeln!(out).map_err(io_error)?;
            }
            out.write_all(report.render().as_bytes())
                .map_err(io_error)?;
            Ok(if trace.max_abs_residual() <= RESIDUAL_TOL * trace.scale {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Compare { file, method } => {
            let pf = ProblemFile::read(&file)?;
            let (cf, _, general) = solve(&pf, &method)?;
            let grid = pf.grid()?;
            let (diff, at) = verify::compare_with_reference(&general, &cf, &grid, &pf.tol)?;
            writeln!(out, "comparison_max_diff: {diff:?}").map_err(io_error)?;
            writeln!(out, "argmax_x: {at:?}").map_err(io_error)?;
            Ok(if diff <= COMPARE_TOL {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Sweep {
            family,
            count,
            seed,
            c0,
            grid_n,
        } => {
            let rows = sweep(family, count, seed, c0, grid_n)?;
            writeln!(
                out,
                "index,condition_max,max_residual,predicted_max,oracle_gap"
            )
            .map_err(io_error)?;
            for row in &rows {
                writeln!(
                    out,
                    "{},{:?},{:?},{:?},{:?}",
                    row.index,
                    row.condition_max,
                    row.max_residual,
                    row.predicted_max,
                    row.oracle_gap
                )
                .map_err(io_error)?;
            }
            Ok(if rows.iter().all(|r| r.oracle_gap <= RESIDUAL_TOL) {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
    }
}

fn solve(
    pf: &ProblemFile,
    args: &MethodArgs,
) -> Result<(ClosedForm, Trace, AbelProblem), CliError> {
    let grid = pf.grid()?;
    let general = pf.general()?;
    let cf = match args.method {
        Method::Proposition => {
            let ProblemKind::Special(sp) = &pf.kind else {
                return Err(CliError::Usage(
                    "--method proposition needs a special-form file (keys g, q, a)".into(),
                ));
            };
            abel::proposition_solve(sp, pf.c0, &grid, &pf.tol)?
        }
        Method::Theorem1 => {
            abel::theorem1_solve(&general, &pf.lambda, pf.c0, &grid, &pf.tol, args.variant)?
        }
        Method::Theorem2 => abel::theorem2_solve(
            &general,
            &pf.lambda,
            pf.c0,
            &grid,
            &pf.tol,
            args.branch,
            args.k_form,
        )?,
    };
    let samples = Samples::from(&cf);
    let trace = match (&pf.kind, args.method) {
        (ProblemKind::Special(sp), Method::Proposition) => verify::residual_special(sp, &samples)?,
        _ => verify::residual_general(&general, &samples)?,
    };
    Ok((cf, trace, general))
}

fn emit_csv(trace: &Trace, path: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let csv = trace.to_csv();
    match path {
        Some(p) => fs::write(p, csv)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => out.write_all(csv.as_bytes()).map_err(io_error),
    }
}

/// One line of `sweep` output.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub condition_max: f64,
    pub max_residual: f64,
    pub predicted_max: f64,
    /// `max |residual - predicted| / (1 + max(|residual|, |predicted|))`.
    pub oracle_gap: f64,
}

/// Verifies every member of a family: Theorem 1 (`f1`, `lambda = 0`)
/// against the predicted residual for `thm1`/`exact`, and the
/// proposition against a zero residual for `special`.
pub fn sweep(
    family: Family,
    count: usize,
    seed: u64,
    c0: f64,
    grid_n: usize,
) -> Result<Vec<SweepRow>, Error> {
    let grid = Grid::new(0.0, 1.0, grid_n)?;
    let tol = Tolerance::default();
    let zero = Expr::Const(0.0);
    let theorem1_row = |index: usize, p: &AbelProblem| -> Result<SweepRow, Error> {
        let condition = abel::thm1_condition_residual(p, &grid)?;
        let cf = abel::theorem1_solve(p, &zero, c0, &grid, &tol, Variant::F1)?;
        let trace = verify::residual_general(p, &Samples::from(&cf))?;
        let predicted = abel::predicted_residual_thm1(p, &grid)?;
        Ok(row(index, condition.max_abs, &trace.residual, &predicted))
    };
    let rows: Vec<Result<SweepRow, Error>> = match family {
        Family::Thm1 => verify::par_map(&verify::gen_thm1_family(seed, count), theorem1_row),
        Family::Exact => verify::par_map(&verify::gen_exact_family(seed, count), theorem1_row),
        Family::Special => {
            verify::par_map(&verify::gen_special_family(seed, count), |index, sp| {
                let condition = abel::thm1_condition_residual(&sp.to_general()?, &grid)?;
                let cf = abel::proposition_solve(sp, c0, &grid, &tol)?;
                let trace = verify::residual_special(sp, &Samples::from(&cf))?;
                let predicted = vec![0.0; trace.residual.len()];
                let mut r = row(index, condition.max_abs, &trace.residual, &predicted);
                // A zero prediction says nothing about size; scale by the equation's sides.
                r.oracle_gap = trace.relative_residual();
                Ok(r)
            })
        }
    };
    rows.into_iter().collect()
}

fn row(index: usize, condition_max: f64, residual: &[f64], predicted: &[f64]) -> SweepRow {
    let max_residual = verify::max_abs(residual);
    let predicted_max = verify::max_abs(predicted);
    let gap = residual
        .iter()
        .zip(predicted)
        .fold(0.0f64, |m, (r, p)| m.max((r - p).abs()));
    SweepRow {
        index,
        condition_max,
        max_residual,
        predicted_max,
        oracle_gap: gap / (1.0 + max_residual.max(predicted_max)),
    }
}
