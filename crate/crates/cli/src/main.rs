mod validate;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auctionlab::evaluate::OutcomeProfile;
use auctionlab::example::summary_table;
use auctionlab::quadrature::QuadratureRule;
use auctionlab::solvers::{self, SolveMethod, SolveReport, SolverOptions, Uniqueness};
use auctionlab::transforms::{map_broa_to_ebdfpa, map_ebdfpa_to_broa, map_symmetric, MappedProfile};
use auctionlab::{Error, Evaluator, MechanismKind, MechanismSpec, QuadratureConfig, Scenario};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  malformed input or unsupported request
  3  quadrature did not converge (eval)
  4  solver did not converge (solve, map)
  5  certification failed (map)
  6  a check failed (validate, example)";

#[derive(Parser)]
#[command(name = "auctionlab", version, about = "Budget-constrained auction toolkit", after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads for internal parallelism; 0 picks one per core.
    #[arg(long, env = "AUCTIONLAB_THREADS", default_value_t = 0, global = true)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Trapezoid,
    GaussLegendre,
}

fn quadrature(nodes: usize, rule: Rule) -> Result<QuadratureConfig, Failure> {
    if nodes < 16 {
        return Err(Failure::new(2, "--nodes must be at least 16"));
    }
    Ok(QuadratureConfig {
        rule: match rule {
            Rule::Trapezoid => QuadratureRule::Trapezoid,
            Rule::GaussLegendre => QuadratureRule::GaussLegendre,
        },
        ..QuadratureConfig::with_nodes(nodes)
    })
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Dual,
    MaxTuple,
    Symmetric,
}

impl From<Method> for SolveMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Dual => SolveMethod::Dual,
            Method::MaxTuple => SolveMethod::MaxTuple,
            Method::Symmetric => SolveMethod::Symmetric,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Expected payments, utilities and win probabilities at fixed parameters.
    Eval {
        scenario: PathBuf,
        /// bdfpa, pfpa, broa, bdspa or pspa (an `e` prefix is accepted).
        #[arg(long)]
        mechanism: MechanismKind,
        /// Comma-separated parameter per buyer.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        params: Vec<f64>,
        /// Quadrature nodes per unit interval.
        #[arg(long, default_value_t = 4096)]
        nodes: usize,
        /// Quadrature rule on each smooth piece.
        #[arg(long, value_enum, default_value_t = Rule::Trapezoid)]
        rule: Rule,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Budget-extracting parameters for one mechanism.
    Solve {
        scenario: PathBuf,
        #[arg(long)]
        mechanism: MechanismKind,
        #[arg(long, value_enum)]
        method: Method,
        /// Stopping tolerance: dual residual, complementarity residual and coordinate-ascent step.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Quadrature nodes per unit interval.
        #[arg(long, default_value_t = 4096)]
        nodes: usize,
        /// Quadrature rule on each smooth piece.
        #[arg(long, value_enum, default_value_t = Rule::Trapezoid)]
        rule: Rule,
        /// Record the iterate sequence.
        #[arg(long)]
        trace: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Map an outcome profile to another mechanism and certify it.
    Map {
        scenario: PathBuf,
        #[arg(long)]
        from: MechanismKind,
        #[arg(long)]
        to: MechanismKind,
        /// Output file for the mapped profile; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Quadrature nodes per unit interval.
        #[arg(long, default_value_t = 4096)]
        nodes: usize,
        /// Quadrature rule on each smooth piece.
        #[arg(long, value_enum, default_value_t = Rule::Trapezoid)]
        rule: Rule,
    },
    /// Recompute the two-buyer benchmark table next to its reference values.
    Example {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Monte Carlo agreement, ex-post rationality, incentive and dominance checks.
    Validate {
        scenario: PathBuf,
        /// Monte Carlo samples.
        #[arg(long, default_value_t = auctionlab::oracle::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = auctionlab::oracle::DEFAULT_SEED)]
        seed: u64,
        /// Check a single mechanism at `--params` instead of solving all of them.
        #[arg(long, requires = "params")]
        mechanism: Option<MechanismKind>,
        #[arg(long, value_delimiter = ',', requires = "mechanism", allow_hyphen_values = true)]
        params: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

/// A failed command with its exit code.
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonConvergence { .. } | Error::RootBracketFailure { .. } => 4,
            Error::CertificationFailed { .. } => 5,
            Error::Inconsistency(_) => 1,
            _ => 2,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    scenario
        .validate()
        .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    Ok(scenario)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::new(1, e.to_string()))
}

fn join(xs: &[f64], precision: usize) -> String {
    xs.iter()
        .map(|x| format!("{x:.precision$}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_profile(p: &OutcomeProfile, format: Format) -> Result<String, Failure> {
    let mut out = String::new();
    match format {
        Format::Json => out = to_json(p)?,
        Format::Csv => {
            out.push_str("buyer,param,payment,utility,win_probability\n");
            for (i, (b, t)) in p.buyers.iter().zip(&p.params).enumerate() {
                let _ = writeln!(out, "{i},{t},{},{},{}", b.payment, b.utility, b.win_probability);
            }
            let _ = writeln!(out, "revenue,,{},,{}", p.revenue, p.allocation_probability);
        }
        Format::Table => {
            let _ = writeln!(out, "mechanism {}", p.mechanism);
            let _ = writeln!(
                out,
                "{:>5} {:>12} {:>12} {:>12} {:>12}",
                "buyer", "param", "payment", "utility", "win prob"
            );
            for (i, (b, t)) in p.buyers.iter().zip(&p.params).enumerate() {
                let _ = writeln!(
                    out,
                    "{i:>5} {t:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    b.payment, b.utility, b.win_probability
                );
            }
            let _ = writeln!(out, "seller's revenue {:.6}", p.revenue);
            let _ = writeln!(out, "sale probability {:.6}", p.allocation_probability);
            let _ = match p.quadrature.error_estimate {
                Some(e) => write!(out, "quadrature: {} nodes, doubling change {e:.2e}", p.quadrature.nodes),
                None => write!(out, "quadrature: {} nodes, not checked", p.quadrature.nodes),
            };
        }
    }
    Ok(out)
}

fn cmd_eval(scenario: &Path, kind: MechanismKind, params: Vec<f64>, quad: QuadratureConfig, format: Format) -> CmdResult {
    let scenario = load_scenario(scenario)?;
    let spec = MechanismSpec::new(kind, params);
    let profile = Evaluator::new(&spec, &scenario, quad)?.profile();
    println!("{}", render_profile(&profile, format)?.trim_end());
    if !profile.quadrature.converged {
        return Err(Failure::new(
            3,
            format!(
                "quadrature did not converge: doubling the nodes moved the profile by {:.3e}",
                profile.quadrature.error_estimate.unwrap_or(f64::NAN)
            ),
        ));
    }
    Ok(())
}

fn render_report(r: &SolveReport, format: Format) -> Result<String, Failure> {
    let mut out = String::new();
    match format {
        Format::Json => out = to_json(r)?,
        Format::Csv => {
            out.push_str("buyer,param,payment,budget,residual,binding\n");
            for i in 0..r.params.len() {
                let _ = writeln!(
                    out,
                    "{i},{},{},{},{},{}",
                    r.params[i], r.payments[i], r.budgets[i], r.residuals[i], r.budget_binding[i]
                );
            }
            let _ = writeln!(out, "revenue,,{},,,", r.revenue);
        }
        Format::Table => {
            let method = match r.method {
                SolveMethod::Dual => "dual",
                SolveMethod::MaxTuple => "max-tuple",
                SolveMethod::Symmetric => "symmetric",
            };
            let _ = writeln!(out, "mechanism {} via {method}", r.mechanism);
            let _ = writeln!(out, "params     {}", join(&r.params, 9));
            let _ = writeln!(out, "payments   {}", join(&r.payments, 9));
            let _ = writeln!(out, "budgets    {}", join(&r.budgets, 9));
            let residuals: Vec<String> = r.residuals.iter().map(|x| format!("{x:.2e}")).collect();
            let _ = writeln!(out, "residuals  {}", residuals.join(", "));
            let binding: Vec<&str> = r
                .budget_binding
                .iter()
                .map(|&b| if b { "binding" } else { "slack" })
                .collect();
            let _ = writeln!(out, "status     {}", binding.join(", "));
            let _ = writeln!(out, "revenue    {:.9}", r.revenue);
            if let Some(v) = r.dual_value {
                let _ = writeln!(out, "dual value {v:.9}");
            }
            if let Some(g) = r.duality_gap {
                let _ = writeln!(out, "gap        {g:.3e}");
            }
            match &r.uniqueness {
                Some(Uniqueness::Unique { .. }) => {
                    let _ = writeln!(out, "uniqueness unique");
                }
                Some(Uniqueness::NonUnique { witness }) => {
                    let _ = writeln!(
                        out,
                        "uniqueness not unique; same payments at {}",
                        join(&witness.params, 9)
                    );
                }
                None => {}
            }
            for d in &r.diagnostics {
                let _ = writeln!(out, "note: {d}");
            }
            let _ = write!(
                out,
                "iterations {}, max residual {:.3e}",
                r.iterations, r.max_residual
            );
        }
    }
    Ok(out)
}

fn cmd_solve(
    scenario: &Path,
    kind: MechanismKind,
    method: Method,
    tol: f64,
    quad: QuadratureConfig,
    trace: bool,
    format: Format,
) -> CmdResult {
    let scenario = load_scenario(scenario)?;
    if !(tol > 0.0) {
        return Err(Failure::new(2, "--tol must be positive"));
    }
    let defaults = SolverOptions::default();
    let opts = SolverOptions {
        quad,
        residual_tol: tol,
        comp_tol: tol.min(defaults.comp_tol),
        sweep_tol: tol.min(defaults.sweep_tol),
        trace,
        ..defaults
    };
    let report = solvers::solve(kind, method.into(), &scenario, &opts)?;
    println!("{}", render_report(&report, format)?.trim_end());
    Ok(())
}

fn mapped(from: MechanismKind, to: MechanismKind, scenario: &Scenario, opts: &SolverOptions) -> Result<MappedProfile, Failure> {
    use MechanismKind::{Bdfpa, Broa};
    let profile = match (from, to) {
        (Broa, Bdfpa) => map_broa_to_ebdfpa(scenario, opts)?,
        (Bdfpa, Broa) => map_ebdfpa_to_broa(scenario, opts)?,
        (Broa, _) | (_, Broa) => {
            return Err(Failure::new(
                2,
                format!("no map from {from} to {to}; BROA maps only to and from bdfpa"),
            ))
        }
        _ => {
            if !scenario.is_symmetric(1e-12) {
                return Err(Failure::new(
                    2,
                    format!("the {from} to {to} map needs a symmetric scenario"),
                ));
            }
            map_symmetric(from, to, scenario, opts)?
        }
    };
    Ok(profile)
}

fn cmd_map(scenario: &Path, from: MechanismKind, to: MechanismKind, out: Option<&Path>, quad: QuadratureConfig) -> CmdResult {
    let scenario = load_scenario(scenario)?;
    let opts = SolverOptions {
        quad,
        ..SolverOptions::default()
    };
    let profile = mapped(from, to, &scenario, &opts)?;
    let text = to_json(&profile)?;
    let c = &profile.certification;
    match out {
        Some(path) => {
            fs::write(path, text + "\n").map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))?;
            println!(
                "{from} -> {to}: discrepancy {:.3e} (tolerance {:.0e}), {}; wrote {}",
                c.discrepancy,
                c.tolerance,
                if c.certified { "certified" } else { "NOT certified" },
                path.display()
            );
        }
        None => println!("{text}"),
    }
    profile.require_certified()?;
    Ok(())
}

fn cmd_example(format: Format) -> CmdResult {
    let table = summary_table(&SolverOptions::default())?;
    match format {
        Format::Json => println!("{}", to_json(&table)?),
        Format::Csv => {
            println!("row,{}", table.columns.iter().map(|c| c.label.as_str()).collect::<Vec<_>>().join(","));
            let row = |name: &str, get: &dyn Fn(&auctionlab::example::TableColumn) -> String| {
                let cells: Vec<String> = table.columns.iter().map(get).collect();
                println!("{name},{}", cells.join(","));
            };
            row("Each buyer's payment", &|c| c.payment.to_string());
            row("Seller's revenue", &|c| c.revenue.to_string());
            row("Budget exhausted?", &|c| if c.exhausted { "Yes" } else { "No" }.into());
            row("reference payment", &|c| c.reference_payment.to_string());
            row("reference revenue", &|c| c.reference_revenue.to_string());
            row("reference exhausted", &|c| if c.reference_exhausted { "Yes" } else { "No" }.into());
        }
        Format::Table => println!("{table}"),
    }
    if !table.matches() {
        return Err(Failure::new(
            6,
            format!("table differs from the reference by {:.3e}", table.max_delta),
        ));
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Eval {
            scenario,
            mechanism,
            params,
            nodes,
            rule,
            format,
        } => cmd_eval(&scenario, mechanism, params, quadrature(nodes, rule)?, format),
        Command::Solve {
            scenario,
            mechanism,
            method,
            tol,
            nodes,
            rule,
            trace,
            format,
        } => cmd_solve(&scenario, mechanism, method, tol, quadrature(nodes, rule)?, trace, format),
        Command::Map {
            scenario,
            from,
            to,
            out,
            nodes,
            rule,
        } => cmd_map(&scenario, from, to, out.as_deref(), quadrature(nodes, rule)?),
        Command::Example { format } => cmd_example(format),
        Command::Validate {
            scenario,
            samples,
            seed,
            mechanism,
            params,
            format,
        } => {
            let scenario = load_scenario(&scenario)?;
            let fixed = mechanism.zip(params).map(|(k, p)| MechanismSpec::new(k, p));
            validate::run(&scenario, samples, seed, fixed, format)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
