//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 a mechanism
//! property was violated, 64 bad usage.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::election::ElectionOutcome;
use crate::oracles::check_truthfulness_with;
use crate::payment::PaymentRule;
use crate::sim::{compare_election_policies, elect_once, run_simulation_traced, Mode, Policy, SimConfig, SimError};
use crate::trace::{NullSink, TraceSink, WriterSink};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "manet-elect", version, about = "Leader election for intrusion detection in ad hoc networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation and write its report.
    Simulate(RunArgs),
    /// Run the same simulation under several election policies.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated policies to compare.
        #[arg(long, value_delimiter = ',', default_value = "mechanism,random,connectivity")]
        policies: Vec<Policy>,
    },
    /// Run a single election round and print the outcome.
    Elect(RunArgs),
    /// Exhaustively check that no unilateral cost misreport pays off.
    CheckTruthfulness {
        /// Largest graph size to enumerate (at most 5).
        #[arg(long, default_value_t = 4)]
        max_nodes: usize,
        /// Number of cost levels on the grid (at most 6).
        #[arg(long, default_value_t = 4)]
        grid: u32,
        /// Sampling budget per vote.
        #[arg(long, default_value_t = 25.0)]
        budget: f64,
        /// Payment rule under test.
        #[arg(long, value_enum, default_value_t = RuleArg::SecondPrice)]
        payment_rule: RuleArg,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file.
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured election mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Write the event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Cile,
    Cdle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    SecondPrice,
    FirstPrice,
}

impl clap::ValueEnum for Policy {
    fn value_variants<'a>() -> &'a [Self] {
        &Policy::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Policy::Mechanism => "mechanism",
            Policy::Random => "random",
            Policy::Connectivity => "connectivity",
        }))
    }
}

enum Failure {
    Config(String),
    Violation,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

/// Parses `argv` (program name first) and runs the command, printing to the
/// process's standard streams.
pub fn parse_and_dispatch(argv: &[String]) -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    dispatch_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`parse_and_dispatch`], with explicit output streams.
pub fn dispatch_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Violation) => EXIT_VIOLATION,
    }
}

fn load(args: &RunArgs) -> Result<SimConfig, Failure> {
    let mut cfg = SimConfig::from_file(&args.config).map_err(SimError::from)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Cile => Mode::Cile,
            ModeArg::Cdle => Mode::Cdle,
        };
    }
    Ok(cfg)
}

fn with_trace<T>(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn TraceSink) -> Result<T, Failure>,
) -> Result<T, Failure> {
    match path {
        None => f(&mut NullSink),
        Some(p) => {
            let file = File::create(p).map_err(|e| io_failure(p, e))?;
            let mut sink = WriterSink::new(BufWriter::new(file));
            let value = f(&mut sink)?;
            sink.finish()
                .and_then(|mut w| w.flush())
                .map_err(|e| io_failure(p, e))?;
            Ok(value)
        }
    }
}

fn emit(report: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match report {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Config(format!("stdout: {e}"))),
    }
}

fn run(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Simulate(args) => {
            let cfg = load(&args)?;
            let report = with_trace(args.trace.as_deref(), |sink| {
                Ok(run_simulation_traced(&cfg, cfg.election.policy, sink)?)
            })?;
            emit(args.report.as_deref(), &report.to_text(), out)
        }
        Command::Compare { run, policies } => {
            let cfg = load(&run)?;
            if run.trace.is_some() {
                return Err(Failure::Config("compare does not write a trace; use simulate".into()));
            }
            let set: BTreeSet<Policy> = policies.into_iter().collect();
            let cmp = compare_election_policies(&cfg, &set)?;
            emit(run.report.as_deref(), &cmp.to_text(), out)
        }
        Command::Elect(args) => {
            let cfg = load(&args)?;
            let outcome = with_trace(args.trace.as_deref(), |sink| Ok(elect_once(&cfg, sink)?))?;
            emit(args.report.as_deref(), &format_outcome(&outcome), out)
        }
        Command::CheckTruthfulness { max_nodes, grid, budget, payment_rule } => {
            let rule = match payment_rule {
                RuleArg::SecondPrice => PaymentRule::SecondPrice,
                RuleArg::FirstPrice => PaymentRule::FirstPrice,
            };
            let cases = check_truthfulness_with(rule, max_nodes, grid, budget)
                .map_err(|e| Failure::Config(e.to_string()))?;
            let w = |out: &mut dyn Write, s: String| {
                out.write_all(s.as_bytes()).map_err(|e| Failure::Config(format!("stdout: {e}")))
            };
            if cases.is_empty() {
                w(out, format!("PASS no profitable misreport (max_nodes={max_nodes} grid={grid})\n"))
            } else {
                w(out, format!("FAIL {} profitable misreports (max_nodes={max_nodes} grid={grid})\n", cases.len()))?;
                for c in &cases {
                    w(out, format!("{c}\n"))?;
                }
                Err(Failure::Violation)
            }
        }
    }
}

/// Plain-text rendering of one election's outcome.
pub fn format_outcome(o: &ElectionOutcome) -> String {
    let mut s = String::new();
    let ids = |xs: &mut dyn Iterator<Item = String>| {
        let v: Vec<String> = xs.collect();
        if v.is_empty() {
            "-".to_string()
        } else {
            v.join(",")
        }
    };
    s += &format!("leaders\t{}\n", ids(&mut o.leaders.iter().map(|k| k.to_string())));
    s += &format!("excluded\t{}\n", ids(&mut o.excluded.iter().map(|k| k.to_string())));
    s += "node\tleader\n";
    for (k, l) in &o.affiliation {
        s += &format!("{k}\t{l}\n");
    }
    s += "leader\tpayment\tvoters\n";
    for (l, p) in &o.payments {
        s += &format!("{l}\t{}\t{}\n", p.total, ids(&mut o.service_table(*l).into_iter().map(|k| k.to_string())));
    }
    let m = &o.messages;
    s += &format!(
        "messages\thello={}\tbegin_election={}\tvote={}\tacknowledge={}\n",
        m.hello, m.begin_election, m.vote, m.acknowledge
    );
    for (l, claimed) in &o.disputes {
        s += &format!("dispute\t{l}\tclaimed={claimed}\n");
    }
    s
}
