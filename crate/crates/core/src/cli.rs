//! The `negot` command-line front end.
//!
//! Exit codes: 0 success or sound, 1 unsound, 2 usage, parse or input
//! error, 3 a state-space limit was exceeded, 4 the reduction and the
//! oracle disagree.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::io::{generate_sound_sdn, graph_to_dot, parse, reachability_to_dot, serialize, Shape};
use crate::model::{is_deterministic, Backend, Negotiation};
use crate::semantics::{reachability_graph, soundness_oracle, SemanticsError, Verdict, DEFAULT_NODE_LIMIT};
use crate::summarize::{summarize_with, Options, Outcome, SummarizeError, SummaryResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSOUND: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;
pub const EXIT_DISAGREE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "negot", version, about = "Soundness and summaries of deterministic negotiations")]
struct Cli {
    /// Maximal number of markings explored by reachability-based steps.
    #[arg(long, global = true, default_value_t = DEFAULT_NODE_LIMIT)]
    node_limit: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that a file parses and is well formed.
    Validate { file: PathBuf },
    /// Reduce a deterministic negotiation to its summary.
    Summarize {
        file: PathBuf,
        /// Write the rule applications, one per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the complexity report.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Transformers to summarize; defaults to those in the file.
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Decide soundness.
    Sound {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Reduction)]
        method: Method,
    },
    /// Export the negotiation graph or the reachability graph in DOT.
    Graph {
        file: PathBuf,
        #[arg(long)]
        dot: PathBuf,
        #[arg(long)]
        reachability: bool,
    },
    /// Generate a random sound deterministic negotiation.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        atoms: usize,
        #[arg(long)]
        agents: usize,
        /// Maximal loop nesting depth.
        #[arg(long, default_value_t = 1)]
        loops: usize,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Print the complexity report of a reduction run.
    Stats { file: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Symbolic,
    Concrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Reduction,
    Oracle,
    Both,
}

/// A failure that ends the command with the given exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<SemanticsError> for Failure {
    fn from(e: SemanticsError) -> Self {
        let code = match e {
            SemanticsError::NodeLimit(_) => EXIT_LIMIT,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SummarizeError> for Failure {
    fn from(e: SummarizeError) -> Self {
        match e {
            SummarizeError::Semantics(s) => s.into(),
            SummarizeError::RoundLimit(_) => Failure {
                code: EXIT_LIMIT,
                message: e.to_string(),
            },
            other => Failure::usage(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<Negotiation, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| Failure::usage(format!("{}:\n{e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Runs the command line `args` (including the program name) and returns
/// the exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
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
    match execute(cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn summarize_file(neg: &Negotiation, node_limit: usize) -> Result<SummaryResult, Failure> {
    if !is_deterministic(neg) {
        return Err(Failure::usage("reduction needs a deterministic negotiation"));
    }
    Ok(summarize_with(neg, Options { node_limit }, &mut |_| {})?)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let limit = cli.node_limit;
    let io = |e: std::io::Error| Failure::usage(e.to_string());
    match cli.command {
        Command::Validate { file } => {
            let neg = read(&file)?;
            writeln!(
                out,
                "ok: {} agents, {} atoms, {} outcomes, {}",
                neg.agents.len(),
                neg.atom_count(),
                neg.outcome_count(),
                if is_deterministic(&neg) {
                    "deterministic"
                } else {
                    "nondeterministic"
                }
            )
            .map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Summarize {
            file,
            trace,
            stats,
            backend,
        } => {
            let mut neg = read(&file)?;
            match backend {
                Some(BackendArg::Symbolic) => neg = neg.symbolic_skeleton(),
                Some(BackendArg::Concrete) if neg.backend() != Some(Backend::Concrete) => {
                    return Err(Failure::usage("file has no concrete transformers"));
                }
                _ => {}
            }
            let result = summarize_file(&neg, limit)?;
            if let Some(path) = trace {
                write(&path, &result.transcript.to_string())?;
            }
            if let Some(path) = stats {
                write(&path, &result.stats.report())?;
            }
            match &result.outcome {
                Outcome::Summary(s) => {
                    out.write_all(serialize(s).as_bytes()).map_err(io)?;
                    Ok(EXIT_OK)
                }
                Outcome::Unsound(e) => {
                    writeln!(out, "unsound: {e}").map_err(io)?;
                    Ok(EXIT_UNSOUND)
                }
            }
        }
        Command::Sound { file, method } => {
            let neg = read(&file)?;
            let reduction = match method {
                Method::Oracle => None,
                _ => Some(summarize_file(&neg, limit)?),
            };
            let oracle = match method {
                Method::Reduction => None,
                _ => Some(soundness_oracle(&neg, limit)?),
            };
            let word = |sound: bool| if sound { "Sound" } else { "Unsound" };
            let code = |sound: bool| if sound { EXIT_OK } else { EXIT_UNSOUND };
            match (reduction, oracle) {
                (Some(r), None) => {
                    writeln!(out, "{}", word(r.is_sound())).map_err(io)?;
                    if let Outcome::Unsound(e) = &r.outcome {
                        writeln!(out, "evidence: {e}").map_err(io)?;
                    }
                    Ok(code(r.is_sound()))
                }
                (None, Some(v)) => {
                    writeln!(out, "{}", word(v.is_sound())).map_err(io)?;
                    if let Verdict::Unsound(w) = &v {
                        writeln!(out, "witness: {w}").map_err(io)?;
                    }
                    Ok(code(v.is_sound()))
                }
                (Some(r), Some(v)) => {
                    if r.is_sound() == v.is_sound() {
                        writeln!(out, "{} (agree)", word(v.is_sound())).map_err(io)?;
                        if let Verdict::Unsound(w) = &v {
                            writeln!(out, "witness: {w}").map_err(io)?;
                        }
                        Ok(code(v.is_sound()))
                    } else {
                        writeln!(
                            out,
                            "disagree: reduction says {}, oracle says {}",
                            word(r.is_sound()),
                            word(v.is_sound())
                        )
                        .map_err(io)?;
                        Ok(EXIT_DISAGREE)
                    }
                }
                (None, None) => unreachable!("every method runs something"),
            }
        }
        Command::Graph {
            file,
            dot,
            reachability,
        } => {
            let neg = read(&file)?;
            let text = if reachability {
                reachability_to_dot(&reachability_graph(&neg, limit)?)
            } else {
                graph_to_dot(&neg)
            };
            write(&dot, &text)?;
            Ok(EXIT_OK)
        }
        Command::Gen {
            seed,
            atoms,
            agents,
            loops,
            output,
        } => {
            let neg = generate_sound_sdn(
                seed,
                Shape {
                    atoms,
                    agents,
                    loop_depth: loops,
                },
            )
            .map_err(|e| Failure::usage(e.to_string()))?;
            write(&output, &serialize(&neg))?;
            Ok(EXIT_OK)
        }
        Command::Stats { file } => {
            let neg = read(&file)?;
            let result = summarize_file(&neg, limit)?;
            out.write_all(result.stats.report().as_bytes()).map_err(io)?;
            Ok(if result.is_sound() { EXIT_OK } else { EXIT_UNSOUND })
        }
    }
}
