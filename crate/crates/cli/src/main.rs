use std::collections::{BTreeMap, BTreeSet};
use std::io::{IsTerminal, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sqlseg_core::ast::AstNode;
use sqlseg_core::backend::{LlmClient, MockSegmenter, Recording, ReplaySegmenter, Segmenter};
use sqlseg_core::config::{BackendKind, Settings};
use sqlseg_core::engine::Engine;
use sqlseg_core::printer::print_ast;
use sqlseg_tools::eval::{load_corpus, run_cycle, run_eval, CheckReport, EvalOptions, QrtMode};
use sqlseg_tools::lint::{
    lint, lint_metrics, parse_rule_list, rule_set, LintFinding, LintMetrics, RuleId,
};
use sqlseg_tools::reduce::{reduce, OracleCommand, ReduceOptions, QUERY_FILE_PLACEHOLDER};

/// `println!` that ignores a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {
        write_stdout(format_args!($($arg)*))?
    };
}

const EXIT_TOOL_ERROR: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Hybrid grammar/LLM SQL parser with linting, reduction and round-trip evaluation.
///
/// The LLM backend reads SQLSEG_LLM_ENDPOINT, SQLSEG_LLM_API_KEY and
/// SQLSEG_LLM_MODEL from the environment.
#[derive(Debug, Parser)]
#[command(name = "sqlseg", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML settings file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Dialect name passed to the backend, e.g. tsql or postgres.
    #[arg(long, global = true)]
    dialect: Option<String>,
    /// Accept backend responses without validation or repair.
    #[arg(long, global = true)]
    no_validation: bool,
    /// Send whole expressions to the backend instead of masking around anchors.
    #[arg(long, global = true)]
    no_anchors: bool,
    #[arg(long, global = true, value_name = "N")]
    max_repairs: Option<usize>,
    /// Tab-separated anchor operator table replacing the built-in one.
    #[arg(long, global = true, value_name = "PATH")]
    anchor_table: Option<PathBuf>,
    /// Append every backend exchange to this JSONL log.
    #[arg(long, global = true, value_name = "PATH")]
    record: Option<PathBuf>,
    /// Answer backend requests from a log written by --record.
    #[arg(long, global = true, value_name = "PATH")]
    replay: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Llm,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a query and print its AST as JSON.
    Parse {
        /// Query file; stdin when omitted or `-`.
        input: Option<PathBuf>,
        /// Print the compact one-line form instead of JSON.
        #[arg(long)]
        sexpr: bool,
        /// Report backend calls and repairs on stderr.
        #[arg(long)]
        stats: bool,
    },
    /// Print SQL from an AST in JSON form.
    Print {
        /// AST JSON file; stdin when omitted or `-`.
        input: Option<PathBuf>,
    },
    /// Parse, print and reparse one query and report Q-RT and AST-RT.
    Roundtrip {
        input: Option<PathBuf>,
        /// Only require Q1 and Q2 to agree.
        #[arg(long)]
        relaxed: bool,
        /// Include both ASTs in the report.
        #[arg(long)]
        emit_ast: bool,
    },
    /// Check a query for anti-patterns.
    Lint {
        input: Option<PathBuf>,
        /// Comma-separated rule ids; all rules when omitted.
        #[arg(long, value_name = "IDS")]
        rules: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Score the linter against a JSONL file of {id, sql, rules} entries instead.
        #[arg(long, value_name = "PATH", conflicts_with = "input")]
        ground_truth: Option<PathBuf>,
        /// Exit with status 2 when anything is reported.
        #[arg(long)]
        fail_on_findings: bool,
    },
    /// Shrink a query while an oracle command keeps succeeding.
    Reduce {
        input: Option<PathBuf>,
        /// Shell command run per candidate; `{query_file}` is replaced by a file holding the SQL.
        #[arg(long, value_name = "CMD")]
        oracle_cmd: String,
        /// Exit status that means the property still holds.
        #[arg(long, default_value_t = 0)]
        expect_status: i32,
        #[arg(long, value_name = "N")]
        max_steps: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Round-trip every query in a corpus and report aggregate rates.
    Eval {
        /// Corpus file: one query per line, or JSON lines with {id, dialect?, sql}.
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        #[arg(long)]
        relaxed: bool,
        /// Also write the full JSON report here.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))
        }
        _ => {
            let mut s = String::new();
            let stdin = std::io::stdin();
            if stdin.is_terminal() {
                eprintln!("reading from stdin; end with Ctrl-D");
            }
            stdin
                .lock()
                .read_to_string(&mut s)
                .context("cannot read stdin")?;
            Ok(s)
        }
    }
}

fn settings(global: &GlobalArgs) -> Result<Settings> {
    let mut s = match &global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(b) = global.backend {
        s.backend = match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Llm => BackendKind::Llm,
            BackendArg::Replay => BackendKind::Replay,
        };
    }
    if global.dialect.is_some() {
        s.dialect.clone_from(&global.dialect);
    }
    if global.no_validation {
        s.validation_enabled = Some(false);
    }
    if global.no_anchors {
        s.anchors_enabled = Some(false);
    }
    if global.max_repairs.is_some() {
        s.max_repairs = global.max_repairs;
    }
    if global.anchor_table.is_some() {
        s.anchor_table.clone_from(&global.anchor_table);
    }
    if global.record.is_some() {
        s.record.clone_from(&global.record);
    }
    if global.replay.is_some() {
        s.replay.clone_from(&global.replay);
        if global.backend.is_none() {
            s.backend = BackendKind::Replay;
        }
    }
    Ok(s)
}

fn build_engine(s: &Settings) -> Result<Engine> {
    let backend: Arc<dyn Segmenter> = match s.backend {
        BackendKind::Mock => Arc::new(MockSegmenter::new()),
        BackendKind::Llm => {
            let cfg = s.llm_config().ok_or_else(|| {
                anyhow!("the llm backend needs SQLSEG_LLM_ENDPOINT in the environment")
            })?;
            Arc::new(LlmClient::new(cfg)?)
        }
        BackendKind::Replay => {
            let path = s
                .replay
                .as_ref()
                .ok_or_else(|| anyhow!("the replay backend needs --replay PATH"))?;
            Arc::new(
                ReplaySegmenter::load(path)
                    .with_context(|| format!("cannot load {}", path.display()))?,
            )
        }
    };
    let backend: Arc<dyn Segmenter> = match &s.record {
        Some(path) => Arc::new(
            Recording::create(backend, path)
                .with_context(|| format!("cannot open {}", path.display()))?,
        ),
        None => backend,
    };
    Ok(Engine::new(backend, s.engine_config()?))
}

fn write_stdout(text: std::fmt::Arguments<'_>) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    out!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct RoundtripReport<'a> {
    q0: &'a str,
    q1: Option<&'a str>,
    q2: Option<&'a str>,
    qrt: CheckReport,
    astrt: CheckReport,
    backend_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ast0: Option<&'a AstNode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ast1: Option<&'a AstNode>,
}

#[derive(Serialize)]
struct LintReport<'a> {
    version: u32,
    findings: &'a [LintFinding],
}

#[derive(Deserialize)]
struct GoldenEntry {
    id: String,
    sql: String,
    rules: Vec<String>,
}

#[derive(Serialize)]
struct GroundTruthReport {
    version: u32,
    metrics: LintMetrics,
    /// Queries where reported and expected rule sets differ.
    mismatches: BTreeMap<String, Mismatch>,
}

#[derive(Serialize)]
struct Mismatch {
    reported: BTreeSet<RuleId>,
    expected: BTreeSet<RuleId>,
}

fn lint_ground_truth(
    path: &Path,
    engine: &Engine,
    rules: &BTreeSet<RuleId>,
    format: Format,
) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut reported = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("--") {
            continue;
        }
        let entry: GoldenEntry =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let expected: BTreeSet<RuleId> = entry
            .rules
            .iter()
            .map(|r| r.parse())
            .collect::<Result<BTreeSet<RuleId>, _>>()?
            .intersection(rules)
            .copied()
            .collect();
        let ast = engine
            .parse(&entry.sql)
            .with_context(|| format!("cannot parse {}", entry.id))?
            .ast;
        reported.insert(entry.id.clone(), rule_set(&lint(&ast, rules)));
        truth.insert(entry.id, expected);
    }
    let metrics = lint_metrics(&reported, &truth)?;
    let mismatches = reported
        .into_iter()
        .filter_map(|(id, got)| {
            let want = truth.remove(&id).unwrap_or_default();
            (got != want).then_some((
                id,
                Mismatch {
                    reported: got,
                    expected: want,
                },
            ))
        })
        .collect();
    let report = GroundTruthReport {
        version: 1,
        metrics,
        mismatches,
    };
    match format {
        Format::Json => print_json(&report)?,
        Format::Text => {
            let m = &report.metrics;
            out!(
                "TP={} FP={} FN={} precision={:.4} recall={:.4} f1={:.4}",
                m.tp,
                m.fp,
                m.fn_,
                m.precision,
                m.recall,
                m.f1
            );
            for (id, mm) in &report.mismatches {
                out!(
                    "{id}: reported {:?}, expected {:?}",
                    mm.reported,
                    mm.expected
                );
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let s = settings(&cli.global)?;
    match cli.command {
        Command::Parse {
            input,
            sexpr,
            stats,
        } => {
            let engine = build_engine(&s)?;
            let query = read_input(input.as_deref())?;
            let out = engine.parse(query.trim())?;
            if sexpr {
                out!("{}", out.ast.sexpr());
            } else {
                out!("{}", out.ast.to_json_string());
            }
            if stats {
                eprintln!(
                    "backend calls: {}, repairs: {}, unsegmented: {}",
                    out.stats.backend_calls, out.stats.repairs, out.stats.unsegmented
                );
            }
            Ok(0)
        }
        Command::Print { input } => {
            let text = read_input(input.as_deref())?;
            let ast = AstNode::from_json_str(&text).context("input is not an AST in JSON form")?;
            out!("{}", print_ast(&ast)?);
            Ok(0)
        }
        Command::Roundtrip {
            input,
            relaxed,
            emit_ast,
        } => {
            let engine = build_engine(&s)?;
            let query = read_input(input.as_deref())?;
            let mode = if relaxed {
                QrtMode::Relaxed
            } else {
                QrtMode::Strict
            };
            let cycle = run_cycle(query.trim(), &engine);
            let report = RoundtripReport {
                q0: &cycle.q0,
                q1: cycle.q1.as_deref(),
                q2: cycle.q2.as_deref(),
                qrt: cycle.qrt(mode),
                astrt: cycle.astrt(),
                backend_calls: cycle.backend_calls,
                ast0: cycle.ast0.as_ref().filter(|_| emit_ast),
                ast1: cycle.ast1.as_ref().filter(|_| emit_ast),
            };
            print_json(&report)?;
            Ok(if report.qrt.pass && report.astrt.pass {
                0
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Lint {
            input,
            rules,
            format,
            ground_truth,
            fail_on_findings,
        } => {
            let rules = match rules {
                Some(list) => parse_rule_list(&list)?,
                None => RuleId::all(),
            };
            let engine = build_engine(&s)?;
            if let Some(path) = ground_truth {
                lint_ground_truth(&path, &engine, &rules, format)?;
                return Ok(0);
            }
            let query = read_input(input.as_deref())?;
            let ast = engine.parse(query.trim())?.ast;
            let findings = lint(&ast, &rules);
            match format {
                Format::Json => print_json(&LintReport {
                    version: 1,
                    findings: &findings,
                })?,
                Format::Text => {
                    for f in &findings {
                        out!("{} at {:?}: {}", f.rule_id, f.node_path, f.message);
                    }
                }
            }
            Ok(if fail_on_findings && !findings.is_empty() {
                EXIT_CHECK_FAILED
            } else {
                0
            })
        }
        Command::Reduce {
            input,
            oracle_cmd,
            expect_status,
            max_steps,
            format,
        } => {
            if !oracle_cmd.contains(QUERY_FILE_PLACEHOLDER) {
                bail!("--oracle-cmd must contain {QUERY_FILE_PLACEHOLDER}");
            }
            let engine = build_engine(&s)?;
            let query = read_input(input.as_deref())?;
            let oracle = OracleCommand::new(oracle_cmd, expect_status)?;
            let out = reduce(query.trim(), &oracle, &engine, ReduceOptions { max_steps })?;
            match format {
                Format::Json => print_json(&out)?,
                Format::Text => {
                    out!("{}", out.reduced);
                    eprintln!(
                        "{} -> {} tokens (SimRatio {:.1}%), {} steps, {} oracle calls",
                        out.original_tokens,
                        out.reduced_tokens,
                        out.sim_ratio,
                        out.steps,
                        out.oracle_calls
                    );
                }
            }
            Ok(0)
        }
        Command::Eval {
            corpus,
            jobs,
            relaxed,
            report,
            format,
        } => {
            let engine = build_engine(&s)?;
            let entries = load_corpus(&corpus)
                .with_context(|| format!("cannot load {}", corpus.display()))?;
            let options = EvalOptions {
                jobs: jobs.or(s.jobs).unwrap_or(1),
                mode: if relaxed {
                    QrtMode::Relaxed
                } else {
                    QrtMode::Strict
                },
            };
            let result = run_eval(&entries, &engine, options);
            if let Some(path) = &report {
                std::fs::write(path, serde_json::to_string_pretty(&result)?)
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            match format {
                Format::Json => print_json(&result)?,
                Format::Text => {
                    out!(
                        "queries={} Q-RT={:.2}% AST-RT={:.2}% N_LLM={} T_avg={:.2}ms T_LLM={:.2}ms",
                        result.total,
                        result.q_rt_rate * 100.0,
                        result.ast_rt_rate * 100.0,
                        result.n_llm,
                        result.t_avg_ms,
                        result.t_llm_ms
                    );
                    for q in result.failures() {
                        let why = q.qrt.reason.as_ref().or(q.astrt.reason.as_ref());
                        out!("FAIL {}: {}", q.id, why.map(String::as_str).unwrap_or(""));
                    }
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_TOOL_ERROR)
        }
    }
}
