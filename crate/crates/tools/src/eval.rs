//! Round-trip checks, corpus handling and evaluation reports.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use sqlseg_core::ast::{AstNode, Variant};
use sqlseg_core::engine::Engine;
use sqlseg_core::lexer::{tokenize, TokenKind};
use sqlseg_core::printer::print_ast;

/// Drops whitespace and parentheses outside string literals and quoted
/// identifiers.
pub fn normalize_query(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut close: Option<char> = None;
    for ch in text.chars() {
        match close {
            Some(c) => {
                out.push(ch);
                if ch == c {
                    close = None;
                }
            }
            None => match ch {
                '\'' | '"' | '`' => {
                    close = Some(ch);
                    out.push(ch);
                }
                '[' => {
                    close = Some(']');
                    out.push(ch);
                }
                '(' | ')' => {}
                c if c.is_whitespace() => {}
                c => out.push(c),
            },
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QrtMode {
    /// Q0 = Q1 = Q2.
    #[default]
    Strict,
    /// Q1 = Q2 only.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl CheckReport {
    fn pass() -> Self {
        CheckReport {
            pass: true,
            reason: None,
        }
    }

    fn fail(reason: impl Into<String>) -> Self {
        CheckReport {
            pass: false,
            reason: Some(reason.into()),
        }
    }
}

/// Everything one parse/print/parse/print cycle produces.
#[derive(Debug, Clone)]
pub struct Cycle {
    pub q0: String,
    pub ast0: Option<AstNode>,
    pub q1: Option<String>,
    pub ast1: Option<AstNode>,
    pub q2: Option<String>,
    pub backend_calls: usize,
    /// Backend calls made while parsing `q0` alone.
    pub first_calls: usize,
    pub first_parse: Duration,
    pub error: Option<String>,
}

/// Runs `Q1 = Print(Parse(Q0))`, `Q2 = Print(Parse(Q1))`.
pub fn run_cycle(q0: &str, engine: &Engine) -> Cycle {
    let mut cycle = Cycle {
        q0: q0.to_string(),
        ast0: None,
        q1: None,
        ast1: None,
        q2: None,
        backend_calls: 0,
        first_calls: 0,
        first_parse: Duration::ZERO,
        error: None,
    };
    let start = Instant::now();
    let first = engine.parse(q0);
    cycle.first_parse = start.elapsed();
    let first = match first {
        Ok(p) => p,
        Err(e) => {
            cycle.error = Some(format!("parse of Q0 failed: {e}"));
            return cycle;
        }
    };
    cycle.backend_calls = first.stats.backend_calls;
    cycle.first_calls = first.stats.backend_calls;
    let q1 = match print_ast(&first.ast) {
        Ok(s) => s,
        Err(e) => {
            cycle.ast0 = Some(first.ast);
            cycle.error = Some(format!("print of AST0 failed: {e}"));
            return cycle;
        }
    };
    cycle.ast0 = Some(first.ast);
    cycle.q1 = Some(q1.clone());
    let second = match engine.parse(&q1) {
        Ok(p) => p,
        Err(e) => {
            cycle.error = Some(format!("parse of Q1 failed: {e}"));
            return cycle;
        }
    };
    cycle.backend_calls += second.stats.backend_calls;
    match print_ast(&second.ast) {
        Ok(s) => cycle.q2 = Some(s),
        Err(e) => cycle.error = Some(format!("print of AST1 failed: {e}")),
    }
    cycle.ast1 = Some(second.ast);
    cycle
}

impl Cycle {
    pub fn qrt(&self, mode: QrtMode) -> CheckReport {
        if let Some(e) = &self.error {
            return CheckReport::fail(e.clone());
        }
        let unsegmented = [&self.ast0, &self.ast1].iter().any(|a| {
            a.as_ref()
                .is_some_and(|a| a.contains_variant(Variant::Unsegmented))
        });
        if unsegmented {
            return CheckReport::fail("AST contains an Unsegmented node");
        }
        let (Some(q1), Some(q2)) = (&self.q1, &self.q2) else {
            return CheckReport::fail("cycle incomplete");
        };
        let (n0, n1, n2) = (
            normalize_query(&self.q0),
            normalize_query(q1),
            normalize_query(q2),
        );
        if n1 != n2 {
            return CheckReport::fail(format!("Q1 and Q2 differ: `{q1}` vs `{q2}`"));
        }
        if mode == QrtMode::Strict && n0 != n1 {
            return CheckReport::fail(format!("Q0 and Q1 differ: `{}` vs `{q1}`", self.q0));
        }
        CheckReport::pass()
    }

    pub fn astrt(&self) -> CheckReport {
        match (&self.ast0, &self.ast1) {
            (Some(a0), Some(a1)) if a0.structurally_eq(a1) => CheckReport::pass(),
            (Some(a0), Some(a1)) => CheckReport::fail(format!(
                "AST0 {} differs from AST1 {}",
                a0.sexpr(),
                a1.sexpr()
            )),
            _ => CheckReport::fail(
                self.error
                    .clone()
                    .unwrap_or_else(|| "cycle incomplete".into()),
            ),
        }
    }
}

pub fn qrt_check(q0: &str, engine: &Engine, mode: QrtMode) -> CheckReport {
    run_cycle(q0, engine).qrt(mode)
}

pub fn astrt_check(q0: &str, engine: &Engine) -> CheckReport {
    run_cycle(q0, engine).astrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<String>,
    pub sql: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// Reads a corpus: JSON lines `{id, dialect, sql}` or one query per line
/// with `\n` escaped. Blank lines and lines starting with `--` are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("--") {
            continue;
        }
        if line.starts_with('{') {
            let entry: CorpusEntry =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            out.push(entry);
        } else {
            out.push(CorpusEntry {
                id: format!("{}", i + 1),
                dialect: None,
                sql: line.replace("\\n", "\n"),
                tags: Vec::new(),
            });
        }
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> std::io::Result<Vec<CorpusEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text).map_err(|e| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

/// Reads a keyword list, one per line.
pub fn load_keywords(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn keyword_set(sql: &str, keywords: &HashSet<String>) -> BTreeSet<String> {
    let words: Vec<String> = match tokenize(sql, false) {
        Ok(tokens) => tokens
            .iter()
            .filter(|t| {
                !matches!(
                    t.kind,
                    TokenKind::StringLiteral | TokenKind::QuotedIdentifier
                )
            })
            .map(|t| t.text.to_ascii_uppercase())
            .collect(),
        Err(_) => sql
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .map(str::to_ascii_uppercase)
            .collect(),
    };
    words.into_iter().filter(|w| keywords.contains(w)).collect()
}

/// Keeps the longest query among those sharing a keyword set. With no
/// keywords every query is kept.
pub fn dedup_corpus(queries: Vec<CorpusEntry>, keywords: &[String]) -> Vec<CorpusEntry> {
    if keywords.is_empty() {
        return queries;
    }
    let keywords: HashSet<String> = keywords.iter().map(|k| k.to_ascii_uppercase()).collect();
    let mut best: HashMap<BTreeSet<String>, usize> = HashMap::new();
    for (i, q) in queries.iter().enumerate() {
        let key = keyword_set(&q.sql, &keywords);
        match best.get(&key) {
            Some(&j) if queries[j].sql.chars().count() >= q.sql.chars().count() => {}
            _ => {
                best.insert(key, i);
            }
        }
    }
    let keep: HashSet<usize> = best.into_values().collect();
    queries
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, q)| q)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub jobs: usize,
    pub mode: QrtMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            jobs: 1,
            mode: QrtMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub id: String,
    pub qrt: CheckReport,
    pub astrt: CheckReport,
    pub backend_calls: usize,
    pub parse_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dialect: Option<String>,
    pub total: usize,
    pub q_rt_pass: usize,
    pub q_rt_rate: f64,
    pub ast_rt_pass: usize,
    pub ast_rt_rate: f64,
    /// Mean wall time of the first parse per query.
    pub t_avg_ms: f64,
    /// Mean first-parse time over queries that called the backend.
    pub t_llm_ms: f64,
    /// Backend calls across the whole run, repairs included.
    pub n_llm: usize,
    /// Queries whose first parse called the backend.
    pub segmented_queries: usize,
    pub queries: Vec<QueryResult>,
}

impl EvalReport {
    pub fn failures(&self) -> impl Iterator<Item = &QueryResult> {
        self.queries.iter().filter(|q| !q.qrt.pass || !q.astrt.pass)
    }
}

fn evaluate(entry: &CorpusEntry, engine: &Engine, mode: QrtMode) -> (QueryResult, usize) {
    let cycle = run_cycle(&entry.sql, engine);
    (
        QueryResult {
            id: entry.id.clone(),
            qrt: cycle.qrt(mode),
            astrt: cycle.astrt(),
            backend_calls: cycle.backend_calls,
            parse_ms: cycle.first_parse.as_secs_f64() * 1000.0,
        },
        cycle.first_calls,
    )
}

/// Round-trips every entry and aggregates the counters.
pub fn run_eval(entries: &[CorpusEntry], engine: &Engine, options: EvalOptions) -> EvalReport {
    let jobs = options.jobs.max(1).min(entries.len().max(1));
    let slots: Mutex<Vec<Option<(QueryResult, usize)>>> = Mutex::new(vec![None; entries.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(entry) = entries.get(i) else { break };
        let r = evaluate(entry, engine, options.mode);
        slots.lock().expect("results")[i] = Some(r);
    };
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(work);
            }
        });
    }
    let results: Vec<(QueryResult, usize)> = slots
        .into_inner()
        .expect("results")
        .into_iter()
        .map(|r| r.expect("every entry evaluated"))
        .collect();
    summarize(results, engine.config().dialect.clone())
}

fn summarize(results: Vec<(QueryResult, usize)>, dialect: String) -> EvalReport {
    let total = results.len();
    let rate = |n: usize| {
        if total == 0 {
            0.0
        } else {
            n as f64 / total as f64
        }
    };
    let q_rt_pass = results.iter().filter(|(r, _)| r.qrt.pass).count();
    let ast_rt_pass = results.iter().filter(|(r, _)| r.astrt.pass).count();
    let n_llm = results.iter().map(|(r, _)| r.backend_calls).sum();
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let t_avg_ms = mean(results.iter().map(|(r, _)| r.parse_ms).collect());
    let llm: Vec<f64> = results
        .iter()
        .filter(|(_, c)| *c > 0)
        .map(|(r, _)| r.parse_ms)
        .collect();
    let segmented_queries = llm.len();
    EvalReport {
        version: 1,
        dialect: (!dialect.is_empty()).then_some(dialect),
        total,
        q_rt_pass,
        q_rt_rate: rate(q_rt_pass),
        ast_rt_pass,
        ast_rt_rate: rate(ast_rt_pass),
        t_avg_ms,
        t_llm_ms: mean(llm),
        n_llm,
        segmented_queries,
        queries: results.into_iter().map(|(r, _)| r).collect(),
    }
}

/// Geometric mean; 0 when any value is 0 or the input is empty.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|v| *v <= 0.0) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossDialect {
    pub q_rt_rate: f64,
    pub ast_rt_rate: f64,
}

/// Geometric means of the per-dialect rates.
pub fn aggregate(reports: &[EvalReport]) -> CrossDialect {
    let q: Vec<f64> = reports.iter().map(|r| r.q_rt_rate).collect();
    let a: Vec<f64> = reports.iter().map(|r| r.ast_rt_rate).collect();
    CrossDialect {
        q_rt_rate: geometric_mean(&q),
        ast_rt_rate: geometric_mean(&a),
    }
}

/// Elements for comparing an AST against a reference parser's output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SemanticElements {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<String>,
    pub aliases: BTreeSet<String>,
    pub join_types: BTreeSet<String>,
    /// Operators with their printed operands, e.g. `<(year, 2025)`; nesting
    /// shows up in the operand text.
    pub operators: BTreeSet<String>,
}

pub fn semantic_elements(root: &AstNode) -> SemanticElements {
    let mut out = SemanticElements::default();
    root.walk(&mut |n| match n.variant {
        Variant::TableRef => {
            if let Some(name) = n.attr("name") {
                out.tables.insert(name.to_string());
            }
        }
        Variant::Identifier => {
            if let Some(name) = n.attr("name") {
                out.columns.insert(name.to_string());
            }
        }
        Variant::Alias => {
            if let Some(name) = n.attr("name") {
                out.aliases.insert(name.to_string());
            }
        }
        Variant::Join => {
            out.join_types
                .insert(n.attr("join_type").unwrap_or("JOIN").to_ascii_uppercase());
        }
        Variant::BinaryOp | Variant::UnaryOp | Variant::Between => {
            let operands: Vec<String> = n
                .children
                .iter()
                .map(|c| print_ast(c).unwrap_or_else(|_| c.sexpr()))
                .collect();
            out.operators.insert(format!(
                "{}({})",
                n.op().unwrap_or_default().to_ascii_uppercase(),
                operands.join(", ")
            ));
        }
        _ => {}
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sqlseg_core::backend::MockSegmenter;
    use sqlseg_core::engine::EngineConfig;
    use std::sync::Arc;

    fn mock_engine() -> (Arc<MockSegmenter>, Engine) {
        let mock = Arc::new(MockSegmenter::new());
        let cfg = EngineConfig {
            dialect: "tsql".into(),
            ..Default::default()
        };
        (mock.clone(), Engine::new(mock, cfg))
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_query("SELECT (a) FROM t"),
            normalize_query("SELECT a FROM t")
        );
        assert!(normalize_query("SELECT '( )'").contains("'( )'"));
        assert_eq!(normalize_query("a  <  b"), normalize_query("a<b"));
        assert_eq!(normalize_query("[a b] ( \"c d\" )"), "[a b]\"c d\"");
    }

    #[test]
    fn walkthrough_round_trips() {
        let (mock, engine) = mock_engine();
        let q = "SELECT TOP 10 * FROM Sales WHERE (tot / 2) !< 8 AND year < 2025 OPTION (FAST 10)";
        let cycle = run_cycle(q, &engine);
        assert!(
            cycle.qrt(QrtMode::Strict).pass,
            "{:?}",
            cycle.qrt(QrtMode::Strict)
        );
        assert!(cycle.astrt().pass);
        assert_eq!(cycle.backend_calls, mock.call_count());
    }

    #[test]
    fn grammar_query_passes_without_calls() {
        let (mock, engine) = mock_engine();
        assert!(qrt_check("SELECT a, b FROM t WHERE a < 1", &engine, QrtMode::Strict).pass);
        assert!(astrt_check("SELECT a FROM t ORDER BY a DESC", &engine).pass);
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn unsegmented_fails() {
        let (_, engine) = mock_engine();
        let r = qrt_check("SELECT a FROM t QUALIFY x", &engine, QrtMode::Strict);
        assert!(!r.pass);
    }

    #[test]
    fn dedup_keeps_longest() {
        let e = |id: &str, sql: &str| CorpusEntry {
            id: id.into(),
            dialect: None,
            sql: sql.into(),
            tags: Vec::new(),
        };
        let kws: Vec<String> = ["SELECT", "FROM", "WHERE", "ORDER", "BY"]
            .map(String::from)
            .to_vec();
        let short = e("1", "SELECT a FROM t WHERE b = 1");
        let long = e("2", "SELECT a, b, c FROM table_one WHERE b = 1 + 2");
        let other = e("3", "SELECT a FROM t ORDER BY a");
        let out = dedup_corpus(vec![short.clone(), long.clone(), other.clone()], &kws);
        assert_eq!(out, vec![long, other]);
        assert_eq!(
            dedup_corpus(vec![short.clone(), short.clone()], &[]).len(),
            2
        );
    }

    #[test]
    fn corpus_formats() {
        let text = "-- comment\nSELECT a\\nFROM t\n\n{\"id\": \"x\", \"dialect\": \"tsql\", \"sql\": \"SELECT 1\"}\n";
        let c = parse_corpus(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].sql, "SELECT a\nFROM t");
        assert_eq!(c[1].dialect.as_deref(), Some("tsql"));
    }

    #[test]
    fn run_eval_counts_calls() {
        let (mock, engine) = mock_engine();
        let entries =
            parse_corpus("SELECT a FROM t\nSELECT TOP 5 a FROM t\nSELECT a FROM t WHERE x !< 3\n")
                .unwrap();
        let report = run_eval(
            &entries,
            &engine,
            EvalOptions {
                jobs: 2,
                ..Default::default()
            },
        );
        assert_eq!(report.total, 3);
        assert_eq!(report.q_rt_pass, 3);
        assert_eq!(report.n_llm, mock.call_count());
        assert_eq!(report.segmented_queries, 2);
    }

    #[test]
    fn geometric_mean_by_hand() {
        assert!((geometric_mean(&[4.0, 1.0, 2.0]) - 2.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[]), 0.0);
        assert_eq!(geometric_mean(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn semantic_elements_of_walkthrough() {
        let (_, engine) = mock_engine();
        let ast = engine
            .parse(
                "SELECT TOP 10 * FROM Sales WHERE (tot / 2) !< 8 AND year < 2025 OPTION (FAST 10)",
            )
            .unwrap()
            .ast;
        let el = semantic_elements(&ast);
        assert!(el.tables.contains("Sales"));
        assert!(el.operators.contains("<(year, 2025)"));
        assert!(el.operators.contains("!<(tot / 2, 8)"));
    }
}
