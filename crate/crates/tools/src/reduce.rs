//! Oracle-guided reduction of a query over its AST.

use std::io::Write;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sqlseg_core::ast::{AstNode, Variant};
use sqlseg_core::engine::{Engine, EngineError};
use sqlseg_core::lexer::tokenize;
use sqlseg_core::printer::print_ast;
use sqlseg_core::rewrite::check_structure;

/// Placeholder replaced by the path of a file holding the candidate query.
pub const QUERY_FILE_PLACEHOLDER: &str = "{query_file}";

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle command has no {QUERY_FILE_PLACEHOLDER} placeholder")]
    NoPlaceholder,
    #[error("cannot run oracle: {0}")]
    Io(#[from] std::io::Error),
    #[error("oracle terminated by a signal")]
    Killed,
}

/// Decides whether a candidate query still shows the behavior of interest.
pub trait Oracle {
    fn holds(&self, sql: &str) -> Result<bool, OracleError>;
}

impl<F: Fn(&str) -> bool> Oracle for F {
    fn holds(&self, sql: &str) -> Result<bool, OracleError> {
        Ok(self(sql))
    }
}

/// Shell command run once per candidate; the candidate holds when the exit
/// status equals `expect_status`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCommand {
    pub template: String,
    pub expect_status: i32,
}

impl OracleCommand {
    pub fn new(template: impl Into<String>, expect_status: i32) -> Result<Self, OracleError> {
        let template = template.into();
        if !template.contains(QUERY_FILE_PLACEHOLDER) {
            return Err(OracleError::NoPlaceholder);
        }
        Ok(OracleCommand {
            template,
            expect_status,
        })
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "'\\''"))
}

impl Oracle for OracleCommand {
    fn holds(&self, sql: &str) -> Result<bool, OracleError> {
        let mut file = tempfile::Builder::new()
            .prefix("sqlseg-")
            .suffix(".sql")
            .tempfile()?;
        file.write_all(sql.as_bytes())?;
        file.flush()?;
        let path = file.path().to_string_lossy().into_owned();
        let cmd = self
            .template
            .replace(QUERY_FILE_PLACEHOLDER, &shell_quote(&path));
        let status = Command::new("sh").arg("-c").arg(&cmd).status()?;
        match status.code() {
            Some(code) => Ok(code == self.expect_status),
            None => Err(OracleError::Killed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    /// Remove WHERE, GROUP BY, HAVING, ORDER BY or a set operation.
    DropClause,
    /// Remove one element of a list with several elements.
    DropItem,
    DropOther,
    /// Put one operand in place of its expression.
    Promote,
}

/// One candidate edit: `path` names the node acted on; `operand` is the
/// child promoted by [`EditKind::Promote`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edit {
    pub kind: EditKind,
    pub path: Vec<usize>,
    pub operand: Option<usize>,
}

fn is_operand(node: &AstNode) -> bool {
    matches!(
        node.variant,
        Variant::Identifier
            | Variant::Literal
            | Variant::BinaryOp
            | Variant::UnaryOp
            | Variant::Between
            | Variant::FunctionCall
            | Variant::CaseExpr
            | Variant::Subquery
    )
}

fn is_cast_body(node: &AstNode) -> bool {
    node.variant == Variant::BinaryOp && node.op().is_some_and(|o| o.eq_ignore_ascii_case("AS"))
}

/// Every edit applicable somewhere in `root`, in pre-order.
pub fn strategies(root: &AstNode) -> Vec<Edit> {
    fn go(node: &AstNode, path: &mut Vec<usize>, out: &mut Vec<Edit>) {
        let listed = node
            .children
            .iter()
            .filter(|c| c.variant != Variant::Other)
            .count();
        for (i, c) in node.children.iter().enumerate() {
            path.push(i);
            let here = path.clone();
            match c.variant {
                Variant::Other => out.push(Edit {
                    kind: EditKind::DropOther,
                    path: here.clone(),
                    operand: None,
                }),
                Variant::WhereClause
                | Variant::GroupByClause
                | Variant::HavingClause
                | Variant::OrderByClause
                | Variant::SetOperation
                    if node.variant == Variant::SelectStmt =>
                {
                    out.push(Edit {
                        kind: EditKind::DropClause,
                        path: here.clone(),
                        operand: None,
                    })
                }
                _ if listed > 1
                    && matches!(
                        node.variant,
                        Variant::SelectClause | Variant::GroupByClause | Variant::OrderByClause
                    ) =>
                {
                    out.push(Edit {
                        kind: EditKind::DropItem,
                        path: here.clone(),
                        operand: None,
                    })
                }
                _ => {}
            }
            if matches!(
                c.variant,
                Variant::BinaryOp | Variant::UnaryOp | Variant::Between | Variant::FunctionCall
            ) && !is_cast_body(c)
            {
                for (j, operand) in c.children.iter().enumerate() {
                    let inner = if is_cast_body(operand) {
                        operand.children.first()
                    } else {
                        Some(operand)
                    };
                    if inner.is_some_and(is_operand) {
                        out.push(Edit {
                            kind: EditKind::Promote,
                            path: here.clone(),
                            operand: Some(j),
                        });
                    }
                }
            }
            go(c, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(root, &mut Vec::new(), &mut out);
    out
}

/// Applies `edit`; `None` when the result would be malformed.
pub fn apply(root: &AstNode, edit: &Edit) -> Option<AstNode> {
    let (&last, parent_path) = edit.path.split_last()?;
    let mut out = root.clone();
    let parent = out.get_mut(parent_path)?;
    match edit.kind {
        EditKind::Promote => {
            let target = parent.children.get(last)?;
            let operand = target.children.get(edit.operand?)?;
            let replacement = if is_cast_body(operand) {
                operand.children.first()?.clone()
            } else {
                operand.clone()
            };
            parent.children[last] = replacement;
        }
        _ => {
            if last >= parent.children.len() {
                return None;
            }
            parent.children.remove(last);
            check_structure(parent).ok()?;
        }
    }
    Some(out)
}

pub fn token_count(sql: &str) -> usize {
    match tokenize(sql, false) {
        Ok(tokens) => tokens.len(),
        Err(_) => sql.split_whitespace().count(),
    }
}

/// Percentage of tokens removed: `100 * (1 - reduced / original)`.
pub fn sim_ratio(original: &str, reduced: &str) -> f64 {
    let before = token_count(original);
    if before == 0 {
        return 0.0;
    }
    100.0 * (1.0 - token_count(reduced) as f64 / before as f64)
}

/// Average and maximum simplification ratio over a set of outcomes.
pub fn sim_summary(outcomes: &[ReductionOutcome]) -> (f64, f64) {
    if outcomes.is_empty() {
        return (0.0, 0.0);
    }
    let avg = outcomes.iter().map(|o| o.sim_ratio).sum::<f64>() / outcomes.len() as f64;
    let max = outcomes
        .iter()
        .map(|o| o.sim_ratio)
        .fold(f64::MIN, f64::max);
    (avg, max)
}

/// A printed candidate.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub edit: Edit,
    pub ast: AstNode,
    pub sql: String,
    pub tokens: usize,
}

/// Applicable edits printed and ordered for trial: clause drops first, then
/// by resulting size, smallest first. Duplicates and no-ops are removed.
pub fn candidates(root: &AstNode) -> Vec<Candidate> {
    let current = print_ast(root).ok();
    let mut out: Vec<Candidate> = Vec::new();
    for edit in strategies(root) {
        let Some(ast) = apply(root, &edit) else {
            continue;
        };
        let Ok(sql) = print_ast(&ast) else { continue };
        if Some(&sql) == current.as_ref() || out.iter().any(|c| c.sql == sql) {
            continue;
        }
        out.push(Candidate {
            tokens: token_count(&sql),
            edit,
            ast,
            sql,
        });
    }
    out.sort_by_key(|c| (c.edit.kind != EditKind::DropClause, c.tokens));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionOutcome {
    pub original: String,
    pub reduced: String,
    pub original_tokens: usize,
    pub reduced_tokens: usize,
    pub sim_ratio: f64,
    /// Accepted edits.
    pub steps: usize,
    pub oracle_calls: usize,
    pub backend_calls: usize,
    /// No single edit of the result satisfies the oracle.
    pub one_minimal: bool,
}

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("the original query does not satisfy the oracle")]
    OracleSetup,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Parse(#[from] EngineError),
    #[error("cannot print the parsed query: {0}")]
    Print(#[from] sqlseg_core::printer::PrintError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReduceOptions {
    pub max_steps: Option<usize>,
}

/// Greedy fixpoint reduction starting from an already parsed AST.
pub fn reduce_ast(
    original: &str,
    ast: AstNode,
    oracle: &dyn Oracle,
    options: ReduceOptions,
) -> Result<ReductionOutcome, ReduceError> {
    let mut oracle_calls = 1;
    if !oracle.holds(original)? {
        return Err(ReduceError::OracleSetup);
    }
    let mut current = ast;
    let mut sql = original.to_string();
    let mut tokens = token_count(original);
    let mut steps = 0;
    let mut one_minimal = false;
    loop {
        if options.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let mut accepted = None;
        for cand in candidates(&current) {
            if cand.tokens > tokens {
                continue;
            }
            oracle_calls += 1;
            if oracle.holds(&cand.sql)? {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(cand) => {
                current = cand.ast;
                sql = cand.sql;
                tokens = cand.tokens;
                steps += 1;
            }
            None => {
                one_minimal = true;
                break;
            }
        }
    }
    Ok(ReductionOutcome {
        sim_ratio: sim_ratio(original, &sql),
        original_tokens: token_count(original),
        original: original.to_string(),
        reduced: sql,
        reduced_tokens: tokens,
        steps,
        oracle_calls,
        backend_calls: 0,
        one_minimal,
    })
}

/// Parses `query` with `engine` and reduces it.
pub fn reduce(
    query: &str,
    oracle: &dyn Oracle,
    engine: &Engine,
    options: ReduceOptions,
) -> Result<ReductionOutcome, ReduceError> {
    if !oracle.holds(query)? {
        return Err(ReduceError::OracleSetup);
    }
    let parsed = engine.parse(query)?;
    let mut out = reduce_ast(query, parsed.ast, oracle, options)?;
    out.oracle_calls += 1;
    out.backend_calls = parsed.stats.backend_calls;
    Ok(out)
}

/// Checks that no single edit of `root` satisfies the oracle.
pub fn is_one_minimal(root: &AstNode, oracle: &dyn Oracle) -> Result<bool, OracleError> {
    let tokens = print_ast(root)
        .map(|s| token_count(&s))
        .unwrap_or(usize::MAX);
    for cand in candidates(root) {
        if cand.tokens <= tokens && oracle.holds(&cand.sql)? {
            return Ok(false);
        }
    }
    Ok(true)
}
