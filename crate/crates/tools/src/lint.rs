//! AST-based anti-pattern checks and precision/recall scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sqlseg_core::ast::{AstNode, Variant};
use sqlseg_core::lexer::{tokenize, TokenKind};
use sqlseg_core::rewrite::{visit, NodeRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    AM01,
    AM02,
    AM04,
    AM06,
    AM08,
    AL02,
    AL03,
    AL04,
    AL05,
    AL08,
    AL09,
    CV04,
    CV05,
    RF01,
}

impl RuleId {
    pub const ALL: [RuleId; 14] = [
        RuleId::AM01,
        RuleId::AM02,
        RuleId::AM04,
        RuleId::AM06,
        RuleId::AM08,
        RuleId::AL02,
        RuleId::AL03,
        RuleId::AL04,
        RuleId::AL05,
        RuleId::AL08,
        RuleId::AL09,
        RuleId::CV04,
        RuleId::CV05,
        RuleId::RF01,
    ];

    pub fn all() -> BTreeSet<RuleId> {
        Self::ALL.into_iter().collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::AM01 => "AM01",
            RuleId::AM02 => "AM02",
            RuleId::AM04 => "AM04",
            RuleId::AM06 => "AM06",
            RuleId::AM08 => "AM08",
            RuleId::AL02 => "AL02",
            RuleId::AL03 => "AL03",
            RuleId::AL04 => "AL04",
            RuleId::AL05 => "AL05",
            RuleId::AL08 => "AL08",
            RuleId::AL09 => "AL09",
            RuleId::CV04 => "CV04",
            RuleId::CV05 => "CV05",
            RuleId::RF01 => "RF01",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            RuleId::AM01 => "Ambiguous use of DISTINCT in a SELECT with GROUP BY",
            RuleId::AM02 => "UNION [DISTINCT|ALL] is preferred over just UNION",
            RuleId::AM04 => "Query produces an unknown number of result columns",
            RuleId::AM06 => "Inconsistent column references in GROUP BY/ORDER BY",
            RuleId::AM08 => "Implicit cross join detected",
            RuleId::AL02 => "Implicit aliasing of columns",
            RuleId::AL03 => "Column expression without alias",
            RuleId::AL04 => "Table aliases should be unique within each clause",
            RuleId::AL05 => "Tables should not be aliased if that alias is not used",
            RuleId::AL08 => "Column aliases should be unique within each clause",
            RuleId::AL09 => "Column aliases should not alias to themselves",
            RuleId::CV04 => "Use consistent syntax to count rows",
            RuleId::CV05 => "Comparisons with NULL should use IS or IS NOT",
            RuleId::RF01 => "References cannot reference objects not present in FROM",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown lint rule `{0}`")]
pub struct UnknownRule(pub String);

impl FromStr for RuleId {
    type Err = UnknownRule;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        RuleId::ALL
            .into_iter()
            .find(|r| r.as_str() == up)
            .ok_or_else(|| UnknownRule(s.to_string()))
    }
}

/// Parses a comma-separated rule list such as `AL09,CV05`.
pub fn parse_rule_list(s: &str) -> Result<BTreeSet<RuleId>, UnknownRule> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub rule_id: RuleId,
    pub message: String,
    pub node_path: Vec<usize>,
}

/// Runs the enabled rules over `root`. Findings are ordered by rule, then
/// by position.
pub fn lint(root: &AstNode, enabled: &BTreeSet<RuleId>) -> Vec<LintFinding> {
    let mut out = Vec::new();
    for &rule in enabled {
        let mut sites: Vec<(Vec<usize>, String)> = Vec::new();
        let mut path = Vec::new();
        visit(root, root, &mut path, &mut |r| check(rule, &r, &mut sites));
        out.extend(sites.into_iter().map(|(node_path, detail)| LintFinding {
            rule_id: rule,
            message: format!("{}: {detail}", rule.description()),
            node_path,
        }));
    }
    out
}

/// The distinct rule ids among `findings`.
pub fn rule_set(findings: &[LintFinding]) -> BTreeSet<RuleId> {
    findings.iter().map(|f| f.rule_id).collect()
}

fn check(rule: RuleId, r: &NodeRef<'_>, sites: &mut Vec<(Vec<usize>, String)>) {
    let mut flag = |path: &[usize], detail: String| sites.push((path.to_vec(), detail));
    let node = r.node;
    match rule {
        RuleId::AM01 => {
            if node.variant == Variant::SelectStmt {
                let distinct = child(node, Variant::SelectClause)
                    .and_then(|c| c.attr("quantifier"))
                    .is_some_and(|q| q.eq_ignore_ascii_case("DISTINCT"));
                if distinct && child(node, Variant::GroupByClause).is_some() {
                    flag(r.path(), "DISTINCT together with GROUP BY".into());
                }
            }
        }
        RuleId::AM02 => {
            if node.variant == Variant::SetOperation
                && node
                    .attr("operator")
                    .is_some_and(|o| o.eq_ignore_ascii_case("UNION"))
                && node.attr("quantifier").is_none()
            {
                flag(r.path(), "bare UNION".into());
            }
        }
        RuleId::AM04 => {
            if node.variant == Variant::SelectClause && is_output_select(r) {
                let stmt = r.parent().expect("select clause has a parent").node;
                for (i, item) in node.children.iter().enumerate() {
                    if item.variant == Variant::Wildcard && !wildcard_resolves(stmt, item) {
                        flag(
                            &extend(r.path(), i),
                            format!("`{}` in the outermost query", wildcard_text(item)),
                        );
                    }
                }
            }
        }
        RuleId::AM06 => {
            if matches!(
                node.variant,
                Variant::GroupByClause | Variant::OrderByClause
            ) {
                let mut ordinal = false;
                let mut named = false;
                for item in &node.children {
                    let item = if item.variant == Variant::OrderItem {
                        match item.children.first() {
                            Some(c) => c,
                            None => continue,
                        }
                    } else {
                        item
                    };
                    match item.variant {
                        Variant::Literal if is_integer(item.text().unwrap_or_default()) => {
                            ordinal = true
                        }
                        Variant::Identifier => named = true,
                        _ => {}
                    }
                }
                if ordinal && named {
                    let kw = node.attr("keyword").unwrap_or("clause");
                    flag(
                        r.path(),
                        format!("{kw} mixes positional and named references"),
                    );
                }
            }
        }
        RuleId::AM08 => {
            if node.variant == Variant::FromClause && !inside_unsegmented(r) {
                let items = node
                    .children
                    .iter()
                    .filter(|c| c.variant != Variant::Other)
                    .count();
                if items > 1 {
                    flag(r.path(), format!("{items} comma-separated FROM items"));
                }
            }
            if node.variant == Variant::Join {
                let kind = node
                    .attr("join_type")
                    .unwrap_or("JOIN")
                    .to_ascii_uppercase();
                let explicit = kind.contains("CROSS") || kind.contains("NATURAL");
                let has_other = node.children.iter().any(|c| c.variant == Variant::Other);
                if !explicit && !has_other && child(node, Variant::JoinCondition).is_none() {
                    flag(r.path(), format!("{kind} without ON or USING"));
                }
            }
        }
        RuleId::AL02 => {
            if node.variant == Variant::Projection {
                if let Some(alias) = child(node, Variant::Alias) {
                    if alias.attr("as").is_none() {
                        flag(
                            r.path(),
                            format!(
                                "alias `{}` without AS",
                                alias.attr("name").unwrap_or_default()
                            ),
                        );
                    }
                }
            }
        }
        RuleId::AL03 => {
            if node.variant == Variant::SelectClause && !inside_exists(r) {
                let items: Vec<(usize, &AstNode)> = node
                    .children
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.variant != Variant::Other)
                    .collect();
                if items.len() > 1 {
                    for (i, item) in items {
                        let plain = matches!(
                            item.variant,
                            Variant::Identifier
                                | Variant::Wildcard
                                | Variant::Literal
                                | Variant::Projection
                                | Variant::Unsegmented
                        );
                        if !plain {
                            flag(
                                &extend(r.path(), i),
                                format!("unnamed {} in select list", item.variant),
                            );
                        }
                    }
                }
            }
        }
        RuleId::AL04 => {
            if node.variant == Variant::FromClause && !inside_unsegmented(r) {
                let mut seen = BTreeSet::new();
                for (path, rel) in relations(node, r.path()) {
                    if let Some(name) = rel.exposed {
                        if !seen.insert(name.clone()) {
                            flag(&path, format!("`{name}` is used more than once"));
                        }
                    }
                }
            }
        }
        RuleId::AL05 => {
            if node.variant == Variant::FromClause {
                let Some(stmt) = r.parent() else { return };
                if has_opaque_clause(stmt.node) {
                    return;
                }
                for (path, rel) in relations(node, r.path()) {
                    let (Some(alias), false) = (rel.alias.as_deref(), rel.derived) else {
                        continue;
                    };
                    if !alias_used(stmt.node, alias) {
                        flag(&path, format!("alias `{alias}` is never referenced"));
                    }
                }
            }
        }
        RuleId::AL08 => {
            if node.variant == Variant::SelectClause {
                let mut seen = BTreeSet::new();
                for (i, item) in node.children.iter().enumerate() {
                    if let Some(name) = output_name(item) {
                        if !seen.insert(name.clone()) {
                            flag(
                                &extend(r.path(), i),
                                format!("column name `{name}` repeats"),
                            );
                        }
                    }
                }
            }
        }
        RuleId::AL09 => {
            if node.variant == Variant::Projection {
                let (Some(value), Some(alias)) =
                    (node.children.first(), child(node, Variant::Alias))
                else {
                    return;
                };
                if value.variant != Variant::Identifier {
                    return;
                }
                let parts = name_parts(value.attr("name").unwrap_or_default());
                let alias_name = alias.attr("name").unwrap_or_default();
                if parts.len() == 1 && same_name(value.attr("name").unwrap_or_default(), alias_name)
                {
                    flag(r.path(), format!("`{alias_name}` aliased to itself"));
                }
            }
        }
        RuleId::CV04 => {
            if node.variant == Variant::FunctionCall
                && node
                    .attr("name")
                    .is_some_and(|n| n.eq_ignore_ascii_case("count"))
                && node.attr("quantifier").is_none()
                && node.children.len() == 1
                && node.children[0].variant == Variant::Literal
                && matches!(node.children[0].text(), Some("0") | Some("1"))
            {
                flag(
                    r.path(),
                    format!(
                        "count({}) instead of count(*)",
                        node.children[0].text().unwrap_or("")
                    ),
                );
            }
        }
        RuleId::CV05 => match node.variant {
            Variant::BinaryOp => {
                let op = node.op().unwrap_or_default();
                if matches!(op, "=" | "<>" | "!=") && node.children.iter().any(is_null) {
                    flag(r.path(), format!("`{op} NULL`"));
                }
            }
            Variant::Other => {
                if let Some(op) = null_comparison_in_text(node.text().unwrap_or_default()) {
                    flag(r.path(), format!("`{op} NULL`"));
                }
            }
            _ => {}
        },
        RuleId::RF01 => {
            let name = match node.variant {
                Variant::Identifier => node.attr("name"),
                Variant::Wildcard => node.attr("text").or(node.attr("name")),
                _ => None,
            };
            let Some(name) = name else { return };
            let mut parts = name_parts(name);
            if node.variant == Variant::Wildcard {
                parts.pop();
            } else if parts.len() < 2 {
                return;
            } else {
                parts.pop();
            }
            if parts.is_empty() || inside_other_rel(r) {
                return;
            }
            match scope_resolves(r, &parts) {
                Some(true) | None => {}
                Some(false) => flag(
                    r.path(),
                    format!("`{}` is not in the FROM clause", parts.join(".")),
                ),
            }
        }
    }
}

fn extend(path: &[usize], i: usize) -> Vec<usize> {
    let mut p = path.to_vec();
    p.push(i);
    p
}

fn child(node: &AstNode, variant: Variant) -> Option<&AstNode> {
    node.children.iter().find(|c| c.variant == variant)
}

fn is_integer(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn is_null(node: &AstNode) -> bool {
    node.variant == Variant::Literal && node.text().is_some_and(|t| t.eq_ignore_ascii_case("NULL"))
}

fn null_comparison_in_text(text: &str) -> Option<String> {
    let tokens = tokenize(text, false).ok()?;
    tokens.windows(2).find_map(|w| {
        let op = w[0].text;
        (w[0].kind == TokenKind::Operator
            && matches!(op, "=" | "<>" | "!=")
            && w[1].text.eq_ignore_ascii_case("NULL"))
        .then(|| op.to_string())
    })
}

fn wildcard_text(node: &AstNode) -> &str {
    node.attr("text").or(node.attr("name")).unwrap_or("*")
}

fn inside_unsegmented(r: &NodeRef<'_>) -> bool {
    r.ancestor(Variant::Unsegmented).is_some()
}

fn inside_other_rel(r: &NodeRef<'_>) -> bool {
    r.ancestor(Variant::Other).is_some() || r.ancestor(Variant::Unsegmented).is_some()
}

/// Whether the select clause under `r` produces the final result columns:
/// the root statement or a set-operation member chained from it.
fn is_output_select(r: &NodeRef<'_>) -> bool {
    let Some(mut cur) = r.parent() else {
        return false;
    };
    loop {
        if cur.node.variant != Variant::SelectStmt {
            return false;
        }
        let Some(up) = cur.parent() else { return true };
        if up.node.variant != Variant::SetOperation {
            return false;
        }
        let Some(stmt) = up.parent() else {
            return false;
        };
        cur = stmt;
    }
}

fn inside_exists(r: &NodeRef<'_>) -> bool {
    let mut cur = r.parent();
    while let Some(n) = cur {
        if n.node.variant == Variant::Subquery {
            return n.parent().is_some_and(|p| {
                p.node.variant == Variant::UnaryOp
                    && p.node
                        .op()
                        .is_some_and(|o| o.eq_ignore_ascii_case("EXISTS"))
            });
        }
        cur = n.parent();
    }
    false
}

/// A wildcard has a known width when every source it expands is a derived
/// table whose own select list is known.
fn wildcard_resolves(stmt: &AstNode, wildcard: &AstNode) -> bool {
    let Some(from) = child(stmt, Variant::FromClause) else {
        return false;
    };
    let mut qualifier = name_parts(wildcard_text(wildcard));
    qualifier.pop();
    let rels = relations(from, &[]);
    let targets: Vec<&Relation> = rels
        .iter()
        .map(|(_, r)| r)
        .filter(|r| {
            qualifier.is_empty() || r.exposed.as_deref() == Some(qualifier.join(".").as_str())
        })
        .collect();
    !targets.is_empty()
        && targets.iter().all(|r| {
            r.subquery.as_ref().is_some_and(|q| {
                child(q, Variant::SelectClause).is_some_and(|sc| {
                    sc.children
                        .iter()
                        .all(|c| c.variant != Variant::Wildcard || wildcard_resolves(q, c))
                })
            })
        })
}

/// Splits a dotted name outside quotes and normalizes each part: quoted
/// parts keep their case, bare parts are lowercased.
pub fn name_parts(name: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut close: Option<char> = None;
    for ch in name.chars() {
        match close {
            Some(c) if ch == c => {
                close = None;
                cur.push(ch);
            }
            Some(_) => cur.push(ch),
            None => match ch {
                '.' => parts.push(std::mem::take(&mut cur)),
                '[' => {
                    close = Some(']');
                    cur.push(ch);
                }
                '"' | '`' => {
                    close = Some(ch);
                    cur.push(ch);
                }
                _ => cur.push(ch),
            },
        }
    }
    parts.push(cur);
    parts.iter().map(|p| normalize_part(p.trim())).collect()
}

fn normalize_part(p: &str) -> String {
    let quoted = [('[', ']'), ('"', '"'), ('`', '`')]
        .iter()
        .find(|(o, c)| p.len() >= 2 && p.starts_with(*o) && p.ends_with(*c));
    match quoted {
        Some(_) => p[1..p.len() - 1].to_string(),
        None => p.to_ascii_lowercase(),
    }
}

fn same_name(a: &str, b: &str) -> bool {
    name_parts(a) == name_parts(b)
}

/// Name a select item contributes to the result, if it has one.
fn output_name(item: &AstNode) -> Option<String> {
    match item.variant {
        Variant::Projection => child(item, Variant::Alias)
            .and_then(|a| a.attr("name"))
            .map(|n| name_parts(n).join(".")),
        Variant::Identifier => name_parts(item.attr("name")?).pop(),
        _ => None,
    }
}

#[derive(Debug, Clone)]
struct Relation {
    /// Alias if present, else the full table name; `None` for an unaliased
    /// derived table.
    exposed: Option<String>,
    alias: Option<String>,
    table: Option<String>,
    derived: bool,
    subquery: Option<AstNode>,
}

/// Table references under a FROM clause, not descending into subqueries.
fn relations(from: &AstNode, from_path: &[usize]) -> Vec<(Vec<usize>, Relation)> {
    fn go(node: &AstNode, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, Relation)>) {
        match node.variant {
            Variant::TableRef => {
                let alias = child(node, Variant::Alias)
                    .and_then(|a| a.attr("name"))
                    .map(str::to_string);
                let table = node.attr("name").map(|n| name_parts(n).join("."));
                let subquery = child(node, Variant::Subquery)
                    .and_then(|s| child(s, Variant::SelectStmt))
                    .cloned();
                let exposed = alias
                    .as_deref()
                    .map(|a| name_parts(a).join("."))
                    .or(table.clone());
                out.push((
                    path.clone(),
                    Relation {
                        exposed,
                        alias,
                        table,
                        derived: subquery.is_some(),
                        subquery,
                    },
                ));
            }
            Variant::FromClause | Variant::Join => {
                for (i, c) in node.children.iter().enumerate() {
                    path.push(i);
                    go(c, path, out);
                    path.pop();
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    go(from, &mut from_path.to_vec(), &mut out);
    out
}

/// Clauses whose content is opaque make scope questions undecidable.
fn has_opaque_clause(stmt: &AstNode) -> bool {
    stmt.children.iter().any(|c| {
        c.variant == Variant::Unsegmented
            || (c.variant == Variant::FromClause && c.contains_variant(Variant::Unsegmented))
    })
}

/// Whether anything in the statement (outside set-operation members)
/// qualifies a name with `alias`.
fn alias_used(stmt: &AstNode, alias: &str) -> bool {
    let target = name_parts(alias);
    let mut used = false;
    let mut scan = |n: &AstNode| match n.variant {
        Variant::Identifier | Variant::Wildcard => {
            let text = n.attr("name").or(n.attr("text")).unwrap_or_default();
            let mut parts = name_parts(text);
            parts.pop();
            if parts.ends_with(&target) && !parts.is_empty() {
                used = true;
            }
        }
        Variant::Other | Variant::Unsegmented => {
            if let Ok(tokens) = tokenize(n.text().unwrap_or_default(), false) {
                used |= tokens.iter().any(|t| {
                    let mut parts = name_parts(t.text);
                    parts.pop();
                    !parts.is_empty() && parts.ends_with(&target)
                });
            }
        }
        _ => {}
    };
    for c in &stmt.children {
        if c.variant != Variant::SetOperation {
            c.walk(&mut scan);
        }
    }
    used
}

/// Resolves a qualifier against the FROM clauses visible at `r`: its own
/// statement and enclosing ones. `None` when a scope is opaque.
fn scope_resolves(r: &NodeRef<'_>, qualifier: &[String]) -> Option<bool> {
    let wanted = qualifier.join(".");
    let mut came_from_setop = false;
    let mut cur = r.parent();
    let mut any_scope = false;
    while let Some(n) = cur {
        match n.node.variant {
            Variant::SetOperation => came_from_setop = true,
            Variant::SelectStmt if !came_from_setop => {
                any_scope = true;
                if has_opaque_clause(n.node) {
                    return None;
                }
                if let Some(from) = child(n.node, Variant::FromClause) {
                    for (_, rel) in relations(from, &[]) {
                        if rel.exposed.as_deref() == Some(wanted.as_str()) {
                            return Some(true);
                        }
                        let last = rel.table.as_deref().and_then(|t| t.rsplit('.').next());
                        if rel.alias.is_none() && last == Some(wanted.as_str()) {
                            return Some(true);
                        }
                    }
                }
            }
            Variant::SelectStmt => came_from_setop = false,
            _ => {}
        }
        cur = n.parent();
    }
    any_scope.then_some(false)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("query keys differ: only reported {only_reported:?}, only in truth {only_truth:?}")]
    KeyMismatch {
        only_reported: Vec<String>,
        only_truth: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LintMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores reported rule sets against ground truth per (query, rule) pair.
///
/// A ratio with a zero denominator is 0, except that an empty report
/// against empty truth scores 1 throughout.
pub fn lint_metrics(
    reported: &BTreeMap<String, BTreeSet<RuleId>>,
    truth: &BTreeMap<String, BTreeSet<RuleId>>,
) -> Result<LintMetrics, MetricsError> {
    let only_reported: Vec<String> = reported
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .cloned()
        .collect();
    let only_truth: Vec<String> = truth
        .keys()
        .filter(|k| !reported.contains_key(*k))
        .cloned()
        .collect();
    if !only_reported.is_empty() || !only_truth.is_empty() {
        return Err(MetricsError::KeyMismatch {
            only_reported,
            only_truth,
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (key, got) in reported {
        let want = &truth[key];
        tp += got.intersection(want).count();
        fp += got.difference(want).count();
        fn_ += want.difference(got).count();
    }
    if tp + fp + fn_ == 0 {
        return Ok(LintMetrics {
            tp,
            fp,
            fn_,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(LintMetrics {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
    })
}
