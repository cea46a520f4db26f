//! Deterministic table-driven segmenter.
//!
//! The mock recognises a fixed set of dialect features and answers every
//! request with token-level heuristics. Requests for fragments that show none
//! of the features fail with [`BackendError::MockUnknownFeature`].

use std::sync::Mutex;

use super::{
    BackendError, ClauseSegments, ExprSegments, ResponseForm, Segmenter, SegmenterRequest,
    SegmenterResponse,
};
use crate::grammar::GrammarRuleId as G;
use crate::lexer::{tokenize, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detector {
    /// A keyword anywhere in the fragment.
    Keyword(&'static str),
    /// A word sequence, matched case-insensitively.
    Words(&'static [&'static str]),
    /// A word directly followed by a parenthesized group.
    WordBeforeGroup(&'static str),
    /// An operator spelled with adjacent symbol characters.
    Symbol(&'static str),
    /// A `[name]` or `` `name` `` identifier.
    Delimited(char),
    /// A reserved word used as a plain name.
    SoftKeyword,
}

#[derive(Debug, Clone, Copy)]
pub struct Feature {
    pub name: &'static str,
    detector: Detector,
}

/// Dialect features the mock knows how to segment.
pub static FEATURES: &[Feature] = &[
    Feature {
        name: "top",
        detector: Detector::Keyword("TOP"),
    },
    Feature {
        name: "option",
        detector: Detector::WordBeforeGroup("OPTION"),
    },
    Feature {
        name: "limit",
        detector: Detector::Keyword("LIMIT"),
    },
    Feature {
        name: "offset",
        detector: Detector::Keyword("OFFSET"),
    },
    Feature {
        name: "fetch",
        detector: Detector::Words(&["FETCH", "FIRST"]),
    },
    Feature {
        name: "fetch",
        detector: Detector::Words(&["FETCH", "NEXT"]),
    },
    Feature {
        name: "group-all",
        detector: Detector::Words(&["GROUP", "ALL"]),
    },
    Feature {
        name: "group-all",
        detector: Detector::Words(&["GROUP", "BY", "ALL"]),
    },
    Feature {
        name: "double-colon-cast",
        detector: Detector::Symbol("::"),
    },
    Feature {
        name: "not-less",
        detector: Detector::Symbol("!<"),
    },
    Feature {
        name: "not-greater",
        detector: Detector::Symbol("!>"),
    },
    Feature {
        name: "bang-equals",
        detector: Detector::Symbol("!="),
    },
    Feature {
        name: "bracket-identifier",
        detector: Detector::Delimited('['),
    },
    Feature {
        name: "backtick-identifier",
        detector: Detector::Delimited('`'),
    },
    Feature {
        name: "table-hint",
        detector: Detector::WordBeforeGroup("WITH"),
    },
    Feature {
        name: "apply",
        detector: Detector::Words(&["CROSS", "APPLY"]),
    },
    Feature {
        name: "apply",
        detector: Detector::Words(&["OUTER", "APPLY"]),
    },
    Feature {
        name: "nulls-ordering",
        detector: Detector::Words(&["NULLS", "FIRST"]),
    },
    Feature {
        name: "nulls-ordering",
        detector: Detector::Words(&["NULLS", "LAST"]),
    },
    Feature {
        name: "reserved-name",
        detector: Detector::SoftKeyword,
    },
];

/// Reserved words that dialects commonly accept as column names.
const SOFT_KEYWORDS: &[&str] = &[
    "YEAR",
    "MONTH",
    "DAY",
    "HOUR",
    "MINUTE",
    "SECOND",
    "DATE",
    "TIME",
    "TIMESTAMP",
    "VALUE",
    "LEVEL",
    "SIZE",
    "ZONE",
    "KEY",
    "ACTION",
    "OUTPUT",
    "LANGUAGE",
    "DOMAIN",
    "SECTION",
    "POSITION",
    "NAMES",
    "FIRST",
    "LAST",
    "COLUMN",
];

/// Binary operators with the binding power the mock assumes.
const BINARY_OPS: &[(&str, u8)] = &[
    ("AS", 0),
    ("OR", 1),
    ("AND", 2),
    ("=", 4),
    ("<>", 4),
    ("<", 4),
    (">", 4),
    ("<=", 4),
    (">=", 4),
    ("!=", 4),
    ("!<", 4),
    ("!>", 4),
    ("==", 4),
    ("<=>", 4),
    ("IS", 4),
    ("IS NOT", 4),
    ("LIKE", 4),
    ("NOT LIKE", 4),
    ("ILIKE", 4),
    ("IN", 4),
    ("NOT IN", 4),
    ("||", 5),
    ("+", 6),
    ("-", 6),
    ("&", 6),
    ("|", 6),
    ("^", 6),
    ("*", 7),
    ("/", 7),
    ("%", 7),
    ("::", 9),
];

const PREFIX_OPS: &[(&str, u8)] = &[("NOT", 3), ("-", 8), ("+", 8), ("~", 8)];

/// Symbol operators that are spelled with more than one character.
const COMPOUND_SYMBOLS: &[&str] = &["<=>", "::", "!<", "!>", "!=", "=="];

const JOIN_MODIFIERS: &[&str] = &[
    "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnitKind {
    /// Plain identifier.
    Word,
    /// Delimited identifier, dotted name, function call or CASE expression.
    Name,
    Keyword,
    Literal,
    Op,
    /// Parenthesized group or abstraction token.
    Group,
    Punct,
}

#[derive(Debug, Clone)]
struct Unit<'a> {
    text: &'a str,
    start: usize,
    end: usize,
    kind: UnitKind,
}

impl Unit<'_> {
    fn is(&self, word: &str) -> bool {
        self.text.eq_ignore_ascii_case(word)
    }

    fn is_operand(&self) -> bool {
        !matches!(self.kind, UnitKind::Op | UnitKind::Punct)
    }

    fn is_name(&self) -> bool {
        matches!(self.kind, UnitKind::Word | UnitKind::Name)
    }
}

/// Groups tokens into operands and operators; `None` when delimiters do not
/// balance or the text does not lex.
fn units(text: &str) -> Option<Vec<Unit<'_>>> {
    let toks = tokenize(text, true).ok()?;
    let mut out: Vec<Unit<'_>> = Vec::new();
    let mut i = 0;
    let unit = |start: usize, end: usize, kind: UnitKind| Unit {
        text: &text[start..end],
        start,
        end,
        kind,
    };
    while i < toks.len() {
        let t = &toks[i];
        let start = t.span.start;
        match t.kind {
            TokenKind::Operator if t.text == "[" || t.text == "`" => {
                let close = if t.text == "[" { "]" } else { "`" };
                let j = (i + 1..toks.len()).find(|&j| toks[j].text == close)?;
                out.push(unit(start, toks[j].span.end, UnitKind::Name));
                i = j + 1;
            }
            TokenKind::Operator => {
                let mut best = (i, t.text.to_string());
                let mut end = t.span.end;
                let mut combined = t.text.to_string();
                for (j, next) in toks.iter().enumerate().skip(i + 1).take(2) {
                    if next.kind != TokenKind::Operator || next.span.start != end {
                        break;
                    }
                    combined.push_str(next.text);
                    end = next.span.end;
                    if COMPOUND_SYMBOLS.contains(&combined.as_str()) {
                        best = (j, combined.clone());
                    }
                }
                out.push(unit(start, toks[best.0].span.end, UnitKind::Op));
                i = best.0 + 1;
            }
            TokenKind::Punctuation if t.text == "(" => {
                let mut depth = 0;
                let j = (i..toks.len()).find(|&j| {
                    if toks[j].is_punct("(") {
                        depth += 1;
                    } else if toks[j].is_punct(")") {
                        depth -= 1;
                    }
                    depth == 0
                })?;
                out.push(unit(start, toks[j].span.end, UnitKind::Group));
                i = j + 1;
            }
            TokenKind::Punctuation if t.text == ")" => return None,
            TokenKind::Punctuation => {
                out.push(unit(start, t.span.end, UnitKind::Punct));
                i += 1;
            }
            TokenKind::Keyword if t.is_keyword("CASE") => {
                let mut depth = 0;
                let j = (i..toks.len()).find(|&j| {
                    if toks[j].is_keyword("CASE") {
                        depth += 1;
                    } else if toks[j].is_keyword("END") {
                        depth -= 1;
                    }
                    depth == 0
                })?;
                out.push(unit(start, toks[j].span.end, UnitKind::Name));
                i = j + 1;
            }
            kind => {
                let k = match kind {
                    TokenKind::Keyword => UnitKind::Keyword,
                    TokenKind::Identifier => UnitKind::Word,
                    TokenKind::QuotedIdentifier => UnitKind::Name,
                    TokenKind::StringLiteral | TokenKind::NumericLiteral => UnitKind::Literal,
                    _ => UnitKind::Group,
                };
                out.push(unit(start, t.span.end, k));
                i += 1;
            }
        }
    }
    // dotted names, calls and typed literals
    let mut merged: Vec<Unit<'_>> = Vec::with_capacity(out.len());
    for u in out {
        if let Some(prev) = merged.last() {
            let adjacent = prev.end == u.start;
            let dotted_tail = prev.text.ends_with('.') && prev.kind == UnitKind::Name;
            let join = adjacent
                && ((prev.is_name() && u.text == ".")
                    || (dotted_tail
                        && (u.is_name() || u.text == "*" || u.kind == UnitKind::Keyword))
                    || (u.kind == UnitKind::Group
                        && (prev.is_name()
                            || (prev.kind == UnitKind::Keyword && !is_operator_word(prev.text)))));
            let typed = prev.kind == UnitKind::Keyword
                && ["DATE", "TIME", "TIMESTAMP", "INTERVAL"]
                    .iter()
                    .any(|k| prev.is(k))
                && u.kind == UnitKind::Literal
                && u.text.starts_with('\'');
            if join || typed {
                let prev = merged.pop().expect("checked");
                let kind = if typed {
                    UnitKind::Literal
                } else {
                    UnitKind::Name
                };
                merged.push(unit(prev.start, u.end, kind));
                continue;
            }
        }
        merged.push(u);
    }
    Some(merged)
}

fn is_operator_word(word: &str) -> bool {
    [
        "AND", "OR", "NOT", "IN", "IS", "LIKE", "EXISTS", "AS", "ON", "BETWEEN",
    ]
    .iter()
    .any(|w| w.eq_ignore_ascii_case(word))
}

fn is_soft_keyword(word: &str) -> bool {
    SOFT_KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn has_words(toks: &[crate::lexer::Token<'_>], words: &[&str]) -> bool {
    toks.windows(words.len()).any(|w| {
        w.iter()
            .zip(words)
            .all(|(t, word)| t.text.eq_ignore_ascii_case(word))
    })
}

/// Names of the table features present in `fragment`.
pub fn detect_features(fragment: &str) -> Vec<&'static str> {
    let Ok(toks) = tokenize(fragment, true) else {
        return Vec::new();
    };
    let mut names: Vec<&'static str> = Vec::new();
    for f in FEATURES {
        let hit = match f.detector {
            Detector::Keyword(kw) => toks.iter().any(|t| t.is_keyword(kw)),
            Detector::Words(words) => has_words(&toks, words),
            Detector::WordBeforeGroup(word) => toks.windows(2).any(|w| {
                w[0].text.eq_ignore_ascii_case(word)
                    && (w[1].is_punct("(") || w[1].kind == TokenKind::ParenToken)
            }),
            Detector::Symbol(sym) => {
                let chars: Vec<char> = sym.chars().collect();
                toks.windows(chars.len()).any(|w| {
                    w.iter()
                        .zip(&chars)
                        .all(|(t, c)| t.text.len() == 1 && t.text.starts_with(*c))
                        && w.windows(2).all(|p| p[0].span.end == p[1].span.start)
                })
            }
            Detector::Delimited(open) => toks
                .iter()
                .any(|t| t.text.len() == 1 && t.text.starts_with(open)),
            Detector::SoftKeyword => toks.iter().enumerate().any(|(i, t)| {
                t.kind == TokenKind::Keyword
                    && is_soft_keyword(t.text)
                    && !toks.get(i + 1).is_some_and(|n| {
                        n.is_punct("(")
                            || n.kind == TokenKind::ParenToken
                            || n.kind == TokenKind::StringLiteral
                    })
            }),
        };
        if hit && !names.contains(&f.name) {
            names.push(f.name);
        }
    }
    names
}

/// Deterministic segmenter with a call log.
#[derive(Debug, Default)]
pub struct MockSegmenter {
    log: Mutex<Vec<SegmenterRequest>>,
}

impl MockSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log").len()
    }

    pub fn calls(&self) -> Vec<SegmenterRequest> {
        self.log.lock().expect("mock log").clone()
    }

    pub fn reset(&self) {
        self.log.lock().expect("mock log").clear();
    }
}

impl Segmenter for MockSegmenter {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        self.log.lock().expect("mock log").push(request.clone());
        mock_segment(request)
    }
}

fn unknown(fragment: &str) -> BackendError {
    BackendError::MockUnknownFeature(fragment.to_string())
}

/// The mock's answer to `request`, without logging.
pub fn mock_segment(request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
    let fragment = request.fragment.trim();
    match request.form() {
        ResponseForm::Expression => segment_expression(fragment),
        form => {
            if detect_features(fragment).is_empty() {
                return Err(unknown(fragment));
            }
            let rule = request.rule.ok_or_else(|| unknown(fragment))?;
            if form == ResponseForm::Classify {
                classify(rule, fragment)
            } else {
                segment_clause(rule, fragment).map(SegmenterResponse::Clause)
            }
        }
    }
}

fn slice<'a>(text: &'a str, units: &[Unit<'_>]) -> &'a str {
    match (units.first(), units.last()) {
        (Some(a), Some(b)) => &text[a.start..b.end],
        _ => "",
    }
}

fn classify(rule: G, fragment: &str) -> Result<SegmenterResponse, BackendError> {
    let us = units(fragment).ok_or_else(|| unknown(fragment))?;
    let pick = |name: &str, alts: &[G]| SegmenterResponse::Classify {
        choices: alts
            .iter()
            .map(|a| (a.name().to_string(), a.name() == name))
            .collect(),
    };
    match rule {
        G::ProjectionValue => {
            let column = us.len() == 1
                && (us[0].is_name() && !us[0].text.contains('(')
                    || (us[0].kind == UnitKind::Keyword && is_soft_keyword(us[0].text)));
            Ok(pick(
                if column { "column" } else { "expr" },
                &[G::Column, G::Expr],
            ))
        }
        G::TableItem => {
            let join = us.iter().any(|u| u.is("JOIN") || u.is("APPLY"));
            Ok(pick(
                if join {
                    "joinedTable"
                } else {
                    "tableReference"
                },
                &[G::TableReference, G::JoinedTable],
            ))
        }
        _ => Err(unknown(fragment)),
    }
}

struct Builder<'a> {
    text: &'a str,
    out: ClauseSegments,
}

impl<'a> Builder<'a> {
    fn field(&mut self, name: &str, us: &[Unit<'_>]) {
        let s = slice(self.text, us);
        if !s.is_empty() {
            self.out.fields.push((name.to_string(), s.to_string()));
        }
    }

    fn other(&mut self, us: &[Unit<'_>]) {
        let s = slice(self.text, us);
        if !s.is_empty() {
            self.out.other.push(s.to_string());
        }
    }
}

fn segment_clause(rule: G, fragment: &str) -> Result<ClauseSegments, BackendError> {
    let us = units(fragment).ok_or_else(|| unknown(fragment))?;
    let mut b = Builder {
        text: fragment,
        out: ClauseSegments::default(),
    };
    match rule {
        G::SelectStmt => select_stmt(&us, &mut b).ok_or_else(|| unknown(fragment))?,
        G::SelectClause => select_clause(&us, &mut b).ok_or_else(|| unknown(fragment))?,
        G::Projection => projection(&us, &mut b).ok_or_else(|| unknown(fragment))?,
        G::FromClause => b.field("table_references", &us),
        G::TableReference => table_reference(&us, &mut b).ok_or_else(|| unknown(fragment))?,
        G::JoinedTable => joined_table(&us, &mut b).ok_or_else(|| unknown(fragment))?,
        G::JoinCondition | G::WhereClause | G::HavingClause => b.field("condition", &us),
        G::GroupByClause => {
            let cut = us
                .iter()
                .position(|u| u.is("WITH"))
                .filter(|&i| {
                    us.get(i + 1)
                        .is_some_and(|n| n.is("ROLLUP") || n.is("CUBE"))
                })
                .unwrap_or(us.len());
            b.field("expressions", &us[..cut]);
            b.other(&us[cut..]);
        }
        G::OrderByClause => b.field("items", &us),
        G::OrderItem => order_item(&us, &mut b),
        G::SetOperation => {
            let op_len = if us.get(1).is_some_and(|u| u.is("ALL") || u.is("DISTINCT")) {
                2
            } else {
                1
            };
            if us.len() <= op_len {
                return Err(unknown(fragment));
            }
            b.field("operator", &us[..op_len]);
            b.field("query", &us[op_len..]);
        }
        _ => return Err(unknown(fragment)),
    }
    if b.out.fields.is_empty() {
        return Err(unknown(fragment));
    }
    Ok(b.out)
}

fn select_stmt(us: &[Unit<'_>], b: &mut Builder<'_>) -> Option<()> {
    if !us.first()?.is("SELECT") {
        return None;
    }
    // (unit index, field name or None for `other`)
    let mut starts: Vec<(usize, Option<&str>)> = Vec::new();
    let mut i = 0;
    while i < us.len() {
        let u = &us[i];
        let next = |k: usize| us.get(i + k);
        let label = if i == 0 {
            Some(Some("select"))
        } else if u.is("FROM") {
            Some(Some("from_"))
        } else if u.is("WHERE") {
            Some(Some("where"))
        } else if u.is("GROUP") && next(1).is_some_and(|n| n.is("ALL")) {
            Some(None)
        } else if u.is("GROUP") && next(1).is_some_and(|n| n.is("BY")) {
            if next(2).is_some_and(|n| n.is("ALL")) {
                Some(None)
            } else {
                Some(Some("group_by"))
            }
        } else if u.is("HAVING") {
            Some(Some("having"))
        } else if u.is("ORDER") && next(1).is_some_and(|n| n.is("BY")) {
            Some(Some("order_by"))
        } else if u.is("UNION") || u.is("INTERSECT") || u.is("EXCEPT") {
            starts.push((i, Some("set_operation")));
            break;
        } else if u.is("LIMIT")
            || u.is("OFFSET")
            || (u.is("FETCH") && next(1).is_some_and(|n| n.is("FIRST") || n.is("NEXT")))
            || (u.is("OPTION") && next(1).is_some_and(|n| n.kind == UnitKind::Group))
            || u.text == ";"
        {
            Some(None)
        } else {
            None
        };
        if let Some(label) = label {
            starts.push((i, label));
        }
        i += 1;
    }
    for (k, (at, label)) in starts.iter().enumerate() {
        let end = starts.get(k + 1).map_or(us.len(), |(e, _)| *e);
        match label {
            Some(name) => b.field(name, &us[*at..end]),
            None => b.other(&us[*at..end]),
        }
    }
    Some(())
}

fn select_clause(us: &[Unit<'_>], b: &mut Builder<'_>) -> Option<()> {
    let mut i = 0;
    let mut spec = None;
    if us.first()?.is("DISTINCT") || us[0].is("ALL") {
        spec = Some(0..1);
        i = 1;
    }
    let mut top = None;
    if us.get(i).is_some_and(|u| u.is("TOP")) {
        let start = i;
        i += 2;
        if us.get(i).is_some_and(|u| u.is("PERCENT")) {
            i += 1;
        }
        if us.get(i).is_some_and(|u| u.is("WITH")) && us.get(i + 1).is_some_and(|u| u.is("TIES")) {
            i += 2;
        }
        if i > us.len() {
            return None;
        }
        top = Some(start..i);
    }
    if i >= us.len() {
        return None;
    }
    match (spec, top) {
        (Some(s), Some(t)) => {
            b.field("select_spec", &us[s]);
            b.other(&us[t]);
        }
        (Some(s), None) | (None, Some(s)) => b.field("select_spec", &us[s]),
        (None, None) => {}
    }
    b.field("projections", &us[i..]);
    Some(())
}

fn projection(us: &[Unit<'_>], b: &mut Builder<'_>) -> Option<()> {
    let n = us.len();
    let alias_at = if n >= 3
        && us[n - 2].is("AS")
        && (us[n - 1].is_name() || us[n - 1].kind == UnitKind::Literal)
    {
        Some(n - 2)
    } else if n >= 2
        && us[n - 1].is_name()
        && !us[n - 1].text.contains('(')
        && us[n - 2].is_operand()
        && !us[n - 2].is("AS")
    {
        Some(n - 1)
    } else {
        None
    };
    let cut = alias_at.unwrap_or(n);
    if cut == 0 {
        return None;
    }
    b.field("value", &us[..cut]);
    b.field("alias", &us[cut..]);
    Some(())
}

fn table_reference(us: &[Unit<'_>], b: &mut Builder<'_>) -> Option<()> {
    let first = us.first()?;
    match first.kind {
        UnitKind::Group => b.field("subquery", &us[..1]),
        UnitKind::Word | UnitKind::Name => b.field("table", &us[..1]),
        _ => return None,
    }
    let mut i = 1;
    if us.get(i).is_some_and(|u| u.is("AS")) && us.get(i + 1).is_some_and(Unit::is_name) {
        b.field("alias", &us[i..i + 2]);
        i += 2;
    } else if us.get(i).is_some_and(|u| u.is_name()) {
        b.field("alias", &us[i..i + 1]);
        i += 1;
    }
    b.other(&us[i..]);
    Some(())
}

fn joined_table(us: &[Unit<'_>], b: &mut Builder<'_>) -> Option<()> {
    let j = us.iter().rposition(|u| u.is("JOIN") || u.is("APPLY"))?;
    let mut start = j;
    while start > 0 && JOIN_MODIFIERS.iter().any(|m| us[start - 1].is(m)) {
        start -= 1;
    }
    if start == 0 {
        return None;
    }
    let on = (j + 1..us.len()).find(|&k| us[k].is("ON"));
    let right_end = on.unwrap_or(us.len());
    if right_end == j + 1 {
        return None;
    }
    b.field("left", &us[..start]);
    b.field("join_type", &us[start..=j]);
    b.field("right", &us[j + 1..right_end]);
    if let Some(on) = on {
        b.field("condition", &us[on..]);
    }
    Some(())
}

fn order_item(us: &[Unit<'_>], b: &mut Builder<'_>) {
    let mut end = us.len();
    let mut nulls = None;
    if end >= 2 && us[end - 2].is("NULLS") && (us[end - 1].is("FIRST") || us[end - 1].is("LAST")) {
        nulls = Some(end - 2..end);
        end -= 2;
    }
    let mut dir = None;
    if end >= 2 && (us[end - 1].is("ASC") || us[end - 1].is("DESC")) {
        dir = Some(end - 1..end);
        end -= 1;
    }
    b.field("expression", &us[..end]);
    if let Some(d) = dir {
        b.field("direction", &us[d]);
    }
    if let Some(n) = nulls {
        b.other(&us[n]);
    }
}

fn binary_prec(text: &str) -> Option<u8> {
    BINARY_OPS
        .iter()
        .find(|(op, _)| op.eq_ignore_ascii_case(text))
        .map(|(_, p)| *p)
}

fn segment_expression(fragment: &str) -> Result<SegmenterResponse, BackendError> {
    let us = units(fragment).ok_or_else(|| unknown(fragment))?;
    if us.len() == 1 {
        return Ok(SegmenterResponse::Expression(ExprSegments::literal(
            fragment,
        )));
    }
    // (first unit, last unit, precedence, prefix)
    let mut best: Option<(usize, usize, u8, bool)> = None;
    let mut skip_and = 0;
    let mut i = 0;
    while i < us.len() {
        let u = &us[i];
        if u.is("BETWEEN") {
            skip_and += 1;
            i += 1;
            continue;
        }
        if u.is("AND") && skip_and > 0 {
            skip_and -= 1;
            i += 1;
            continue;
        }
        let phrase = us.get(i + 1).and_then(|n| {
            let words = format!("{} {}", u.text, n.text);
            let known =
                (u.is("IS") && n.is("NOT")) || (u.is("NOT") && (n.is("IN") || n.is("LIKE")));
            known.then_some(words)
        });
        let (last, text) = match &phrase {
            Some(p) => (i + 1, p.as_str()),
            None => (i, u.text),
        };
        let is_op_unit =
            u.kind == UnitKind::Op || (u.kind == UnitKind::Keyword && is_operator_word(u.text));
        if is_op_unit {
            let candidate = if i == 0 {
                PREFIX_OPS
                    .iter()
                    .find(|(op, _)| op.eq_ignore_ascii_case(text))
                    .map(|(_, p)| (i, last, *p, true))
            } else if last + 1 < us.len() && us[i - 1].is_operand() {
                binary_prec(text).map(|p| (i, last, p, false))
            } else {
                None
            };
            match candidate {
                Some(c) if best.is_none_or(|b| c.2 < b.2) => best = Some(c),
                Some(_) => {}
                None if u.kind == UnitKind::Op && i > 0 && us[i - 1].is_operand() => {
                    // an operator symbol the table does not know
                    return Err(unknown(fragment));
                }
                None => {}
            }
        }
        i = last + 1;
    }
    let Some((first, last, _, prefix)) = best else {
        let typed =
            us.len() == 2 && us[0].kind == UnitKind::Keyword && us[1].kind == UnitKind::Literal;
        return if typed {
            Ok(SegmenterResponse::Expression(ExprSegments::literal(
                fragment,
            )))
        } else {
            Err(unknown(fragment))
        };
    };
    let op = &fragment[us[first].start..us[last].end];
    let right = fragment[us[last].end..].trim();
    if prefix {
        return Ok(SegmenterResponse::Expression(ExprSegments::operation(
            op,
            &[right],
        )));
    }
    let left = fragment[..us[first].start].trim();
    Ok(SegmenterResponse::Expression(ExprSegments::operation(
        op,
        &[left, right],
    )))
}
