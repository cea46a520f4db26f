//! Segment validation and the bounded repair loop.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    schema, BackendError, ClauseSegments, ExprSegments, Segmenter, SegmenterRequest,
    SegmenterResponse,
};
use crate::grammar::{GrammarRuleId, OTHER_FIELD};
use crate::lexer::tokenize;

pub const DEFAULT_MAX_REPAIRS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Token,
    Order,
    Exclusivity,
    /// The backend answer could not be decoded into the requested shape.
    Schema,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Token => "token",
            FailureKind::Order => "order",
            FailureKind::Exclusivity => "exclusivity",
            FailureKind::Schema => "schema",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind} check failed: {detail}")]
pub struct ValidationFailure {
    pub kind: FailureKind,
    pub detail: String,
    pub input_fragment: String,
    pub offending_output: String,
}

impl ValidationFailure {
    fn new(kind: FailureKind, detail: String, input: &str, output: String) -> Self {
        ValidationFailure {
            kind,
            detail,
            input_fragment: input.to_string(),
            offending_output: output,
        }
    }
}

fn char_counts<'a>(texts: impl IntoIterator<Item = &'a str>) -> BTreeMap<char, usize> {
    let mut counts = BTreeMap::new();
    for t in texts {
        for c in t.chars().filter(|c| !c.is_whitespace()) {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
}

fn describe_chars(counts: &BTreeMap<char, usize>) -> String {
    counts
        .iter()
        .map(|(c, n)| {
            if *n == 1 {
                format!("'{c}'")
            } else {
                format!("'{c}' x{n}")
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn joined(segments: &[&str]) -> String {
    segments
        .iter()
        .map(|s| format!("\"{s}\""))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Non-whitespace characters of the segments must equal those of the input
/// as a multiset.
pub fn validate_tokens(input: &str, segments: &[&str]) -> Result<(), ValidationFailure> {
    let want = char_counts([input]);
    let got = char_counts(segments.iter().copied());
    if want == got {
        return Ok(());
    }
    let mut missing = BTreeMap::new();
    let mut extra = BTreeMap::new();
    for (c, n) in &want {
        let m = got.get(c).copied().unwrap_or(0);
        if m < *n {
            missing.insert(*c, n - m);
        }
    }
    for (c, n) in &got {
        let m = want.get(c).copied().unwrap_or(0);
        if m < *n {
            extra.insert(*c, n - m);
        }
    }
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing characters {}", describe_chars(&missing)));
    }
    if !extra.is_empty() {
        parts.push(format!("extraneous characters {}", describe_chars(&extra)));
    }
    Err(ValidationFailure::new(
        FailureKind::Token,
        format!(
            "segments do not cover the input exactly: {}",
            parts.join("; ")
        ),
        input,
        joined(segments),
    ))
}

/// Semantic role of an expression segment for order checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    LeftOperand,
    Operator,
    RightOperand,
    /// Placed anywhere.
    Free,
}

impl Role {
    fn rank(self) -> Option<usize> {
        match self {
            Role::LeftOperand => Some(0),
            Role::Operator => Some(1),
            Role::RightOperand => Some(2),
            Role::Free => None,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Role::LeftOperand => "left operand",
            Role::Operator => "operator",
            Role::RightOperand => "right operand",
            Role::Free => "segment",
        }
    }
}

/// Comparison units: lexer tokens when everything lexes, otherwise single
/// non-whitespace characters.
fn units(input: &str, segments: &[&str]) -> (Vec<(String, usize)>, Vec<Vec<String>>) {
    let lexed = tokenize(input, true).ok().and_then(|toks| {
        let segs: Option<Vec<Vec<String>>> = segments
            .iter()
            .map(|s| {
                tokenize(s, true)
                    .ok()
                    .map(|t| t.iter().map(|t| t.text.to_string()).collect())
            })
            .collect();
        segs.map(|segs| {
            (
                toks.iter()
                    .map(|t| (t.text.to_string(), t.span.start))
                    .collect::<Vec<_>>(),
                segs,
            )
        })
    });
    lexed.unwrap_or_else(|| {
        let chars = |s: &str| -> Vec<(String, usize)> {
            s.char_indices()
                .filter(|(_, c)| !c.is_whitespace())
                .map(|(i, c)| (c.to_string(), i))
                .collect()
        };
        (
            chars(input),
            segments
                .iter()
                .map(|s| chars(s).into_iter().map(|(u, _)| u).collect())
                .collect(),
        )
    })
}

struct Placer<'a> {
    input: &'a [(String, usize)],
    segs: &'a [Vec<String>],
    ranks: &'a [Option<usize>],
    occurrences: Vec<Vec<usize>>,
    used: Vec<bool>,
    chosen: Vec<usize>,
    budget: usize,
}

impl Placer<'_> {
    fn dfs(&mut self, i: usize) -> bool {
        if i == self.segs.len() {
            return true;
        }
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        let len = self.segs[i].len();
        for k in 0..self.occurrences[i].len() {
            let at = self.occurrences[i][k];
            if self.used[at..at + len].iter().any(|u| *u) {
                continue;
            }
            let consistent = (0..i).all(|j| match (self.ranks[j], self.ranks[i]) {
                (Some(rj), Some(ri)) if rj < ri => self.chosen[j] < at,
                (Some(rj), Some(ri)) if rj > ri => self.chosen[j] > at,
                _ => true,
            });
            if !consistent {
                continue;
            }
            self.used[at..at + len].iter_mut().for_each(|u| *u = true);
            self.chosen[i] = at;
            if self.dfs(i + 1) {
                return true;
            }
            self.used[at..at + len].iter_mut().for_each(|u| *u = false);
        }
        false
    }
}

enum PlaceError {
    NotContiguous(usize),
    Misordered(usize),
}

/// Finds disjoint contiguous occurrences of every segment so that ranked
/// segments appear in rank order. Returns byte offsets of segment starts.
fn place(
    input: &str,
    segments: &[&str],
    ranks: &[Option<usize>],
) -> Result<Vec<usize>, PlaceError> {
    let (input_units, seg_units) = units(input, segments);
    let occurrences: Vec<Vec<usize>> = seg_units
        .iter()
        .map(|seg| {
            if seg.is_empty() || seg.len() > input_units.len() {
                return Vec::new();
            }
            (0..=input_units.len() - seg.len())
                .filter(|&at| seg.iter().zip(&input_units[at..]).all(|(a, (b, _))| a == b))
                .collect()
        })
        .collect();
    if let Some(i) = occurrences.iter().position(Vec::is_empty) {
        return Err(PlaceError::NotContiguous(i));
    }
    let mut placer = Placer {
        input: &input_units,
        segs: &seg_units,
        ranks,
        occurrences,
        used: vec![false; input_units.len()],
        chosen: vec![0; segments.len()],
        budget: 200_000,
    };
    if placer.dfs(0) {
        return Ok(placer.chosen.iter().map(|&at| placer.input[at].1).collect());
    }
    // Report the shortest prefix that cannot be placed.
    for k in 1..=segments.len() {
        let mut prefix = Placer {
            input: &input_units,
            segs: &seg_units[..k],
            ranks: &ranks[..k],
            occurrences: placer.occurrences[..k].to_vec(),
            used: vec![false; input_units.len()],
            chosen: vec![0; k],
            budget: 200_000,
        };
        if !prefix.dfs(0) {
            return Err(PlaceError::Misordered(k - 1));
        }
    }
    Err(PlaceError::Misordered(segments.len() - 1))
}

/// Each segment must be a contiguous run of the input's tokens, segments may
/// not overlap, and their starts must follow the declared order (or, when
/// `roles` is given, left operand before operator before right operand).
/// Returns the byte offset at which each segment starts.
pub fn validate_order(
    input: &str,
    segments: &[&str],
    roles: Option<&[Role]>,
) -> Result<Vec<usize>, ValidationFailure> {
    let ranks: Vec<Option<usize>> = match roles {
        Some(roles) => roles.iter().map(|r| r.rank()).collect(),
        None => (0..segments.len()).map(Some).collect(),
    };
    place(input, segments, &ranks).map_err(|e| {
        let detail = match e {
            PlaceError::NotContiguous(i) => format!(
                "segment \"{}\" does not appear contiguously and in this order in the input",
                segments[i]
            ),
            PlaceError::Misordered(i) => match roles {
                Some(roles) if roles[i] != Role::Free => format!(
                    "role order violated at the {} \"{}\": the left operand must precede the operator, which must precede the right operand",
                    roles[i].label(),
                    segments[i]
                ),
                _ => format!(
                    "segment \"{}\" is out of place: segments must be disjoint and follow the input order",
                    segments[i]
                ),
            },
        };
        ValidationFailure::new(FailureKind::Order, detail, input, joined(segments))
    })
}

/// Exactly one of the mutually exclusive forms must be populated.
pub fn validate_exclusive(response: &SegmenterResponse) -> Result<(), ValidationFailure> {
    let output = response_text(response);
    let fail = |detail: String| {
        Err(ValidationFailure::new(
            FailureKind::Exclusivity,
            detail,
            "",
            output.clone(),
        ))
    };
    match response {
        SegmenterResponse::Expression(e) => {
            let literal = e.literal.is_some();
            let operation = e.operator.is_some() || !e.operands.is_empty();
            match (literal, operation) {
                (true, true) => fail(
                    "both a literal and an operation were returned; return exactly one of them"
                        .into(),
                ),
                (false, false) => fail("neither a literal nor an operation was returned".into()),
                _ => Ok(()),
            }
        }
        SegmenterResponse::Classify { choices } => {
            let picked: Vec<&str> = choices
                .iter()
                .filter(|(_, b)| *b)
                .map(|(n, _)| n.as_str())
                .collect();
            match picked.len() {
                1 => Ok(()),
                0 => fail("no alternative was selected; select exactly one".into()),
                _ => fail(format!(
                    "alternatives {} were all selected; select exactly one",
                    picked.join(", ")
                )),
            }
        }
        SegmenterResponse::Clause(_) => Ok(()),
    }
}

fn response_text(response: &SegmenterResponse) -> String {
    serde_json::to_string(response).unwrap_or_default()
}

/// Which part of a response a segment came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentKey {
    Field(String),
    Other(usize),
    Literal,
    Operator,
    Operand(usize),
}

/// Start offsets of the accepted segments within the request fragment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub starts: Vec<(SegmentKey, usize)>,
}

impl Layout {
    pub fn start(&self, key: &SegmentKey) -> Option<usize> {
        self.starts.iter().find(|(k, _)| k == key).map(|(_, s)| *s)
    }

    fn declared(keys: Vec<SegmentKey>) -> Self {
        Layout {
            starts: keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect(),
        }
    }
}

fn with_context(mut failure: ValidationFailure, input: &str, output: &str) -> ValidationFailure {
    failure.input_fragment = input.to_string();
    failure.offending_output = output.to_string();
    failure
}

fn starts_with_lead(segment: &str, leads: &[&str]) -> bool {
    let trimmed = segment.trim_start().trim_start_matches('(').trim_start();
    let word: String = trimmed
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    leads.iter().any(|l| l.eq_ignore_ascii_case(&word))
}

fn clause_segments(c: &ClauseSegments) -> (Vec<SegmentKey>, Vec<&str>) {
    let mut keys = Vec::new();
    let mut texts = Vec::new();
    for (name, text) in &c.fields {
        keys.push(SegmentKey::Field(name.clone()));
        texts.push(text.as_str());
    }
    for (i, text) in c.other.iter().enumerate() {
        keys.push(SegmentKey::Other(i));
        texts.push(text.as_str());
    }
    (keys, texts)
}

fn check_clause(
    request: &SegmenterRequest,
    c: &ClauseSegments,
) -> Result<Layout, ValidationFailure> {
    let input = request.fragment.as_str();
    let (keys, texts) = clause_segments(c);
    validate_tokens(input, &texts)?;
    let field_rules: BTreeMap<&str, GrammarRuleId> = request
        .rule
        .and_then(|r| r.def().clause())
        .map(|def| def.fields.iter().map(|f| (f.name, f.rule)).collect())
        .unwrap_or_default();
    for (name, text) in &c.fields {
        let leads = field_rules
            .get(name.as_str())
            .and_then(|r| r.def().clause())
            .map(|d| d.leads)
            .unwrap_or(&[]);
        if !leads.is_empty() && !starts_with_lead(text, leads) {
            return Err(ValidationFailure::new(
                FailureKind::Order,
                format!(
                    "segment \"{text}\" returned as `{name}` must start with {}",
                    leads.join(" or ")
                ),
                input,
                joined(&texts),
            ));
        }
    }
    let order: BTreeMap<&str, usize> = request
        .schema
        .fields
        .iter()
        .enumerate()
        .filter(|(_, f)| f.name != OTHER_FIELD)
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let roles: Vec<Option<usize>> = keys
        .iter()
        .map(|k| match k {
            SegmentKey::Field(name) => order.get(name.as_str()).copied(),
            _ => None,
        })
        .collect();
    let starts = place(input, &texts, &roles).map_err(|e| {
        let i = match e {
            PlaceError::NotContiguous(i) | PlaceError::Misordered(i) => i,
        };
        let what = match &keys[i] {
            SegmentKey::Field(name) => format!("`{name}`"),
            _ => format!("`{OTHER_FIELD}`"),
        };
        let detail = match e {
            PlaceError::NotContiguous(_) => format!(
                "segment {what} \"{}\" is not a contiguous part of the input",
                texts[i]
            ),
            PlaceError::Misordered(_) => format!(
                "segment {what} \"{}\" overlaps another segment or is out of order",
                texts[i]
            ),
        };
        ValidationFailure::new(FailureKind::Order, detail, input, joined(&texts))
    })?;
    Ok(Layout {
        starts: keys.into_iter().zip(starts).collect(),
    })
}

fn check_expression(input: &str, e: &ExprSegments) -> Result<Layout, ValidationFailure> {
    if let Some(lit) = &e.literal {
        validate_tokens(input, &[lit])?;
        let starts = validate_order(input, &[lit], None)?;
        return Ok(Layout {
            starts: vec![(SegmentKey::Literal, starts[0])],
        });
    }
    let op = e.operator.as_deref().ok_or_else(|| {
        ValidationFailure::new(
            FailureKind::Order,
            "operands were returned without their operator".into(),
            input,
            joined(&e.operands.iter().map(String::as_str).collect::<Vec<_>>()),
        )
    })?;
    let operands: Vec<&str> = e.operands.iter().map(String::as_str).collect();
    let mut texts = operands.clone();
    texts.push(op);
    validate_tokens(input, &texts)?;
    match operands.as_slice() {
        [left, right] => {
            let starts = validate_order(
                input,
                &[left, op, right],
                Some(&[Role::LeftOperand, Role::Operator, Role::RightOperand]),
            )?;
            Ok(Layout {
                starts: vec![
                    (SegmentKey::Operand(0), starts[0]),
                    (SegmentKey::Operator, starts[1]),
                    (SegmentKey::Operand(1), starts[2]),
                ],
            })
        }
        [only] => {
            let starts = validate_order(input, &[op, only], Some(&[Role::Free, Role::Free]))?;
            Ok(Layout {
                starts: vec![
                    (SegmentKey::Operator, starts[0]),
                    (SegmentKey::Operand(0), starts[1]),
                ],
            })
        }
        [] => Err(ValidationFailure::new(
            FailureKind::Order,
            format!("operator \"{op}\" was returned without operands"),
            input,
            op.to_string(),
        )),
        _ => Err(ValidationFailure::new(
            FailureKind::Order,
            format!(
                "operator \"{op}\" was returned with {} operands; split the fragment at a single top-level operator with at most two operands",
                operands.len()
            ),
            input,
            joined(&texts),
        )),
    }
}

/// Runs every check applicable to `response`.
pub fn check_response(
    request: &SegmenterRequest,
    response: &SegmenterResponse,
) -> Result<Layout, ValidationFailure> {
    let input = request.fragment.as_str();
    let output = response_text(response);
    if response.form() != request.form() {
        return Err(ValidationFailure::new(
            FailureKind::Schema,
            format!(
                "expected a {:?} response, got {:?}",
                request.form(),
                response.form()
            ),
            input,
            output.clone(),
        ));
    }
    validate_exclusive(response).map_err(|f| with_context(f, input, &output))?;
    match response {
        SegmenterResponse::Clause(c) => check_clause(request, c),
        SegmenterResponse::Classify { choices } => {
            let names: Vec<&str> = request
                .schema
                .fields
                .iter()
                .map(|f| f.name.as_str())
                .collect();
            match choices.iter().find(|(n, _)| !names.contains(&n.as_str())) {
                Some((n, _)) => Err(ValidationFailure::new(
                    FailureKind::Schema,
                    format!("unknown alternative `{n}`"),
                    input,
                    output.clone(),
                )),
                None => Ok(Layout::default()),
            }
        }
        SegmenterResponse::Expression(e) => check_expression(input, e),
    }
    .map_err(|f| with_context(f, input, &output))
}

/// Best-effort layout for responses accepted without validation.
fn lenient_layout(request: &SegmenterRequest, response: &SegmenterResponse) -> Layout {
    if let Ok(layout) = check_response(request, response) {
        return layout;
    }
    let input = request.fragment.as_str();
    let find = |s: &str| input.find(s);
    match response {
        SegmenterResponse::Clause(c) => {
            let (keys, texts) = clause_segments(c);
            let mut layout = Layout::declared(keys);
            for ((_, start), text) in layout.starts.iter_mut().zip(texts) {
                *start = find(text).unwrap_or(input.len() + *start);
            }
            layout
        }
        SegmenterResponse::Expression(e) => {
            let mut keys = Vec::new();
            if e.operands.len() == 1 {
                keys.push(SegmentKey::Operator);
                keys.push(SegmentKey::Operand(0));
            } else {
                keys.push(SegmentKey::Literal);
                keys.extend((0..e.operands.len()).map(SegmentKey::Operand));
                keys.insert(2.min(keys.len()), SegmentKey::Operator);
            }
            Layout::declared(keys)
        }
        SegmenterResponse::Classify { .. } => Layout::default(),
    }
}

/// Shapes an unvalidated response into something the engine can attach.
fn coerce(response: SegmenterResponse) -> Option<SegmenterResponse> {
    match response {
        SegmenterResponse::Expression(e) => {
            if let Some(lit) = e.literal {
                Some(SegmenterResponse::Expression(ExprSegments::literal(&lit)))
            } else if e.operator.is_some() && matches!(e.operands.len(), 1 | 2) {
                Some(SegmenterResponse::Expression(e))
            } else {
                None
            }
        }
        SegmenterResponse::Classify { choices } => {
            let first = choices.iter().position(|(_, b)| *b)?;
            Some(SegmenterResponse::Classify {
                choices: choices
                    .into_iter()
                    .enumerate()
                    .map(|(i, (n, _))| (n, i == first))
                    .collect(),
            })
        }
        clause => Some(clause),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accepted {
    pub response: SegmenterResponse,
    pub layout: Layout,
    pub calls: usize,
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    /// Every attempt failed validation; the fragment stays unsegmented.
    #[error("repairs exhausted after {calls} backend calls: {last_failure}")]
    Unsegmented {
        calls: usize,
        last_failure: ValidationFailure,
    },
    #[error(transparent)]
    Backend(BackendError),
}

impl RepairError {
    pub fn calls(&self) -> usize {
        match self {
            RepairError::Unsegmented { calls, .. } => *calls,
            RepairError::Backend(_) => 0,
        }
    }
}

/// Asks `backend` for a segmentation of `request.fragment`, re-prompting with
/// the failure report up to `max_repairs` times.
pub fn validate_and_repair(
    request: &SegmenterRequest,
    backend: &dyn Segmenter,
    max_repairs: usize,
    validation_enabled: bool,
) -> Result<Accepted, RepairError> {
    let mut calls = 0;
    let mut current = request.clone();
    loop {
        calls += 1;
        let failure = match backend.segment(&current) {
            Err(e) if e.is_transport() => return Err(RepairError::Backend(e)),
            Err(e) => ValidationFailure::new(
                FailureKind::Schema,
                e.to_string(),
                &request.fragment,
                String::new(),
            ),
            Ok(response) if !validation_enabled => match coerce(response.clone()) {
                Some(coerced) if coerced.form() == request.form() => {
                    return Ok(Accepted {
                        layout: lenient_layout(request, &coerced),
                        response: coerced,
                        calls,
                        repairs: calls - 1,
                    })
                }
                _ => ValidationFailure::new(
                    FailureKind::Exclusivity,
                    "response has no usable form".into(),
                    &request.fragment,
                    response_text(&response),
                ),
            },
            Ok(response) => match check_response(request, &response) {
                Ok(layout) => {
                    return Ok(Accepted {
                        response,
                        layout,
                        calls,
                        repairs: calls - 1,
                    })
                }
                Err(f) => f,
            },
        };
        if calls > max_repairs {
            return Err(RepairError::Unsegmented {
                calls,
                last_failure: failure,
            });
        }
        current = request.repair(failure);
    }
}

/// Encodes a response in the wire format of its request schema.
pub fn wire_output(request: &SegmenterRequest, response: &SegmenterResponse) -> String {
    schema::encode(&request.schema, response).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const WALKTHROUGH: &str =
        "SELECT TOP 10 * FROM Sales WHERE (tot / 2) !< 8 AND year < 2025 OPTION (FAST 10)";

    #[test]
    fn token_check_examples() {
        let err = validate_tokens(
            WALKTHROUGH,
            &[
                "SELECT TOP 10 *",
                "FROM Sales",
                "WHERE (tot / 2) !< 8 AND year < 2025",
            ],
        )
        .unwrap_err();
        assert_eq!(err.kind, FailureKind::Token);
        assert!(err.detail.contains("missing characters"), "{}", err.detail);
        assert!(!err.detail.contains("extraneous"));
        assert!(validate_tokens("a AND b", &["a", "AND", "b"]).is_ok());
        let err = validate_tokens("a AND b", &["a", "AND", "b", "b"]).unwrap_err();
        assert!(
            err.detail.contains("extraneous characters 'b'"),
            "{}",
            err.detail
        );
        assert!(validate_tokens("a<b", &["a", " < ", "b"]).is_ok());
        assert!(validate_tokens("Ab", &["ab"]).is_err());
    }

    #[test]
    fn order_check_examples() {
        let err = validate_order("OPTION (FAST 10)", &["OPTION", "(10 FAST)"], None).unwrap_err();
        assert_eq!(err.kind, FailureKind::Order);
        assert!(err.detail.contains("(10 FAST)"));
        let roles = [Role::LeftOperand, Role::Operator, Role::RightOperand];
        let err = validate_order("a < b", &["b", "<", "a"], Some(&roles)).unwrap_err();
        assert_eq!(err.kind, FailureKind::Order);
        assert!(err.detail.contains("left operand"), "{}", err.detail);
        assert_eq!(
            validate_order("a < b", &["a", "<", "b"], Some(&roles)).unwrap(),
            vec![0, 2, 4]
        );
        assert_eq!(
            validate_order("a<b", &["a", "<", "b"], None).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn order_check_handles_repeated_text() {
        let roles = [Role::LeftOperand, Role::Operator, Role::RightOperand];
        assert_eq!(
            validate_order("a = a", &["a", "=", "a"], Some(&roles)).unwrap(),
            vec![0, 2, 4]
        );
        assert!(validate_order("a b", &["a b", "b"], None).is_err());
        assert!(validate_order("x", &["y"], None).is_err());
    }

    #[test]
    fn exclusivity_examples() {
        let lit = SegmenterResponse::Expression(ExprSegments::literal("year"));
        assert!(validate_exclusive(&lit).is_ok());
        let both = SegmenterResponse::Expression(ExprSegments {
            literal: Some("x".into()),
            operator: Some("<".into()),
            operands: vec!["x".into(), "1".into()],
        });
        assert_eq!(
            validate_exclusive(&both).unwrap_err().kind,
            FailureKind::Exclusivity
        );
        let none = SegmenterResponse::Expression(ExprSegments::default());
        assert_eq!(
            validate_exclusive(&none).unwrap_err().kind,
            FailureKind::Exclusivity
        );
        let two = SegmenterResponse::Classify {
            choices: vec![("column".into(), true), ("expr".into(), true)],
        };
        assert_eq!(
            validate_exclusive(&two).unwrap_err().kind,
            FailureKind::Exclusivity
        );
    }

    #[test]
    fn clause_checks_enforce_field_order_and_leads() {
        let req =
            SegmenterRequest::clause(GrammarRuleId::SelectStmt, WALKTHROUGH, WALKTHROUGH, "tsql");
        let good = SegmenterResponse::Clause(ClauseSegments {
            fields: vec![
                ("select".into(), "SELECT TOP 10 *".into()),
                ("from_".into(), "FROM Sales".into()),
                (
                    "where".into(),
                    "WHERE (tot / 2) !< 8 AND year < 2025".into(),
                ),
            ],
            other: vec!["OPTION (FAST 10)".into()],
        });
        let layout = check_response(&req, &good).unwrap();
        assert_eq!(
            layout.start(&SegmentKey::Other(0)),
            Some(WALKTHROUGH.find("OPTION").unwrap())
        );
        let swapped = SegmenterResponse::Clause(ClauseSegments {
            fields: vec![
                ("select".into(), "SELECT TOP 10 *".into()),
                (
                    "from_".into(),
                    "WHERE (tot / 2) !< 8 AND year < 2025".into(),
                ),
                ("where".into(), "FROM Sales".into()),
            ],
            other: vec!["OPTION (FAST 10)".into()],
        });
        assert_eq!(
            check_response(&req, &swapped).unwrap_err().kind,
            FailureKind::Order
        );
    }
}
