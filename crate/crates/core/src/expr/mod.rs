//! Parenthesis and anchor masking for expression segmentation.

pub mod anchors;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{tokenize, LexError, Token, TokenKind};

pub use anchors::{AnchorEntry, AnchorTable, AnchorTableError, Assoc};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error(transparent)]
    Lex(#[from] LexError),
}

/// Ordered `token id -> replaced text` pairs, e.g. `P0 -> "(tot / 2)"`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionMap {
    pub entries: Vec<(String, String)>,
}

pub type ParenMap = AbstractionMap;
pub type MaskMap = AbstractionMap;

impl AbstractionMap {
    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, id: String, text: &str) -> String {
        let token = format!("<{id}>");
        self.entries.push((id, text.to_string()));
        token
    }

    /// Replaces every token of this map in `text` by its mapped text.
    pub fn substitute(&self, text: &str) -> String {
        let Ok(tokens) = tokenize(text, true) else {
            return text.to_string();
        };
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for tok in &tokens {
            if matches!(tok.kind, TokenKind::ParenToken | TokenKind::MaskToken) {
                if let Some(original) = self.get(&tok.text[1..tok.text.len() - 1]) {
                    out.push_str(&text[last..tok.span.start]);
                    out.push_str(original);
                    last = tok.span.end;
                }
            }
        }
        out.push_str(&text[last..]);
        out
    }
}

/// Replaces each depth-1 parenthesized group with `<P{n}>`, numbering from
/// `base`. Parentheses inside literals and quoted identifiers are ignored.
pub fn process_paren(expr: &str, base: usize) -> Result<(String, ParenMap), MaskError> {
    let tokens = tokenize(expr, true)?;
    let mut map = ParenMap::default();
    let mut out = String::with_capacity(expr.len());
    let mut last = 0;
    let mut depth = 0usize;
    let mut open = 0;
    for tok in &tokens {
        if tok.is_punct("(") {
            if depth == 0 {
                open = tok.span.start;
            }
            depth += 1;
        } else if tok.is_punct(")") {
            if depth == 0 {
                return Err(MaskError::UnbalancedParens(tok.span.start));
            }
            depth -= 1;
            if depth == 0 {
                out.push_str(&expr[last..open]);
                let id = format!("P{}", base + map.len());
                out.push_str(&map.push(id, &expr[open..tok.span.end]));
                last = tok.span.end;
            }
        }
    }
    if depth > 0 {
        return Err(MaskError::UnbalancedParens(open));
    }
    out.push_str(&expr[last..]);
    Ok((out, map))
}

fn separated(text: &str, toks: &[Token<'_>], first: usize, last: usize) -> bool {
    let start = toks[first].span.start;
    let end = toks[last].span.end;
    let before = text[..start]
        .chars()
        .next_back()
        .is_none_or(char::is_whitespace);
    let after = text[end..].chars().next().is_none_or(char::is_whitespace);
    before && after
}

/// Options for [`process_anchor`].
#[derive(Debug, Clone, Copy, Default)]
pub struct AnchorContext<'a> {
    /// Name of the function whose argument list is being masked, if any.
    pub function: Option<&'a str>,
}

/// Replaces every maximal run between anchors with `<M{n}>`, numbering from
/// `base`. Anchors only match when surrounded by whitespace. Text between
/// pieces is copied verbatim, so substituting the map back gives `expr`.
pub fn process_anchor(
    expr: &str,
    anchors: &AnchorTable,
    base: usize,
    ctx: AnchorContext<'_>,
) -> Result<(String, MaskMap), MaskError> {
    let toks = tokenize(expr, true)?;
    // (first token, last token) of every anchor occurrence
    let mut found: Vec<(usize, usize)> = Vec::new();
    let mut structural = 0usize;
    let mut between = 0usize;
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        if anchors
            .structural
            .iter()
            .any(|(open, _)| t.is_keyword(open))
        {
            structural += 1;
        } else if structural > 0
            && anchors
                .structural
                .iter()
                .any(|(_, close)| t.is_keyword(close))
        {
            structural -= 1;
        }
        if structural > 0 || t.is_keyword("END") {
            i += 1;
            continue;
        }
        if t.is_keyword("BETWEEN") {
            between += 1;
            i += 1;
            continue;
        }
        if t.is_keyword("AND") && between > 0 {
            between -= 1;
            i += 1;
            continue;
        }
        if t.is_keyword("NOT") && toks.get(i + 1).is_some_and(|n| n.is_keyword("BETWEEN")) {
            i += 1;
            continue;
        }
        let phrase = anchors.phrase_words().find_map(|(words, _)| {
            let last = i + words.len() - 1;
            let matches = last < toks.len()
                && words
                    .iter()
                    .enumerate()
                    .all(|(k, w)| toks[i + k].text.eq_ignore_ascii_case(w));
            (matches && separated(expr, &toks, i, last)).then_some(last)
        });
        if let Some(last) = phrase {
            found.push((i, last));
            i = last + 1;
            continue;
        }
        let is_anchor = matches!(t.kind, TokenKind::Operator | TokenKind::Keyword)
            && (anchors.single(t.text).is_some()
                || ctx
                    .function
                    .is_some_and(|f| anchors.contextual(t.text, f).is_some()))
            && separated(expr, &toks, i, i);
        if is_anchor {
            found.push((i, i));
        }
        i += 1;
    }

    let mut map = MaskMap::default();
    let mut out = String::with_capacity(expr.len());
    let mut cursor = 0; // byte offset copied so far
    let mut run_start: Option<usize> = None; // token index
    let flush =
        |out: &mut String, map: &mut MaskMap, cursor: &mut usize, from: usize, to: usize| {
            let start = toks[from].span.start;
            let end = toks[to].span.end;
            out.push_str(&expr[*cursor..start]);
            let id = format!("M{}", base + map.len());
            out.push_str(&map.push(id, &expr[start..end]));
            *cursor = end;
        };
    let mut next_anchor = found.iter().peekable();
    let mut k = 0;
    while k < toks.len() {
        if let Some(&&(first, last)) = next_anchor.peek().filter(|(f, _)| *f == k) {
            if let Some(s) = run_start.take() {
                flush(&mut out, &mut map, &mut cursor, s, k - 1);
            }
            out.push_str(&expr[cursor..toks[last].span.end]);
            cursor = toks[last].span.end;
            next_anchor.next();
            k = last + 1;
            let _ = first;
            continue;
        }
        run_start.get_or_insert(k);
        k += 1;
    }
    if let Some(s) = run_start {
        flush(&mut out, &mut map, &mut cursor, s, toks.len() - 1);
    }
    out.push_str(&expr[cursor..]);
    Ok((out, map))
}

/// Splits `segment` at `delimiter` tokens outside parentheses, brackets and
/// literals. Pieces are trimmed.
pub fn split_repetition(segment: &str, delimiter: &str) -> Vec<String> {
    let Ok(toks) = tokenize(segment, true) else {
        return vec![segment.trim().to_string()];
    };
    let mut pieces = Vec::new();
    let mut depth = 0i32;
    let mut last = 0;
    for tok in &toks {
        match tok.text {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            t if t == delimiter && depth == 0 => {
                pieces.push(segment[last..tok.span.start].trim().to_string());
                last = tok.span.end;
            }
            _ => {}
        }
    }
    pieces.push(segment[last..].trim().to_string());
    pieces
}

/// True when `text` holds a depth-0 comma.
pub fn has_top_level_comma(text: &str) -> bool {
    split_repetition(text, ",").len() > 1
}

/// `(inner)` -> `inner` when the outer parentheses match each other.
pub fn strip_outer_parens(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    let toks = tokenize(trimmed, true).ok()?;
    if toks.len() < 2 || !toks[0].is_punct("(") || !toks[toks.len() - 1].is_punct(")") {
        return None;
    }
    let mut depth = 0;
    for (i, tok) in toks.iter().enumerate() {
        if tok.is_punct("(") {
            depth += 1;
        } else if tok.is_punct(")") {
            depth -= 1;
            if depth == 0 && i != toks.len() - 1 {
                return None;
            }
        }
    }
    Some(trimmed[1..trimmed.len() - 1].trim())
}

/// True when the first word of `text` (after any opening parens) is SELECT.
pub fn starts_with_select(text: &str) -> bool {
    tokenize(text, true)
        .ok()
        .and_then(|t| t.into_iter().find(|t| !t.is_punct("(")))
        .is_some_and(|t| t.is_keyword("SELECT"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn anchor(expr: &str) -> (String, MaskMap) {
        process_anchor(expr, &AnchorTable::default(), 0, AnchorContext::default()).unwrap()
    }

    #[test]
    fn paren_examples() {
        let (m, map) = process_paren("(tot / 2) !< 8 AND year < 2025", 0).unwrap();
        assert_eq!(m, "<P0> !< 8 AND year < 2025");
        assert_eq!(map.get("P0"), Some("(tot / 2)"));
        let (m, map) = process_paren("f(a, (b))", 0).unwrap();
        assert_eq!(m, "f<P0>");
        assert_eq!(
            map.entries,
            vec![("P0".to_string(), "(a, (b))".to_string())]
        );
        assert_eq!(
            process_paren("x", 0).unwrap(),
            ("x".to_string(), ParenMap::default())
        );
        assert_eq!(process_paren("'a(' || (b)", 3).unwrap().0, "'a(' || <P3>");
        assert!(matches!(
            process_paren("(a", 0),
            Err(MaskError::UnbalancedParens(0))
        ));
        assert!(matches!(
            process_paren("a)", 0),
            Err(MaskError::UnbalancedParens(1))
        ));
    }

    #[test]
    fn anchor_examples() {
        let (m, map) = anchor("<P0> !< 8 AND year < 2025");
        assert_eq!(m, "<M0> AND <M1> < <M2>");
        assert_eq!(
            map.entries,
            vec![
                ("M0".to_string(), "<P0> !< 8".to_string()),
                ("M1".to_string(), "year".to_string()),
                ("M2".to_string(), "2025".to_string()),
            ]
        );
        let (m, map) = anchor("year<2025");
        assert_eq!(m, "<M0>");
        assert_eq!(map.get("M0"), Some("year<2025"));
        let (m, _) = anchor("a IS NOT NULL");
        assert_eq!(m, "<M0> IS NOT <M1>");
        let (m, _) = anchor("a NOT IN <P0>");
        assert_eq!(m, "<M0> NOT IN <M1>");
    }

    #[test]
    fn between_case_and_context_anchors() {
        let (m, map) = anchor("x BETWEEN 1 AND 5 AND y = 1");
        assert_eq!(m, "<M0> AND <M1> = <M2>");
        assert_eq!(map.get("M0"), Some("x BETWEEN 1 AND 5"));
        let (m, _) = anchor("x NOT BETWEEN 1 AND 5");
        assert_eq!(m, "<M0>");
        let (m, map) = anchor("CASE WHEN a = 1 THEN b END = c");
        assert_eq!(m, "<M0> = <M1>");
        assert_eq!(map.get("M0"), Some("CASE WHEN a = 1 THEN b END"));
        assert_eq!(anchor("x AS INT").0, "<M0>");
        let cast = AnchorContext {
            function: Some("CAST"),
        };
        let (m, _) = process_anchor("x AS INT", &AnchorTable::default(), 0, cast).unwrap();
        assert_eq!(m, "<M0> AS <M1>");
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_repetition("col, 1 !> 2", ","), vec!["col", "1 !> 2"]);
        assert_eq!(
            split_repetition("max(a, b), c", ","),
            vec!["max(a, b)", "c"]
        );
        assert_eq!(split_repetition("a", ","), vec!["a"]);
        assert_eq!(
            split_repetition("'x,y', [a,b]", ","),
            vec!["'x,y'", "[a,b]"]
        );
        assert_eq!(strip_outer_parens(" (a, (b)) "), Some("a, (b)"));
        assert_eq!(strip_outer_parens("(a) + (b)"), None);
        assert!(starts_with_select("(select 1)"));
    }

    fn expr_strategy() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            "[a-z]{1,4}",
            "[0-9]{1,3}",
            Just("'s(,)'".to_string()),
            Just("year".to_string()),
        ];
        leaf.prop_recursive(4, 24, 4, |inner| {
            let op = prop_oneof![
                Just(" AND "),
                Just(" OR "),
                Just(" < "),
                Just("<"),
                Just(" !< "),
                Just(" + "),
                Just(" IS NOT "),
                Just("::"),
                Just("  =  "),
            ];
            prop_oneof![
                (inner.clone(), op, inner.clone()).prop_map(|(a, o, b)| format!("{a}{o}{b}")),
                inner.clone().prop_map(|a| format!("({a})")),
                (inner.clone(), inner).prop_map(|(a, b)| format!("f({a}, {b})")),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn substitution_identity(expr in expr_strategy(), base in 0usize..5) {
            let (pmasked, pmap) = process_paren(&expr, base).unwrap();
            prop_assert_eq!(pmap.substitute(&pmasked), expr.clone());
            prop_assert!(!tokenize(&pmasked, true).unwrap().iter().any(|t| t.is_punct("(")));
            let (mmasked, mmap) = process_anchor(&pmasked, &AnchorTable::default(), base, AnchorContext::default()).unwrap();
            prop_assert_eq!(mmap.substitute(&mmasked), pmasked);
            prop_assert!(!mmap.is_empty());
        }
    }
}
