//! SQL tokenizer.
//!
//! The lexer never drops input: every byte is either part of a token or
//! skipped whitespace, so `text` slices plus the gaps between spans rebuild
//! the source exactly. Only a small set of compound operators is fused
//! (`<=`, `>=`, `<>`, `||`); anything else, such as `!<` or `::`, comes out
//! as single-character operator tokens and is left for the segmenter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::keywords;

/// Byte range into the lexed source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn shift(self, by: usize) -> Self {
        Span::new(self.start + by, self.end + by)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    QuotedIdentifier,
    StringLiteral,
    NumericLiteral,
    Operator,
    Punctuation,
    ParenToken,
    MaskToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub span: Span,
}

impl Token<'_> {
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(kw)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.text == p
    }

    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Operator && self.text == op
    }

    /// Word-like tokens: keywords and bare identifiers.
    pub fn is_word(&self) -> bool {
        matches!(self.kind, TokenKind::Keyword | TokenKind::Identifier)
    }

    /// Numeric index of a `<P{n}>` / `<M{n}>` token.
    pub fn abstraction_index(&self) -> Option<usize> {
        match self.kind {
            TokenKind::ParenToken | TokenKind::MaskToken => {
                self.text[2..self.text.len() - 1].parse().ok()
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unterminated string literal starting at byte {0}")]
    UnterminatedString(usize),
    #[error("unterminated quoted identifier starting at byte {0}")]
    UnterminatedQuotedIdentifier(usize),
}

impl LexError {
    pub fn position(&self) -> usize {
        match self {
            LexError::UnterminatedString(p) | LexError::UnterminatedQuotedIdentifier(p) => *p,
        }
    }
}

const FUSED_OPERATORS: [&str; 4] = ["<=", ">=", "<>", "||"];

/// Tokenizes `text`. With `masked` set, `<P{n}>` and `<M{n}>` sequences are
/// recognised as abstraction tokens; otherwise they lex as plain operators
/// and identifiers.
pub fn tokenize(text: &str, masked: bool) -> Result<Vec<Token<'_>>, LexError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;

    while pos < bytes.len() {
        let c = text[pos..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        let start = pos;
        let kind = match c {
            '\'' => {
                pos = scan_quoted(bytes, pos, b'\'').ok_or(LexError::UnterminatedString(start))?;
                TokenKind::StringLiteral
            }
            '"' => {
                pos = scan_quoted(bytes, pos, b'"')
                    .ok_or(LexError::UnterminatedQuotedIdentifier(start))?;
                TokenKind::QuotedIdentifier
            }
            '<' if masked && abstraction_len(&bytes[pos..]).is_some() => {
                let len = abstraction_len(&bytes[pos..]).expect("checked");
                pos += len;
                if bytes[start + 1] == b'P' {
                    TokenKind::ParenToken
                } else {
                    TokenKind::MaskToken
                }
            }
            c if c.is_ascii_digit()
                || (c == '.' && bytes.get(pos + 1).is_some_and(u8::is_ascii_digit)) =>
            {
                pos = scan_number(bytes, pos);
                TokenKind::NumericLiteral
            }
            c if c.is_alphabetic() || c == '_' => {
                pos = scan_word(text, pos);
                if keywords::is_keyword(&text[start..pos]) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                }
            }
            '(' | ')' | ',' | '.' | ';' => {
                pos += 1;
                TokenKind::Punctuation
            }
            _ => {
                let rest = &text[pos..];
                match FUSED_OPERATORS.iter().find(|op| rest.starts_with(**op)) {
                    Some(op) => pos += op.len(),
                    None => pos += c.len_utf8(),
                }
                TokenKind::Operator
            }
        };
        tokens.push(Token {
            kind,
            text: &text[start..pos],
            span: Span::new(start, pos),
        });
    }
    Ok(tokens)
}

fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut pos = start + 1;
    while pos < bytes.len() {
        if bytes[pos] == quote {
            if bytes.get(pos + 1) == Some(&quote) {
                pos += 2;
                continue;
            }
            return Some(pos + 1);
        }
        pos += 1;
    }
    None
}

fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut pos = start;
    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
        pos += 1;
    }
    if pos < bytes.len() && bytes[pos] == b'.' {
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
    }
    if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
        let mut exp = pos + 1;
        if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
            exp += 1;
        }
        if exp < bytes.len() && bytes[exp].is_ascii_digit() {
            pos = exp;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
        }
    }
    pos
}

fn scan_word(text: &str, start: usize) -> usize {
    text[start..]
        .char_indices()
        .find(|(_, c)| !(c.is_alphanumeric() || *c == '_' || *c == '$'))
        .map(|(i, _)| start + i)
        .unwrap_or(text.len())
}

/// Length of a `<P123>` / `<M7>` sequence at the start of `bytes`.
fn abstraction_len(bytes: &[u8]) -> Option<usize> {
    if bytes.len() < 4 || bytes[0] != b'<' || !(bytes[1] == b'P' || bytes[1] == b'M') {
        return None;
    }
    let digits = bytes[2..].iter().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 || bytes.get(2 + digits) != Some(&b'>') {
        return None;
    }
    Some(digits + 3)
}

/// Highest `n` among `<P{n}>` / `<M{n}>` sequences already present in `text`.
pub fn max_abstraction_index(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    (0..bytes.len())
        .filter_map(|i| abstraction_len(&bytes[i..]).map(|len| &text[i + 2..i + len - 1]))
        .filter_map(|digits| digits.parse().ok())
        .max()
}

/// Rebuilds the source from tokens, using `source` for the gaps.
pub fn reassemble(source: &str, tokens: &[Token<'_>]) -> String {
    let mut out = String::with_capacity(source.len());
    let mut last = 0;
    for tok in tokens {
        out.push_str(&source[last..tok.span.start]);
        out.push_str(tok.text);
        last = tok.span.end;
    }
    out.push_str(&source[last..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_and_text(sql: &str) -> Vec<(TokenKind, &str)> {
        tokenize(sql, false)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn minimal_query() {
        use TokenKind::*;
        assert_eq!(
            kinds_and_text("SELECT * FROM Sales"),
            vec![
                (Keyword, "SELECT"),
                (Operator, "*"),
                (Keyword, "FROM"),
                (Identifier, "Sales")
            ]
        );
    }

    #[test]
    fn unknown_compound_operator_is_not_fused() {
        let sql = "WHERE (tot / 2) !< 8";
        let toks = tokenize(sql, false).unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text).collect();
        assert!(texts.windows(2).any(|w| w == ["!", "<"]));
        assert!(!texts.contains(&"!<"));
        assert_eq!(reassemble(sql, &toks), sql);
    }

    #[test]
    fn paren_inside_literal_stays_in_literal() {
        let toks = tokenize("SELECT 'a(b' ", false).unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[1].kind, TokenKind::StringLiteral);
        assert_eq!(toks[1].text, "'a(b'");
    }

    #[test]
    fn escaped_quotes() {
        let toks = tokenize(r#"'it''s' "a""b""#, false).unwrap();
        assert_eq!(toks[0].text, "'it''s'");
        assert_eq!(toks[1].text, r#""a""b""#);
    }

    #[test]
    fn unterminated_literals() {
        assert_eq!(
            tokenize("SELECT 'abc", false),
            Err(LexError::UnterminatedString(7))
        );
        assert_eq!(
            tokenize("SELECT \"abc", false),
            Err(LexError::UnterminatedQuotedIdentifier(7))
        );
    }

    #[test]
    fn abstraction_tokens_only_in_masked_mode() {
        let plain = tokenize("<M0> AND <P12>", false).unwrap();
        assert_eq!(plain[0].text, "<");
        let masked = tokenize("<M0> AND <P12>", true).unwrap();
        assert_eq!(masked[0].kind, TokenKind::MaskToken);
        assert_eq!(masked[2].kind, TokenKind::ParenToken);
        assert_eq!(masked[2].abstraction_index(), Some(12));
        // `<P>` without digits is not an abstraction token
        let odd = tokenize("<P> x", true).unwrap();
        assert_eq!(odd[0].kind, TokenKind::Operator);
    }

    #[test]
    fn fused_and_numeric() {
        let toks = tokenize("a<=.5e3||b<>1.", false).unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text).collect();
        assert_eq!(texts, vec!["a", "<=", ".5e3", "||", "b", "<>", "1."]);
    }

    #[test]
    fn keywords_case_insensitive() {
        let toks = tokenize("select Year from t", false).unwrap();
        assert_eq!(toks[0].kind, TokenKind::Keyword);
        assert_eq!(toks[1].kind, TokenKind::Keyword);
        assert_eq!(toks[1].text, "Year");
        assert_eq!(toks[3].kind, TokenKind::Identifier);
    }

    #[test]
    fn max_index_scan() {
        assert_eq!(max_abstraction_index("a <P3> b <M10>"), Some(10));
        assert_eq!(max_abstraction_index("a < P3 >"), None);
    }

    proptest::proptest! {
        #[test]
        fn tokens_plus_whitespace_rebuild_input(s in "[a-zA-Z0-9 _(),.*<>=!:'\"+\\-\\[\\]`@]{0,60}") {
            if let Ok(toks) = tokenize(&s, false) {
                proptest::prop_assert_eq!(reassemble(&s, &toks), s.clone());
                let mut last = 0;
                for t in &toks {
                    proptest::prop_assert!(s[last..t.span.start].chars().all(char::is_whitespace));
                    last = t.span.end;
                }
                proptest::prop_assert!(s[last..].chars().all(char::is_whitespace));
            }
        }
    }
}
