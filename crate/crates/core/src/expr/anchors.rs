//! Anchor operators for expression masking.
//!
//! File format: one `operator<TAB>precedence<TAB>arity<TAB>assoc` entry per
//! line. A `#phrase` line starts multi-word operators, `#context` starts
//! entries with a fifth column naming the enclosing function they require,
//! and `#structural` starts `open<TAB>close` keyword pairs whose contents are
//! never split. Other lines starting with `#` are comments.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

const DEFAULT_TABLE: &str = include_str!("../../data/anchors.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Assoc {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnchorEntry {
    pub op: String,
    pub precedence: u8,
    pub arity: u8,
    pub assoc: Assoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextAnchor {
    pub entry: AnchorEntry,
    /// Function name the operator is only active inside, e.g. `CAST`.
    pub function: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnchorTable {
    pub entries: Vec<AnchorEntry>,
    pub phrases: Vec<AnchorEntry>,
    pub context: Vec<ContextAnchor>,
    pub structural: Vec<(String, String)>,
}

#[derive(Debug, Error)]
pub enum AnchorTableError {
    #[error("cannot read anchor table: {0}")]
    Io(#[from] std::io::Error),
    #[error("anchor table line {line}: {detail}")]
    Syntax { line: usize, detail: String },
}

#[derive(Clone, Copy)]
enum Section {
    Single,
    Phrase,
    Context,
    Structural,
}

impl AnchorTable {
    pub fn load(path: &Path) -> Result<Self, AnchorTableError> {
        std::fs::read_to_string(path)?.parse()
    }

    /// Single-token anchor matching `text` (case-insensitive for words).
    pub fn single(&self, text: &str) -> Option<&AnchorEntry> {
        self.entries
            .iter()
            .find(|e| e.op.eq_ignore_ascii_case(text))
    }

    pub fn contextual(&self, text: &str, function: &str) -> Option<&AnchorEntry> {
        self.context
            .iter()
            .find(|c| {
                c.entry.op.eq_ignore_ascii_case(text) && c.function.eq_ignore_ascii_case(function)
            })
            .map(|c| &c.entry)
    }

    /// Multi-word operators as lists of words.
    pub fn phrase_words(&self) -> impl Iterator<Item = (Vec<&str>, &AnchorEntry)> {
        self.phrases
            .iter()
            .map(|e| (e.op.split_whitespace().collect(), e))
    }

    /// All operators (single, phrase and context) with their precedence.
    pub fn all(&self) -> impl Iterator<Item = &AnchorEntry> {
        self.entries
            .iter()
            .chain(&self.phrases)
            .chain(self.context.iter().map(|c| &c.entry))
    }
}

impl Default for AnchorTable {
    fn default() -> Self {
        DEFAULT_TABLE
            .parse()
            .expect("bundled anchor table is valid")
    }
}

fn entry(cols: &[&str], line: usize) -> Result<AnchorEntry, AnchorTableError> {
    let err = |detail: String| AnchorTableError::Syntax { line, detail };
    let [op, prec, arity, assoc, ..] = cols else {
        return Err(err(format!(
            "expected 4 tab-separated columns, got {}",
            cols.len()
        )));
    };
    let precedence = prec
        .parse()
        .map_err(|_| err(format!("bad precedence `{prec}`")))?;
    let arity = match *arity {
        "1" => 1,
        "2" => 2,
        other => return Err(err(format!("bad arity `{other}`"))),
    };
    let assoc = match assoc.to_ascii_lowercase().as_str() {
        "left" => Assoc::Left,
        "right" => Assoc::Right,
        other => return Err(err(format!("bad associativity `{other}`"))),
    };
    Ok(AnchorEntry {
        op: op.to_string(),
        precedence,
        arity,
        assoc,
    })
}

impl FromStr for AnchorTable {
    type Err = AnchorTableError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut table = AnchorTable {
            entries: Vec::new(),
            phrases: Vec::new(),
            context: Vec::new(),
            structural: Vec::new(),
        };
        let mut section = Section::Single;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            match trimmed {
                "#phrase" => section = Section::Phrase,
                "#context" => section = Section::Context,
                "#structural" => section = Section::Structural,
                _ if trimmed.starts_with('#') => {}
                _ => {
                    let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
                    match section {
                        Section::Single => table.entries.push(entry(&cols, line)?),
                        Section::Phrase => table.phrases.push(entry(&cols, line)?),
                        Section::Context => {
                            let function = cols.get(4).filter(|f| !f.is_empty()).ok_or(
                                AnchorTableError::Syntax {
                                    line,
                                    detail: "context entry needs a function column".into(),
                                },
                            )?;
                            table.context.push(ContextAnchor {
                                entry: entry(&cols, line)?,
                                function: function.to_string(),
                            });
                        }
                        Section::Structural => match cols.as_slice() {
                            [open, close] => {
                                table.structural.push((open.to_string(), close.to_string()))
                            }
                            _ => {
                                return Err(AnchorTableError::Syntax {
                                    line,
                                    detail: "structural entry needs open and close keywords".into(),
                                })
                            }
                        },
                    }
                }
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parser::{binary_precedence, NOT_PRECEDENCE};

    #[test]
    fn bundled_table_loads() {
        let t = AnchorTable::default();
        assert_eq!(t.single("and").unwrap().precedence, 2);
        assert!(t.single("||").is_none());
        assert!(t.single("BETWEEN").is_none());
        assert!(t.single("AS").is_none());
        assert!(t.contextual("as", "cast").is_some());
        assert_eq!(t.phrases.len(), 3);
        assert_eq!(t.structural, vec![("CASE".to_string(), "END".to_string())]);
    }

    #[test]
    fn precedence_agrees_with_grammar() {
        let t = AnchorTable::default();
        for e in t.entries.iter().chain(&t.phrases) {
            let grammar = if e.arity == 1 {
                assert!(e.op.eq_ignore_ascii_case("NOT"));
                NOT_PRECEDENCE
            } else {
                binary_precedence(&e.op).unwrap_or_else(|| panic!("{} unknown to grammar", e.op))
            };
            assert_eq!(e.precedence, grammar, "{}", e.op);
        }
        let lowest = t
            .all()
            .filter(|e| e.arity == 2 && t.context.iter().all(|c| c.entry != **e));
        let min = lowest.map(|e| e.precedence).min().unwrap();
        assert_eq!(min, t.single("OR").unwrap().precedence);
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let err = "AND\t2\t2\tleft\nOR\tx\t2\tleft"
            .parse::<AnchorTable>()
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!("#context\nAS\t0\t2\tleft".parse::<AnchorTable>().is_err());
    }
}
