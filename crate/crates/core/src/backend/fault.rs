//! Response corruption for exercising validation and repair.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ExprSegments, Segmenter, SegmenterRequest, SegmenterResponse};
use crate::grammar::GrammarRuleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Remove the last token of a segment.
    DropToken,
    /// Append a token that is not in the input.
    AddToken,
    /// Reverse the token order inside a multi-token segment.
    Reorder,
    /// Swap the operands of an operation, or two clause segments.
    SwapOperands,
    /// Return both a literal and an operation, or pick every alternative.
    DualType,
}

/// Wraps a backend and corrupts its first `times` matching responses.
pub struct FaultInjector<S> {
    inner: S,
    fault: Fault,
    remaining: Mutex<usize>,
    rule: Option<GrammarRuleId>,
}

impl<S: Segmenter> FaultInjector<S> {
    pub fn new(inner: S, fault: Fault, times: usize) -> Self {
        FaultInjector {
            inner,
            fault,
            remaining: Mutex::new(times),
            rule: None,
        }
    }

    pub fn always(inner: S, fault: Fault) -> Self {
        Self::new(inner, fault, usize::MAX)
    }

    /// Only corrupt requests for `rule`.
    pub fn only_rule(mut self, rule: GrammarRuleId) -> Self {
        self.rule = Some(rule);
        self
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn remaining(&self) -> usize {
        *self.remaining.lock().expect("fault counter")
    }
}

impl<S: Segmenter> Segmenter for FaultInjector<S> {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        let response = self.inner.segment(request)?;
        if self.rule.is_some_and(|r| request.rule != Some(r)) {
            return Ok(response);
        }
        let mut remaining = self.remaining.lock().expect("fault counter");
        if *remaining == 0 {
            return Ok(response);
        }
        match corrupt(self.fault, &request.fragment, response.clone()) {
            Some(bad) => {
                *remaining = remaining.saturating_sub(1);
                Ok(bad)
            }
            None => Ok(response),
        }
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Index of the segment a fault should target: the first one with at least
/// `min_words` whitespace-separated words.
fn target(segments: &[&str], min_words: usize) -> Option<usize> {
    segments.iter().position(|s| words(s).len() >= min_words)
}

fn drop_token(s: &str) -> String {
    let w = words(s);
    if w.len() > 1 {
        w[..w.len() - 1].join(" ")
    } else {
        let mut chars: Vec<char> = s.trim().chars().collect();
        chars.pop();
        chars.into_iter().collect()
    }
}

fn reorder(s: &str) -> Option<String> {
    let w = words(s);
    let reversed: Vec<&str> = w.iter().rev().copied().collect();
    (reversed != w).then(|| reversed.join(" "))
}

/// Applies `fault` to a response for `fragment`; `None` when the fault does
/// not apply to this shape.
pub fn corrupt(
    fault: Fault,
    fragment: &str,
    response: SegmenterResponse,
) -> Option<SegmenterResponse> {
    match response {
        SegmenterResponse::Clause(mut c) => {
            let texts: Vec<&str> = c
                .fields
                .iter()
                .map(|(_, t)| t.as_str())
                .chain(c.other.iter().map(String::as_str))
                .collect();
            let n_fields = c.fields.len();
            let edit = |c: &mut super::ClauseSegments, i: usize, text: String| {
                if i < n_fields {
                    c.fields[i].1 = text;
                } else {
                    c.other[i - n_fields] = text;
                }
            };
            match fault {
                Fault::DropToken => {
                    let i = target(&texts, 2).or(target(&texts, 1))?;
                    let text = drop_token(texts[i]);
                    edit(&mut c, i, text);
                }
                Fault::AddToken => {
                    let i = texts.len().checked_sub(1)?;
                    let text = format!("{} EXTRA", texts[i]);
                    edit(&mut c, i, text);
                }
                Fault::Reorder => {
                    let i = (0..texts.len())
                        .rev()
                        .find(|&i| reorder(texts[i]).is_some())?;
                    let text = reorder(texts[i])?;
                    edit(&mut c, i, text);
                }
                Fault::SwapOperands => {
                    if c.fields.len() < 2 || c.fields[0].1 == c.fields[1].1 {
                        return None;
                    }
                    let first = c.fields[0].1.clone();
                    c.fields[0].1 = c.fields[1].1.clone();
                    c.fields[1].1 = first;
                }
                Fault::DualType => return None,
            }
            Some(SegmenterResponse::Clause(c))
        }
        SegmenterResponse::Expression(mut e) => {
            match fault {
                Fault::DropToken => match &e.literal {
                    Some(lit) => e.literal = Some(drop_token(lit)),
                    None => {
                        let last = e.operands.last_mut()?;
                        *last = drop_token(last);
                    }
                },
                Fault::AddToken => match &mut e.literal {
                    Some(lit) => lit.push_str(" EXTRA"),
                    None => e.operands.last_mut()?.push_str(" EXTRA"),
                },
                Fault::Reorder => match &e.literal {
                    Some(lit) => e.literal = Some(reorder(lit)?),
                    None => {
                        let i = e.operands.iter().position(|o| reorder(o).is_some())?;
                        e.operands[i] = reorder(&e.operands[i])?;
                    }
                },
                Fault::SwapOperands => {
                    if e.operands.len() != 2 || e.operands[0] == e.operands[1] {
                        return None;
                    }
                    e.operands.swap(0, 1);
                }
                Fault::DualType => {
                    if e.literal.is_some() {
                        let op = ExprSegments::operation("=", &[fragment, fragment]);
                        e.operator = op.operator;
                        e.operands = op.operands;
                    } else {
                        e.literal = Some(fragment.to_string());
                    }
                }
            }
            Some(SegmenterResponse::Expression(e))
        }
        SegmenterResponse::Classify { choices } => match fault {
            Fault::DualType => Some(SegmenterResponse::Classify {
                choices: choices.into_iter().map(|(n, _)| (n, true)).collect(),
            }),
            _ => None,
        },
    }
}
