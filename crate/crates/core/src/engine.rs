//! Hybrid segmentation: the grammar parses what it can, the segmenter splits
//! what it cannot, and every piece is retried under the grammar rule it was
//! mapped to.
//!
//! Work items live in one breadth-first queue. Each item owns a slot; the
//! partial tree refers to unfinished slots through `Pending` nodes, which
//! are spliced out once the queue is drained.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{AstNode, Origin, Variant};
use crate::backend::{BackendError, Segmenter, SegmenterRequest, SegmenterResponse};
use crate::expr::{
    has_top_level_comma, process_anchor, process_paren, split_repetition, starts_with_select,
    strip_outer_parens, AnchorContext, AnchorTable, MaskMap, ParenMap,
};
use crate::grammar::{
    parse_fragment_with, AstTarget, ClauseDef, GrammarRuleId as G, ParseOptions, RuleKind,
    SegmentMapping,
};
use crate::lexer::{max_abstraction_index, tokenize, TokenKind};
use crate::validate::{
    validate_and_repair, Accepted, Layout, RepairError, SegmentKey, DEFAULT_MAX_REPAIRS,
};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub max_repairs: usize,
    pub anchors_enabled: bool,
    pub validation_enabled: bool,
    /// Passed to the backend verbatim; empty means unknown.
    pub dialect: String,
    pub anchors: Arc<AnchorTable>,
    /// Nesting limit for queued fragments and recursive segmentation.
    pub max_depth: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_repairs: DEFAULT_MAX_REPAIRS,
            anchors_enabled: true,
            validation_enabled: true,
            dialect: String::new(),
            anchors: Arc::new(AnchorTable::default()),
            max_depth: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EngineStats {
    pub backend_calls: usize,
    pub repairs: usize,
    pub unsegmented: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOutcome {
    /// The grammar parsed the fragment.
    Parsed,
    /// Split at top-level delimiters without a backend call.
    Split,
    /// The segmenter picked one alternative.
    Classified,
    ClauseSegmented,
    ExpressionSegmented,
    /// Outer parentheses removed and the query queued.
    Unwrapped,
    Unsegmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    /// Queue depth: 0 for the input, n+1 for fragments queued at depth n.
    pub generation: usize,
    pub rule: G,
    pub fragment: String,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub ast: AstNode,
    pub stats: EngineStats,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("empty input")]
    EmptyInput,
    #[error("segmenter unavailable: {0}")]
    BackendUnavailable(BackendError),
}

/// Parses a full query, segmenting whatever the grammar rejects.
pub fn hybrid_segmentation(
    query: &str,
    backend: &dyn Segmenter,
    config: &EngineConfig,
) -> Result<ParseOutcome, EngineError> {
    let mut out = run(query, G::SelectStmt, false, backend, config)?;
    if out.ast.variant != Variant::SelectStmt {
        out.ast = AstNode::segmenter(Variant::SelectStmt).with_child(out.ast);
    }
    Ok(out)
}

/// Expression segmentation for an expression the grammar rejected.
pub fn expression_level_segmentation(
    expr: &str,
    backend: &dyn Segmenter,
    config: &EngineConfig,
) -> Result<ParseOutcome, EngineError> {
    run(expr, G::Expr, true, backend, config)
}

/// Hybrid parse of `fragment` under an arbitrary rule. Rules that splice
/// several nodes (lists) yield an `ExprList` holding them.
pub fn parse_rule(
    fragment: &str,
    rule: G,
    backend: &dyn Segmenter,
    config: &EngineConfig,
) -> Result<ParseOutcome, EngineError> {
    run(fragment, rule, false, backend, config)
}

/// Picks the alternative `segment` belongs to: the first one the grammar
/// accepts, else the one the segmenter names.
pub fn resolve_alternative(
    segment: &str,
    alternatives: &[G],
    backend: &dyn Segmenter,
    config: &EngineConfig,
) -> Result<Option<G>, EngineError> {
    let rule = crate::grammar::RULES
        .iter()
        .find(|d| matches!(d.kind, RuleKind::Alternatives(alts) if alts == alternatives))
        .map_or(G::ProjectionValue, |d| d.id);
    let mut session = Session::new(segment, backend, config);
    session.choose_alternative(segment, alternatives, rule)
}

fn run(
    text: &str,
    rule: G,
    skip_grammar: bool,
    backend: &dyn Segmenter,
    config: &EngineConfig,
) -> Result<ParseOutcome, EngineError> {
    if text.trim().is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let mut session = Session::new(text, backend, config);
    let slot = session.new_slot();
    session.queue.push_back(Item {
        fragment: text.trim().to_string(),
        rule,
        slot,
        generation: 0,
        skip_grammar,
        cast_body: false,
        lineage: Vec::new(),
    });
    while let Some(item) = session.queue.pop_front() {
        session.process(item)?;
    }
    let mut nodes = session.assemble(slot);
    for node in &mut nodes {
        tidy(node);
    }
    let ast = if nodes.len() == 1 {
        nodes.pop().expect("one node")
    } else {
        AstNode::segmenter(Variant::ExprList).with_children(nodes)
    };
    let mut stats = session.stats;
    ast.walk(&mut |n| {
        if n.variant == Variant::Unsegmented {
            stats.unsegmented += 1;
        }
    });
    Ok(ParseOutcome {
        ast,
        stats,
        trace: session.trace,
    })
}

/// Drops wrappers the grammar would not have built: a `Projection` without
/// alias and an `OrderItem` without direction.
fn tidy(node: &mut AstNode) {
    for child in &mut node.children {
        tidy(child);
    }
    let unwrap = match node.variant {
        Variant::Projection => node.children.len() == 1,
        Variant::OrderItem => node.children.len() == 1 && node.attr("direction").is_none(),
        _ => false,
    };
    if unwrap {
        *node = node.children.pop().expect("one child");
    }
}

#[derive(Debug, Clone)]
struct Item {
    fragment: String,
    rule: G,
    slot: usize,
    generation: usize,
    skip_grammar: bool,
    cast_body: bool,
    lineage: Vec<(G, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParenCtx<'a> {
    Call(&'a str),
    In,
    Exists,
    Plain,
}

struct Session<'a> {
    backend: &'a dyn Segmenter,
    config: &'a EngineConfig,
    mapping: SegmentMapping,
    full_query: String,
    /// First free abstraction-token index.
    base: usize,
    queue: VecDeque<Item>,
    slots: Vec<Option<Vec<AstNode>>>,
    stats: EngineStats,
    trace: Vec<TraceEntry>,
}

fn is_word(text: &str, word: &str) -> bool {
    text.eq_ignore_ascii_case(word)
}

fn pending(slot: usize) -> AstNode {
    AstNode::segmenter(Variant::Pending).with_attr("slot", slot.to_string())
}

/// Leaf for a segment the backend called a literal.
fn literal_leaf(text: &str) -> AstNode {
    let text = text.trim();
    let literal = match tokenize(text, false) {
        Ok(toks) => match toks.as_slice() {
            [t] => {
                matches!(t.kind, TokenKind::NumericLiteral | TokenKind::StringLiteral)
                    || ["NULL", "TRUE", "FALSE", "UNKNOWN"]
                        .iter()
                        .any(|k| t.is_keyword(k))
            }
            [t, s, ..] => t.kind == TokenKind::Keyword && s.kind == TokenKind::StringLiteral,
            _ => false,
        },
        Err(_) => false,
    };
    if literal {
        AstNode::literal(text, Origin::Segmenter)
    } else {
        AstNode::identifier(text, Origin::Segmenter)
    }
}

impl<'a> Session<'a> {
    fn new(query: &str, backend: &'a dyn Segmenter, config: &'a EngineConfig) -> Self {
        Session {
            backend,
            config,
            mapping: SegmentMapping::load(),
            full_query: query.trim().to_string(),
            base: max_abstraction_index(query).map_or(0, |i| i + 1),
            queue: VecDeque::new(),
            slots: Vec::new(),
            stats: EngineStats::default(),
            trace: Vec::new(),
        }
    }

    fn new_slot(&mut self) -> usize {
        self.slots.push(None);
        self.slots.len() - 1
    }

    fn enqueue(&mut self, parent: &Item, fragment: &str, rule: G, cast_body: bool) -> AstNode {
        let slot = self.new_slot();
        let mut lineage = parent.lineage.clone();
        lineage.push((parent.rule, parent.fragment.clone()));
        self.queue.push_back(Item {
            fragment: fragment.trim().to_string(),
            rule,
            slot,
            generation: parent.generation + 1,
            skip_grammar: false,
            cast_body,
            lineage,
        });
        pending(slot)
    }

    fn note(&mut self, item: &Item, outcome: StepOutcome) {
        self.trace.push(TraceEntry {
            generation: item.generation,
            rule: item.rule,
            fragment: item.fragment.clone(),
            outcome,
        });
    }

    fn finish(&mut self, item: &Item, nodes: Vec<AstNode>, outcome: StepOutcome) {
        self.note(item, outcome);
        self.slots[item.slot] = Some(nodes);
    }

    fn unsegmented(&mut self, item: &Item) {
        self.finish(
            item,
            vec![AstNode::unsegmented(&item.fragment)],
            StepOutcome::Unsegmented,
        );
    }

    /// One backend exchange with validation and repair; `None` when the
    /// repairs ran out.
    fn ask(&mut self, request: &SegmenterRequest) -> Result<Option<Accepted>, EngineError> {
        match validate_and_repair(
            request,
            self.backend,
            self.config.max_repairs,
            self.config.validation_enabled,
        ) {
            Ok(acc) => {
                self.stats.backend_calls += acc.calls;
                self.stats.repairs += acc.repairs;
                Ok(Some(acc))
            }
            Err(RepairError::Unsegmented { calls, .. }) => {
                self.stats.backend_calls += calls;
                self.stats.repairs += calls.saturating_sub(1);
                Ok(None)
            }
            Err(RepairError::Backend(e)) => {
                self.stats.backend_calls += 1;
                Err(EngineError::BackendUnavailable(e))
            }
        }
    }

    fn grammar(&self, text: &str, rule: G, masked: bool, cast_body: bool) -> Option<AstNode> {
        parse_fragment_with(text, rule, ParseOptions { masked, cast_body }).ok()
    }

    fn process(&mut self, item: Item) -> Result<(), EngineError> {
        let looping = item
            .lineage
            .iter()
            .any(|(r, f)| *r == item.rule && *f == item.fragment);
        if item.fragment.is_empty() || looping || item.generation > self.config.max_depth {
            self.unsegmented(&item);
            return Ok(());
        }
        let def = item.rule.def();
        if !item.skip_grammar {
            if let Some(node) = self.grammar(&item.fragment, item.rule, false, item.cast_body) {
                let nodes = match def.ast {
                    AstTarget::Splice if node.variant == Variant::ExprList => node.children,
                    _ => vec![node],
                };
                self.finish(&item, nodes, StepOutcome::Parsed);
                return Ok(());
            }
        }
        match def.kind {
            RuleKind::Clause(clause) => self.clause_level(&item, &clause),
            RuleKind::Repetition {
                item: each,
                delimiter,
            } => {
                let pieces = split_repetition(&item.fragment, delimiter);
                let nodes = pieces
                    .iter()
                    .map(|p| self.enqueue(&item, p, each, false))
                    .collect();
                self.finish(&item, nodes, StepOutcome::Split);
                Ok(())
            }
            RuleKind::Alternatives(alts) => {
                match self.choose_alternative(&item.fragment, alts, item.rule)? {
                    None => self.unsegmented(&item),
                    Some(alt) if crate::grammar::has_nonterminal(alt) => {
                        self.note(&item, StepOutcome::Classified);
                        // same slot, same generation: the chosen rule takes over
                        let mut lineage = item.lineage.clone();
                        lineage.push((item.rule, item.fragment.clone()));
                        self.queue.push_front(Item {
                            rule: alt,
                            skip_grammar: true,
                            lineage,
                            ..item
                        });
                    }
                    Some(alt) => {
                        let leaf = terminal_leaf(alt, &item.fragment);
                        self.finish(&item, vec![leaf], StepOutcome::Classified);
                    }
                }
                Ok(())
            }
            RuleKind::Wrapper(inner) => {
                match strip_outer_parens(&item.fragment).filter(|s| !s.is_empty()) {
                    Some(content) => {
                        let content = content.to_string();
                        let child = self.enqueue(&item, &content, inner, false);
                        let node = AstNode::segmenter(Variant::Subquery).with_child(child);
                        self.finish(&item, vec![node], StepOutcome::Unwrapped);
                    }
                    None => self.unsegmented(&item),
                }
                Ok(())
            }
            RuleKind::Expression => self.expression_level(&item),
            RuleKind::Terminal => {
                let leaf = terminal_leaf(item.rule, &item.fragment);
                self.finish(&item, vec![leaf], StepOutcome::Parsed);
                Ok(())
            }
        }
    }

    fn choose_alternative(
        &mut self,
        fragment: &str,
        alts: &[G],
        rule: G,
    ) -> Result<Option<G>, EngineError> {
        if let Some(alt) = alts
            .iter()
            .find(|a| self.grammar(fragment, **a, false, false).is_some())
        {
            return Ok(Some(*alt));
        }
        let request =
            SegmenterRequest::classify(rule, fragment, &self.full_query, &self.config.dialect);
        let Some(acc) = self.ask(&request)? else {
            return Ok(None);
        };
        Ok(match acc.response {
            SegmenterResponse::Classify { choices } => choices
                .iter()
                .find(|(_, chosen)| *chosen)
                .and_then(|(name, _)| alts.iter().find(|a| a.name() == name))
                .copied(),
            _ => None,
        })
    }

    fn clause_level(&mut self, item: &Item, clause: &ClauseDef) -> Result<(), EngineError> {
        let (keyword, body) = strip_keyword(&item.fragment, clause.keyword);
        let request =
            SegmenterRequest::clause(item.rule, body, &self.full_query, &self.config.dialect);
        let Some(acc) = self.ask(&request)? else {
            self.unsegmented(item);
            return Ok(());
        };
        let SegmenterResponse::Clause(segments) = &acc.response else {
            self.unsegmented(item);
            return Ok(());
        };
        let AstTarget::Node(variant) = item.rule.def().ast else {
            unreachable!("clause rules build nodes")
        };
        let mut node = AstNode::segmenter(variant);
        if let Some(kw) = keyword {
            node.set_attr("keyword", kw);
        }
        // (start, key, text) in input order
        let mut placed: Vec<(usize, SegmentKey, &str)> = segments
            .fields
            .iter()
            .map(|(name, text)| (SegmentKey::Field(name.clone()), text.as_str()))
            .chain(
                segments
                    .other
                    .iter()
                    .enumerate()
                    .map(|(i, text)| (SegmentKey::Other(i), text.as_str())),
            )
            .enumerate()
            .map(|(i, (key, text))| {
                (
                    acc.layout.start(&key).unwrap_or(usize::MAX - 1000 + i),
                    key,
                    text,
                )
            })
            .collect();
        placed.sort_by_key(|(start, _, _)| *start);
        let fields = self
            .mapping
            .segment2rule
            .get(&item.rule)
            .cloned()
            .unwrap_or_default();
        for (_, key, text) in placed {
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            match key {
                SegmentKey::Field(name) => match fields.get(name.as_str()) {
                    Some(&rule) if crate::grammar::has_nonterminal(rule) => {
                        let child = self.enqueue(item, text, rule, false);
                        node.children.push(child);
                    }
                    Some(&rule) => attach_terminal(&mut node, rule, text),
                    None => node.children.push(AstNode::other(text)),
                },
                _ => node.children.push(AstNode::other(text)),
            }
        }
        for (i, child) in node.children.iter_mut().enumerate() {
            if child.variant == Variant::Other {
                child.position_hint = Some(i);
            }
        }
        self.finish(item, vec![node], StepOutcome::ClauseSegmented);
        Ok(())
    }

    fn expression_level(&mut self, item: &Item) -> Result<(), EngineError> {
        let text = item.fragment.clone();
        let Ok((paren_masked, parens)) = process_paren(&text, self.base) else {
            self.unsegmented(item);
            return Ok(());
        };
        let ctx = AnchorContext {
            function: item.cast_body.then_some("CAST"),
        };
        let anchored = if self.config.anchors_enabled {
            process_anchor(&paren_masked, &self.config.anchors, self.base, ctx).ok()
        } else {
            None
        };
        let base = self.base;
        let whole = || {
            let id = format!("M{base}");
            let mut map = MaskMap::default();
            map.entries.push((id.clone(), paren_masked.clone()));
            (
                AstNode::grammar(Variant::MaskToken).with_attr("id", id),
                map,
            )
        };
        let (tree, masks) = match anchored {
            Some((masked, masks)) => match self.grammar(&masked, G::Expr, true, item.cast_body) {
                Some(tree) => (tree, masks),
                None => whole(),
            },
            None => whole(),
        };
        let tree = self.expand_masks(tree, &masks, &parens)?;
        let nodes = self.resolve_parens(tree, ParenCtx::Plain, &parens, item)?;
        self.finish(item, nodes, StepOutcome::ExpressionSegmented);
        Ok(())
    }

    fn expand_masks(
        &mut self,
        mut node: AstNode,
        masks: &MaskMap,
        parens: &ParenMap,
    ) -> Result<AstNode, EngineError> {
        if node.variant == Variant::MaskToken {
            let id = node.attr("id").unwrap_or_default().to_string();
            return match masks.get(&id) {
                Some(text) => {
                    let text = text.to_string();
                    match self.grammar(&text, G::Expr, true, false) {
                        Some(parsed) => Ok(parsed),
                        None => self.recursive_segment(&text, parens, 0),
                    }
                }
                None => Ok(AstNode::unsegmented(format!("<{id}>"))),
            };
        }
        let children = std::mem::take(&mut node.children);
        for child in children {
            let expanded = self.expand_masks(child, masks, parens)?;
            node.children.push(expanded);
        }
        Ok(node)
    }

    /// Asks the backend for a literal or an operation and recurses into the
    /// operands.
    fn recursive_segment(
        &mut self,
        text: &str,
        parens: &ParenMap,
        depth: usize,
    ) -> Result<AstNode, EngineError> {
        let unsegmented = || AstNode::unsegmented(parens.substitute(text.trim()));
        if depth > self.config.max_depth {
            return Ok(unsegmented());
        }
        let request =
            SegmenterRequest::expression(text.trim(), &self.full_query, &self.config.dialect);
        let Some(acc) = self.ask(&request)? else {
            return Ok(unsegmented());
        };
        let SegmenterResponse::Expression(seg) = &acc.response else {
            return Ok(unsegmented());
        };
        if let Some(lit) = &seg.literal {
            return Ok(literal_leaf(&parens.substitute(lit)));
        }
        let Some(op) = seg.operator.as_deref().map(str::trim) else {
            return Ok(unsegmented());
        };
        let mut operands = Vec::with_capacity(seg.operands.len());
        for operand in &seg.operands {
            let operand = operand.trim();
            let node = if operand == text.trim() || operand.is_empty() {
                AstNode::unsegmented(parens.substitute(operand))
            } else if let Some(parsed) = self.grammar(operand, G::Expr, true, false) {
                parsed
            } else {
                self.recursive_segment(operand, parens, depth + 1)?
            };
            operands.push(node);
        }
        Ok(build_operation(op, operands, &acc.layout))
    }

    fn resolve_parens(
        &mut self,
        mut node: AstNode,
        ctx: ParenCtx<'_>,
        parens: &ParenMap,
        item: &Item,
    ) -> Result<Vec<AstNode>, EngineError> {
        if node.variant == Variant::ParenToken {
            let id = node.attr("id").unwrap_or_default().to_string();
            let Some(content) = parens.get(&id) else {
                return Ok(vec![AstNode::unsegmented(format!("<{id}>"))]);
            };
            let content = content.to_string();
            let (nodes, quantifier) = self.expand_paren(&content, ctx, item);
            debug_assert!(
                quantifier.is_none(),
                "quantifiers are handled by the caller"
            );
            return Ok(nodes);
        }
        let children = std::mem::take(&mut node.children);
        let name = node.attr("name").unwrap_or_default().to_string();
        let op = node.attr("op").unwrap_or_default().to_ascii_uppercase();
        for (i, child) in children.into_iter().enumerate() {
            let child_ctx = match node.variant {
                Variant::FunctionCall => ParenCtx::Call(&name),
                Variant::BinaryOp if i == 1 && (op == "IN" || op == "NOT IN") => ParenCtx::In,
                Variant::UnaryOp if op == "EXISTS" => ParenCtx::Exists,
                _ => ParenCtx::Plain,
            };
            if child.variant == Variant::ParenToken && matches!(child_ctx, ParenCtx::Call(_)) {
                let id = child.attr("id").unwrap_or_default();
                if let Some(content) = parens.get(id) {
                    let content = content.to_string();
                    let (nodes, quantifier) = self.expand_paren(&content, child_ctx, item);
                    if let Some(q) = quantifier {
                        node.set_attr("quantifier", q);
                    }
                    node.children.extend(nodes);
                    continue;
                }
            }
            let resolved = self.resolve_parens(child, child_ctx, parens, item)?;
            node.children.extend(resolved);
        }
        Ok(vec![node])
    }

    /// Queues the content of a parenthesized group according to where it
    /// sits. Returns the nodes replacing the group and, for calls, a leading
    /// DISTINCT/ALL quantifier.
    fn expand_paren(
        &mut self,
        content: &str,
        ctx: ParenCtx<'_>,
        item: &Item,
    ) -> (Vec<AstNode>, Option<String>) {
        let Some(inner) = strip_outer_parens(content) else {
            return (vec![AstNode::unsegmented(content)], None);
        };
        let subquery = |s: &mut Self, text: &str| {
            let child = s.enqueue(item, text, G::SelectStmt, false);
            AstNode::segmenter(Variant::Subquery).with_child(child)
        };
        let list = |s: &mut Self, text: &str| -> Vec<AstNode> {
            split_repetition(text, ",")
                .iter()
                .map(|piece| s.enqueue(item, piece, G::Expr, false))
                .collect()
        };
        match ctx {
            ParenCtx::Call(name) => {
                if inner.is_empty() {
                    return (Vec::new(), None);
                }
                let (quantifier, rest) = leading_quantifier(inner);
                let nodes = if starts_with_select(rest) {
                    vec![subquery(self, rest)]
                } else if has_top_level_comma(rest) {
                    list(self, rest)
                } else {
                    vec![self.enqueue(item, rest, G::Expr, is_word(name, "CAST"))]
                };
                (nodes, quantifier)
            }
            ParenCtx::In | ParenCtx::Plain | ParenCtx::Exists if starts_with_select(inner) => {
                (vec![subquery(self, inner)], None)
            }
            ParenCtx::In => {
                let items = list(self, inner);
                (
                    vec![AstNode::segmenter(Variant::ExprList).with_children(items)],
                    None,
                )
            }
            ParenCtx::Plain if has_top_level_comma(inner) => {
                let items = list(self, inner);
                (
                    vec![AstNode::segmenter(Variant::ExprList).with_children(items)],
                    None,
                )
            }
            ParenCtx::Plain | ParenCtx::Exists => {
                (vec![self.enqueue(item, inner, G::Expr, false)], None)
            }
        }
    }

    /// Replaces `Pending` nodes by their slot contents.
    fn assemble(&mut self, slot: usize) -> Vec<AstNode> {
        let nodes = self.slots[slot].take().unwrap_or_default();
        nodes.into_iter().flat_map(|n| self.splice(n)).collect()
    }

    fn splice(&mut self, mut node: AstNode) -> Vec<AstNode> {
        if node.variant == Variant::Pending {
            let slot = node
                .attr("slot")
                .and_then(|s| s.parse().ok())
                .unwrap_or(usize::MAX);
            if slot < self.slots.len() {
                return self.assemble(slot);
            }
            return vec![AstNode::unsegmented("")];
        }
        let children = std::mem::take(&mut node.children);
        for child in children {
            let spliced = self.splice(child);
            node.children.extend(spliced);
        }
        vec![node]
    }
}

fn leading_quantifier(inner: &str) -> (Option<String>, &str) {
    if let Ok(toks) = tokenize(inner, true) {
        if let [first, next, ..] = toks.as_slice() {
            if first.is_keyword("DISTINCT") || first.is_keyword("ALL") {
                return (
                    Some(first.text.to_string()),
                    inner[next.span.start..].trim(),
                );
            }
        }
    }
    (None, inner)
}

fn build_operation(op: &str, operands: Vec<AstNode>, layout: &Layout) -> AstNode {
    let mut operands = operands.into_iter();
    match operands.len() {
        0 => AstNode::unsegmented(op),
        1 => {
            let postfix = matches!(
                (layout.start(&SegmentKey::Operand(0)), layout.start(&SegmentKey::Operator)),
                (Some(a), Some(o)) if a < o
            );
            AstNode::unary(
                op,
                operands.next().expect("one"),
                postfix,
                Origin::Segmenter,
            )
        }
        _ => {
            let first = operands.next().expect("two");
            operands.fold(first, |left, right| {
                AstNode::binary(op, left, right, Origin::Segmenter)
            })
        }
    }
}

/// `(keyword text, rest)`; the keyword is only stripped when every word is
/// present.
fn strip_keyword<'t>(fragment: &'t str, words: &[&str]) -> (Option<String>, &'t str) {
    if words.is_empty() {
        return (None, fragment);
    }
    let Ok(toks) = tokenize(fragment, true) else {
        return (None, fragment);
    };
    if toks.len() < words.len() || !toks.iter().zip(words).all(|(t, w)| is_word(t.text, w)) {
        return (None, fragment);
    }
    let kw: Vec<&str> = toks[..words.len()].iter().map(|t| t.text).collect();
    let rest = fragment[toks[words.len() - 1].span.end..].trim();
    (Some(kw.join(" ")), rest)
}

/// Leaf for a terminal-only rule.
fn terminal_leaf(rule: G, text: &str) -> AstNode {
    match rule {
        G::Column | G::Identifier => {
            if text == "*" {
                AstNode::segmenter(Variant::Wildcard).with_attr("text", "*")
            } else {
                AstNode::identifier(text, Origin::Segmenter)
            }
        }
        G::Number => AstNode::literal(text, Origin::Segmenter),
        G::Alias => alias_leaf(text),
        G::TableName => AstNode::segmenter(Variant::TableRef).with_attr("name", text),
        _ => AstNode::segmenter(Variant::Keyword).with_attr("text", text),
    }
}

fn alias_leaf(text: &str) -> AstNode {
    if let Ok(node) = parse_fragment_with(text, G::Alias, ParseOptions::default()) {
        return node;
    }
    let mut words = text.splitn(2, char::is_whitespace);
    match (words.next(), words.next()) {
        (Some(first), Some(rest)) if is_word(first, "AS") => AstNode::segmenter(Variant::Alias)
            .with_attr("as", first)
            .with_attr("name", rest.trim()),
        _ => AstNode::segmenter(Variant::Alias).with_attr("name", text),
    }
}

/// Stores a terminal-only segment on `node`, as an attribute where the
/// grammar would put one and as a verbatim child otherwise.
fn attach_terminal(node: &mut AstNode, rule: G, text: &str) {
    let words: Vec<&str> = text.split_whitespace().collect();
    match rule {
        G::SelectSpec
            if words.len() == 1 && (is_word(text, "DISTINCT") || is_word(text, "ALL")) =>
        {
            node.set_attr("quantifier", text)
        }
        G::Direction if words.len() == 1 && (is_word(text, "ASC") || is_word(text, "DESC")) => {
            node.set_attr("direction", text)
        }
        G::TableName => node.set_attr("name", text),
        G::JoinType => node.set_attr("join_type", words.join(" ")),
        G::SetOperator => {
            if let Some((op, rest)) = words.split_first() {
                node.set_attr("operator", *op);
                if !rest.is_empty() {
                    node.set_attr("quantifier", rest.join(" "));
                }
            }
        }
        G::Alias | G::Column | G::Identifier | G::Number => {
            node.children.push(terminal_leaf(rule, text))
        }
        _ => node.children.push(AstNode::other(text)),
    }
}

/// Owns a backend and a configuration.
#[derive(Clone)]
pub struct Engine {
    backend: Arc<dyn Segmenter>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(backend: Arc<dyn Segmenter>, config: EngineConfig) -> Self {
        Engine { backend, config }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend(&self) -> &dyn Segmenter {
        self.backend.as_ref()
    }

    pub fn parse(&self, query: &str) -> Result<ParseOutcome, EngineError> {
        hybrid_segmentation(query, self.backend.as_ref(), &self.config)
    }

    pub fn parse_expression(&self, expr: &str) -> Result<ParseOutcome, EngineError> {
        expression_level_segmentation(expr, self.backend.as_ref(), &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Fault, FaultInjector, MockSegmenter};
    use crate::grammar::parse_fragment;
    use crate::printer::print_ast;

    const WALKTHROUGH: &str =
        "SELECT TOP 10 * FROM Sales WHERE (tot / 2) !< 8 AND year < 2025 OPTION (FAST 10)";

    fn cfg() -> EngineConfig {
        EngineConfig {
            dialect: "tsql".into(),
            ..Default::default()
        }
    }

    #[test]
    fn walkthrough_query_golden() {
        let mock = MockSegmenter::new();
        let out = hybrid_segmentation(WALKTHROUGH, &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast.sexpr(),
            "SelectStmt[SelectClause[Other(TOP 10), Wildcard(*)], FromClause[TableRef(Sales)], \
             WhereClause[BinaryOp(AND)[BinaryOp(!<)[BinaryOp(/)[Identifier(tot), Literal(2)], Literal(8)], \
             BinaryOp(<)[Identifier(year), Literal(2025)]]], Other(OPTION (FAST 10))]"
        );
        assert_eq!(out.stats.backend_calls, mock.call_count());
        let fragments: Vec<String> = mock.calls().into_iter().map(|r| r.fragment).collect();
        assert_eq!(
            fragments,
            [
                WALKTHROUGH,
                "TOP 10 *",
                "(tot / 2) !< 8 AND year < 2025",
                "<P0> !< 8",
                "year"
            ]
        );
        assert_eq!(out.ast.children[3].position_hint, Some(3));
        assert_eq!(
            print_ast(&out.ast).unwrap(),
            "SELECT TOP 10 * FROM Sales WHERE ((tot / 2) !< 8) AND (year < 2025) OPTION (FAST 10)"
        );
    }

    #[test]
    fn grammar_queries_make_no_calls() {
        let mock = MockSegmenter::new();
        let out = hybrid_segmentation("SELECT * FROM Sales", &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast,
            parse_fragment("SELECT * FROM Sales", G::SelectStmt, false).unwrap()
        );
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn limit_becomes_trailing_other() {
        let mock = MockSegmenter::new();
        let out = hybrid_segmentation("SELECT a FROM t LIMIT 5", &mock, &cfg()).unwrap();
        let last = out.ast.children.last().unwrap();
        assert_eq!(last.variant, Variant::Other);
        assert_eq!(last.text(), Some("LIMIT 5"));
        assert_eq!(print_ast(&out.ast).unwrap(), "SELECT a FROM t LIMIT 5");
    }

    #[test]
    fn select_clause_segmentation() {
        let mock = MockSegmenter::new();
        let out = parse_rule("SELECT TOP 10 *", G::SelectClause, &mock, &cfg()).unwrap();
        assert_eq!(out.ast.sexpr(), "SelectClause[Other(TOP 10), Wildcard(*)]");
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn expression_examples() {
        let mock = MockSegmenter::new();
        let out = expression_level_segmentation("a AND b", &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast.sexpr(),
            "BinaryOp(AND)[Identifier(a), Identifier(b)]"
        );
        assert_eq!(mock.call_count(), 0);

        let out = expression_level_segmentation("1 !< 2 !< 3", &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast.sexpr(),
            "BinaryOp(!<)[Literal(1), BinaryOp(!<)[Literal(2), Literal(3)]]"
        );
        assert_eq!(mock.call_count(), 2);

        let out = expression_level_segmentation("max(1, min(a, 1))", &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast.sexpr(),
            "FunctionCall(max)[Literal(1), FunctionCall(min)[Identifier(a), Literal(1)]]"
        );
        let gen1: Vec<&str> = out
            .trace
            .iter()
            .filter(|t| t.generation == 1)
            .map(|t| t.fragment.as_str())
            .collect();
        assert_eq!(gen1, ["1", "min(a, 1)"]);
    }

    #[test]
    fn subqueries_in_and_exists() {
        let mock = MockSegmenter::new();
        let q =
            "SELECT a FROM t WHERE a !< 1 AND b IN (SELECT c FROM u) AND EXISTS (SELECT 1 FROM v)";
        let out = hybrid_segmentation(q, &mock, &cfg()).unwrap();
        let text = out.ast.sexpr();
        assert!(
            text.contains("BinaryOp(IN)[Identifier(b), Subquery[SelectStmt"),
            "{text}"
        );
        assert!(
            text.contains("UnaryOp(EXISTS)[Subquery[SelectStmt"),
            "{text}"
        );
        assert_eq!(out.stats.unsegmented, 0);
    }

    #[test]
    fn cast_and_functions() {
        let mock = MockSegmenter::new();
        let out = expression_level_segmentation(
            "CAST(x::int AS VARCHAR(10)) + count(DISTINCT [a])",
            &mock,
            &cfg(),
        )
        .unwrap();
        assert_eq!(
            print_ast(&out.ast).unwrap(),
            "CAST((x :: int) AS VARCHAR(10)) + count(DISTINCT [a])"
        );
    }

    #[test]
    fn exhaustion_keeps_siblings() {
        let mock =
            FaultInjector::always(MockSegmenter::new(), Fault::DropToken).only_rule(G::WhereClause);
        let q = "SELECT TOP 3 a FROM t WHERE b !< 1";
        let out = hybrid_segmentation(q, &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast.sexpr(),
            "SelectStmt[SelectClause[Other(TOP 3), Identifier(a)], FromClause[TableRef(t)], Unsegmented(WHERE b !< 1)]"
        );
        assert_eq!(out.stats.unsegmented, 1);
    }

    #[test]
    fn unknown_features_end_unsegmented() {
        let mock = MockSegmenter::new();
        let out = hybrid_segmentation("SELECT a FROM t QUALIFY x", &mock, &cfg()).unwrap();
        assert_eq!(
            out.ast.sexpr(),
            "SelectStmt[Unsegmented(SELECT a FROM t QUALIFY x)]"
        );
        assert_eq!(mock.call_count(), 4);
        assert_eq!(out.stats.backend_calls, 4);
    }

    #[test]
    fn transport_failures_abort() {
        struct Down;
        impl Segmenter for Down {
            fn segment(&self, _: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
                Err(BackendError::Transport("offline".into()))
            }
        }
        let err = hybrid_segmentation(WALKTHROUGH, &Down, &cfg()).unwrap_err();
        assert!(matches!(err, EngineError::BackendUnavailable(_)));
    }

    #[test]
    fn alternatives() {
        let mock = MockSegmenter::new();
        assert_eq!(
            resolve_alternative("col", &[G::Column, G::Expr], &mock, &cfg()).unwrap(),
            Some(G::Column)
        );
        assert_eq!(
            resolve_alternative("1 !> 2", &[G::Column, G::Expr], &mock, &cfg()).unwrap(),
            Some(G::Expr)
        );
        let dual = FaultInjector::new(MockSegmenter::new(), Fault::DualType, 1);
        assert_eq!(
            resolve_alternative("1 !> 2", &[G::Column, G::Expr], &dual, &cfg()).unwrap(),
            Some(G::Expr)
        );
        assert_eq!(dual.inner().call_count(), 2);
    }

    #[test]
    fn anchors_off_costs_more_calls() {
        let on = MockSegmenter::new();
        let off = MockSegmenter::new();
        let expr = "a !< 1 AND year < 2025 OR b = 2";
        let config = cfg();
        let a = expression_level_segmentation(expr, &on, &config).unwrap();
        let b = expression_level_segmentation(
            expr,
            &off,
            &EngineConfig {
                anchors_enabled: false,
                ..cfg()
            },
        )
        .unwrap();
        assert!(
            off.call_count() > on.call_count(),
            "{} vs {}",
            off.call_count(),
            on.call_count()
        );
        assert_eq!(print_ast(&a.ast).unwrap(), print_ast(&b.ast).unwrap());
    }
}
