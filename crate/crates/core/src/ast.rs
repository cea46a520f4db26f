use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lexer::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    SelectStmt,
    SelectClause,
    FromClause,
    WhereClause,
    GroupByClause,
    HavingClause,
    OrderByClause,
    SetOperation,
    Projection,
    OrderItem,
    TableRef,
    Join,
    JoinCondition,
    Alias,
    Identifier,
    Literal,
    Wildcard,
    BinaryOp,
    UnaryOp,
    Between,
    FunctionCall,
    CaseExpr,
    CaseWhen,
    Subquery,
    ExprList,
    Keyword,
    Other,
    Unsegmented,
    /// `<M{n}>` placeholder; only present in masked parses.
    MaskToken,
    /// `<P{n}>` placeholder; only present in masked parses.
    ParenToken,
    /// Slot waiting for a queued fragment; only present while the engine runs.
    Pending,
}

impl Variant {
    pub const ALL: [Variant; 31] = [
        Variant::SelectStmt,
        Variant::SelectClause,
        Variant::FromClause,
        Variant::WhereClause,
        Variant::GroupByClause,
        Variant::HavingClause,
        Variant::OrderByClause,
        Variant::SetOperation,
        Variant::Projection,
        Variant::OrderItem,
        Variant::TableRef,
        Variant::Join,
        Variant::JoinCondition,
        Variant::Alias,
        Variant::Identifier,
        Variant::Literal,
        Variant::Wildcard,
        Variant::BinaryOp,
        Variant::UnaryOp,
        Variant::Between,
        Variant::FunctionCall,
        Variant::CaseExpr,
        Variant::CaseWhen,
        Variant::Subquery,
        Variant::ExprList,
        Variant::Keyword,
        Variant::Other,
        Variant::Unsegmented,
        Variant::MaskToken,
        Variant::ParenToken,
        Variant::Pending,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SelectStmt => "SelectStmt",
            Variant::SelectClause => "SelectClause",
            Variant::FromClause => "FromClause",
            Variant::WhereClause => "WhereClause",
            Variant::GroupByClause => "GroupByClause",
            Variant::HavingClause => "HavingClause",
            Variant::OrderByClause => "OrderByClause",
            Variant::SetOperation => "SetOperation",
            Variant::Projection => "Projection",
            Variant::OrderItem => "OrderItem",
            Variant::TableRef => "TableRef",
            Variant::Join => "Join",
            Variant::JoinCondition => "JoinCondition",
            Variant::Alias => "Alias",
            Variant::Identifier => "Identifier",
            Variant::Literal => "Literal",
            Variant::Wildcard => "Wildcard",
            Variant::BinaryOp => "BinaryOp",
            Variant::UnaryOp => "UnaryOp",
            Variant::Between => "Between",
            Variant::FunctionCall => "FunctionCall",
            Variant::CaseExpr => "CaseExpr",
            Variant::CaseWhen => "CaseWhen",
            Variant::Subquery => "Subquery",
            Variant::ExprList => "ExprList",
            Variant::Keyword => "Keyword",
            Variant::Other => "Other",
            Variant::Unsegmented => "Unsegmented",
            Variant::MaskToken => "MaskToken",
            Variant::ParenToken => "ParenToken",
            Variant::Pending => "Pending",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Operator-like nodes that the printer may need to parenthesize.
    pub fn is_operator(self) -> bool {
        matches!(
            self,
            Variant::BinaryOp | Variant::UnaryOp | Variant::Between
        )
    }

    pub fn is_clause(self) -> bool {
        matches!(
            self,
            Variant::SelectClause
                | Variant::FromClause
                | Variant::WhereClause
                | Variant::GroupByClause
                | Variant::HavingClause
                | Variant::OrderByClause
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Grammar,
    Segmenter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub variant: Variant,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
    pub origin: Origin,
    #[serde(default)]
    pub children: Vec<AstNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_hint: Option<usize>,
}

impl AstNode {
    pub fn new(variant: Variant, origin: Origin) -> Self {
        AstNode {
            variant,
            attrs: BTreeMap::new(),
            origin,
            children: Vec::new(),
            span: None,
            position_hint: None,
        }
    }

    pub fn grammar(variant: Variant) -> Self {
        AstNode::new(variant, Origin::Grammar)
    }

    pub fn segmenter(variant: Variant) -> Self {
        AstNode::new(variant, Origin::Segmenter)
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<String>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn with_child(mut self, child: AstNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn with_children(mut self, children: impl IntoIterator<Item = AstNode>) -> Self {
        self.children.extend(children);
        self
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = Some(span);
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn set_attr(&mut self, key: &str, value: impl Into<String>) {
        self.attrs.insert(key.to_string(), value.into());
    }

    pub fn identifier(name: impl Into<String>, origin: Origin) -> Self {
        AstNode::new(Variant::Identifier, origin).with_attr("name", name)
    }

    pub fn literal(text: impl Into<String>, origin: Origin) -> Self {
        AstNode::new(Variant::Literal, origin).with_attr("text", text)
    }

    pub fn other(text: impl Into<String>) -> Self {
        AstNode::segmenter(Variant::Other).with_attr("text", text)
    }

    pub fn unsegmented(text: impl Into<String>) -> Self {
        AstNode::segmenter(Variant::Unsegmented).with_attr("text", text)
    }

    pub fn binary(op: impl Into<String>, left: AstNode, right: AstNode, origin: Origin) -> Self {
        AstNode::new(Variant::BinaryOp, origin)
            .with_attr("op", op)
            .with_child(left)
            .with_child(right)
    }

    pub fn unary(op: impl Into<String>, operand: AstNode, postfix: bool, origin: Origin) -> Self {
        AstNode::new(Variant::UnaryOp, origin)
            .with_attr("op", op)
            .with_attr("position", if postfix { "postfix" } else { "prefix" })
            .with_child(operand)
    }

    /// Text carried by leaf variants (`Other`, `Unsegmented`, `Literal`, ...).
    pub fn text(&self) -> Option<&str> {
        self.attr("text").or_else(|| self.attr("name"))
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Operator text for `BinaryOp`, `UnaryOp` and `Between`.
    pub fn op(&self) -> Option<&str> {
        self.attr("op")
    }

    /// Pre-order traversal.
    pub fn walk(&self, f: &mut impl FnMut(&AstNode)) {
        f(self);
        for child in &self.children {
            child.walk(f);
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut AstNode)) {
        f(self);
        for child in &mut self.children {
            child.walk_mut(f);
        }
    }

    pub fn any(&self, pred: &impl Fn(&AstNode) -> bool) -> bool {
        pred(self) || self.children.iter().any(|c| c.any(pred))
    }

    pub fn contains_variant(&self, variant: Variant) -> bool {
        self.any(&|n| n.variant == variant)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    pub fn get(&self, path: &[usize]) -> Option<&AstNode> {
        path.iter().try_fold(self, |n, &i| n.children.get(i))
    }

    pub fn get_mut(&mut self, path: &[usize]) -> Option<&mut AstNode> {
        path.iter().try_fold(self, |n, &i| n.children.get_mut(i))
    }

    /// Structural equality ignoring origin, spans and position hints.
    pub fn structurally_eq(&self, other: &AstNode) -> bool {
        self.variant == other.variant
            && self.attrs == other.attrs
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.structurally_eq(b))
    }

    /// Copy with origin, spans and position hints stripped; handy for diffs.
    pub fn skeleton(&self) -> AstNode {
        AstNode {
            variant: self.variant,
            attrs: self.attrs.clone(),
            origin: Origin::Grammar,
            children: self.children.iter().map(AstNode::skeleton).collect(),
            span: None,
            position_hint: None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("AST serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("AST serializes")
    }

    pub fn from_json_str(s: &str) -> Result<AstNode, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Compact one-line rendering, e.g. `BinaryOp(AND)[Identifier(a), Identifier(b)]`.
    pub fn sexpr(&self) -> String {
        let mut out = String::new();
        self.write_sexpr(&mut out);
        out
    }

    fn write_sexpr(&self, out: &mut String) {
        out.push_str(self.variant.name());
        let label = match self.variant {
            Variant::BinaryOp | Variant::UnaryOp | Variant::Between => self.attr("op"),
            Variant::FunctionCall | Variant::TableRef | Variant::Identifier | Variant::Alias => {
                self.attr("name")
            }
            Variant::MaskToken | Variant::ParenToken => self.attr("id"),
            _ => self.attr("text"),
        };
        if let Some(label) = label {
            out.push('(');
            out.push_str(label);
            out.push(')');
        }
        if !self.children.is_empty() {
            out.push('[');
            for (i, child) in self.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                child.write_sexpr(out);
            }
            out.push(']');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let node = AstNode::binary(
            "AND",
            AstNode::identifier("a", Origin::Grammar),
            AstNode::identifier("b", Origin::Segmenter),
            Origin::Segmenter,
        );
        let v = node.to_json();
        assert_eq!(v["variant"], "BinaryOp");
        assert_eq!(v["attrs"]["op"], "AND");
        assert_eq!(v["origin"], "segmenter");
        assert_eq!(v["children"][0]["origin"], "grammar");
        assert!(v.get("span").is_none());
        let back = AstNode::from_json_str(&node.to_json_string()).unwrap();
        assert_eq!(back, node);
    }

    #[test]
    fn structural_equality_ignores_metadata() {
        let a = AstNode::other("TOP 10");
        let mut b = AstNode::other("TOP 10");
        b.origin = Origin::Grammar;
        b.position_hint = Some(3);
        b.span = Some(Span::new(1, 2));
        assert!(a.structurally_eq(&b));
        assert_ne!(a, b);
        assert!(!a.structurally_eq(&AstNode::other("TOP 5")));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
    }

    #[test]
    fn sexpr_rendering() {
        let node = AstNode::binary(
            "<",
            AstNode::identifier("year", Origin::Segmenter),
            AstNode::literal("2025", Origin::Grammar),
            Origin::Grammar,
        );
        assert_eq!(node.sexpr(), "BinaryOp(<)[Identifier(year), Literal(2025)]");
    }
}
