//! `find` and `transform` over ASTs.

use thiserror::Error;

use crate::ast::{AstNode, Variant};

/// A node together with its position under `root`.
#[derive(Debug, Clone, Copy)]
pub struct NodeRef<'a> {
    pub root: &'a AstNode,
    pub node: &'a AstNode,
    path: &'a [usize],
}

impl<'a> NodeRef<'a> {
    pub fn path(&self) -> &'a [usize] {
        self.path
    }

    pub fn parent(&self) -> Option<NodeRef<'a>> {
        let (_, up) = self.path.split_last()?;
        Some(NodeRef {
            root: self.root,
            node: self.root.get(up)?,
            path: up,
        })
    }

    /// Nearest ancestor of the given variant.
    pub fn ancestor(&self, variant: Variant) -> Option<NodeRef<'a>> {
        let mut cur = self.parent();
        while let Some(r) = cur {
            if r.node.variant == variant {
                return Some(r);
            }
            cur = r.parent();
        }
        None
    }
}

/// Owned result of [`find`]: the path into the tree and a copy of the node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Found {
    pub path: Vec<usize>,
    pub node: AstNode,
}

/// Pre-order search for nodes of `variant` accepted by `filter`.
pub fn find(
    variant: Variant,
    root: &AstNode,
    filter: Option<&dyn Fn(&NodeRef<'_>) -> bool>,
) -> Vec<Found> {
    let mut out = Vec::new();
    let mut path = Vec::new();
    visit(root, root, &mut path, &mut |r| {
        if r.node.variant == variant && filter.is_none_or(|f| f(&r)) {
            out.push(Found {
                path: r.path.to_vec(),
                node: r.node.clone(),
            });
        }
    });
    out
}

/// Calls `f` on every node in pre-order.
pub fn visit<'a>(
    root: &'a AstNode,
    node: &'a AstNode,
    path: &mut Vec<usize>,
    f: &mut dyn FnMut(NodeRef<'_>),
) {
    f(NodeRef {
        root,
        node,
        path: path.as_slice(),
    });
    for (i, child) in node.children.iter().enumerate() {
        path.push(i);
        visit(root, child, path, f);
        path.pop();
    }
}

/// What a rewrite rule does with one node.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Keep,
    /// Put this node in place of the visited one; its subtree is not visited.
    Replace(AstNode),
    /// Remove the node from its parent.
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("deleting {child} under {parent} at {path:?} leaves the tree malformed: {detail}")]
pub struct StructureViolation {
    pub parent: Variant,
    pub child: Variant,
    pub path: Vec<usize>,
    pub detail: String,
}

/// Applies `rule` to every node in pre-order and returns the new tree.
pub fn transform<C>(
    root: &AstNode,
    rule: &mut dyn FnMut(&NodeRef<'_>, &mut C) -> Action,
    context: &mut C,
) -> Result<AstNode, StructureViolation> {
    let mut path = Vec::new();
    let top = NodeRef {
        root,
        node: root,
        path: &[],
    };
    match rule(&top, context) {
        Action::Keep => rebuild(root, root, &mut path, rule, context),
        Action::Replace(n) => Ok(n),
        Action::Delete => Err(StructureViolation {
            parent: root.variant,
            child: root.variant,
            path: Vec::new(),
            detail: "the root cannot be deleted".into(),
        }),
    }
}

fn rebuild<C>(
    root: &AstNode,
    node: &AstNode,
    path: &mut Vec<usize>,
    rule: &mut dyn FnMut(&NodeRef<'_>, &mut C) -> Action,
    context: &mut C,
) -> Result<AstNode, StructureViolation> {
    let mut out = AstNode {
        children: Vec::with_capacity(node.children.len()),
        ..node.clone()
    };
    out.children.clear();
    let mut deleted = None;
    for (i, child) in node.children.iter().enumerate() {
        path.push(i);
        let action = rule(
            &NodeRef {
                root,
                node: child,
                path: path.as_slice(),
            },
            context,
        );
        match action {
            Action::Keep => out
                .children
                .push(rebuild(root, child, path, rule, context)?),
            Action::Replace(n) => out.children.push(n),
            Action::Delete => deleted = Some(child.variant),
        }
        path.pop();
    }
    if let Some(child) = deleted {
        if let Err(detail) = check_structure(&out) {
            return Err(StructureViolation {
                parent: node.variant,
                child,
                path: path.clone(),
                detail,
            });
        }
    }
    Ok(out)
}

/// Minimal child requirements per variant, ignoring `Other` leaves.
pub fn check_structure(node: &AstNode) -> Result<(), String> {
    let real: Vec<&AstNode> = node
        .children
        .iter()
        .filter(|c| c.variant != Variant::Other)
        .collect();
    let count = |v: Variant| real.iter().filter(|c| c.variant == v).count();
    let need = |ok: bool, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(format!("{} needs {what}", node.variant))
        }
    };
    match node.variant {
        Variant::SelectStmt => need(
            count(Variant::SelectClause) == 1 || count(Variant::Unsegmented) > 0,
            "a SELECT clause",
        ),
        Variant::SelectClause
        | Variant::FromClause
        | Variant::GroupByClause
        | Variant::OrderByClause
        | Variant::WhereClause
        | Variant::HavingClause
        | Variant::JoinCondition
        | Variant::OrderItem
        | Variant::Subquery
        | Variant::SetOperation
        | Variant::ExprList => need(!real.is_empty(), "at least one item"),
        Variant::Projection => need(
            real.first().is_some_and(|c| c.variant != Variant::Alias),
            "a value",
        ),
        Variant::TableRef => need(
            node.attr("name").is_some() || count(Variant::Subquery) == 1,
            "a table name or subquery",
        ),
        Variant::Join => need(
            real.iter()
                .filter(|c| c.variant != Variant::JoinCondition)
                .count()
                == 2,
            "two inputs",
        ),
        Variant::BinaryOp => need(real.len() == 2, "two operands"),
        Variant::UnaryOp => need(real.len() == 1, "one operand"),
        Variant::Between => need(real.len() == 3, "three operands"),
        Variant::CaseWhen => need(real.len() == 2, "a condition and a result"),
        Variant::CaseExpr => need(count(Variant::CaseWhen) > 0, "a WHEN branch"),
        _ => Ok(()),
    }
}
