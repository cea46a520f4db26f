//! AST to SQL.
//!
//! Keywords are re-emitted in the case recorded in node attributes; nodes
//! built by rewrites fall back to canonical uppercase. Tokens are separated
//! by single spaces and list items by `", "`.

use thiserror::Error;

use crate::ast::{AstNode, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrintError {
    #[error("incomplete AST: unresolved {variant} node {id}")]
    IncompleteAst { variant: Variant, id: String },
    #[error("malformed {variant} node: {detail}")]
    Malformed { variant: Variant, detail: String },
}

pub fn print_ast(root: &AstNode) -> Result<String, PrintError> {
    let mut out = Vec::new();
    emit(root, &mut out)?;
    Ok(out.join(" "))
}

fn kw<'a>(node: &'a AstNode, key: &str, default: &'a str) -> &'a str {
    node.attr(key).unwrap_or(default)
}

fn text_attr<'a>(node: &'a AstNode, key: &str) -> Result<&'a str, PrintError> {
    node.attr(key).ok_or_else(|| PrintError::Malformed {
        variant: node.variant,
        detail: format!("missing `{key}` attribute"),
    })
}

fn malformed(node: &AstNode, detail: &str) -> PrintError {
    PrintError::Malformed {
        variant: node.variant,
        detail: detail.to_string(),
    }
}

/// Emits `items` joined by `", "`, except around `Other` nodes, which are
/// separated by plain spaces.
fn emit_list(items: &[AstNode], out: &mut Vec<String>) -> Result<(), PrintError> {
    let mut prev_listed = false;
    for item in items {
        let listed = !matches!(item.variant, Variant::Other);
        if prev_listed && listed {
            if let Some(last) = out.last_mut() {
                last.push(',');
            }
        }
        emit(item, out)?;
        prev_listed = listed;
    }
    Ok(())
}

fn emit_all(items: &[AstNode], out: &mut Vec<String>) -> Result<(), PrintError> {
    items.iter().try_for_each(|c| emit(c, out))
}

fn to_string(node: &AstNode) -> Result<String, PrintError> {
    print_ast(node)
}

fn emit(node: &AstNode, out: &mut Vec<String>) -> Result<(), PrintError> {
    match node.variant {
        Variant::SelectStmt => {
            emit_all(&node.children, out)?;
            if let Some(term) = node.attr("terminator") {
                out.push(term.to_string());
            }
        }
        Variant::SelectClause => {
            out.push(kw(node, "keyword", "SELECT").to_string());
            if let Some(q) = node.attr("quantifier") {
                out.push(q.to_string());
            }
            emit_list(&node.children, out)?;
        }
        Variant::FromClause => {
            out.push(kw(node, "keyword", "FROM").to_string());
            emit_list(&node.children, out)?;
        }
        Variant::GroupByClause => {
            out.push(kw(node, "keyword", "GROUP BY").to_string());
            emit_list(&node.children, out)?;
        }
        Variant::OrderByClause => {
            out.push(kw(node, "keyword", "ORDER BY").to_string());
            emit_list(&node.children, out)?;
        }
        Variant::WhereClause => {
            out.push(kw(node, "keyword", "WHERE").to_string());
            emit_all(&node.children, out)?;
        }
        Variant::HavingClause => {
            out.push(kw(node, "keyword", "HAVING").to_string());
            emit_all(&node.children, out)?;
        }
        Variant::JoinCondition => {
            out.push(kw(node, "keyword", "ON").to_string());
            emit_all(&node.children, out)?;
        }
        Variant::SetOperation => {
            out.push(kw(node, "operator", "UNION").to_string());
            if let Some(q) = node.attr("quantifier") {
                out.push(q.to_string());
            }
            emit_all(&node.children, out)?;
        }
        Variant::Projection => emit_all(&node.children, out)?,
        Variant::OrderItem => {
            let (first, rest) = node
                .children
                .split_first()
                .ok_or_else(|| malformed(node, "no sort expression"))?;
            emit(first, out)?;
            if let Some(dir) = node.attr("direction") {
                out.push(dir.to_string());
            }
            emit_all(rest, out)?;
        }
        Variant::TableRef => {
            if let Some(name) = node.attr("name") {
                out.push(name.to_string());
            }
            emit_all(&node.children, out)?;
        }
        Variant::Join => {
            let split = node
                .children
                .iter()
                .position(|c| c.variant != Variant::Other)
                .ok_or_else(|| malformed(node, "no join inputs"))?;
            emit_all(&node.children[..=split], out)?;
            out.push(kw(node, "join_type", "JOIN").to_string());
            emit_all(&node.children[split + 1..], out)?;
        }
        Variant::Alias => {
            if let Some(as_kw) = node.attr("as") {
                out.push(as_kw.to_string());
            }
            out.push(text_attr(node, "name")?.to_string());
        }
        Variant::Identifier => out.push(text_attr(node, "name")?.to_string()),
        Variant::Literal
        | Variant::Wildcard
        | Variant::Keyword
        | Variant::Other
        | Variant::Unsegmented => out.push(text_attr(node, "text")?.to_string()),
        Variant::BinaryOp => {
            let [left, right] = node.children.as_slice() else {
                return Err(malformed(node, "expected two operands"));
            };
            let op = text_attr(node, "op")?;
            out.push(operand(node, left, false)?);
            out.push(op.to_string());
            if is_in(op) && !matches!(right.variant, Variant::ExprList | Variant::Subquery) {
                out.push(format!("({})", to_string(right)?));
            } else {
                out.push(operand(node, right, true)?);
            }
        }
        Variant::UnaryOp => {
            let [child] = node.children.as_slice() else {
                return Err(malformed(node, "expected one operand"));
            };
            let op = text_attr(node, "op")?.to_string();
            let inner = operand(node, child, true)?;
            if node.attr("position") == Some("postfix") {
                out.push(inner);
                out.push(op);
            } else {
                out.push(op);
                out.push(inner);
            }
        }
        Variant::Between => {
            let [value, low, high] = node.children.as_slice() else {
                return Err(malformed(node, "expected three operands"));
            };
            out.push(operand(node, value, true)?);
            out.push(kw(node, "op", "BETWEEN").to_string());
            out.push(operand(node, low, true)?);
            out.push(kw(node, "and", "AND").to_string());
            out.push(operand(node, high, true)?);
        }
        Variant::FunctionCall => {
            let name = text_attr(node, "name")?;
            let mut args = Vec::new();
            if let Some(q) = node.attr("quantifier") {
                args.push(q.to_string());
            }
            emit_list(&node.children, &mut args)?;
            out.push(format!("{name}({})", args.join(" ")));
        }
        Variant::CaseExpr => {
            out.push(kw(node, "case", "CASE").to_string());
            let mut children = node.children.iter().peekable();
            if node.attr("operand").is_some() {
                let first = children
                    .next()
                    .ok_or_else(|| malformed(node, "missing operand"))?;
                emit(first, out)?;
            }
            for child in children {
                if child.variant != Variant::CaseWhen && child.variant != Variant::Other {
                    out.push(kw(node, "else", "ELSE").to_string());
                }
                emit(child, out)?;
            }
            out.push(kw(node, "end", "END").to_string());
        }
        Variant::CaseWhen => {
            let [cond, result] = node.children.as_slice() else {
                return Err(malformed(node, "expected condition and result"));
            };
            out.push(kw(node, "when", "WHEN").to_string());
            emit(cond, out)?;
            out.push(kw(node, "then", "THEN").to_string());
            emit(result, out)?;
        }
        Variant::Subquery => {
            let mut inner = Vec::new();
            emit_all(&node.children, &mut inner)?;
            out.push(format!("({})", inner.join(" ")));
        }
        Variant::ExprList => {
            let mut inner = Vec::new();
            emit_list(&node.children, &mut inner)?;
            out.push(format!("({})", inner.join(" ")));
        }
        Variant::MaskToken | Variant::ParenToken | Variant::Pending => {
            return Err(PrintError::IncompleteAst {
                variant: node.variant,
                id: node
                    .attr("id")
                    .or_else(|| node.attr("slot"))
                    .unwrap_or("?")
                    .to_string(),
            })
        }
    }
    Ok(())
}

fn is_in(op: &str) -> bool {
    op.eq_ignore_ascii_case("IN") || op.eq_ignore_ascii_case("NOT IN")
}

/// Prints an operand, parenthesizing operator nodes whose operator differs
/// from the parent's, and same-operator right operands.
fn operand(parent: &AstNode, child: &AstNode, right: bool) -> Result<String, PrintError> {
    let text = to_string(child)?;
    if !child.variant.is_operator() {
        return Ok(text);
    }
    let same_op = match (parent.op(), child.op()) {
        (Some(a), Some(b)) => a.eq_ignore_ascii_case(b) && parent.variant == child.variant,
        _ => false,
    };
    let wrap = match parent.variant {
        Variant::BinaryOp => !same_op || right,
        Variant::UnaryOp => !same_op,
        _ => true,
    };
    Ok(if wrap { format!("({text})") } else { text })
}
