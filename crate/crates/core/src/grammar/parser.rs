use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use super::keywords::is_function_keyword;
use super::GrammarRuleId;
use crate::ast::{AstNode, Origin, Variant};
use crate::lexer::{tokenize, LexError, Span, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub position: usize,
    pub expected: BTreeSet<String>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected: Vec<&str> = self.expected.iter().map(String::as_str).collect();
        write!(
            f,
            "parse error at byte {}: expected {}, found `{}`",
            self.position,
            expected.join(" | "),
            self.found
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept `<P{n}>` / `<M{n}>` abstraction tokens.
    pub masked: bool,
    /// Parse the body of a `CAST(...)`: `expr AS type`.
    pub cast_body: bool,
}

pub fn parse_fragment(
    text: &str,
    rule: GrammarRuleId,
    masked: bool,
) -> Result<AstNode, ParseError> {
    parse_fragment_with(
        text,
        rule,
        ParseOptions {
            masked,
            cast_body: false,
        },
    )
}

pub fn parse_fragment_with(
    text: &str,
    rule: GrammarRuleId,
    opts: ParseOptions,
) -> Result<AstNode, ParseError> {
    let toks = tokenize(text, opts.masked).map_err(|e| lex_error(text, e))?;
    let mut p = Parser {
        src: text,
        toks,
        pos: 0,
    };
    let node = p.entry(rule, opts)?;
    if p.pos < p.toks.len() {
        return Err(p.error(&["end of input"]));
    }
    Ok(node)
}

fn lex_error(text: &str, e: LexError) -> ParseError {
    let pos = e.position();
    ParseError {
        position: pos,
        expected: BTreeSet::from(["closing quote".to_string()]),
        found: text[pos..].chars().take(16).collect(),
    }
}

/// Binding power of a binary operator; higher binds tighter.
pub fn binary_precedence(op: &str) -> Option<u8> {
    let upper = op.to_ascii_uppercase();
    Some(match upper.as_str() {
        "OR" => 1,
        "AND" => 2,
        "=" | "<>" | "<" | ">" | "<=" | ">=" | "IS" | "IS NOT" | "LIKE" | "NOT LIKE" | "IN"
        | "NOT IN" | "BETWEEN" | "NOT BETWEEN" => 4,
        "||" => 5,
        "+" | "-" => 6,
        "*" | "/" | "%" => 7,
        _ => return None,
    })
}

/// Binding power of prefix `NOT`.
pub const NOT_PRECEDENCE: u8 = 3;
const UNARY_SIGN_PRECEDENCE: u8 = 8;

type PResult<T> = Result<T, ParseError>;

#[derive(Clone, Copy, PartialEq, Eq)]
enum InfixKind {
    Binary,
    In,
    Between,
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token<'a>>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token<'a>> {
        self.toks.get(self.pos + n)
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn at_kw_at(&self, n: usize, kw: &str) -> bool {
        self.peek_at(n).is_some_and(|t| t.is_keyword(kw))
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek().is_some_and(|t| t.kind == kind)
    }

    fn bump(&mut self) -> &'a str {
        let t = self.toks[self.pos].text;
        self.pos += 1;
        t
    }

    fn eat_kw(&mut self, kw: &str) -> Option<&'a str> {
        if self.at_kw(kw) {
            Some(self.bump())
        } else {
            None
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<&'a str> {
        self.eat_kw(kw).ok_or_else(|| self.error(&[kw]))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(&[p]))
        }
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let (position, found) = match self.peek() {
            Some(t) => (t.span.start, t.text.to_string()),
            None => (self.src.len(), "<end of input>".to_string()),
        };
        ParseError {
            position,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn span_from(&self, start: usize) -> Span {
        let begin = self
            .toks
            .get(start)
            .map_or(self.src.len(), |t| t.span.start);
        let end = if self.pos > start {
            self.toks[self.pos - 1].span.end
        } else {
            begin
        };
        Span::new(begin, end)
    }

    fn node(&self, variant: Variant, start: usize) -> AstNode {
        AstNode::grammar(variant).with_span(self.span_from(start))
    }

    fn finish(&self, mut node: AstNode, start: usize) -> AstNode {
        node.span = Some(self.span_from(start));
        node
    }

    fn entry(&mut self, rule: GrammarRuleId, opts: ParseOptions) -> PResult<AstNode> {
        use GrammarRuleId as G;
        match rule {
            G::SelectStmt => {
                let start = self.pos;
                let mut stmt = self.select_stmt()?;
                if self.at_punct(";") {
                    stmt.set_attr("terminator", self.bump());
                    stmt = self.finish(stmt, start);
                }
                Ok(stmt)
            }
            G::SelectClause => self.select_clause(),
            G::SelectSpec => self.keyword_choice(&["DISTINCT", "ALL"]),
            G::Projections => self.list(Self::projection),
            G::Projection => self.projection(),
            G::ProjectionValue => {
                let save = self.pos;
                match self.column() {
                    Ok(node) if self.pos == self.toks.len() => Ok(node),
                    _ => {
                        self.pos = save;
                        self.expr()
                    }
                }
            }
            G::Column => self.column(),
            G::Alias => self.alias()?.ok_or_else(|| self.error(&["alias"])),
            G::FromClause => self.clause_from(),
            G::TableReferences => self.list(Self::table_item),
            G::TableItem => self.table_item(),
            G::TableReference => self.table_ref(),
            G::TableName => {
                let start = self.pos;
                let name = self.dotted_name()?;
                Ok(self.node(Variant::TableRef, start).with_attr("name", name))
            }
            G::DerivedTable => self.subquery(),
            G::JoinedTable => {
                let item = self.table_item()?;
                if item.variant == Variant::Join {
                    Ok(item)
                } else {
                    Err(self.error(&["JOIN"]))
                }
            }
            G::JoinType => {
                let start = self.pos;
                let text = self.join_type()?.ok_or_else(|| self.error(&["JOIN"]))?;
                Ok(self.node(Variant::Keyword, start).with_attr("text", text))
            }
            G::JoinCondition => self
                .join_condition()?
                .ok_or_else(|| self.error(&["ON", "USING"])),
            G::WhereClause => self.predicate_clause("WHERE", Variant::WhereClause),
            G::GroupByClause => self.group_by(),
            G::HavingClause => self.predicate_clause("HAVING", Variant::HavingClause),
            G::OrderByClause => self.order_by(),
            G::OrderItems => self.list(Self::order_item),
            G::OrderItem => self.order_item(),
            G::Direction => self.keyword_choice(&["ASC", "DESC"]),
            G::SetOperation => self.set_operation(),
            G::SetOperator => {
                let start = self.pos;
                let (op, quantifier) = self.set_operator()?;
                let text = match quantifier {
                    Some(q) => format!("{op} {q}"),
                    None => op.to_string(),
                };
                Ok(self.node(Variant::Keyword, start).with_attr("text", text))
            }
            G::Expr if opts.cast_body => self.cast_body(),
            G::Expr => self.expr(),
            G::Exprs => self.list(Self::expr),
            G::Op => self.op(),
            G::Identifier => {
                let start = self.pos;
                let name = self.dotted_name()?;
                Ok(self
                    .node(Variant::Identifier, start)
                    .with_attr("name", name))
            }
            G::Number => match self.peek() {
                Some(t) if t.kind == TokenKind::NumericLiteral => {
                    let start = self.pos;
                    let text = self.bump();
                    Ok(self.node(Variant::Literal, start).with_attr("text", text))
                }
                _ => Err(self.error(&["number"])),
            },
        }
    }

    fn list(&mut self, item: fn(&mut Self) -> PResult<AstNode>) -> PResult<AstNode> {
        let start = self.pos;
        let mut items = vec![item(self)?];
        while self.eat_punct(",") {
            items.push(item(self)?);
        }
        Ok(self.node(Variant::ExprList, start).with_children(items))
    }

    fn keyword_choice(&mut self, choices: &[&str]) -> PResult<AstNode> {
        let start = self.pos;
        for kw in choices {
            if let Some(text) = self.eat_kw(kw) {
                return Ok(self.node(Variant::Keyword, start).with_attr("text", text));
            }
        }
        Err(self.error(choices))
    }

    fn op(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let Some(tok) = self.peek() else {
            return Err(self.error(&["operator"]));
        };
        let mut text = tok.text.to_string();
        let known = match tok.kind {
            TokenKind::Operator => binary_precedence(tok.text).is_some(),
            TokenKind::Keyword => tok.is_keyword("NOT") || binary_precedence(tok.text).is_some(),
            _ => false,
        };
        if !known {
            return Err(self.error(&["operator"]));
        }
        self.pos += 1;
        if text.eq_ignore_ascii_case("IS") || text.eq_ignore_ascii_case("NOT") {
            if let Some(next) = self.peek() {
                let phrase = format!("{} {}", text, next.text);
                if binary_precedence(&phrase).is_some() {
                    self.pos += 1;
                    text = phrase;
                }
            }
        }
        Ok(self.node(Variant::Keyword, start).with_attr("text", text))
    }

    // ---- statements -------------------------------------------------------

    fn select_stmt(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let mut stmt = AstNode::grammar(Variant::SelectStmt);
        stmt.children.push(self.select_clause()?);
        if self.at_kw("FROM") {
            stmt.children.push(self.clause_from()?);
        }
        if self.at_kw("WHERE") {
            stmt.children
                .push(self.predicate_clause("WHERE", Variant::WhereClause)?);
        }
        if self.at_kw("GROUP") {
            stmt.children.push(self.group_by()?);
        }
        if self.at_kw("HAVING") {
            stmt.children
                .push(self.predicate_clause("HAVING", Variant::HavingClause)?);
        }
        if self.at_set_operator() {
            stmt.children.push(self.set_operation()?);
        } else if self.at_kw("ORDER") {
            stmt.children.push(self.order_by()?);
        }
        Ok(self.finish(stmt, start))
    }

    fn select_clause(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let kw = self.expect_kw("SELECT")?;
        let mut clause = AstNode::grammar(Variant::SelectClause).with_attr("keyword", kw);
        if let Some(q) = self.eat_kw("DISTINCT").or_else(|| self.eat_kw("ALL")) {
            clause.set_attr("quantifier", q);
        }
        clause.children.push(self.projection()?);
        while self.eat_punct(",") {
            clause.children.push(self.projection()?);
        }
        Ok(self.finish(clause, start))
    }

    fn projection(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let value = self.expr()?;
        match self.alias()? {
            Some(alias) => Ok(self
                .node(Variant::Projection, start)
                .with_child(value)
                .with_child(alias)),
            None => Ok(value),
        }
    }

    /// `[AS] name`; `None` when no alias follows.
    fn alias(&mut self) -> PResult<Option<AstNode>> {
        let start = self.pos;
        let as_kw = self.eat_kw("AS");
        match self.peek() {
            Some(t) if matches!(t.kind, TokenKind::Identifier | TokenKind::QuotedIdentifier) => {
                let name = self.bump();
                let mut alias = AstNode::grammar(Variant::Alias).with_attr("name", name);
                if let Some(kw) = as_kw {
                    alias.set_attr("as", kw);
                }
                Ok(Some(self.finish(alias, start)))
            }
            _ if as_kw.is_some() => Err(self.error(&["alias name"])),
            _ => Ok(None),
        }
    }

    fn column(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        if self.peek().is_some_and(|t| t.is_op("*")) {
            self.pos += 1;
            return Ok(self.node(Variant::Wildcard, start).with_attr("text", "*"));
        }
        let name = self.dotted_name()?;
        if self.at_punct(".") && self.peek_at(1).is_some_and(|t| t.is_op("*")) {
            self.pos += 2;
            return Ok(self
                .node(Variant::Wildcard, start)
                .with_attr("text", format!("{name}.*")));
        }
        Ok(self
            .node(Variant::Identifier, start)
            .with_attr("name", name))
    }

    fn dotted_name(&mut self) -> PResult<String> {
        let mut name = self.name_part()?;
        while self.at_punct(".")
            && self.peek_at(1).is_some_and(|t| {
                matches!(t.kind, TokenKind::Identifier | TokenKind::QuotedIdentifier)
            })
        {
            self.pos += 1;
            name.push('.');
            name.push_str(self.bump());
        }
        Ok(name)
    }

    fn name_part(&mut self) -> PResult<String> {
        match self.peek() {
            Some(t) if matches!(t.kind, TokenKind::Identifier | TokenKind::QuotedIdentifier) => {
                Ok(self.bump().to_string())
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn clause_from(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let kw = self.expect_kw("FROM")?;
        let mut clause = AstNode::grammar(Variant::FromClause).with_attr("keyword", kw);
        clause.children.push(self.table_item()?);
        while self.eat_punct(",") {
            clause.children.push(self.table_item()?);
        }
        Ok(self.finish(clause, start))
    }

    fn table_item(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let mut left = self.table_ref()?;
        while let Some(join_type) = self.join_type()? {
            let right = self.table_ref()?;
            let mut join = AstNode::grammar(Variant::Join)
                .with_attr("join_type", join_type)
                .with_child(left)
                .with_child(right);
            if let Some(cond) = self.join_condition()? {
                join.children.push(cond);
            }
            left = self.finish(join, start);
        }
        Ok(left)
    }

    fn join_type(&mut self) -> PResult<Option<String>> {
        let mut words = Vec::new();
        if let Some(n) = self.eat_kw("NATURAL") {
            words.push(n);
        }
        if let Some(w) = self.eat_kw("INNER").or_else(|| self.eat_kw("CROSS")) {
            words.push(w);
        } else if let Some(w) = self
            .eat_kw("LEFT")
            .or_else(|| self.eat_kw("RIGHT"))
            .or_else(|| self.eat_kw("FULL"))
        {
            words.push(w);
            if let Some(o) = self.eat_kw("OUTER") {
                words.push(o);
            }
        }
        match self.eat_kw("JOIN") {
            Some(j) => {
                words.push(j);
                Ok(Some(words.join(" ")))
            }
            None if words.is_empty() => Ok(None),
            None => Err(self.error(&["JOIN"])),
        }
    }

    fn join_condition(&mut self) -> PResult<Option<AstNode>> {
        let start = self.pos;
        if let Some(kw) = self.eat_kw("ON") {
            let cond = self.expr()?;
            return Ok(Some(
                self.node(Variant::JoinCondition, start)
                    .with_attr("keyword", kw)
                    .with_child(cond),
            ));
        }
        if let Some(kw) = self.eat_kw("USING") {
            let list_start = self.pos;
            self.expect_punct("(")?;
            let mut cols = Vec::new();
            loop {
                let col_start = self.pos;
                let name = self.name_part()?;
                cols.push(
                    self.node(Variant::Identifier, col_start)
                        .with_attr("name", name),
                );
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct(")")?;
            let list = self.node(Variant::ExprList, list_start).with_children(cols);
            return Ok(Some(
                self.node(Variant::JoinCondition, start)
                    .with_attr("keyword", kw)
                    .with_child(list),
            ));
        }
        Ok(None)
    }

    fn table_ref(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let mut table = if self.at_punct("(") && self.at_kw_at(1, "SELECT") {
            let sub = self.subquery()?;
            AstNode::grammar(Variant::TableRef).with_child(sub)
        } else {
            let name = self.dotted_name()?;
            AstNode::grammar(Variant::TableRef).with_attr("name", name)
        };
        if let Some(alias) = self.alias()? {
            table.children.push(alias);
        }
        Ok(self.finish(table, start))
    }

    fn subquery(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        self.expect_punct("(")?;
        let stmt = self.select_stmt()?;
        self.expect_punct(")")?;
        Ok(self.node(Variant::Subquery, start).with_child(stmt))
    }

    fn predicate_clause(&mut self, kw: &str, variant: Variant) -> PResult<AstNode> {
        let start = self.pos;
        let kw = self.expect_kw(kw)?;
        let cond = self.expr()?;
        Ok(self
            .node(variant, start)
            .with_attr("keyword", kw)
            .with_child(cond))
    }

    fn group_by(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let group = self.expect_kw("GROUP")?;
        let by = self.expect_kw("BY")?;
        let mut clause =
            AstNode::grammar(Variant::GroupByClause).with_attr("keyword", format!("{group} {by}"));
        clause.children.push(self.expr()?);
        while self.eat_punct(",") {
            clause.children.push(self.expr()?);
        }
        Ok(self.finish(clause, start))
    }

    fn order_by(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let order = self.expect_kw("ORDER")?;
        let by = self.expect_kw("BY")?;
        let mut clause =
            AstNode::grammar(Variant::OrderByClause).with_attr("keyword", format!("{order} {by}"));
        clause.children.push(self.order_item()?);
        while self.eat_punct(",") {
            clause.children.push(self.order_item()?);
        }
        Ok(self.finish(clause, start))
    }

    fn order_item(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let expr = self.expr()?;
        match self.eat_kw("ASC").or_else(|| self.eat_kw("DESC")) {
            Some(dir) => Ok(self
                .node(Variant::OrderItem, start)
                .with_attr("direction", dir)
                .with_child(expr)),
            None => Ok(expr),
        }
    }

    fn at_set_operator(&self) -> bool {
        self.at_kw("UNION") || self.at_kw("INTERSECT") || self.at_kw("EXCEPT")
    }

    fn set_operator(&mut self) -> PResult<(&'a str, Option<&'a str>)> {
        if !self.at_set_operator() {
            return Err(self.error(&["UNION", "INTERSECT", "EXCEPT"]));
        }
        let op = self.bump();
        let quantifier = self.eat_kw("ALL").or_else(|| self.eat_kw("DISTINCT"));
        Ok((op, quantifier))
    }

    fn set_operation(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let (op, quantifier) = self.set_operator()?;
        let mut node = AstNode::grammar(Variant::SetOperation).with_attr("operator", op);
        if let Some(q) = quantifier {
            node.set_attr("quantifier", q);
        }
        node.children.push(self.select_stmt()?);
        Ok(self.finish(node, start))
    }

    // ---- expressions ------------------------------------------------------

    fn expr(&mut self) -> PResult<AstNode> {
        self.expr_bp(0)
    }

    fn cast_body(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let value = self.expr()?;
        let as_kw = self.expect_kw("AS")?;
        let ty = self.type_name()?;
        Ok(self.finish(AstNode::binary(as_kw, value, ty, Origin::Grammar), start))
    }

    fn type_name(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        if self.at_kind(TokenKind::MaskToken) {
            return Ok(self.abstraction_leaf(Variant::MaskToken));
        }
        while self.peek().is_some_and(Token::is_word) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(&["type name"]));
        }
        if self.eat_punct("(") {
            loop {
                match self.peek() {
                    Some(t) if t.kind == TokenKind::NumericLiteral => self.pos += 1,
                    _ => return Err(self.error(&["number"])),
                }
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct(")")?;
        }
        let span = self.span_from(start);
        Ok(AstNode::grammar(Variant::Identifier)
            .with_attr("name", &self.src[span.start..span.end])
            .with_span(span))
    }

    fn peek_infix(&self) -> Option<(String, u8, InfixKind, usize)> {
        let t = self.peek()?;
        let (text, len) = match t.kind {
            TokenKind::Operator => (t.text.to_string(), 1),
            TokenKind::Keyword if t.is_keyword("IS") && self.at_kw_at(1, "NOT") => {
                (format!("{} {}", t.text, self.toks[self.pos + 1].text), 2)
            }
            TokenKind::Keyword
                if t.is_keyword("NOT")
                    && (self.at_kw_at(1, "LIKE")
                        || self.at_kw_at(1, "IN")
                        || self.at_kw_at(1, "BETWEEN")) =>
            {
                (format!("{} {}", t.text, self.toks[self.pos + 1].text), 2)
            }
            TokenKind::Keyword if !t.is_keyword("NOT") => (t.text.to_string(), 1),
            _ => return None,
        };
        let prec = binary_precedence(&text)?;
        let upper = text.to_ascii_uppercase();
        let kind = if upper.ends_with("BETWEEN") {
            InfixKind::Between
        } else if upper == "IN" || upper == "NOT IN" {
            InfixKind::In
        } else {
            InfixKind::Binary
        };
        Some((text, prec, kind, len))
    }

    fn expr_bp(&mut self, min_prec: u8) -> PResult<AstNode> {
        let start = self.pos;
        let mut left = if let Some(kw) = self.eat_kw("NOT") {
            let operand = self.expr_bp(NOT_PRECEDENCE)?;
            self.finish(AstNode::unary(kw, operand, false, Origin::Grammar), start)
        } else if self.peek().is_some_and(|t| t.is_op("-") || t.is_op("+")) {
            let sign = self.bump();
            let operand = self.expr_bp(UNARY_SIGN_PRECEDENCE)?;
            self.finish(AstNode::unary(sign, operand, false, Origin::Grammar), start)
        } else {
            self.primary()?
        };

        while let Some((op, prec, kind, len)) = self.peek_infix() {
            if prec < min_prec || prec >= UNARY_SIGN_PRECEDENCE {
                break;
            }
            self.pos += len;
            left = match kind {
                InfixKind::Binary => {
                    let right = self.expr_bp(prec + 1)?;
                    AstNode::binary(op, left, right, Origin::Grammar)
                }
                InfixKind::In => {
                    let right = self.in_rhs()?;
                    AstNode::binary(op, left, right, Origin::Grammar)
                }
                InfixKind::Between => {
                    let low = self.expr_bp(prec + 1)?;
                    let and = self.expect_kw("AND")?;
                    let high = self.expr_bp(prec + 1)?;
                    AstNode::grammar(Variant::Between)
                        .with_attr("op", op)
                        .with_attr("and", and)
                        .with_children([left, low, high])
                }
            };
            left = self.finish(left, start);
        }
        Ok(left)
    }

    fn in_rhs(&mut self) -> PResult<AstNode> {
        if self.at_kind(TokenKind::ParenToken) {
            return Ok(self.abstraction_leaf(Variant::ParenToken));
        }
        if self.at_kind(TokenKind::MaskToken) {
            return Ok(self.abstraction_leaf(Variant::MaskToken));
        }
        if self.at_punct("(") && self.at_kw_at(1, "SELECT") {
            return self.subquery();
        }
        let start = self.pos;
        self.expect_punct("(")?;
        let mut items = vec![self.expr()?];
        while self.eat_punct(",") {
            items.push(self.expr()?);
        }
        self.expect_punct(")")?;
        Ok(self.node(Variant::ExprList, start).with_children(items))
    }

    fn abstraction_leaf(&mut self, variant: Variant) -> AstNode {
        let start = self.pos;
        let text = self.bump();
        self.node(variant, start)
            .with_attr("id", &text[1..text.len() - 1])
    }

    fn next_is_call(&self) -> bool {
        self.peek_at(1)
            .is_some_and(|t| t.is_punct("(") || t.kind == TokenKind::ParenToken)
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error(&["expression"]));
        };
        match tok.kind {
            TokenKind::NumericLiteral | TokenKind::StringLiteral => {
                self.pos += 1;
                Ok(self
                    .node(Variant::Literal, start)
                    .with_attr("text", tok.text))
            }
            TokenKind::MaskToken => Ok(self.abstraction_leaf(Variant::MaskToken)),
            TokenKind::ParenToken => Ok(self.abstraction_leaf(Variant::ParenToken)),
            TokenKind::Operator if tok.text == "*" => {
                self.pos += 1;
                Ok(self.node(Variant::Wildcard, start).with_attr("text", "*"))
            }
            TokenKind::Punctuation if tok.text == "(" => self.parenthesized(),
            TokenKind::Identifier | TokenKind::QuotedIdentifier => {
                if tok.kind == TokenKind::Identifier && self.next_is_call() {
                    return self.function_call();
                }
                self.column()
            }
            TokenKind::Keyword => self.keyword_primary(&tok),
            _ => Err(self.error(&["expression"])),
        }
    }

    fn keyword_primary(&mut self, tok: &Token<'a>) -> PResult<AstNode> {
        let start = self.pos;
        let upper = tok.text.to_ascii_uppercase();
        match upper.as_str() {
            "NULL" | "TRUE" | "FALSE" | "UNKNOWN" => {
                self.pos += 1;
                Ok(self
                    .node(Variant::Literal, start)
                    .with_attr("text", tok.text))
            }
            "DATE" | "TIME" | "TIMESTAMP"
                if self
                    .peek_at(1)
                    .is_some_and(|t| t.kind == TokenKind::StringLiteral) =>
            {
                self.pos += 2;
                let text = format!("{} {}", tok.text, self.toks[self.pos - 1].text);
                Ok(self.node(Variant::Literal, start).with_attr("text", text))
            }
            "CURRENT_DATE" | "CURRENT_TIME" | "CURRENT_TIMESTAMP" | "CURRENT_USER"
            | "SESSION_USER" | "SYSTEM_USER" | "USER" => {
                self.pos += 1;
                Ok(self
                    .node(Variant::Identifier, start)
                    .with_attr("name", tok.text))
            }
            "CASE" => self.case_expr(),
            "CAST" if self.next_is_call() => self.cast(),
            "EXISTS" if self.next_is_call() => {
                self.pos += 1;
                let operand = if self.at_kind(TokenKind::ParenToken) {
                    self.abstraction_leaf(Variant::ParenToken)
                } else {
                    self.subquery()?
                };
                Ok(self.finish(
                    AstNode::unary(tok.text, operand, false, Origin::Grammar),
                    start,
                ))
            }
            _ if is_function_keyword(tok.text) && self.next_is_call() => self.function_call(),
            _ => Err(self.error(&["expression"])),
        }
    }

    fn parenthesized(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        if self.at_kw_at(1, "SELECT") {
            return self.subquery();
        }
        self.expect_punct("(")?;
        let first = self.expr()?;
        if self.at_punct(",") {
            let mut items = vec![first];
            while self.eat_punct(",") {
                items.push(self.expr()?);
            }
            self.expect_punct(")")?;
            return Ok(self.node(Variant::ExprList, start).with_children(items));
        }
        self.expect_punct(")")?;
        Ok(first)
    }

    fn function_call(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let name = self.bump();
        let mut call = AstNode::grammar(Variant::FunctionCall).with_attr("name", name);
        if self.at_kind(TokenKind::ParenToken) {
            call.children
                .push(self.abstraction_leaf(Variant::ParenToken));
            return Ok(self.finish(call, start));
        }
        self.expect_punct("(")?;
        if self.eat_punct(")") {
            return Ok(self.finish(call, start));
        }
        if let Some(q) = self.eat_kw("DISTINCT").or_else(|| self.eat_kw("ALL")) {
            call.set_attr("quantifier", q);
        }
        call.children.push(self.expr()?);
        while self.eat_punct(",") {
            call.children.push(self.expr()?);
        }
        self.expect_punct(")")?;
        Ok(self.finish(call, start))
    }

    fn cast(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let name = self.bump();
        let mut call = AstNode::grammar(Variant::FunctionCall).with_attr("name", name);
        if self.at_kind(TokenKind::ParenToken) {
            call.children
                .push(self.abstraction_leaf(Variant::ParenToken));
            return Ok(self.finish(call, start));
        }
        self.expect_punct("(")?;
        call.children.push(self.cast_body()?);
        self.expect_punct(")")?;
        Ok(self.finish(call, start))
    }

    fn case_expr(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let case_kw = self.expect_kw("CASE")?;
        let mut node = AstNode::grammar(Variant::CaseExpr).with_attr("case", case_kw);
        if !self.at_kw("WHEN") {
            node.set_attr("operand", "true");
            node.children.push(self.expr()?);
        }
        while self.at_kw("WHEN") {
            let when_start = self.pos;
            let when = self.bump();
            let cond = self.expr()?;
            let then = self.expect_kw("THEN")?;
            let result = self.expr()?;
            node.children.push(
                self.node(Variant::CaseWhen, when_start)
                    .with_attr("when", when)
                    .with_attr("then", then)
                    .with_children([cond, result]),
            );
        }
        if !node.children.iter().any(|c| c.variant == Variant::CaseWhen) {
            return Err(self.error(&["WHEN"]));
        }
        if let Some(else_kw) = self.eat_kw("ELSE") {
            node.set_attr("else", else_kw);
            node.children.push(self.expr()?);
        }
        let end = self.expect_kw("END")?;
        node.set_attr("end", end);
        Ok(self.finish(node, start))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GrammarRuleId as G;

    fn sx(text: &str, rule: G) -> String {
        parse_fragment(text, rule, false).unwrap().sexpr()
    }

    #[test]
    fn minimal_select() {
        assert_eq!(
            sx("SELECT * FROM Sales", G::SelectStmt),
            "SelectStmt[SelectClause[Wildcard(*)], FromClause[TableRef(Sales)]]"
        );
    }

    #[test]
    fn top_is_rejected_at_top() {
        let err = parse_fragment("SELECT TOP 10 * FROM Sales", G::SelectStmt, false).unwrap_err();
        assert_eq!(err.position, 7);
        assert_eq!(err.found, "TOP");
        assert!(err.expected.contains("expression"));
    }

    #[test]
    fn masked_expression() {
        let node = parse_fragment("<M0> AND <M1> < <M2>", G::Expr, true).unwrap();
        assert_eq!(
            node.sexpr(),
            "BinaryOp(AND)[MaskToken(M0), BinaryOp(<)[MaskToken(M1), MaskToken(M2)]]"
        );
        assert!(parse_fragment("<M0> AND <M1>", G::Expr, false).is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(
            sx("a OR b AND NOT c = 1 + 2 * 3", G::Expr),
            "BinaryOp(OR)[Identifier(a), BinaryOp(AND)[Identifier(b), UnaryOp(NOT)[BinaryOp(=)[Identifier(c), BinaryOp(+)[Literal(1), BinaryOp(*)[Literal(2), Literal(3)]]]]]]"
        );
        assert_eq!(
            sx("a - b - c", G::Expr),
            "BinaryOp(-)[BinaryOp(-)[Identifier(a), Identifier(b)], Identifier(c)]"
        );
        assert_eq!(
            sx("(tot / 2) < 8", G::Expr),
            "BinaryOp(<)[BinaryOp(/)[Identifier(tot), Literal(2)], Literal(8)]"
        );
    }

    #[test]
    fn predicates() {
        assert_eq!(
            sx("x NOT BETWEEN 1 AND 2 AND y IS NOT NULL", G::Expr),
            "BinaryOp(AND)[Between(NOT BETWEEN)[Identifier(x), Literal(1), Literal(2)], BinaryOp(IS NOT)[Identifier(y), Literal(NULL)]]"
        );
        assert_eq!(
            sx("a IN (1, 2) OR b NOT LIKE 'x%'", G::Expr),
            "BinaryOp(OR)[BinaryOp(IN)[Identifier(a), ExprList[Literal(1), Literal(2)]], BinaryOp(NOT LIKE)[Identifier(b), Literal('x%')]]"
        );
        assert_eq!(
            sx("EXISTS (SELECT 1 FROM t)", G::Expr),
            "UnaryOp(EXISTS)[Subquery[SelectStmt[SelectClause[Literal(1)], FromClause[TableRef(t)]]]]"
        );
    }

    #[test]
    fn functions_case_cast() {
        assert_eq!(
            sx("count(DISTINCT t.a)", G::Expr),
            "FunctionCall(count)[Identifier(t.a)]"
        );
        let cast = parse_fragment("CAST(x AS DECIMAL(10, 2))", G::Expr, false).unwrap();
        assert_eq!(
            cast.sexpr(),
            "FunctionCall(CAST)[BinaryOp(AS)[Identifier(x), Identifier(DECIMAL(10, 2))]]"
        );
        assert_eq!(
            sx("CASE WHEN a THEN 1 ELSE 2 END", G::Expr),
            "CaseExpr[CaseWhen[Identifier(a), Literal(1)], Literal(2)]"
        );
        assert_eq!(
            sx("max(a, b)", G::Expr),
            "FunctionCall(max)[Identifier(a), Identifier(b)]"
        );
    }

    #[test]
    fn masked_function_and_in() {
        let node = parse_fragment("f<P0> IN <P1>", G::Expr, true).unwrap();
        assert_eq!(
            node.sexpr(),
            "BinaryOp(IN)[FunctionCall(f)[ParenToken(P0)], ParenToken(P1)]"
        );
        let cast = parse_fragment_with(
            "<M0> AS <M1>",
            G::Expr,
            ParseOptions {
                masked: true,
                cast_body: true,
            },
        )
        .unwrap();
        assert_eq!(cast.sexpr(), "BinaryOp(AS)[MaskToken(M0), MaskToken(M1)]");
    }

    #[test]
    fn clauses_and_joins() {
        let q = "SELECT DISTINCT a AS x, b y FROM t1 AS p LEFT OUTER JOIN t2 q ON p.id = q.id, t3 \
                 WHERE a > 1 GROUP BY a HAVING count(*) > 2 ORDER BY a DESC, 2";
        let node = parse_fragment(q, G::SelectStmt, false).unwrap();
        let variants: Vec<_> = node.children.iter().map(|c| c.variant).collect();
        assert_eq!(
            variants,
            vec![
                Variant::SelectClause,
                Variant::FromClause,
                Variant::WhereClause,
                Variant::GroupByClause,
                Variant::HavingClause,
                Variant::OrderByClause
            ]
        );
        let from = &node.children[1];
        assert_eq!(from.children[0].variant, Variant::Join);
        assert_eq!(from.children[0].attr("join_type"), Some("LEFT OUTER JOIN"));
        assert_eq!(node.children[0].attr("quantifier"), Some("DISTINCT"));
    }

    #[test]
    fn set_operations_and_subqueries() {
        let node = parse_fragment(
            "SELECT a FROM (SELECT a FROM t) AS s UNION ALL SELECT b FROM u;",
            G::SelectStmt,
            false,
        )
        .unwrap();
        assert_eq!(node.attr("terminator"), Some(";"));
        let set_op = node.children.last().unwrap();
        assert_eq!(set_op.variant, Variant::SetOperation);
        assert_eq!(set_op.attr("quantifier"), Some("ALL"));
    }

    #[test]
    fn terminal_rules() {
        assert!(parse_fragment("DISTINCT", G::SelectSpec, false).is_ok());
        assert!(parse_fragment("TOP 10", G::SelectSpec, false).is_err());
        assert!(parse_fragment("<=", G::Op, false).is_ok());
        assert!(parse_fragment("IS NOT", G::Op, false).is_ok());
        assert!(parse_fragment("!<", G::Op, false).is_err());
        assert!(parse_fragment("AS x", G::Alias, false).is_ok());
        assert!(parse_fragment("col", G::Column, false).is_ok());
        assert!(parse_fragment("1 !> 2", G::Column, false).is_err());
        assert!(parse_fragment("LEFT JOIN", G::JoinType, false).is_ok());
    }

    #[test]
    fn error_positions_in_bounds() {
        for q in ["", "SELECT", "SELECT a FROM", "SELECT 'x", "SELECT a b c"] {
            let err = parse_fragment(q, G::SelectStmt, false).unwrap_err();
            assert!(err.position <= q.len(), "{q}: {err}");
        }
    }

    #[test]
    fn anchors_binding_order() {
        assert!(binary_precedence("OR") < binary_precedence("AND"));
        assert!(binary_precedence("and").unwrap() < NOT_PRECEDENCE);
        assert!(NOT_PRECEDENCE < binary_precedence("=").unwrap());
        assert!(binary_precedence("!<").is_none());
    }
}
