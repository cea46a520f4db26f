//! Grammar rule metadata and the recursive-descent parser.
//!
//! `RULES` is the single declarative source for rule ids, their shape, the
//! AST variant they build and the prompt fields used when a fragment has to
//! be segmented. `SegmentMapping` and the structured-output schemas are both
//! derived from it.

pub mod keywords;
pub mod parser;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ast::Variant;

pub use parser::{parse_fragment, parse_fragment_with, ParseError, ParseOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GrammarRuleId {
    SelectStmt,
    SelectClause,
    SelectSpec,
    Projections,
    Projection,
    ProjectionValue,
    Column,
    Alias,
    FromClause,
    TableReferences,
    TableItem,
    TableReference,
    TableName,
    DerivedTable,
    JoinedTable,
    JoinType,
    JoinCondition,
    WhereClause,
    GroupByClause,
    HavingClause,
    OrderByClause,
    OrderItems,
    OrderItem,
    Direction,
    SetOperation,
    SetOperator,
    Expr,
    Exprs,
    Op,
    Identifier,
    Number,
}

impl GrammarRuleId {
    pub fn def(self) -> &'static RuleDef {
        RULES
            .iter()
            .find(|r| r.id == self)
            .expect("every rule id has a table entry")
    }

    pub fn name(self) -> &'static str {
        self.def().name
    }

    pub fn all() -> impl Iterator<Item = GrammarRuleId> {
        RULES.iter().map(|r| r.id)
    }
}

impl fmt::Display for GrammarRuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown grammar rule `{0}`")]
pub struct UnknownRule(pub String);

impl FromStr for GrammarRuleId {
    type Err = UnknownRule;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RULES
            .iter()
            .find(|r| r.name == s)
            .map(|r| r.id)
            .ok_or_else(|| UnknownRule(s.to_string()))
    }
}

/// One named slot of a clause-shaped rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    pub name: &'static str,
    pub rule: GrammarRuleId,
    pub description: &'static str,
    pub optional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClauseDef {
    /// Keyword tokens stripped from the fragment before segmentation.
    pub keyword: &'static [&'static str],
    /// Words a segment for this rule must start with (any of).
    pub leads: &'static [&'static str],
    pub fields: &'static [Field],
    /// Whether unmapped dialect content may be returned under `other`.
    pub other: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Clause(ClauseDef),
    Repetition {
        item: GrammarRuleId,
        delimiter: &'static str,
    },
    Alternatives(&'static [GrammarRuleId]),
    /// A parenthesized query: `"(" selectStmt ")"`.
    Wrapper(GrammarRuleId),
    Expression,
    Terminal,
}

/// What a rule contributes to the AST.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AstTarget {
    Node(Variant),
    /// Items or the chosen alternative are attached in place of the rule.
    Splice,
    /// Any expression variant.
    Expression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleDef {
    pub id: GrammarRuleId,
    pub name: &'static str,
    pub kind: RuleKind,
    pub ast: AstTarget,
}

impl RuleDef {
    pub fn clause(&self) -> Option<&ClauseDef> {
        match &self.kind {
            RuleKind::Clause(c) => Some(c),
            _ => None,
        }
    }
}

pub const OTHER_FIELD: &str = "other";
pub const OTHER_DESCRIPTION: &str = "Any additional dialect-specific contents.";

const fn field(
    name: &'static str,
    rule: GrammarRuleId,
    description: &'static str,
    optional: bool,
) -> Field {
    Field {
        name,
        rule,
        description,
        optional,
    }
}

use GrammarRuleId as G;

pub static RULES: &[RuleDef] = &[
    RuleDef {
        id: G::SelectStmt,
        name: "selectStmt",
        ast: AstTarget::Node(Variant::SelectStmt),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &[],
            leads: &["SELECT"],
            other: true,
            fields: &[
                field("select", G::SelectClause, "The SELECT clause, including the **SELECT** keyword and its associated projections.", false),
                field("from_", G::FromClause, "The FROM clause, including the **FROM** keyword, specifying the source table(s).", true),
                field("where", G::WhereClause, "The WHERE clause, including the **WHERE** keyword, defining filtering conditions.", true),
                field("group_by", G::GroupByClause, "The GROUP BY clause, including the **GROUP BY** keywords and its grouping expressions.", true),
                field("having", G::HavingClause, "The HAVING clause, including the **HAVING** keyword, defining group filtering conditions.", true),
                field("order_by", G::OrderByClause, "The ORDER BY clause, including the **ORDER BY** keywords and its sort items.", true),
                field("set_operation", G::SetOperation, "A set operation, including the **UNION**, **INTERSECT** or **EXCEPT** keyword and the query that follows it.", true),
            ],
        }),
    },
    RuleDef {
        id: G::SelectClause,
        name: "selectClause",
        ast: AstTarget::Node(Variant::SelectClause),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["SELECT"],
            leads: &["SELECT"],
            other: true,
            fields: &[
                field("select_spec", G::SelectSpec, "The set quantifier or any row-limiting modifier placed before the projections.", true),
                field("projections", G::Projections, "The comma-separated list of projections.", false),
            ],
        }),
    },
    RuleDef {
        id: G::SelectSpec,
        name: "selectSpec",
        ast: AstTarget::Node(Variant::Keyword),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::Projections,
        name: "projections",
        ast: AstTarget::Splice,
        kind: RuleKind::Repetition {
            item: G::Projection,
            delimiter: ",",
        },
    },
    RuleDef {
        id: G::Projection,
        name: "projection",
        ast: AstTarget::Node(Variant::Projection),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &[],
            leads: &[],
            other: true,
            fields: &[
                field("value", G::ProjectionValue, "The projected column or expression.", false),
                field("alias", G::Alias, "The output alias, including the **AS** keyword if present.", true),
            ],
        }),
    },
    RuleDef {
        id: G::ProjectionValue,
        name: "projectionValue",
        ast: AstTarget::Splice,
        kind: RuleKind::Alternatives(&[G::Column, G::Expr]),
    },
    RuleDef {
        id: G::Column,
        name: "column",
        ast: AstTarget::Node(Variant::Identifier),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::Alias,
        name: "alias",
        ast: AstTarget::Node(Variant::Alias),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::FromClause,
        name: "fromClause",
        ast: AstTarget::Node(Variant::FromClause),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["FROM"],
            leads: &["FROM"],
            other: true,
            fields: &[field("table_references", G::TableReferences, "The comma-separated list of table references and joins.", false)],
        }),
    },
    RuleDef {
        id: G::TableReferences,
        name: "tableReferences",
        ast: AstTarget::Splice,
        kind: RuleKind::Repetition {
            item: G::TableItem,
            delimiter: ",",
        },
    },
    RuleDef {
        id: G::TableItem,
        name: "tableItem",
        ast: AstTarget::Splice,
        kind: RuleKind::Alternatives(&[G::TableReference, G::JoinedTable]),
    },
    RuleDef {
        id: G::TableReference,
        name: "tableReference",
        ast: AstTarget::Node(Variant::TableRef),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &[],
            leads: &[],
            other: true,
            fields: &[
                field("table", G::TableName, "The name of the referenced table.", true),
                field("subquery", G::DerivedTable, "A parenthesized subquery used as a table.", true),
                field("alias", G::Alias, "The table alias, including the **AS** keyword if present.", true),
            ],
        }),
    },
    RuleDef {
        id: G::TableName,
        name: "tableName",
        ast: AstTarget::Node(Variant::TableRef),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::DerivedTable,
        name: "derivedTable",
        ast: AstTarget::Node(Variant::Subquery),
        kind: RuleKind::Wrapper(G::SelectStmt),
    },
    RuleDef {
        id: G::JoinedTable,
        name: "joinedTable",
        ast: AstTarget::Node(Variant::Join),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &[],
            leads: &[],
            other: true,
            fields: &[
                field("left", G::TableItem, "The left input of the join.", false),
                field("join_type", G::JoinType, "The join keywords, including **JOIN**.", false),
                field("right", G::TableItem, "The right input of the join.", false),
                field("condition", G::JoinCondition, "The join condition, including the **ON** keyword.", true),
            ],
        }),
    },
    RuleDef {
        id: G::JoinType,
        name: "joinType",
        ast: AstTarget::Node(Variant::Keyword),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::JoinCondition,
        name: "joinCondition",
        ast: AstTarget::Node(Variant::JoinCondition),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["ON"],
            leads: &["ON"],
            other: true,
            fields: &[field("condition", G::Expr, "The join predicate.", false)],
        }),
    },
    RuleDef {
        id: G::WhereClause,
        name: "whereClause",
        ast: AstTarget::Node(Variant::WhereClause),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["WHERE"],
            leads: &["WHERE"],
            other: true,
            fields: &[field("condition", G::Expr, "The filtering condition.", false)],
        }),
    },
    RuleDef {
        id: G::GroupByClause,
        name: "groupByClause",
        ast: AstTarget::Node(Variant::GroupByClause),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["GROUP", "BY"],
            leads: &["GROUP"],
            other: true,
            fields: &[field("expressions", G::Exprs, "The comma-separated grouping expressions.", false)],
        }),
    },
    RuleDef {
        id: G::HavingClause,
        name: "havingClause",
        ast: AstTarget::Node(Variant::HavingClause),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["HAVING"],
            leads: &["HAVING"],
            other: true,
            fields: &[field("condition", G::Expr, "The group filtering condition.", false)],
        }),
    },
    RuleDef {
        id: G::OrderByClause,
        name: "orderByClause",
        ast: AstTarget::Node(Variant::OrderByClause),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &["ORDER", "BY"],
            leads: &["ORDER"],
            other: true,
            fields: &[field("items", G::OrderItems, "The comma-separated sort items.", false)],
        }),
    },
    RuleDef {
        id: G::OrderItems,
        name: "orderItems",
        ast: AstTarget::Splice,
        kind: RuleKind::Repetition {
            item: G::OrderItem,
            delimiter: ",",
        },
    },
    RuleDef {
        id: G::OrderItem,
        name: "orderItem",
        ast: AstTarget::Node(Variant::OrderItem),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &[],
            leads: &[],
            other: true,
            fields: &[
                field("expression", G::Expr, "The sort expression.", false),
                field("direction", G::Direction, "The sort direction keyword **ASC** or **DESC**.", true),
            ],
        }),
    },
    RuleDef {
        id: G::Direction,
        name: "direction",
        ast: AstTarget::Node(Variant::Keyword),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::SetOperation,
        name: "setOperation",
        ast: AstTarget::Node(Variant::SetOperation),
        kind: RuleKind::Clause(ClauseDef {
            keyword: &[],
            leads: &["UNION", "INTERSECT", "EXCEPT"],
            other: true,
            fields: &[
                field("operator", G::SetOperator, "The set operator keyword with its optional **ALL** or **DISTINCT** quantifier.", false),
                field("query", G::SelectStmt, "The query on the right-hand side of the set operator.", false),
            ],
        }),
    },
    RuleDef {
        id: G::SetOperator,
        name: "setOperator",
        ast: AstTarget::Node(Variant::Keyword),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::Expr,
        name: "expr",
        ast: AstTarget::Expression,
        kind: RuleKind::Expression,
    },
    RuleDef {
        id: G::Exprs,
        name: "exprs",
        ast: AstTarget::Splice,
        kind: RuleKind::Repetition {
            item: G::Expr,
            delimiter: ",",
        },
    },
    RuleDef {
        id: G::Op,
        name: "op",
        ast: AstTarget::Node(Variant::Keyword),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::Identifier,
        name: "identifier",
        ast: AstTarget::Node(Variant::Identifier),
        kind: RuleKind::Terminal,
    },
    RuleDef {
        id: G::Number,
        name: "number",
        ast: AstTarget::Node(Variant::Literal),
        kind: RuleKind::Terminal,
    },
];

/// True iff the rule's right-hand side references a non-terminal.
pub fn has_nonterminal(rule: GrammarRuleId) -> bool {
    !matches!(rule.def().kind, RuleKind::Terminal)
}

/// Expression response fields, in declared order.
pub const EXPR_FIELDS: [Field; 3] = [
    field(
        "literal",
        G::Identifier,
        "The whole fragment when it is a single literal value, column name or other terminal.",
        true,
    ),
    field(
        "operator",
        G::Op,
        "The top-level operator of the fragment when it is an operation.",
        true,
    ),
    field(
        "operands",
        G::Expr,
        "The operands of the top-level operator, in source order.",
        true,
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptField {
    pub name: &'static str,
    pub description: &'static str,
    pub optional: bool,
}

#[derive(Debug, Clone)]
pub struct SegmentMapping {
    pub rule2ast: BTreeMap<GrammarRuleId, AstTarget>,
    pub rule2prompt: BTreeMap<GrammarRuleId, Vec<(GrammarRuleId, PromptField)>>,
    pub segment2rule: BTreeMap<GrammarRuleId, BTreeMap<&'static str, GrammarRuleId>>,
}

impl SegmentMapping {
    pub fn load() -> Self {
        let mut mapping = SegmentMapping {
            rule2ast: BTreeMap::new(),
            rule2prompt: BTreeMap::new(),
            segment2rule: BTreeMap::new(),
        };
        for def in RULES.iter().filter(|d| has_nonterminal(d.id)) {
            let prompt: Vec<(GrammarRuleId, PromptField)> = match &def.kind {
                RuleKind::Clause(c) => c.fields.iter().map(|f| (f.rule, prompt_field(f))).collect(),
                RuleKind::Repetition { item, .. } => vec![(
                    *item,
                    PromptField {
                        name: "items",
                        description: "The items of the list.",
                        optional: false,
                    },
                )],
                RuleKind::Alternatives(alts) => alts
                    .iter()
                    .map(|a| {
                        (
                            *a,
                            PromptField {
                                name: a.name(),
                                description: alternative_description(*a),
                                optional: false,
                            },
                        )
                    })
                    .collect(),
                RuleKind::Wrapper(inner) => vec![(
                    *inner,
                    PromptField {
                        name: "query",
                        description: "The query inside the parentheses.",
                        optional: false,
                    },
                )],
                RuleKind::Expression => EXPR_FIELDS
                    .iter()
                    .map(|f| (f.rule, prompt_field(f)))
                    .collect(),
                RuleKind::Terminal => unreachable!("filtered"),
            };
            mapping
                .segment2rule
                .insert(def.id, prompt.iter().map(|(r, p)| (p.name, *r)).collect());
            mapping.rule2prompt.insert(def.id, prompt);
            mapping.rule2ast.insert(def.id, def.ast);
        }
        mapping
    }
}

fn prompt_field(f: &Field) -> PromptField {
    PromptField {
        name: f.name,
        description: f.description,
        optional: f.optional,
    }
}

fn alternative_description(rule: GrammarRuleId) -> &'static str {
    match rule {
        G::Column => "True if the fragment is a plain column reference.",
        G::Expr => "True if the fragment is an expression.",
        G::TableReference => {
            "True if the fragment is a single table reference with optional alias."
        }
        G::JoinedTable => "True if the fragment is a join of table references.",
        _ => "True if the fragment has this form.",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn has_nonterminal_examples() {
        assert!(has_nonterminal(G::SelectClause));
        assert!(!has_nonterminal(G::SelectSpec));
        assert!(!has_nonterminal(G::Op));
        assert!(has_nonterminal(G::Expr));
    }

    #[test]
    fn table_is_total_and_names_unique() {
        let mut names = std::collections::BTreeSet::new();
        for def in RULES {
            assert!(names.insert(def.name), "duplicate {}", def.name);
            assert_eq!(def.id.def().name, def.name);
            assert_eq!(def.name.parse::<GrammarRuleId>().unwrap(), def.id);
            let json = serde_json::to_string(&def.id).unwrap();
            assert_eq!(json, format!("\"{}\"", def.name));
        }
        assert!("nope".parse::<GrammarRuleId>().is_err());
    }

    #[test]
    fn mapping_is_complete_and_bijective() {
        let mapping = SegmentMapping::load();
        for id in GrammarRuleId::all() {
            let expected = has_nonterminal(id);
            assert_eq!(mapping.rule2ast.contains_key(&id), expected, "{id}");
            assert_eq!(mapping.rule2prompt.contains_key(&id), expected, "{id}");
            assert_eq!(mapping.segment2rule.contains_key(&id), expected, "{id}");
            if let Some(prompt) = mapping.rule2prompt.get(&id) {
                let seg = &mapping.segment2rule[&id];
                assert_eq!(seg.len(), prompt.len(), "field names unique in {id}");
                for (rule, pf) in prompt {
                    assert_eq!(seg[pf.name], *rule);
                    assert_ne!(pf.name, OTHER_FIELD);
                }
            }
        }
    }

    #[test]
    fn clause_keywords_are_reserved() {
        for def in RULES {
            if let Some(c) = def.clause() {
                for kw in c.keyword.iter().chain(c.leads) {
                    assert!(keywords::is_keyword(kw), "{kw}");
                }
            }
        }
    }
}
