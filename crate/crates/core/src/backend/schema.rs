//! Structured-output schemas derived from the grammar rule table.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{BackendError, ClauseSegments, ExprSegments, SegmenterResponse};
use crate::grammar::{
    GrammarRuleId, RuleKind, SegmentMapping, EXPR_FIELDS, OTHER_DESCRIPTION, OTHER_FIELD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseForm {
    Clause,
    Classify,
    Expression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Text,
    TextList,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub description: String,
    pub optional: bool,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub form: ResponseForm,
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl OutputSchema {
    pub fn clause(rule: GrammarRuleId) -> Self {
        let def = rule.def();
        let mapping = SegmentMapping::load();
        let mut fields: Vec<FieldSpec> = mapping
            .rule2prompt
            .get(&rule)
            .map(|prompt| {
                prompt
                    .iter()
                    .map(|(_, p)| FieldSpec {
                        name: p.name.to_string(),
                        description: p.description.to_string(),
                        optional: p.optional,
                        kind: FieldKind::Text,
                    })
                    .collect()
            })
            .unwrap_or_default();
        if def.clause().is_some_and(|c| c.other) {
            fields.push(FieldSpec {
                name: OTHER_FIELD.to_string(),
                description: OTHER_DESCRIPTION.to_string(),
                optional: true,
                kind: FieldKind::TextList,
            });
        }
        OutputSchema {
            form: ResponseForm::Clause,
            name: def.name.to_string(),
            fields,
        }
    }

    pub fn classify(rule: GrammarRuleId) -> Self {
        let def = rule.def();
        let mapping = SegmentMapping::load();
        let fields = match def.kind {
            RuleKind::Alternatives(_) => mapping.rule2prompt[&rule]
                .iter()
                .map(|(_, p)| FieldSpec {
                    name: p.name.to_string(),
                    description: p.description.to_string(),
                    optional: false,
                    kind: FieldKind::Flag,
                })
                .collect(),
            _ => Vec::new(),
        };
        OutputSchema {
            form: ResponseForm::Classify,
            name: def.name.to_string(),
            fields,
        }
    }

    pub fn expression() -> Self {
        OutputSchema {
            form: ResponseForm::Expression,
            name: "expr".to_string(),
            fields: EXPR_FIELDS
                .iter()
                .map(|f| FieldSpec {
                    name: f.name.to_string(),
                    description: f.description.to_string(),
                    optional: true,
                    kind: if f.name == "operands" {
                        FieldKind::TextList
                    } else {
                        FieldKind::Text
                    },
                })
                .collect(),
        }
    }

    /// Strict JSON schema: every property is required, optional ones are nullable.
    pub fn to_json_schema(&self) -> Value {
        let mut props = Map::new();
        for f in &self.fields {
            let ty = match (f.kind, f.optional) {
                (FieldKind::Text, false) => json!({"type": "string"}),
                (FieldKind::Text, true) => json!({"type": ["string", "null"]}),
                (FieldKind::TextList, false) => {
                    json!({"type": "array", "items": {"type": "string"}})
                }
                (FieldKind::TextList, true) => {
                    json!({"type": ["array", "null"], "items": {"type": "string"}})
                }
                (FieldKind::Flag, _) => json!({"type": "boolean"}),
            };
            let mut ty = ty;
            ty["description"] = Value::String(f.description.clone());
            props.insert(f.name.clone(), ty);
        }
        let required: Vec<&str> = self.fields.iter().map(|f| f.name.as_str()).collect();
        json!({
            "type": "object",
            "properties": props,
            "required": required,
            "additionalProperties": false,
        })
    }

    pub fn decode(&self, value: &Value) -> Result<SegmenterResponse, BackendError> {
        let obj = value
            .as_object()
            .ok_or_else(|| BackendError::Schema("response is not a JSON object".into()))?;
        if let Some(extra) = obj
            .keys()
            .find(|k| !self.fields.iter().any(|f| &f.name == *k))
        {
            return Err(BackendError::Schema(format!("unexpected field `{extra}`")));
        }
        match self.form {
            ResponseForm::Clause => {
                let mut segments = ClauseSegments::default();
                for f in &self.fields {
                    if f.name == OTHER_FIELD {
                        segments.other = text_list(obj.get(&f.name), &f.name)?;
                    } else if let Some(text) = text(obj.get(&f.name), &f.name)? {
                        segments.fields.push((f.name.clone(), text));
                    } else if !f.optional {
                        return Err(BackendError::Schema(format!(
                            "required field `{}` is missing",
                            f.name
                        )));
                    }
                }
                Ok(SegmenterResponse::Clause(segments))
            }
            ResponseForm::Classify => {
                let mut choices = Vec::new();
                for f in &self.fields {
                    let flag = match obj.get(&f.name) {
                        Some(Value::Bool(b)) => *b,
                        None | Some(Value::Null) => false,
                        Some(other) => {
                            return Err(BackendError::Schema(format!(
                                "field `{}` should be a boolean, got {other}",
                                f.name
                            )))
                        }
                    };
                    choices.push((f.name.clone(), flag));
                }
                Ok(SegmenterResponse::Classify { choices })
            }
            ResponseForm::Expression => Ok(SegmenterResponse::Expression(ExprSegments {
                literal: text(obj.get("literal"), "literal")?,
                operator: text(obj.get("operator"), "operator")?,
                operands: text_list(obj.get("operands"), "operands")?,
            })),
        }
    }
}

fn text(value: Option<&Value>, name: &str) -> Result<Option<String>, BackendError> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.trim().to_string())),
        Some(other) => Err(BackendError::Schema(format!(
            "field `{name}` should be a string, got {other}"
        ))),
    }
}

fn text_list(value: Option<&Value>, name: &str) -> Result<Vec<String>, BackendError> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(if s.trim().is_empty() {
            Vec::new()
        } else {
            vec![s.trim().to_string()]
        }),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| match v {
                Value::String(s) if s.trim().is_empty() => None,
                Value::String(s) => Some(Ok(s.trim().to_string())),
                other => Some(Err(BackendError::Schema(format!(
                    "field `{name}` should hold strings, got {other}"
                )))),
            })
            .collect(),
        Some(other) => Err(BackendError::Schema(format!(
            "field `{name}` should be a list of strings, got {other}"
        ))),
    }
}

/// Wire form of a response, the inverse of [`OutputSchema::decode`].
pub fn encode(schema: &OutputSchema, response: &SegmenterResponse) -> Value {
    let mut obj = Map::new();
    match response {
        SegmenterResponse::Clause(c) => {
            for f in &schema.fields {
                let v = if f.name == OTHER_FIELD {
                    json!(c.other)
                } else {
                    c.get(&f.name).map_or(Value::Null, |s| json!(s))
                };
                obj.insert(f.name.clone(), v);
            }
        }
        SegmenterResponse::Classify { choices } => {
            for (name, flag) in choices {
                obj.insert(name.clone(), json!(flag));
            }
        }
        SegmenterResponse::Expression(e) => {
            obj.insert("literal".into(), json!(e.literal));
            obj.insert("operator".into(), json!(e.operator));
            obj.insert(
                "operands".into(),
                if e.operands.is_empty() {
                    Value::Null
                } else {
                    json!(e.operands)
                },
            );
        }
    }
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_stmt_schema_mirrors_field_descriptions() {
        let schema = OutputSchema::clause(GrammarRuleId::SelectStmt);
        let names: Vec<_> = schema.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "select",
                "from_",
                "where",
                "group_by",
                "having",
                "order_by",
                "set_operation",
                "other"
            ]
        );
        let js = schema.to_json_schema();
        assert_eq!(
            js["properties"]["where"]["description"],
            "The WHERE clause, including the **WHERE** keyword, defining filtering conditions."
        );
        assert_eq!(js["properties"]["select"]["type"], "string");
        assert_eq!(js["required"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn decode_clause() {
        let schema = OutputSchema::clause(GrammarRuleId::SelectStmt);
        let resp = schema
            .decode(&json!({
                "select": "SELECT TOP 10 *",
                "from_": "FROM Sales",
                "where": null,
                "other": ["OPTION (FAST 10)"]
            }))
            .unwrap();
        let SegmenterResponse::Clause(c) = &resp else {
            panic!()
        };
        assert_eq!(c.get("select"), Some("SELECT TOP 10 *"));
        assert_eq!(c.get("where"), None);
        assert_eq!(c.other, vec!["OPTION (FAST 10)"]);
        assert_eq!(schema.decode(&encode(&schema, &resp)).unwrap(), resp);
    }

    #[test]
    fn decode_errors() {
        let schema = OutputSchema::clause(GrammarRuleId::SelectStmt);
        assert!(schema.decode(&json!({"from_": "FROM t"})).is_err());
        assert!(schema
            .decode(&json!({"select": "SELECT a", "bogus": 1}))
            .is_err());
        assert!(schema.decode(&json!("SELECT")).is_err());
        let expr = OutputSchema::expression();
        assert!(expr.decode(&json!({"operands": "x"})).is_ok());
        assert!(expr.decode(&json!({"literal": 3})).is_err());
    }

    #[test]
    fn classify_schema_lists_alternatives() {
        let schema = OutputSchema::classify(GrammarRuleId::ProjectionValue);
        let names: Vec<_> = schema.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["column", "expr"]);
        let resp = schema
            .decode(&json!({"column": false, "expr": true}))
            .unwrap();
        assert_eq!(
            resp,
            SegmenterResponse::Classify {
                choices: vec![("column".into(), false), ("expr".into(), true)]
            }
        );
    }
}
