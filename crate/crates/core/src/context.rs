//! Reward contexts and the per-task field schemas they must satisfy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rsl::Value;

/// Keyed record of optimizer and agent quantities visible to a reward program.
///
/// A key mapped to `None` is an explicit null: declared by the schema but not
/// produced by the current learner. Reward programs see it as absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardContext {
    fields: BTreeMap<String, Option<Value>>,
}

impl RewardContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: impl Into<Value>) {
        self.fields.insert(name.to_string(), Some(value.into()));
    }

    pub fn set_null(&mut self, name: &str) {
        self.fields.insert(name.to_string(), None);
    }

    pub fn set_opt(&mut self, name: &str, value: Option<Value>) {
        self.fields.insert(name.to_string(), value);
    }

    /// The value of `name`, or `None` when absent or null.
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.get(name).and_then(Option::as_ref)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Value::as_f64)
    }

    pub fn contains_key(&self, name: &str) -> bool {
        self.fields.contains_key(name)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<&Value>)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Integer,
    Vector,
    Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub kind: FieldKind,
    pub description: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
}

/// The field dictionary of one task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    fields: BTreeMap<String, FieldSpec>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, spec: FieldSpec) {
        self.fields.insert(name.to_string(), spec);
    }

    pub fn get(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fields.contains_key(name)
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.fields.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FieldSpec)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Checks that `ctx` carries exactly the schema's keys, that required
    /// fields are non-null, and that every present value is finite and of the
    /// declared kind. Returns a description of the first problem.
    pub fn check(&self, ctx: &RewardContext) -> Result<(), String> {
        for key in ctx.keys() {
            if !self.contains(key) {
                return Err(format!("context carries undeclared field `{key}`"));
            }
        }
        for (name, spec) in self.iter() {
            if !ctx.contains_key(name) {
                return Err(format!("context lacks field `{name}`"));
            }
            let Some(value) = ctx.get(name) else {
                if spec.optional {
                    continue;
                }
                return Err(format!("required field `{name}` is null"));
            };
            if !value.is_finite() {
                return Err(format!("field `{name}` is not finite"));
            }
            let ok = match (spec.kind, value) {
                (FieldKind::Scalar, Value::Num(_) | Value::Bool(_)) => true,
                (FieldKind::Integer, Value::Num(x)) => x.fract() == 0.0,
                (FieldKind::Integer, Value::Bool(_)) => true,
                (FieldKind::Vector, Value::Vector(_)) => true,
                (FieldKind::Matrix, Value::Matrix(_)) => true,
                _ => false,
            };
            if !ok {
                return Err(format!("field `{name}` holds a {} but is declared {:?}", value.kind_name(), spec.kind));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: FieldKind, optional: bool) -> FieldSpec {
        FieldSpec {
            kind,
            description: String::new(),
            optional,
        }
    }

    #[test]
    fn check_flags_missing_extra_and_wrong_kind() {
        let mut schema = Schema::new();
        schema.insert("a", spec(FieldKind::Scalar, false));
        schema.insert("q", spec(FieldKind::Vector, true));
        let mut ctx = RewardContext::new();
        ctx.set("a", 1.0);
        assert!(schema.check(&ctx).unwrap_err().contains("lacks"));
        ctx.set_null("q");
        assert!(schema.check(&ctx).is_ok());
        ctx.set("a", vec![1.0]);
        assert!(schema.check(&ctx).is_err());
        ctx.set("a", 1.0);
        ctx.set("b", 2.0);
        assert!(schema.check(&ctx).unwrap_err().contains("undeclared"));
    }

    #[test]
    fn nulls_read_as_absent() {
        let mut ctx = RewardContext::new();
        ctx.set_null("x");
        assert!(ctx.contains_key("x"));
        assert!(ctx.get("x").is_none());
    }
}
