//! The reward scripting language: a closed, sandboxed dialect for reward programs.
//!
//! ```text
//! # reward for an accepted trial, shaped by the relative improvement
//! gain = ctx.delta_cost / (abs(ctx.parent_cost) + 1e-12)
//! if ctx.accepted == 1 {
//!     r = 1.0 + clip(gain, 0.0, 1.0)
//! } else {
//!     r = 0.0
//! }
//! return r, {"gain": gain}
//! ```
//!
//! Programs read context fields through `ctx.name` (dotted names such as
//! `ctx.population.cost` are single keys), optional fields through
//! `ctx.get("name", default)` and `ctx.has("name")`, and must end with
//! `return <total>, <record>`.

mod ast;
mod error;
mod interp;
mod lexer;
mod parser;
mod value;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ast::{Ast, Builtin};
pub use error::{ParseError, ParseErrorKind, RuntimeError, SchemaError};
pub use interp::{EvalLimits, RewardOutput};
pub use value::{Matrix, Value};

use crate::context::{RewardContext, Schema};

pub const MAX_SOURCE_BYTES: usize = 64 * 1024;

/// A parsed reward program. Serializes as its source text.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RewardProgram {
    source: String,
    ast: Arc<Ast>,
    referenced_fields: BTreeSet<String>,
    content_hash: String,
}

impl RewardProgram {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// Context keys the program may read.
    pub fn referenced_fields(&self) -> &BTreeSet<String> {
        &self.referenced_fields
    }

    /// SHA-256 hex digest of the token stream; comments and layout do not count.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    /// The `task=` value of a `#! rsl v1` header line, if present.
    pub fn declared_task(&self) -> Option<&str> {
        header_task(&self.source)
    }

    pub fn evaluate(&self, ctx: &RewardContext, limits: EvalLimits) -> Result<RewardOutput, RuntimeError> {
        interp::run(&self.ast, ctx, limits)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), SchemaError> {
        validate(self, schema)
    }
}

impl fmt::Debug for RewardProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardProgram")
            .field("content_hash", &self.content_hash)
            .field("referenced_fields", &self.referenced_fields)
            .finish()
    }
}

impl PartialEq for RewardProgram {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl TryFrom<String> for RewardProgram {
    type Error = ParseError;

    fn try_from(source: String) -> Result<Self, ParseError> {
        parse(&source)
    }
}

impl From<RewardProgram> for String {
    fn from(p: RewardProgram) -> String {
        p.source
    }
}

pub fn parse(source: &str) -> Result<RewardProgram, ParseError> {
    if source.len() > MAX_SOURCE_BYTES {
        return Err(ParseError {
            kind: ParseErrorKind::SourceTooLarge,
            line: 1,
            col: 1,
            message: format!("{} bytes exceeds the {MAX_SOURCE_BYTES}-byte limit", source.len()),
        });
    }
    let tokens = lexer::tokenize(source)?;
    let content_hash = hash_tokens(&tokens);
    let parsed = parser::parse_tokens(tokens)?;
    Ok(RewardProgram {
        source: source.to_string(),
        ast: Arc::new(parsed.ast),
        referenced_fields: parsed.referenced_fields,
        content_hash,
    })
}

pub fn evaluate(program: &RewardProgram, ctx: &RewardContext, limits: EvalLimits) -> Result<RewardOutput, RuntimeError> {
    program.evaluate(ctx, limits)
}

pub fn validate(program: &RewardProgram, schema: &Schema) -> Result<(), SchemaError> {
    let unknown_fields: BTreeSet<String> = program
        .referenced_fields
        .iter()
        .filter(|f| !schema.contains(f))
        .cloned()
        .collect();
    if unknown_fields.is_empty() {
        Ok(())
    } else {
        Err(SchemaError { unknown_fields })
    }
}

pub fn canonical_hash(program: &RewardProgram) -> &str {
    program.content_hash()
}

fn hash_tokens(tokens: &[lexer::Token]) -> String {
    let mut h = Sha256::new();
    h.update(b"rsl-v1");
    for t in tokens {
        match t.tok {
            lexer::Tok::Eof => break,
            // Statement separators are optional, so they are layout.
            lexer::Tok::Semi => continue,
            _ => {}
        }
        h.update([0x1f]);
        h.update(t.tok.canonical().as_bytes());
    }
    hex::encode(h.finalize())
}

const HEADER_PREFIX: &str = "#! rsl v1";

fn header_task(source: &str) -> Option<&str> {
    let first = source.lines().next()?.trim();
    let rest = first.strip_prefix(HEADER_PREFIX)?;
    rest.split_whitespace().find_map(|w| w.strip_prefix("task="))
}

/// Renders a reward file: the `#! rsl v1 task=<id>` header followed by the
/// program body. An existing header line in `source` is replaced.
pub fn reward_file_text(task_id: &str, source: &str) -> String {
    let body = if source.trim_start().starts_with(HEADER_PREFIX) {
        source.trim_start().split_once('\n').map_or("", |(_, b)| b)
    } else {
        source
    };
    let mut out = format!("{HEADER_PREFIX} task={task_id}\n{body}");
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

/// JSON sidecar stored next to a reward file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSidecar {
    pub thought: String,
    pub content_hash: String,
    pub fitness: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_with(pairs: &[(&str, Value)]) -> RewardContext {
        let mut c = RewardContext::new();
        for (k, v) in pairs {
            c.set(k, v.clone());
        }
        c
    }

    fn run(src: &str, ctx: &RewardContext) -> Result<RewardOutput, RuntimeError> {
        parse(src).unwrap().evaluate(ctx, EvalLimits::default())
    }

    fn total(src: &str) -> f64 {
        run(src, &RewardContext::new()).unwrap().total
    }

    #[test]
    fn empty_program_reads_nothing() {
        let p = parse("return 0.0, {}").unwrap();
        assert!(p.referenced_fields().is_empty());
        assert_eq!(total("return 0.0, {}"), 0.0);
    }

    #[test]
    fn single_field_read_is_collected() {
        let p = parse("return tanh(ctx.gbest_improve), {}").unwrap();
        assert_eq!(p.referenced_fields().iter().collect::<Vec<_>>(), vec!["gbest_improve"]);
    }

    #[test]
    fn clip_and_mean_examples() {
        assert_eq!(total("return clip(tanh(5.0), -1.0, 0.5), {}"), 0.5);
        let out = run("return mean([1.0, 2.0, 3.0]), {\"m\": 2.0}", &RewardContext::new()).unwrap();
        assert_eq!(out.total, 2.0);
        assert_eq!(out.components.get("m"), Some(&2.0));
    }

    #[test]
    fn precedence_matches_python() {
        assert_eq!(total("return -2 ** 2, {}"), -4.0);
        assert_eq!(total("return 2 ** 3 ** 2, {}"), 512.0);
        assert_eq!(total("return 1 + 2 * 3 - 4 / 2, {}"), 5.0);
        assert_eq!(total("return -7 % 3, {}"), 2.0);
        assert_eq!(total("return 7 % -3, {}"), -2.0);
        assert_eq!(total("return not 1 < 2 or 3 > 2 and 0, {}"), 0.0);
    }

    #[test]
    fn statements_and_loops() {
        let src = "s = 0\nfor i in range(1, 5) { if i % 2 == 0 { s = s + i } else { s = s - 1 } }\nreturn s, {\"s\": s}";
        assert_eq!(total(src), 4.0);
        let src = "v = zeros(3); v[1] = 2; v[-1] = 5; return sum(v), {}";
        assert_eq!(total(src), 7.0);
        let src = "r = {\"a\": 1}; r[\"b\"] = 2; return r[\"a\"] + r[\"b\"], r";
        let out = run(src, &RewardContext::new()).unwrap();
        assert_eq!(out.total, 3.0);
        assert_eq!(out.components.len(), 2);
    }

    #[test]
    fn elif_chain_picks_first_true_branch() {
        let src = "x = 5\nif x < 0 { y = 0 } elif x < 10 { y = 1 } elif x < 100 { y = 2 } else { y = 3 }\nreturn y, {}";
        assert_eq!(total(src), 1.0);
    }

    #[test]
    fn numpy_like_builtins() {
        assert_eq!(total("return median([3, 1, 2, 4]), {}"), 2.5);
        assert_eq!(total("return quantile([1, 2, 3, 4, 5], 0.25), {}"), 2.0);
        assert_eq!(total("return std([1, 1, 3, 3]), {}"), 1.0);
        assert_eq!(total("return ptp([4, -1, 2]), {}"), 5.0);
        assert_eq!(total("return roll([1, 2, 3], 1)[0], {}"), 3.0);
        assert_eq!(total("return argsort([3, 1, 2])[0], {}"), 1.0);
        assert_eq!(total("return argmax([1, 5, 5]), {}"), 1.0);
        assert_eq!(total("return corr([1, 1, 1], [1, 2, 3]), {}"), 0.0);
        assert!((total("return corr([1, 2, 3], [2, 4, 7]), {}") - 0.99339926).abs() < 1e-7);
        assert_eq!(total("return dot([1, 2], [3, 4]), {}"), 11.0);
        assert_eq!(total("return len(append([1], [2, 3])), {}"), 3.0);
        assert_eq!(total("return sum(slice([1, 2, 3, 4], -3, -1)), {}"), 5.0);
        assert_eq!(total("return max(1, 4, 2), {}"), 4.0);
        assert_eq!(total("return sum(max([1, 5], 3)), {}"), 8.0);
        assert_eq!(total("return norm([3, 4]), {}"), 5.0);
        assert_eq!(total("return int(-2.7) + floor(-2.5), {}"), -5.0);
    }

    #[test]
    fn matrix_axis_reductions() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        let ctx = ctx_with(&[("population", Value::from(m))]);
        let get = |src: &str| run(src, &ctx).unwrap().total;
        assert_eq!(get("return sum(mean(ctx.population, 0)), {}"), 6.0);
        assert_eq!(get("return max(ctx.population, 1)[1], {}"), 6.0);
        assert_eq!(get("return min(ctx.population), {}"), 1.0);
        assert_eq!(get("return rows(ctx.population) * cols(ctx.population), {}"), 4.0);
        assert_eq!(get("return sum(ctx.population - mean(ctx.population, 0)), {}"), 0.0);
        assert!((get("return norm(ctx.population, 1)[0] ** 2, {}") - 5.0).abs() < 1e-12);
        assert_eq!(get("return ctx.population[1][0], {}"), 3.0);
    }

    #[test]
    fn vector_comparisons_yield_masks() {
        assert_eq!(total("return sum([1, 5, 3] > 2), {}"), 2.0);
        assert_eq!(total("return mean([0, 2] == 2), {}"), 0.5);
    }

    #[test]
    fn runtime_errors_are_structured() {
        let empty = RewardContext::new();
        assert!(matches!(run("return 1 / 0, {}", &empty), Err(RuntimeError::NonFinite { .. })));
        assert!(matches!(run("return log(0), {}", &empty), Err(RuntimeError::NonFinite { .. })));
        assert!(matches!(run("return ctx.x, {}", &empty), Err(RuntimeError::MissingContextKey(_))));
        assert!(matches!(run("return [1, 2], {}", &empty), Err(RuntimeError::TypeMismatch { .. })));
        assert!(matches!(run("return [1, 2][2], {}", &empty), Err(RuntimeError::IndexOutOfRange { .. })));
        assert!(matches!(
            run("if 0 { y = 1 }\nreturn y, {}", &empty),
            Err(RuntimeError::UndefinedVariable { .. })
        ));
        assert!(matches!(run("if [1] { x = 1 }\nreturn 0, {}", &empty), Err(RuntimeError::TypeMismatch { .. })));
        assert!(matches!(run("return 0, 1", &empty), Err(RuntimeError::TypeMismatch { .. })));
    }

    #[test]
    fn optional_fields_use_defaults() {
        let mut ctx = RewardContext::new();
        ctx.set_null("q_span");
        let src = "return ctx.get(\"q_span\", 0.25) + ctx.has(\"q_span\"), {}";
        assert_eq!(run(src, &ctx).unwrap().total, 0.25);
        ctx.set("q_span", 1.0);
        assert_eq!(run(src, &ctx).unwrap().total, 2.0);
        assert!(matches!(run("return ctx.q_span, {}", &RewardContext::new()), Err(RuntimeError::MissingContextKey(_))));
    }

    #[test]
    fn triple_loop_hits_step_budget() {
        let src = "n = 100000\ns = 0\nfor i in range(n) { for j in range(n) { for k in range(n) { s = s + 1 } } }\nreturn s, {}";
        let err = run(src, &RewardContext::new()).unwrap_err();
        assert_eq!(err, RuntimeError::StepBudgetExceeded { limit: 1_000_000 });
    }

    #[test]
    fn oversized_collections_are_refused() {
        let err = run("v = zeros(200000)\nreturn 0, {}", &RewardContext::new()).unwrap_err();
        assert!(matches!(err, RuntimeError::CollectionTooLarge { .. }));
    }

    #[test]
    fn parse_errors_carry_positions_and_kinds() {
        let e = parse("x = 1\ny = 2 +\nreturn 0, {}").unwrap_err();
        assert_eq!((e.kind, e.line), (ParseErrorKind::Syntax, 3));
        let e = parse("return foo(1), {}").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownFunction);
        let e = parse("return y, {}").unwrap_err();
        assert_eq!((e.kind, e.line, e.col), (ParseErrorKind::UnknownIdentifier, 1, 8));
        let e = parse("def f() { }\nreturn 0, {}").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Unsupported);
        let e = parse("for i in items { }\nreturn 0, {}").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Unsupported);
        assert!(parse("x = 1").is_err());
        assert!(parse("return 0, {}\nx = 1").is_err());
        assert!(parse("if 1 { return 0, {} }\nreturn 0, {}").is_err());
        assert_eq!(parse(&" ".repeat(MAX_SOURCE_BYTES + 1)).unwrap_err().kind, ParseErrorKind::SourceTooLarge);
    }

    #[test]
    fn deep_nesting_is_a_parse_error_not_a_crash() {
        let deep = format!("return {}1{}, {{}}", "(".repeat(5000), ")".repeat(5000));
        assert!(parse(&deep).is_err());
        let long = format!("return 1{}, {{}}", " + 1".repeat(5000));
        assert!(parse(&long).is_err());
        let negs = format!("return {}1, {{}}", "-".repeat(5000));
        assert!(parse(&negs).is_err());
    }

    #[test]
    fn hash_ignores_layout_and_comments() {
        let a = parse("x = 1 + 2\nreturn x, {}").unwrap();
        let b = parse("#! rsl v1 task=de-operator-selection\n# note\nx=1+2;   return x,{}").unwrap();
        let c = parse("x = 1 + 3\nreturn x, {}").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(b.declared_task(), Some("de-operator-selection"));
    }

    #[test]
    fn validate_reports_unknown_fields() {
        let mut schema = Schema::new();
        schema.insert(
            "gbest_improve",
            crate::context::FieldSpec {
                kind: crate::context::FieldKind::Scalar,
                description: String::new(),
                optional: false,
            },
        );
        assert!(parse("return ctx.gbest_improve, {}").unwrap().validate(&schema).is_ok());
        let err = parse("return ctx.nonexistent_field + ctx.get(\"other\", 0), {}")
            .unwrap()
            .validate(&schema)
            .unwrap_err();
        assert_eq!(err.unknown_fields.into_iter().collect::<Vec<_>>(), vec!["nonexistent_field", "other"]);
    }

    #[test]
    fn reward_file_header_is_written_once() {
        let text = reward_file_text("pso-parameter-control", "return 0.0, {}");
        assert_eq!(text, "#! rsl v1 task=pso-parameter-control\nreturn 0.0, {}\n");
        assert_eq!(reward_file_text("pso-parameter-control", &text), text);
        assert_eq!(parse(&text).unwrap().declared_task(), Some("pso-parameter-control"));
    }

    #[test]
    fn program_serializes_as_source() {
        let p = parse("return 1, {}").unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"return 1, {}\"");
        let back: RewardProgram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
