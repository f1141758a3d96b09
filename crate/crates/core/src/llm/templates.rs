use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// Every prompt the search issues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Init,
    M1Reflect,
    M1Mutate,
    M2,
    M3Reflect,
    M3Mutate,
    C1,
    C2,
    KtReflect,
    KtExecute,
    MetaSummarize,
    SimpleMutate,
}

impl TemplateId {
    pub const ALL: [TemplateId; 12] = [
        TemplateId::Init,
        TemplateId::M1Reflect,
        TemplateId::M1Mutate,
        TemplateId::M2,
        TemplateId::M3Reflect,
        TemplateId::M3Mutate,
        TemplateId::C1,
        TemplateId::C2,
        TemplateId::KtReflect,
        TemplateId::KtExecute,
        TemplateId::MetaSummarize,
        TemplateId::SimpleMutate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Init => "init",
            TemplateId::M1Reflect => "m1_reflect",
            TemplateId::M1Mutate => "m1_mutate",
            TemplateId::M2 => "m2",
            TemplateId::M3Reflect => "m3_reflect",
            TemplateId::M3Mutate => "m3_mutate",
            TemplateId::C1 => "c1",
            TemplateId::C2 => "c2",
            TemplateId::KtReflect => "kt_reflect",
            TemplateId::KtExecute => "kt_execute",
            TemplateId::MetaSummarize => "meta_summarize",
            TemplateId::SimpleMutate => "simple_mutate",
        }
    }

    /// Whether the response is a ⟨thought, code⟩ pair rather than free text.
    pub fn generates_code(self) -> bool {
        !matches!(
            self,
            TemplateId::M1Reflect | TemplateId::M3Reflect | TemplateId::KtReflect | TemplateId::MetaSummarize
        )
    }

    /// 1.0 for generation prompts, 0.3 for reflections and plans.
    pub fn temperature(self) -> f64 {
        if self.generates_code() {
            1.0
        } else {
            0.3
        }
    }

    pub fn template(self) -> PromptTemplate {
        let body = match self {
            TemplateId::Init => include_str!("../../fixtures/templates/init.txt"),
            TemplateId::M1Reflect => include_str!("../../fixtures/templates/m1_reflect.txt"),
            TemplateId::M1Mutate => include_str!("../../fixtures/templates/m1_mutate.txt"),
            TemplateId::M2 => include_str!("../../fixtures/templates/m2.txt"),
            TemplateId::M3Reflect => include_str!("../../fixtures/templates/m3_reflect.txt"),
            TemplateId::M3Mutate => include_str!("../../fixtures/templates/m3_mutate.txt"),
            TemplateId::C1 => include_str!("../../fixtures/templates/c1.txt"),
            TemplateId::C2 => include_str!("../../fixtures/templates/c2.txt"),
            TemplateId::KtReflect => include_str!("../../fixtures/templates/kt_reflect.txt"),
            TemplateId::KtExecute => include_str!("../../fixtures/templates/kt_execute.txt"),
            TemplateId::MetaSummarize => include_str!("../../fixtures/templates/meta_summarize.txt"),
            TemplateId::SimpleMutate => include_str!("../../fixtures/templates/simple_mutate.txt"),
        };
        PromptTemplate::new(self, body).expect("bundled template is well formed")
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, LlmError> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| LlmError::UnknownTemplate(s.to_string()))
    }
}

/// System message sent with every prompt: the output convention and a summary of RSL.
pub const SYSTEM_PROMPT: &str = include_str!("../../fixtures/templates/system.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// A prompt body with `{name}` placeholders; `{{` and `}}` are literal braces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: &str) -> Result<Self, LlmError> {
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut chars = body.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if matches!(chars.peek(), Some((_, '{'))) => {
                    chars.next();
                    text.push('{');
                }
                '}' if matches!(chars.peek(), Some((_, '}'))) => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let rest = &body[i + 1..];
                    let end = rest.find('}').ok_or(LlmError::BadTemplate {
                        id,
                        offset: i,
                    })?;
                    let name = &rest[..end];
                    if name.is_empty() || !name.chars().all(is_name_char) {
                        return Err(LlmError::BadTemplate { id, offset: i });
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(name.to_string()));
                    for _ in 0..=end {
                        chars.next();
                    }
                }
                '}' => return Err(LlmError::BadTemplate { id, offset: i }),
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        let required = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.clone()),
                Piece::Text(_) => None,
            })
            .collect();
        Ok(Self { id, pieces, required })
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Fills every placeholder. Extra variables are ignored.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, LlmError> {
        let missing: Vec<String> = self.required.iter().filter(|k| !vars.contains_key(*k)).cloned().collect();
        if !missing.is_empty() {
            return Err(LlmError::MissingPlaceholders {
                id: self.id,
                missing,
            });
        }
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(&vars[s]),
            }
        }
        Ok(out)
    }
}

/// Builds a variable map from `(name, value)` pairs.
pub fn vars<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// Renders a bundled template.
pub fn render_prompt(id: TemplateId, variables: &BTreeMap<String, String>) -> Result<String, LlmError> {
    id.template().render(variables)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_template_parses_and_has_placeholders() {
        for id in TemplateId::ALL {
            let t = id.template();
            assert!(!t.required().is_empty(), "{id}");
            let v: BTreeMap<String, String> = t.required().iter().map(|k| (k.clone(), format!("<{k}>"))).collect();
            let out = t.render(&v).unwrap();
            assert!(!out.contains("{Task"), "{id}");
            for k in t.required() {
                assert!(out.contains(&format!("<{k}>")));
            }
        }
    }

    #[test]
    fn escaped_braces_survive_rendering() {
        let t = PromptTemplate::new(TemplateId::KtReflect, "a {{x}} {y} }}").unwrap();
        assert_eq!(t.required().len(), 1);
        assert_eq!(t.render(&vars([("y", "1")])).unwrap(), "a {x} 1 }");
    }

    #[test]
    fn missing_placeholders_are_reported() {
        let err = render_prompt(TemplateId::M1Mutate, &vars([("Code", "x")])).unwrap_err();
        match err {
            LlmError::MissingPlaceholders { missing, .. } => {
                assert_eq!(missing, vec!["Reflection".to_string(), "Task_description".to_string()])
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_bodies_are_rejected() {
        assert!(PromptTemplate::new(TemplateId::Init, "open {brace").is_err());
        assert!(PromptTemplate::new(TemplateId::Init, "bad {na me}").is_err());
        assert!(PromptTemplate::new(TemplateId::Init, "stray } brace").is_err());
    }

    #[test]
    fn ids_round_trip() {
        for id in TemplateId::ALL {
            assert_eq!(id.as_str().parse::<TemplateId>().unwrap(), id);
            assert_eq!(serde_json::to_value(id).unwrap(), id.as_str());
        }
    }
}
