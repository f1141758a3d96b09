use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::envs::TaskId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(super) struct Fence<'a> {
    pub(super) tag: &'a str,
    pub(super) body: &'a str,
    /// Byte offset of the opening fence.
    pub(super) start: usize,
}

/// All closed ``` fences in order. An unclosed trailing fence is ignored.
pub(super) fn fences(text: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(open) = text[pos..].find("```") {
        let start = pos + open;
        let after = start + 3;
        let line_end = text[after..].find('\n').map_or(text.len(), |i| after + i);
        let tag = text[after..line_end].trim();
        let body_start = (line_end + 1).min(text.len());
        let Some(close) = text[body_start..].find("```") else {
            break;
        };
        let body_end = body_start + close;
        out.push(Fence {
            tag,
            body: &text[body_start..body_end],
            start,
        });
        pos = body_end + 3;
    }
    out
}

/// Splits a response into (thought, code).
///
/// The code is the first block tagged `rsl`, or the first block if none is tagged.
/// The thought is the block tagged `thought` if there is one, else the prose
/// before the first block.
pub fn parse_individual(response: &str) -> Result<(String, String), LlmError> {
    let blocks = fences(response);
    let code_block = blocks
        .iter()
        .find(|f| f.tag.eq_ignore_ascii_case("rsl"))
        .or_else(|| blocks.iter().find(|f| !f.tag.eq_ignore_ascii_case("thought")))
        .ok_or(LlmError::NoCodeBlock)?;
    let code = code_block.body.trim();
    if code.is_empty() {
        return Err(LlmError::EmptyCode);
    }
    let thought = match blocks.iter().find(|f| f.tag.eq_ignore_ascii_case("thought")) {
        Some(t) => t.body.trim().to_string(),
        None => response[..blocks[0].start].trim().to_string(),
    };
    Ok((thought, format!("{code}\n")))
}

/// Contents of the first ```summary block, or the whole text when there is none.
pub fn parse_summary(response: &str) -> String {
    fences(response)
        .into_iter()
        .find(|f| f.tag.eq_ignore_ascii_case("summary"))
        .map_or_else(|| response.trim().to_string(), |f| f.body.trim().to_string())
}

/// One planned transfer between niches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPathway {
    pub source_task: TaskId,
    pub target_task: TaskId,
    pub rationale: String,
    pub transfer_strategy_guidance: String,
}

#[derive(Deserialize)]
struct RawPathway {
    #[serde(alias = "source_task", alias = "source")]
    source_task_metabbo_algorithm: Option<String>,
    #[serde(alias = "target_task", alias = "target")]
    target_task_metabbo_algorithm: Option<String>,
    #[serde(default)]
    rationale: String,
    #[serde(default)]
    transfer_strategy_guidance: String,
}

fn lowercase_keys(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(m) => m.into_iter().map(|(k, v)| (k.to_ascii_lowercase(), v)).collect(),
        other => other,
    }
}

/// Scans for the first substring that parses as a JSON array of objects.
fn first_json_array(text: &str) -> Option<Vec<serde_json::Value>> {
    for (i, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Array(items))) = stream.next() {
            if items.iter().all(|v| v.is_object()) {
                return Some(items);
            }
        }
    }
    None
}

/// Extracts the transfer plan. Entries naming unknown tasks, or a task
/// transferring to itself, are dropped with a warning.
pub fn parse_kt_plan(response: &str) -> Result<Vec<TransferPathway>, LlmError> {
    let items = first_json_array(response).ok_or(LlmError::NoPlan)?;
    let mut out = Vec::new();
    for item in items {
        let raw: RawPathway = match serde_json::from_value(lowercase_keys(item)) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("dropping malformed transfer entry: {e}");
                continue;
            }
        };
        let source = raw.source_task_metabbo_algorithm.as_deref().and_then(TaskId::lookup);
        let target = raw.target_task_metabbo_algorithm.as_deref().and_then(TaskId::lookup);
        match (source, target) {
            (Some(s), Some(t)) if s != t => out.push(TransferPathway {
                source_task: s,
                target_task: t,
                rationale: raw.rationale,
                transfer_strategy_guidance: raw.transfer_strategy_guidance,
            }),
            _ => log::warn!(
                "dropping transfer entry {:?} -> {:?}",
                raw.source_task_metabbo_algorithm,
                raw.target_task_metabbo_algorithm
            ),
        }
    }
    Ok(out)
}
