//! Prompt templates. Bodies live in `assets/prompts/` and are embedded at
//! compile time; `{instruction}` and `{bbox}` are the only placeholders.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    CotDecompose,
    LayoutMoveResize,
    LayoutAddPlacement,
    TextRoiExtract,
    EntityExtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub version: u32,
    pub body: &'static str,
}

fn strip_final_newline(s: &'static str) -> &'static str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl PromptTemplate {
    pub fn get(kind: PromptKind) -> PromptTemplate {
        let (version, raw) = match kind {
            PromptKind::CotDecompose => (1, include_str!("../../assets/prompts/cot_decompose.txt")),
            PromptKind::LayoutMoveResize => (1, include_str!("../../assets/prompts/layout_move_resize.txt")),
            PromptKind::LayoutAddPlacement => (1, include_str!("../../assets/prompts/layout_add_placement.txt")),
            PromptKind::TextRoiExtract => (1, include_str!("../../assets/prompts/text_roi.v1.txt")),
            PromptKind::EntityExtract => (1, include_str!("../../assets/prompts/entity.v1.txt")),
        };
        PromptTemplate {
            kind,
            version,
            body: strip_final_newline(raw),
        }
    }

    /// Single left-to-right pass, so substituted text is never re-scanned.
    pub fn render(&self, instruction: &str, bbox: Option<&str>) -> String {
        let mut out = String::with_capacity(self.body.len() + instruction.len());
        let mut rest = self.body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            if let Some(after) = tail.strip_prefix("{instruction}") {
                out.push_str(instruction);
                rest = after;
            } else if let (Some(after), Some(b)) = (tail.strip_prefix("{bbox}"), bbox) {
                out.push_str(b);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }
}

/// Appended to the prompt on the single retry after an unparseable answer.
pub const PROGRAM_RETRY_SUFFIX: &str = "\nRespond only with the numbered list.";
pub const LAYOUT_RETRY_SUFFIX: &str = "\nRespond only with the output bounding boxes.";

/// Background-fill prompt for removal and subject relocation.
pub const REMOVAL_PROMPT: &str = "fill in the hole of the image";

/// Prompt for adding or substituting entity `entity`.
pub fn add_entity_prompt(entity: &str) -> String {
    format!("add {entity} on the black region")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_are_single_pass() {
        let t = PromptTemplate::get(PromptKind::LayoutMoveResize);
        let out = t.render("say {bbox}", Some("[]"));
        assert!(out.ends_with("the current bounding boxes is [], the instruction is say {bbox}."));
    }

    #[test]
    fn templates_have_expected_slots() {
        for kind in [
            PromptKind::CotDecompose,
            PromptKind::TextRoiExtract,
            PromptKind::EntityExtract,
            PromptKind::LayoutMoveResize,
            PromptKind::LayoutAddPlacement,
        ] {
            let t = PromptTemplate::get(kind);
            assert!(t.body.contains("{instruction}"), "{kind:?}");
            assert!(!t.body.ends_with('\n'));
        }
        assert!(PromptTemplate::get(PromptKind::LayoutAddPlacement)
            .body
            .contains("{bbox}"));
        assert_eq!(add_entity_prompt("a cat"), "add a cat on the black region");
    }
}
