//! LLM-facing planning: instruction decomposition, text-RoI and entity
//! extraction, and layout reconfiguration.

pub mod prompts;

use thiserror::Error;

use crate::gateway::{BackendError, Gateway, LlmBackend};
use crate::image::{Dims, ImageBuffer};
use crate::layout::{extract_layout, Layout, LayoutError};
use crate::program::{parse_steps, validate_program, AtomicInstruction, Category, EditProgram, ProgramError};
pub use prompts::{PromptKind, PromptTemplate};

/// Canvas the layout prompts are written for.
pub const LAYOUT_PROMPT_CANVAS: Dims = Dims::square(512);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("could not extract a text RoI")]
    EmptyRoi,
    #[error("could not extract an entity")]
    EmptyEntity,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cannot parse layout answer: {0}")]
    LayoutParse(String),
    #[error("layout answer names {got:?}, expected {expected:?}")]
    NameSetMismatch { expected: Vec<String>, got: Vec<String> },
}

impl LlmBackend for Gateway {
    fn complete(&self, prompt: &str, image: Option<&ImageBuffer>) -> Result<String, BackendError> {
        self.llm_complete(prompt, image)
    }

    fn supports_vision(&self) -> bool {
        self.llm_supports_vision()
    }
}

/// Parsed answer together with the raw completion it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerResponse<T> {
    pub prompt: String,
    pub raw: String,
    pub parsed: T,
}

pub fn build_cot_prompt(instruction: &str) -> Result<String, PlannerError> {
    let instruction = instruction.trim();
    if instruction.is_empty() {
        return Err(PlannerError::EmptyInstruction);
    }
    Ok(PromptTemplate::get(PromptKind::CotDecompose).render(instruction, None))
}

/// Decompose `instruction` into a program. One retry with a reminder suffix
/// on unparseable output; global steps are then stably moved to the tail.
pub fn plan(
    instruction: &str,
    llm: &dyn LlmBackend,
    image: Option<&ImageBuffer>,
) -> Result<PlannerResponse<EditProgram>, PlannerError> {
    let prompt = build_cot_prompt(instruction)?;
    let image = image.filter(|_| llm.supports_vision());
    let raw = llm.complete(&prompt, image)?;
    let (prompt, raw, mut program) = match parse_steps(instruction.trim(), &raw) {
        Ok(p) => (prompt, raw, p),
        Err(first) => {
            log::info!("planner output unparseable ({first}); retrying once");
            let retry_prompt = format!("{prompt}{}", prompts::PROGRAM_RETRY_SUFFIX);
            let raw = llm.complete(&retry_prompt, image)?;
            let p = parse_steps(instruction.trim(), &raw)?;
            (retry_prompt, raw, p)
        }
    };
    program.reorder_global_last();
    let report = validate_program(&program);
    if !report.is_valid() {
        return Err(ProgramError::Invalid(report).into());
    }
    Ok(PlannerResponse {
        prompt,
        raw,
        parsed: program,
    })
}

/// First non-empty line with quotes, backticks and a trailing period removed.
fn clean_phrase(raw: &str) -> String {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    line.trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.') || c.is_whitespace())
        .to_string()
}

/// Noun phrase naming the region a local step edits.
pub fn extract_text_roi(
    step: &AtomicInstruction,
    llm: &dyn LlmBackend,
) -> Result<PlannerResponse<String>, PlannerError> {
    if step.category.is_global() {
        return Err(PlannerError::Precondition(format!(
            "{} is a global category without a region",
            step.category
        )));
    }
    if step.text.trim().is_empty() {
        return Err(PlannerError::EmptyRoi);
    }
    let prompt = PromptTemplate::get(PromptKind::TextRoiExtract).render(step.text.trim(), None);
    let raw = llm.complete(&prompt, None)?;
    let parsed = clean_phrase(&raw);
    if parsed.is_empty() {
        return Err(PlannerError::EmptyRoi);
    }
    Ok(PlannerResponse { prompt, raw, parsed })
}

/// The new object an Add or Replace step introduces.
pub fn extract_entity(step: &AtomicInstruction, llm: &dyn LlmBackend) -> Result<PlannerResponse<String>, PlannerError> {
    if !matches!(step.category, Category::Add | Category::Replace) {
        return Err(PlannerError::Precondition(format!(
            "entity extraction needs Add or Replace, got {}",
            step.category
        )));
    }
    if step.text.trim().is_empty() {
        return Err(PlannerError::EmptyEntity);
    }
    let prompt = PromptTemplate::get(PromptKind::EntityExtract).render(step.text.trim(), None);
    let raw = llm.complete(&prompt, None)?;
    let parsed = clean_phrase(&raw);
    if parsed.is_empty() {
        return Err(PlannerError::EmptyEntity);
    }
    Ok(PlannerResponse { prompt, raw, parsed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutMode {
    MoveResize,
    AddPlacement,
}

impl LayoutMode {
    pub fn for_category(c: Category) -> Option<LayoutMode> {
        match c {
            Category::Move | Category::Resize => Some(LayoutMode::MoveResize),
            Category::Add => Some(LayoutMode::AddPlacement),
            _ => None,
        }
    }

    fn template(self) -> PromptKind {
        match self {
            LayoutMode::MoveResize => PromptKind::LayoutMoveResize,
            LayoutMode::AddPlacement => PromptKind::LayoutAddPlacement,
        }
    }
}

pub fn build_layout_prompt(mode: LayoutMode, layout: &Layout, instruction: &str) -> String {
    PromptTemplate::get(mode.template()).render(instruction.trim(), Some(&layout.to_string()))
}

fn owned_names(l: &Layout) -> Vec<String> {
    l.name_multiset().into_iter().map(String::from).collect()
}

/// Check an answer (already in canvas coordinates) against the input layout.
fn reconcile(mode: LayoutMode, input: &Layout, answer: Layout) -> Result<Layout, PlannerError> {
    match mode {
        LayoutMode::MoveResize => {
            if answer.name_multiset() != input.name_multiset() {
                return Err(PlannerError::NameSetMismatch {
                    expected: owned_names(input),
                    got: owned_names(&answer),
                });
            }
            let overlaps = answer.overlapping_pairs();
            if !overlaps.is_empty() {
                log::warn!("edited layout has overlapping boxes: {overlaps:?}");
            }
            // Keep the input order.
            let mut pool = answer.entries;
            let entries = input
                .entries
                .iter()
                .map(|e| {
                    let i = pool.iter().position(|a| a.name == e.name).expect("multisets equal");
                    pool.remove(i)
                })
                .collect();
            Ok(Layout { entries })
        }
        LayoutMode::AddPlacement => {
            let mut remaining = owned_names(input);
            let mut added = Vec::new();
            for e in answer.entries {
                match remaining.iter().position(|n| *n == e.name) {
                    Some(i) => {
                        remaining.remove(i);
                    }
                    None => added.push(e),
                }
            }
            if added.len() != 1 {
                return Err(PlannerError::NameSetMismatch {
                    expected: owned_names(input),
                    got: added.into_iter().map(|e| e.name).collect(),
                });
            }
            let mut out = input.clone();
            out.entries.extend(added);
            Ok(out)
        }
    }
}

fn parse_layout_answer(raw: &str, canvas: Dims) -> Result<Layout, PlannerError> {
    let parsed = extract_layout(raw).map_err(|e| PlannerError::LayoutParse(e.to_string()))?;
    let clipped = Layout::new(
        parsed
            .entries
            .into_iter()
            .map(|e| Ok((e.name, e.bbox.clip_to(LAYOUT_PROMPT_CANVAS)?)))
            .collect::<Result<Vec<_>, LayoutError>>()
            .map_err(|e| PlannerError::LayoutParse(e.to_string()))?,
    );
    clipped
        .rescale(LAYOUT_PROMPT_CANVAS, canvas)
        .map_err(|e| PlannerError::LayoutParse(e.to_string()))
}

/// Ask the LLM for an edited layout. Coordinates are mapped to and from the
/// 512x512 prompt canvas when the session canvas differs.
pub fn request_layout_edit(
    layout: &Layout,
    step: &AtomicInstruction,
    llm: &dyn LlmBackend,
    canvas: Dims,
) -> Result<PlannerResponse<Layout>, PlannerError> {
    let mode = LayoutMode::for_category(step.category)
        .ok_or_else(|| PlannerError::Precondition(format!("{} does not edit the layout", step.category)))?;
    if mode == LayoutMode::MoveResize && layout.is_empty() {
        return Err(PlannerError::Precondition(
            "move/resize needs a non-empty layout".into(),
        ));
    }
    let prompt_layout = layout
        .rescale(canvas, LAYOUT_PROMPT_CANVAS)
        .map_err(|e| PlannerError::LayoutParse(e.to_string()))?;
    let prompt = build_layout_prompt(mode, &prompt_layout, &step.text);
    let raw = llm.complete(&prompt, None)?;
    let (prompt, raw, answer) = match parse_layout_answer(&raw, canvas) {
        Ok(a) => (prompt, raw, a),
        Err(first) => {
            log::info!("layout answer unparseable ({first}); retrying once");
            let retry = format!("{prompt}{}", prompts::LAYOUT_RETRY_SUFFIX);
            let raw = llm.complete(&retry, None)?;
            let a = parse_layout_answer(&raw, canvas)?;
            (retry, raw, a)
        }
    };
    let parsed = reconcile(mode, layout, answer)?;
    Ok(PlannerResponse { prompt, raw, parsed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FixtureStore;
    use crate::layout::BoundingBox;

    fn step(category: Category, text: &str) -> AtomicInstruction {
        AtomicInstruction {
            category,
            index: 1,
            text: text.into(),
        }
    }

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn cot_prompt_substitution() {
        let p = build_cot_prompt("make the sky sunset and add a kite").unwrap();
        assert!(p.contains("if the user wants to make the sky sunset and add a kite?"));
        assert!(p.contains("Always place [Tone Transfer] and [Style Change]"));
        for c in Category::ALL {
            assert!(p.contains(&format!("\n- {}: ", c.label())), "{c}");
        }
        assert_eq!(build_cot_prompt("  "), Err(PlannerError::EmptyInstruction));
    }

    #[test]
    fn plan_reorders_global_steps() {
        let instr = "cartoonify and add a kite";
        let mut llm = FixtureStore::new();
        llm.insert(
            &build_cot_prompt(instr).unwrap(),
            "1. [Style Change] make the style of the image to cartoon\n2. [Add] add a kite in the sky",
        );
        let p = plan(instr, &llm, None).unwrap().parsed;
        assert_eq!(p.categories(), vec![Category::Add, Category::StyleChange]);
        assert_eq!(p.steps[0].index, 1);
        assert_eq!(p.source_instruction, instr);
    }

    #[test]
    fn plan_retries_once() {
        let instr = "remove the sofa";
        let prompt = build_cot_prompt(instr).unwrap();
        let mut llm = FixtureStore::new();
        llm.insert(&prompt, "I think you should remove it");
        llm.insert(
            &format!("{prompt}{}", prompts::PROGRAM_RETRY_SUFFIX),
            "1. [Remove] remove the sofa",
        );
        let r = plan(instr, &llm, None).unwrap();
        assert!(r.prompt.ends_with("Respond only with the numbered list."));
        assert_eq!(r.parsed.len(), 1);

        let mut garbage = FixtureStore::new();
        garbage.insert(&prompt, "nope");
        garbage.insert(&format!("{prompt}{}", prompts::PROGRAM_RETRY_SUFFIX), "still nope");
        assert!(matches!(
            plan(instr, &garbage, None),
            Err(PlannerError::Program(ProgramError::MalformedLine(_)))
        ));
        assert!(matches!(
            plan(instr, &FixtureStore::new(), None),
            Err(PlannerError::Backend(BackendError::MockMiss { .. }))
        ));
    }

    #[test]
    fn roi_and_entity_extraction() {
        let mut llm = FixtureStore::new();
        let remove = step(Category::Remove, "remove the sofa in the image");
        let add = step(Category::Add, "add a car on the road");
        llm.insert(
            &PromptTemplate::get(PromptKind::TextRoiExtract).render(&remove.text, None),
            "  \"the sofa\".\n",
        );
        llm.insert(
            &PromptTemplate::get(PromptKind::EntityExtract).render(&add.text, None),
            "a car",
        );
        assert_eq!(extract_text_roi(&remove, &llm).unwrap().parsed, "the sofa");
        assert_eq!(extract_entity(&add, &llm).unwrap().parsed, "a car");
        assert!(matches!(
            extract_entity(&remove, &llm),
            Err(PlannerError::Precondition(_))
        ));
        assert_eq!(
            extract_text_roi(&step(Category::Remove, ""), &llm),
            Err(PlannerError::EmptyRoi)
        );
        let mut blank = FixtureStore::new();
        blank.insert(
            &PromptTemplate::get(PromptKind::TextRoiExtract).render(&remove.text, None),
            "\n \n",
        );
        assert_eq!(extract_text_roi(&remove, &blank), Err(PlannerError::EmptyRoi));
    }

    fn layout_llm(mode: LayoutMode, layout: &Layout, text: &str, answer: &str) -> FixtureStore {
        let mut llm = FixtureStore::new();
        llm.insert(&build_layout_prompt(mode, layout, text), answer);
        llm
    }

    #[test]
    fn move_resize_layout_examples() {
        let canvas = Dims::default();
        let car = Layout::single("a car", bb(21, 281, 232, 440));
        let s = step(Category::Move, "Move the car to the right.");
        let llm = layout_llm(
            LayoutMode::MoveResize,
            &car,
            &s.text,
            "Output bounding boxes: [('a car', [121, 281, 332, 440])]",
        );
        let out = request_layout_edit(&car, &s, &llm, canvas).unwrap();
        assert_eq!(out.parsed, Layout::single("a car", bb(121, 281, 332, 440)));
        assert!(out.prompt.contains("the current bounding boxes is [('a car', [21, 281, 232, 440])], the instruction is Move the car to the right."));

        let dog = Layout::single("dog", bb(150, 250, 250, 300));
        let s = step(Category::Resize, "Enlarge the dog.");
        let llm = layout_llm(
            LayoutMode::MoveResize,
            &dog,
            &s.text,
            "[(\"dog\", [150, 225, 300, 300])]",
        );
        assert_eq!(
            request_layout_edit(&dog, &s, &llm, canvas).unwrap().parsed,
            Layout::single("dog", bb(150, 225, 300, 300))
        );

        let llm = layout_llm(
            LayoutMode::MoveResize,
            &dog,
            &s.text,
            "[(\"cat\", [150, 225, 300, 300])]",
        );
        assert!(matches!(
            request_layout_edit(&dog, &s, &llm, canvas),
            Err(PlannerError::NameSetMismatch { .. })
        ));

        let llm = layout_llm(
            LayoutMode::MoveResize,
            &dog,
            &s.text,
            "[(\"dog\", [150, 225, 650, 300])]",
        );
        assert_eq!(
            request_layout_edit(&dog, &s, &llm, canvas).unwrap().parsed,
            Layout::single("dog", bb(150, 225, 512, 300))
        );
    }

    #[test]
    fn add_placement_example() {
        let stool = Layout::single("stool", bb(300, 350, 380, 450));
        let s = step(Category::Add, "Add a cat to the left of the stool.");
        let llm = layout_llm(
            LayoutMode::AddPlacement,
            &stool,
            &s.text,
            "Output bounding boxes: [('a cat', [180, 250, 300, 450])]",
        );
        let out = request_layout_edit(&stool, &s, &llm, Dims::default()).unwrap().parsed;
        assert_eq!(out.get("a cat"), Some(&bb(180, 250, 300, 450)));
        assert_eq!(out.get("stool"), Some(&bb(300, 350, 380, 450)));
        assert_eq!(out.len(), 2);

        let llm = layout_llm(
            LayoutMode::AddPlacement,
            &stool,
            &s.text,
            "[('stool', [300, 350, 380, 450])]",
        );
        assert!(matches!(
            request_layout_edit(&stool, &s, &llm, Dims::default()),
            Err(PlannerError::NameSetMismatch { .. })
        ));
    }

    #[test]
    fn layout_rescaled_for_other_canvases() {
        let canvas = Dims::square(256);
        let car = Layout::single("a car", bb(10, 140, 116, 220));
        let s = step(Category::Move, "Move the car to the right.");
        let prompt_layout = Layout::single("a car", bb(20, 280, 232, 440));
        let llm = layout_llm(
            LayoutMode::MoveResize,
            &prompt_layout,
            &s.text,
            "[('a car', [120, 280, 332, 440])]",
        );
        let out = request_layout_edit(&car, &s, &llm, canvas).unwrap().parsed;
        assert_eq!(out, Layout::single("a car", bb(60, 140, 166, 220)));
    }
}
