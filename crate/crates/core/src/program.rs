//! Edit-program IR: the thirteen atomic categories, atomic instructions and
//! whole programs, plus the numbered-list and canonical JSON forms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Instruction class assigned by the planner. Closed set of thirteen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Add,
    Remove,
    ColorChange,
    MaterialChange,
    ActionChange,
    ExpressionChange,
    Replace,
    BackgroundChange,
    AppearanceChange,
    Move,
    Resize,
    ToneTransfer,
    StyleChange,
}

impl Category {
    /// Every category, in the order the decomposition prompt lists them.
    pub const ALL: [Category; 13] = [
        Category::Add,
        Category::Remove,
        Category::ColorChange,
        Category::MaterialChange,
        Category::ActionChange,
        Category::ExpressionChange,
        Category::Replace,
        Category::BackgroundChange,
        Category::AppearanceChange,
        Category::Move,
        Category::Resize,
        Category::ToneTransfer,
        Category::StyleChange,
    ];

    /// Label as written inside the square brackets of planner output.
    pub fn label(self) -> &'static str {
        match self {
            Category::Add => "Add",
            Category::Remove => "Remove",
            Category::ColorChange => "Color Change",
            Category::MaterialChange => "Material Change",
            Category::ActionChange => "Action Change",
            Category::ExpressionChange => "Expression Change",
            Category::Replace => "Replace",
            Category::BackgroundChange => "Background Change",
            Category::AppearanceChange => "Appearance Change",
            Category::Move => "Move",
            Category::Resize => "Resize",
            Category::ToneTransfer => "Tone Transfer",
            Category::StyleChange => "Style Change",
        }
    }

    /// Match a label after trimming, case-folding and collapsing internal
    /// whitespace. The run-together form ("colorchange") is also accepted.
    pub fn from_label(raw: &str) -> Option<Category> {
        let folded = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let squashed: String = folded.chars().filter(|c| !c.is_whitespace()).collect();
        Category::ALL.into_iter().find(|c| {
            let label = c.label().to_lowercase();
            label == folded || label.replace(' ', "") == squashed
        })
    }

    /// Tone Transfer and Style Change act on the whole frame and must run last.
    pub fn is_global(self) -> bool {
        matches!(self, Category::ToneTransfer | Category::StyleChange)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::from_label(s).ok_or_else(|| ProgramError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Category::from_label(&raw).ok_or_else(|| serde::de::Error::custom(format!("unknown category {raw:?}")))
    }
}

/// One categorized step of a program. Field order is the canonical JSON key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicInstruction {
    pub category: Category,
    /// 1-based position in the owning program.
    pub index: usize,
    pub text: String,
}

/// Ordered composition of atomic instructions derived from one free-form instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditProgram {
    #[serde(rename = "source")]
    pub source_instruction: String,
    pub steps: Vec<AtomicInstruction>,
}

impl EditProgram {
    /// Build a program, numbering steps from 1. No validation is performed.
    pub fn new<S: Into<String>>(source: impl Into<String>, steps: impl IntoIterator<Item = (Category, S)>) -> Self {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, (category, text))| AtomicInstruction {
                category,
                index: i + 1,
                text: text.into(),
            })
            .collect();
        EditProgram {
            source_instruction: source.into(),
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.steps.iter().map(|s| s.category).collect()
    }

    /// Canonical numbered-list rendering, one `N. [Label] text` line per step.
    pub fn to_numbered_list(&self) -> String {
        self.steps
            .iter()
            .map(|s| format!("{}. [{}] {}\n", s.index, s.category, s.text))
            .collect()
    }

    /// Stable partition moving global steps behind every local step, then renumber.
    pub fn reorder_global_last(&mut self) {
        let (mut local, global): (Vec<_>, Vec<_>) = self.steps.drain(..).partition(|s| !s.category.is_global());
        local.extend(global);
        for (i, step) in local.iter_mut().enumerate() {
            step.index = i + 1;
        }
        self.steps = local;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("unknown category in line {0:?}")]
    UnknownCategory(String),
    #[error("malformed program line {0:?}")]
    MalformedLine(String),
    #[error("program has no steps")]
    EmptyProgram,
    #[error("global step {global_step} precedes local step {local_step}")]
    OrderingViolation { global_step: usize, local_step: usize },
    #[error("cannot decode program: {0}")]
    Decode(String),
    #[error("invalid program: {0}")]
    Invalid(ValidationReport),
}

/// A single broken invariant found by [`validate_program`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyProgram,
    EmptyText { index: usize },
    IndexGap { position: usize, found: usize },
    OrderingViolation { global_step: usize, local_step: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyProgram => write!(f, "program has no steps"),
            Violation::EmptyText { index } => write!(f, "step {index} has empty text"),
            Violation::IndexGap { position, found } => {
                write!(f, "step at position {position} carries index {found}")
            }
            Violation::OrderingViolation {
                global_step,
                local_step,
            } => write!(f, "global step {global_step} precedes local step {local_step}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Check every program invariant; never fails, violations are data.
pub fn validate_program(p: &EditProgram) -> ValidationReport {
    let mut violations = Vec::new();
    if p.steps.is_empty() {
        violations.push(Violation::EmptyProgram);
    }
    for (pos, step) in p.steps.iter().enumerate() {
        if step.index != pos + 1 {
            violations.push(Violation::IndexGap {
                position: pos + 1,
                found: step.index,
            });
        }
        if step.text.trim().is_empty() {
            violations.push(Violation::EmptyText { index: step.index });
        }
    }
    if let Some(first_global) = p.steps.iter().position(|s| s.category.is_global()) {
        if let Some(local) = p.steps[first_global..].iter().find(|s| !s.category.is_global()) {
            violations.push(Violation::OrderingViolation {
                global_step: p.steps[first_global].index,
                local_step: local.index,
            });
        }
    }
    ValidationReport { violations }
}

/// Parse one `N. [Category] instruction` line.
fn parse_line(line: &str) -> Result<(Category, String), ProgramError> {
    let malformed = || ProgramError::MalformedLine(line.to_string());
    let rest = line.trim();
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return Err(malformed());
    }
    let rest = rest[digits..].strip_prefix('.').ok_or_else(malformed)?;
    let rest = rest.trim_start().strip_prefix('[').ok_or_else(malformed)?;
    let close = rest.find(']').ok_or_else(malformed)?;
    let label = &rest[..close];
    let text = rest[close + 1..].trim();
    if text.is_empty() {
        return Err(malformed());
    }
    let category = Category::from_label(label).ok_or_else(|| ProgramError::UnknownCategory(line.to_string()))?;
    Ok((category, text.to_string()))
}

/// Parse planner output into steps without enforcing the ordering rule.
pub(crate) fn parse_steps(source: &str, planner_output: &str) -> Result<EditProgram, ProgramError> {
    let steps = planner_output
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_line)
        .collect::<Result<Vec<_>, _>>()?;
    if steps.is_empty() {
        return Err(ProgramError::EmptyProgram);
    }
    Ok(EditProgram::new(source, steps))
}

/// Parse a raw planner response. Blank lines are skipped; every other line
/// must have the numbered, bracketed shape.
pub fn parse_program(planner_output: &str) -> Result<EditProgram, ProgramError> {
    parse_program_with_source("", planner_output)
}

pub fn parse_program_with_source(source: &str, planner_output: &str) -> Result<EditProgram, ProgramError> {
    let program = parse_steps(source, planner_output)?;
    for v in validate_program(&program).violations {
        if let Violation::OrderingViolation {
            global_step,
            local_step,
        } = v
        {
            return Err(ProgramError::OrderingViolation {
                global_step,
                local_step,
            });
        }
    }
    Ok(program)
}

/// Canonical compact JSON. Keys come out in sorted order.
pub fn serialize_program(p: &EditProgram) -> String {
    serde_json::to_string(p).expect("program serialization is infallible")
}

/// Decode canonical JSON, canonicalizing category labels and revalidating.
pub fn deserialize_program(text: &str) -> Result<EditProgram, ProgramError> {
    let p: EditProgram = serde_json::from_str(text).map_err(|e| ProgramError::Decode(e.to_string()))?;
    let report = validate_program(&p);
    if report.is_valid() {
        Ok(p)
    } else {
        Err(ProgramError::Invalid(report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "1. [Add] add a car on the road\n2. [Color Change] change the color of the shoes to blue\n3. [Move] move the lamp to the left";

    #[test]
    fn parses_the_list_example() {
        let p = parse_program(FIXTURE).unwrap();
        assert_eq!(
            p.categories(),
            vec![Category::Add, Category::ColorChange, Category::Move]
        );
        assert_eq!(p.steps[1].text, "change the color of the shoes to blue");
        assert_eq!(p.steps[2].index, 3);
    }

    #[test]
    fn single_line_program() {
        let p = parse_program("1. [Remove] remove the sofa in the image").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.steps[0].category, Category::Remove);
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert!(matches!(
            parse_program("1. [Teleport] beam the cat away"),
            Err(ProgramError::UnknownCategory(_))
        ));
    }

    #[test]
    fn malformed_and_empty() {
        assert!(matches!(
            parse_program("Sure! Here is the list"),
            Err(ProgramError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_program("1. [Add]   "),
            Err(ProgramError::MalformedLine(_))
        ));
        assert_eq!(parse_program("\n  \n"), Err(ProgramError::EmptyProgram));
    }

    #[test]
    fn blank_lines_and_label_noise_are_tolerated() {
        let p = parse_program("\n1.  [  color   CHANGE ] make it red \n\n").unwrap();
        assert_eq!(p.steps[0].category, Category::ColorChange);
        assert_eq!(p.steps[0].text, "make it red");
    }

    #[test]
    fn ordering_violation_in_parse() {
        let err = parse_program("1. [Style Change] make it cartoon\n2. [Add] add a kite").unwrap_err();
        assert_eq!(
            err,
            ProgramError::OrderingViolation {
                global_step: 1,
                local_step: 2
            }
        );
    }

    #[test]
    fn replace_is_kept_whole() {
        let p = parse_program("1. [Replace] replace the coffee with an apple").unwrap();
        assert_eq!(p.categories(), vec![Category::Replace]);
    }

    #[test]
    fn validate_reports() {
        let ok = EditProgram::new("", [(Category::Add, "a"), (Category::StyleChange, "b")]);
        assert!(validate_program(&ok).is_valid());
        let bad = EditProgram::new("", [(Category::StyleChange, "b"), (Category::Add, "a")]);
        assert_eq!(
            validate_program(&bad).violations,
            vec![Violation::OrderingViolation {
                global_step: 1,
                local_step: 2
            }]
        );
        let empty = EditProgram::new("", Vec::<(Category, String)>::new());
        assert_eq!(validate_program(&empty).violations, vec![Violation::EmptyProgram]);
        let mut gap = ok.clone();
        gap.steps[1].index = 5;
        gap.steps[0].text = "  ".into();
        assert_eq!(validate_program(&gap).violations.len(), 2);
    }

    #[test]
    fn reorder_is_stable_partition() {
        let mut p = EditProgram::new(
            "",
            [
                (Category::StyleChange, "s"),
                (Category::Add, "a"),
                (Category::ToneTransfer, "t"),
                (Category::Remove, "r"),
            ],
        );
        p.reorder_global_last();
        assert_eq!(
            p.categories(),
            vec![
                Category::Add,
                Category::Remove,
                Category::StyleChange,
                Category::ToneTransfer
            ]
        );
        assert_eq!(p.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn canonical_json_layout() {
        let p = EditProgram::new("do it", [(Category::ColorChange, "paint it")]);
        assert_eq!(
            serialize_program(&p),
            r#"{"source":"do it","steps":[{"category":"Color Change","index":1,"text":"paint it"}]}"#
        );
    }

    #[test]
    fn label_case_folding_table() {
        for c in Category::ALL {
            let label = c.label();
            let variants = [
                label.to_string(),
                label.to_lowercase(),
                label.to_uppercase(),
                label.replace(' ', ""),
                format!("  {}  ", label.replace(' ', "   ")),
            ];
            for v in variants {
                assert_eq!(Category::from_label(&v), Some(c), "{v:?}");
                let json = format!(r#"{{"source":"","steps":[{{"category":{v:?},"index":1,"text":"x"}}]}}"#);
                let p = deserialize_program(&json).unwrap();
                assert_eq!(p.steps[0].category, c);
                assert!(serialize_program(&p).contains(&format!("\"{label}\"")));
            }
        }
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            deserialize_program(r#"{"source":"x","steps":[{"category":"Add""#),
            Err(ProgramError::Decode(_))
        ));
        assert!(matches!(
            deserialize_program(r#"{"source":"x","steps":[]}"#),
            Err(ProgramError::Invalid(_))
        ));
        assert!(matches!(
            deserialize_program(r#"{"source":"x","steps":[{"category":"Teleport","index":1,"text":"x"}]}"#),
            Err(ProgramError::Decode(_))
        ));
    }

    #[test]
    fn category_set_is_exactly_thirteen() {
        let mut labels: Vec<_> = Category::ALL.iter().map(|c| c.label()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 13);
        // Exhaustive match: adding a variant breaks compilation here.
        for c in Category::ALL {
            match c {
                Category::Add
                | Category::Remove
                | Category::ColorChange
                | Category::MaterialChange
                | Category::ActionChange
                | Category::ExpressionChange
                | Category::Replace
                | Category::BackgroundChange
                | Category::AppearanceChange
                | Category::Move
                | Category::Resize
                | Category::ToneTransfer
                | Category::StyleChange => {}
            }
        }
    }
}
