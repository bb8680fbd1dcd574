//! Synthetic 512x512 scene with canned LLM and segmentation answers for
//! every category, so whole sessions run offline against the mocks.
//!
//! No scene pixel is pure black, so the mock inpainter only touches holes
//! the pipeline itself cut.

use std::io;
use std::path::Path;

use crate::gateway::fixtures::ANY_IMAGE;
use crate::gateway::mock::MockAttrEdit;
use crate::gateway::{Gateway, ImageModel, MockFixtures};
use crate::image::{Dims, ImageBuffer, Rgb};
use crate::layout::{BoundingBox, Layout};
use crate::mask::rasterize_box;
use crate::planner::prompts::{PromptKind, PromptTemplate};
use crate::planner::{build_cot_prompt, build_layout_prompt, LayoutMode};
use crate::program::Category;

pub const SCENE_DIMS: Dims = Dims::square(512);

/// `(name, box, base color)`; boxes are pairwise disjoint.
pub const SCENE_OBJECTS: [(&str, [i32; 4], Rgb); 6] = [
    ("a car", [21, 281, 232, 440], [200, 40, 40]),
    ("the sofa", [150, 150, 270, 230], [60, 120, 200]),
    ("the cup", [60, 80, 120, 140], [230, 200, 30]),
    ("the sign", [300, 60, 380, 140], [40, 180, 90]),
    ("the boy", [400, 200, 480, 330], [240, 170, 130]),
    ("the stool", [300, 350, 380, 450], [130, 80, 40]),
];

/// Where the boy stands after the action edit (raised arm).
pub const BOY_AFTER_ACTION: [i32; 4] = [400, 190, 480, 330];

/// Placement answered for the Add case.
pub const ADDED_CAT: [i32; 4] = [240, 370, 300, 450];

fn bbox(b: [i32; 4]) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3]).expect("fixture boxes are valid")
}

pub fn scene() -> ImageBuffer {
    ImageBuffer::from_fn(SCENE_DIMS, |x, y| {
        let (xi, yi) = (x as i32, y as i32);
        for (_, b, c) in SCENE_OBJECTS {
            if xi >= b[0] && xi < b[2] && yi >= b[1] && yi < b[3] {
                let t = ((x + 2 * y) % 24) as u8;
                return [
                    c[0].saturating_sub(t).max(1),
                    c[1].saturating_add(t),
                    c[2].saturating_sub(t / 2).max(1),
                ];
            }
        }
        [90 + (y / 8) as u8, 140 + (x / 16) as u8, 180 - (y / 8) as u8]
    })
}

pub fn scene_layout() -> Layout {
    Layout::new(SCENE_OBJECTS.iter().map(|(n, b, _)| (n.to_string(), bbox(*b))))
}

/// One single-step session per category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCase {
    pub category: Category,
    pub text: &'static str,
    pub text_roi: Option<&'static str>,
    pub entity: Option<&'static str>,
    /// Edited box of the RoI (or the added object) for layout categories.
    pub layout_target: Option<[i32; 4]>,
}

pub fn category_cases() -> Vec<CategoryCase> {
    use Category::*;
    let case = |category, text, text_roi, entity, layout_target| CategoryCase {
        category,
        text,
        text_roi,
        entity,
        layout_target,
    };
    vec![
        case(
            Add,
            "add a cat to the left of the stool",
            None,
            Some("a cat"),
            Some(ADDED_CAT),
        ),
        case(Remove, "remove the sofa", Some("the sofa"), None, None),
        case(ColorChange, "change the color of the cup to blue", None, None, None),
        case(
            MaterialChange,
            "change the material of the stool to marble",
            None,
            None,
            None,
        ),
        case(ActionChange, "make the boy raise his hand", Some("the boy"), None, None),
        case(ExpressionChange, "make the boy smile", None, None, None),
        case(
            Replace,
            "replace the cup with a vase",
            Some("the cup"),
            Some("a vase"),
            None,
        ),
        case(BackgroundChange, "change the background to a beach", None, None, None),
        case(AppearanceChange, "give the boy a red hat", None, None, None),
        case(
            Move,
            "move the car to the right",
            Some("a car"),
            None,
            Some([121, 281, 332, 440]),
        ),
        case(
            Resize,
            "enlarge the sign",
            Some("the sign"),
            None,
            Some([300, 20, 420, 140]),
        ),
        case(ToneTransfer, "make the image look like a sunset", None, None, None),
        case(StyleChange, "make the style of the image to cartoon", None, None, None),
    ]
}

/// Instructions whose decomposition has more than one step.
pub fn multi_step_cases() -> Vec<(&'static str, Vec<(Category, &'static str)>)> {
    use Category::*;
    vec![
        (
            "remove the sofa and make it a cartoon",
            vec![
                (Remove, "remove the sofa"),
                (StyleChange, "make the style of the image to cartoon"),
            ],
        ),
        (
            "move the car to the right, make the cup blue and give it a sunset look",
            vec![
                (Move, "move the car to the right"),
                (ColorChange, "change the color of the cup to blue"),
                (ToneTransfer, "make the image look like a sunset"),
            ],
        ),
        (
            "put a cat next to the stool, swap the cup for a vase and make the boy wave",
            vec![
                (Add, "add a cat to the left of the stool"),
                (Replace, "replace the cup with a vase"),
                (ActionChange, "make the boy raise his hand"),
            ],
        ),
        (
            "enlarge the sign and remove the sofa",
            vec![(Resize, "enlarge the sign"), (Remove, "remove the sofa")],
        ),
    ]
}

fn numbered(steps: &[(Category, &str)]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, (c, t))| format!("{}. [{}] {}", i + 1, c.label(), t))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn fixtures() -> MockFixtures {
    let mut fx = MockFixtures::default();
    let img = scene();
    for (name, b, _) in SCENE_OBJECTS {
        fx.segment
            .insert_mask(ANY_IMAGE, name, rasterize_box(&bbox(b), SCENE_DIMS));
    }
    fx.segment.insert_layout(ANY_IMAGE, scene_layout());

    for case in category_cases() {
        fx.llm.insert(
            &build_cot_prompt(case.text).expect("non-empty"),
            numbered(&[(case.category, case.text)]),
        );
        if let Some(roi) = case.text_roi {
            fx.llm.insert(
                &PromptTemplate::get(PromptKind::TextRoiExtract).render(case.text, None),
                roi,
            );
        }
        if let Some(e) = case.entity {
            fx.llm.insert(
                &PromptTemplate::get(PromptKind::EntityExtract).render(case.text, None),
                e,
            );
        }
        match (case.category, case.layout_target) {
            (Category::Add, Some(t)) => {
                let layout = scene_layout();
                let mut answer = layout.clone();
                answer.push(case.entity.expect("add names its entity"), bbox(t));
                fx.llm.insert(
                    &build_layout_prompt(LayoutMode::AddPlacement, &layout, case.text),
                    format!("Output bounding boxes: {answer}"),
                );
            }
            (_, Some(t)) => {
                let roi = case.text_roi.expect("layout cases name their RoI");
                let src = SCENE_OBJECTS
                    .iter()
                    .find(|o| o.0 == roi)
                    .expect("RoI is in the scene")
                    .1;
                fx.llm.insert(
                    &build_layout_prompt(LayoutMode::MoveResize, &Layout::single(roi, bbox(src)), case.text),
                    format!("Output bounding boxes: {}", Layout::single(roi, bbox(t))),
                );
            }
            _ => {}
        }
        if case.category == Category::ActionChange {
            let acted = MockAttrEdit
                .run(&img, None, case.text)
                .expect("mock edit is infallible");
            fx.segment.insert_mask(
                acted.fingerprint(),
                case.text_roi.expect("action names its actor"),
                rasterize_box(&bbox(BOY_AFTER_ACTION), SCENE_DIMS),
            );
        }
    }
    for (instruction, steps) in multi_step_cases() {
        fx.llm
            .insert(&build_cot_prompt(instruction).expect("non-empty"), numbered(&steps));
    }
    fx
}

pub fn mock_gateway() -> Gateway {
    Gateway::mock(fixtures())
}

/// Write `scene.png` and the fixture directory `fixtures/` under `dir`.
pub fn write_demo(dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    scene()
        .save(&dir.join("scene.png"))
        .map_err(|e| io::Error::other(e.to_string()))?;
    fixtures().save(&dir.join("fixtures"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_has_no_black_and_covers_every_category() {
        assert!(scene().pixels().iter().all(|p| *p != [0, 0, 0]));
        let mut cats: Vec<Category> = category_cases().iter().map(|c| c.category).collect();
        cats.sort();
        let mut all = Category::ALL.to_vec();
        all.sort();
        assert_eq!(cats, all);
        assert!(scene_layout().overlapping_pairs().is_empty());
    }
}
