//! Category -> stage sequence table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::program::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Localize,
    InpaintRoI,
    EditRoI,
    LayoutChange,
    PreComposite,
    Composite,
    Global,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Localize => "Localize",
            Stage::InpaintRoI => "InpaintRoI",
            Stage::EditRoI => "EditRoI",
            Stage::LayoutChange => "LayoutChange",
            Stage::PreComposite => "PreComposite",
            Stage::Composite => "Composite",
            Stage::Global => "Global",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const INPAINT: &[Stage] = &[Stage::Localize, Stage::InpaintRoI];
const ACTION: &[Stage] = &[
    Stage::Localize,
    Stage::InpaintRoI,
    Stage::EditRoI,
    Stage::PreComposite,
    Stage::Composite,
];
const LAYOUT: &[Stage] = &[
    Stage::Localize,
    Stage::InpaintRoI,
    Stage::LayoutChange,
    Stage::PreComposite,
    Stage::Composite,
];
const EDIT: &[Stage] = &[Stage::EditRoI];
const GLOBAL: &[Stage] = &[Stage::Global];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DispatchPlan {
    pub category: Category,
    pub stages: &'static [Stage],
}

impl fmt::Display for DispatchPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.stages.iter().map(|s| s.name()).collect();
        write!(f, "{} -> [{}]", self.category, names.join(", "))
    }
}

pub fn dispatch(category: Category) -> DispatchPlan {
    use Category::*;
    let stages = match category {
        Add | Remove | Replace => INPAINT,
        ActionChange => ACTION,
        Move | Resize => LAYOUT,
        AppearanceChange | BackgroundChange | ColorChange | MaterialChange | ExpressionChange => EDIT,
        ToneTransfer | StyleChange => GLOBAL,
    };
    DispatchPlan { category, stages }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_categories_use_global_stage() {
        for c in Category::ALL {
            assert_eq!(c.is_global(), dispatch(c).stages == [Stage::Global], "{c}");
        }
    }

    #[test]
    fn display() {
        assert_eq!(dispatch(Category::Add).to_string(), "Add -> [Localize, InpaintRoI]");
    }
}
