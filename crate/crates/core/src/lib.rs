//! Edit-program planning and execution for multi-step image editing.

pub mod affine;
pub mod config;
pub mod gateway;
pub mod image;
pub mod interpreter;
pub mod layout;
pub mod mask;
pub mod planner;
pub mod program;
pub mod scalar;
pub mod testkit;

pub use affine::AffineTransform;
pub use config::SessionConfig;
pub use gateway::Gateway;
pub use image::{Dims, ImageBuffer, RasterMask};
pub use interpreter::{execute_step, resume, run_program, ExecutionTrace};
pub use layout::{BoundingBox, Layout};
pub use program::{AtomicInstruction, Category, EditProgram};
pub use scalar::Scalar;

pub type Affine = AffineTransform<f64>;
pub type Affine32 = AffineTransform<f32>;
pub type AffineExact = AffineTransform<num_rational::Ratio<i64>>;
