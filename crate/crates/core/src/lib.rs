//! Self-supervised multi-task multimodal sentiment regression.
//!
//! A multimodal regression task is trained jointly with text, audio and
//! vision subtasks whose targets are generated on the fly from the geometry
//! of the learned representations (class centers and relative distances),
//! then smoothed across epochs with a momentum rule.

pub mod autodiff;
pub mod dataio;
pub mod encoders;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod trajectory;
pub mod ulgm;

mod modality;

pub use modality::{Modality, Task};
