//! Speech–text fusion strategies and the classifier assembly.

mod config;
mod model;

pub use config::{F0Variant, HeadConfig, MlpKind, Strategy};
pub use model::{argmax, ClassifierHead, FusedRepresentation, Fuser, FusionModel};
