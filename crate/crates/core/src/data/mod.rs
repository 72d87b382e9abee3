//! Procedural scene-parsing data: generator, augmentation, metrics and
//! Netpbm dumps.

mod augment;
mod metrics;
pub mod netpbm;
mod scene;

pub use augment::{apply_augment, augment, draw_augment, AugmentParams};
pub use metrics::{miou, ConfusionMatrix};
pub use scene::{dump_dataset, generate_dataset, generate_scene, presence_from_mask, Image, SceneConfig, SceneSample};
