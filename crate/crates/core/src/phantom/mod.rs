//! Synthetic lung-ultrasound phantoms and their file formats.

pub mod annotations;
pub mod dataset;
mod generate;
mod image;

pub use annotations::{read_annotations, read_coco, write_annotations, write_coco, Annotated, Record};
pub use dataset::{load_dataset, split_dataset, write_dataset, Dataset, PhantomConfig};
pub use generate::{generate_phantom, LabeledImage, PhantomParams, MAX_ALINES, MAX_BLINES};
pub use image::{pgm_comments, read_pgm, write_pgm, Image};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom parameters: {0}")]
    Params(String),
    #[error("cannot place streaks: need {needed} px, image is {available} px wide")]
    Placement { needed: usize, available: usize },
    #[error("image geometry: {0}")]
    Geometry(String),
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("annotation line {line}: {message}")]
    Annotation { line: usize, message: String },
    #[error("coco: {0}")]
    Coco(String),
    #[error("split: {0}")]
    Split(String),
    #[error("io: {0}")]
    Io(String),
}
