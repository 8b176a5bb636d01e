//! Ground-truth worlds with a controllable tilt between the content and
//! style tangent ranges, and the two-domain colorized digit pipeline.

mod color;
mod forge;
mod ingest;

pub use color::{
    allowed_set, colorize, sample_biased_color, ColorMode, ColorizeConfig, Rgb, BG_POOL, DIGIT_POOL,
};
pub use forge::{forge_world, sample_world, NonlinearityConfig, StyleLaw, WorldSample, WorldSpec};
pub use ingest::{
    build_two_domain_set, load_two_domain_set, read_idx_images, read_idx_labels, read_png_dir,
    resize_to, DomainData, ImageSource, LabeledImage, ManifestRecord, Pixels, IMAGE_SIDE,
};

use std::path::PathBuf;

use crate::autodiff::AutodiffError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("tilt angle {0} outside [0, π/2)")]
    Tilt(f64),

    #[error("invalid world: {0}")]
    Invalid(String),

    #[error("invalid colorization config: {0}")]
    Colorize(String),

    #[error("{}: {message} (at byte offset {offset})", path.display())]
    Ingest {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("inverse did not converge for coordinate {coordinate} (residual {residual:e})")]
    Inverse { coordinate: usize, residual: f64 },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl WorldError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WorldError::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests;
