//! Manifest parsing, image loading, batching and a synthetic generator.

mod batch;
mod image;
mod manifest;
mod synth;

use std::path::Path;

pub use batch::{assemble, make_batches};
pub use image::{load_image, resize_bilinear};
pub use manifest::{
    load_manifest, manifest_from_dir, parse_manifest, stats, DatasetStats, Label, Manifest, Record, Split,
    MANIFEST_HEADER,
};
pub use synth::synth_dataset;

use crate::nn::{NnError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("manifest header: {0}")]
    MissingHeader(String),
    #[error("malformed manifest:\n  {}", .0.join("\n  "))]
    Malformed(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One image `[S, S, 3]` in `[0, 1]` with label `1` for good, `0` for bad.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: u8,
}

/// Loads every record of `split` under `root` at `size × size`.
pub fn load_split(manifest: &Manifest, root: impl AsRef<Path>, split: Split, size: usize) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    let root = root.as_ref();
    let records: Vec<&Record> = manifest.split(split).collect();
    records
        .par_iter()
        .map(|r| {
            Ok(Sample {
                image: load_image(root.join(&r.path), size)?,
                label: r.label.target(),
            })
        })
        .collect()
}
