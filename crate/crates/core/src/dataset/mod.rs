//! Sprite ingestion, normalisation to 32x32 HSV, background/flip augmentation
//! and train/test splitting.

mod augment;
mod cache;
mod faces;
mod manifest;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{
    build_augmented_set, composite_background, prepare_sprite, split_dataset, Background,
};
pub use cache::{read_cache, write_cache, CacheEntry};
pub use faces::{load_face_index, load_faces, FaceEntry, FaceImage};
pub use manifest::{load_manifest, parse_manifest, ManifestEntry};

use crate::color::{ColorError, HsvImage};
use crate::raster::{Raster, RasterError};
use crate::types::{CreatureType, TypeVector};

#[derive(Debug, Error)]
pub enum RowError {
    #[error("malformed row: {0}")]
    Malformed(String),
    #[error("unknown type {0:?}")]
    UnknownType(String),
    #[error("invalid type list: {0}")]
    Types(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unreadable image {path:?}: {message}")]
    Image { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {error}")]
    Row { row: usize, error: RowError },
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
    #[error("split of {total} records at fraction {fraction} leaves one side empty")]
    DegenerateSplit { total: usize, fraction: f64 },
    #[error("cache index is invalid: {0}")]
    Cache(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Color(#[from] ColorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One creature: identity, one or two types, and the source RGBA image.
#[derive(Debug, Clone)]
pub struct SpriteRecord {
    pub id: String,
    pub name: String,
    pub types: Vec<CreatureType>,
    pub image: Raster,
    pub split: Split,
}

impl SpriteRecord {
    pub fn type_vector(&self) -> TypeVector {
        TypeVector::unit(&self.types).expect("record types validated at load")
    }
}

/// One (background, flip) rendering of a source sprite.
#[derive(Debug, Clone)]
pub struct AugmentedInstance {
    pub source_id: String,
    pub image: HsvImage,
    pub type_vector: TypeVector,
    pub background: Background,
    pub flipped: bool,
    pub split: Split,
}

/// What the trainer consumes: an HSV image and its conditioning vector.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: HsvImage,
    pub type_vector: TypeVector,
}

impl From<&AugmentedInstance> for Sample {
    fn from(inst: &AugmentedInstance) -> Self {
        Sample {
            image: inst.image.clone(),
            type_vector: inst.type_vector,
        }
    }
}
