use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::raster::{Raster, SIDE};
use crate::resize::resize_bicubic;

/// Entry of the face-image JSON index. Relative paths resolve against the
/// index file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceEntry {
    pub id: String,
    pub path: PathBuf,
}

/// A face image at model resolution. Faces carry no alpha; every pixel counts.
#[derive(Debug, Clone)]
pub struct FaceImage {
    pub id: String,
    pub image: Raster,
}

pub fn load_face_index(path: &Path) -> Result<Vec<FaceEntry>, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries: Vec<FaceEntry> = serde_json::from_slice(&bytes).map_err(|e| DatasetError::Cache(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(entries)
}

/// Loads and resizes every face listed in the index to 32x32 RGB.
pub fn load_faces(index_path: &Path) -> Result<Vec<FaceImage>, DatasetError> {
    load_face_index(index_path)?
        .into_iter()
        .map(|e| {
            let rgb = Raster::load_rgb(&e.path)?;
            Ok(FaceImage {
                id: e.id,
                image: resize_bicubic(&rgb, SIDE)?,
            })
        })
        .collect()
}
