use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentedInstance, Background, DatasetError, Split};
use crate::color::rgb_to_hsv;
use crate::raster::Raster;
use crate::types::TypeVector;

const INDEX_FILE: &str = "index.json";

/// One line of the cache index; `file` is relative to the cache directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub file: String,
    pub source_id: String,
    pub background: Background,
    pub flipped: bool,
    pub type_vector: TypeVector,
    pub split: Split,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes each instance as an 8-bit RGB PNG plus a JSON index.
pub fn write_cache(dir: &Path, instances: &[AugmentedInstance]) -> Result<Vec<CacheEntry>, DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let file = format!(
            "{i:05}_{}_{}{}.png",
            sanitize(&inst.source_id),
            inst.background.tag(),
            if inst.flipped { "_flip" } else { "" }
        );
        inst.image.to_rgb().save_png(&dir.join(&file))?;
        entries.push(CacheEntry {
            file,
            source_id: inst.source_id.clone(),
            background: inst.background,
            flipped: inst.flipped,
            type_vector: inst.type_vector,
            split: inst.split,
        });
    }
    let index_path = dir.join(INDEX_FILE);
    let json = serde_json::to_vec_pretty(&entries).map_err(|e| DatasetError::Cache(e.to_string()))?;
    std::fs::write(&index_path, json).map_err(io_err(&index_path))?;
    Ok(entries)
}

pub fn read_cache(dir: &Path) -> Result<Vec<AugmentedInstance>, DatasetError> {
    let index_path = dir.join(INDEX_FILE);
    let bytes = std::fs::read(&index_path).map_err(io_err(&index_path))?;
    let entries: Vec<CacheEntry> = serde_json::from_slice(&bytes).map_err(|e| DatasetError::Cache(e.to_string()))?;
    entries
        .into_iter()
        .map(|e| {
            let rgb = Raster::load_rgb(&dir.join(&e.file))?;
            Ok(AugmentedInstance {
                source_id: e.source_id,
                image: rgb_to_hsv(&rgb)?,
                type_vector: e.type_vector,
                background: e.background,
                flipped: e.flipped,
                split: e.split,
            })
        })
        .collect()
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}
