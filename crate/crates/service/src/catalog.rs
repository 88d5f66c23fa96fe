use std::collections::HashMap;
use std::path::Path;

use typeshift_core::dataset::{load_manifest, SpriteRecord};
use typeshift_core::eval::prepare_eval_image;
use typeshift_core::{CreatureType, HsvImage};

/// A sprite ready for inference: the model-resolution HSV input and its RGB
/// PNG encoding.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub id: String,
    pub name: String,
    pub types: Vec<CreatureType>,
    pub input: HsvImage,
    pub input_png: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entries: Vec<CatalogEntry>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_records(records: &[SpriteRecord]) -> anyhow::Result<Catalog> {
        let mut entries = records
            .iter()
            .map(|r| {
                let input = prepare_eval_image(&r.image)?;
                let input_png = input.to_rgb().to_png_bytes()?;
                Ok(CatalogEntry {
                    id: r.id.clone(),
                    name: r.name.clone(),
                    types: r.types.clone(),
                    input,
                    input_png,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let index = entries.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Ok(Catalog { entries, index })
    }

    pub fn load(manifest: &Path) -> anyhow::Result<Catalog> {
        Catalog::from_records(&load_manifest(manifest)?)
    }

    pub fn get(&self, id: &str) -> Option<&CatalogEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    /// Entries ordered by id.
    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
