use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{DatasetError, RowError, SpriteRecord, Split};
use crate::raster::Raster;
use crate::types::{validate_type_list, CreatureType};

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    name: String,
    type1: String,
    #[serde(default)]
    type2: Option<String>,
    image_path: String,
}

/// Parsed manifest row before the image is decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub name: String,
    pub types: Vec<CreatureType>,
    pub image_path: PathBuf,
}

fn parse_types(type1: &str, type2: Option<&str>) -> Result<Vec<CreatureType>, RowError> {
    let mut types = vec![type1.parse().map_err(|_| RowError::UnknownType(type1.trim().to_string()))?];
    if let Some(t2) = type2.map(str::trim).filter(|t| !t.is_empty()) {
        types.push(t2.parse().map_err(|_| RowError::UnknownType(t2.to_string()))?);
    }
    validate_type_list(&types).map_err(|e| RowError::Types(e.to_string()))?;
    Ok(types)
}

/// Parses `id,name,type1,type2,image_path` without touching the images.
/// Relative image paths resolve against `base_dir`. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn parse_manifest<R: std::io::Read>(reader: R, base_dir: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, row) in csv.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DatasetError::Row {
            row: row_no,
            error: RowError::Malformed(e.to_string()),
        })?;
        let types = parse_types(&row.type1, row.type2.as_deref()).map_err(|error| DatasetError::Row { row: row_no, error })?;
        if !seen.insert(row.id.clone()) {
            return Err(DatasetError::Row {
                row: row_no,
                error: RowError::DuplicateId(row.id),
            });
        }
        let path = PathBuf::from(&row.image_path);
        let image_path = if path.is_absolute() { path } else { base_dir.join(path) };
        entries.push(ManifestEntry {
            id: row.id,
            name: row.name,
            types,
            image_path,
        });
    }
    Ok(entries)
}

/// Reads a sprite manifest and decodes every image as RGBA.
pub fn load_manifest(path: &Path) -> Result<Vec<SpriteRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(file, base)?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let image = Raster::load_rgba(&e.image_path).map_err(|err| DatasetError::Row {
                row: i + 1,
                error: RowError::Image {
                    path: e.image_path.clone(),
                    message: err.to_string(),
                },
            })?;
            Ok(SpriteRecord {
                id: e.id,
                name: e.name,
                types: e.types,
                image,
                split: Split::Train,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,name,type1,type2,image_path\n";

    fn parse(body: &str) -> Result<Vec<ManifestEntry>, DatasetError> {
        parse_manifest(format!("{HEADER}{body}").as_bytes(), Path::new("/data"))
    }

    #[test]
    fn mono_type_row() {
        let entries = parse("pikachu,Pikachu,Electric,,img/pikachu.png\n").unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].id, "pikachu");
        assert_eq!(entries[0].name, "Pikachu");
        assert_eq!(entries[0].types, vec![CreatureType::Electric]);
        assert_eq!(entries[0].image_path, PathBuf::from("/data/img/pikachu.png"));
    }

    #[test]
    fn dual_type_row() {
        let entries = parse("bulba,Bulbasaur,Grass,Poison,b.png\n").unwrap();
        assert_eq!(entries[0].types, vec![CreatureType::Grass, CreatureType::Poison]);
    }

    #[test]
    fn unknown_type_reports_row() {
        let err = parse("a,A,Fire,,a.png\nb,B,Shadow,,b.png\n").unwrap_err();
        match err {
            DatasetError::Row {
                row: 2,
                error: RowError::UnknownType(t),
            } => assert_eq!(t, "Shadow"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_reports_row() {
        let err = parse("a,A,Fire,,a.png\na,A2,Water,,b.png\n").unwrap_err();
        assert!(matches!(
            err,
            DatasetError::Row {
                row: 2,
                error: RowError::DuplicateId(_)
            }
        ));
    }

    #[test]
    fn repeated_type_rejected() {
        let err = parse("a,A,Fire,fire,a.png\n").unwrap_err();
        assert!(matches!(err, DatasetError::Row { row: 1, error: RowError::Types(_) }));
    }

    #[test]
    fn missing_file() {
        let err = load_manifest(Path::new("/definitely/not/here.csv")).unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
    }

    #[test]
    fn unreadable_image_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.csv");
        std::fs::write(&manifest, format!("{HEADER}a,A,Fire,,missing.png\n")).unwrap();
        let err = load_manifest(&manifest).unwrap_err();
        assert!(matches!(err, DatasetError::Row { row: 1, error: RowError::Image { .. } }));
    }
}
