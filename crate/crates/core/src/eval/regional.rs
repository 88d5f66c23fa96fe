use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use super::{score_pair, type_swap, EvalError, EvalReport, ImageScore, ModelTag};
use crate::color::{rgb_to_hsv, HsvImage};
use crate::dataset::{composite_background, Background, SpriteRecord, Split};
use crate::raster::{Raster, SIDE};
use crate::resize::resize_bicubic;
use crate::types::{parse_type_list, validate_type_list, CreatureType};

pub const REGIONAL_MAGNITUDE: f64 = 20.0;

/// An original creature and an official redesign with different types.
#[derive(Debug, Clone)]
pub struct RegionalPair {
    pub original: SpriteRecord,
    pub variant_id: String,
    pub variant_image: Raster,
    pub variant_types: Vec<CreatureType>,
}

fn same_types(a: &[CreatureType], b: &[CreatureType]) -> bool {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort();
    b.sort();
    a == b
}

impl RegionalPair {
    pub fn new(
        original: SpriteRecord,
        variant_id: String,
        variant_image: Raster,
        variant_types: Vec<CreatureType>,
    ) -> Result<RegionalPair, String> {
        validate_type_list(&variant_types).map_err(|e| e.to_string())?;
        if same_types(&original.types, &variant_types) {
            return Err(format!("variant {variant_id} has the same types as {}", original.id));
        }
        if !matches!(variant_image.channels(), 3 | 4) {
            return Err(format!("variant {variant_id} image has {} channels", variant_image.channels()));
        }
        Ok(RegionalPair {
            original,
            variant_id,
            variant_image,
            variant_types,
        })
    }
}

/// The training-time preprocessing of a source sprite (resize to the model
/// side, composite on black) followed by the HSV conversion. RGB images are
/// treated as fully opaque.
pub fn prepare_eval_image(image: &Raster) -> Result<HsvImage, EvalError> {
    let rgba = match image.channels() {
        4 => image.clone(),
        3 => image.with_opaque_alpha()?,
        c => return Err(EvalError::Channels(c)),
    };
    let small = resize_bicubic(&rgba, SIDE)?;
    let flat = composite_background(&small, Background::Black, 0, "")?;
    Ok(rgb_to_hsv(&flat)?)
}

#[derive(Debug, Deserialize)]
struct Row {
    original_id: String,
    variant_id: String,
    type1: String,
    #[serde(default)]
    type2: Option<String>,
    image_path: String,
}

/// Reads `original_id,variant_id,type1,type2,image_path` rows; image paths
/// are relative to the CSV's directory.
pub fn load_regional_pairs(path: &Path, records: &[SpriteRecord]) -> Result<Vec<RegionalPair>, EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(io)?;
    let by_id: HashMap<&str, &SpriteRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row_no = i + 1;
        let fail = |message: String| EvalError::Regional { row: row_no, message };
        let row = row.map_err(|e| fail(e.to_string()))?;
        let original = by_id
            .get(row.original_id.as_str())
            .ok_or_else(|| fail(format!("unknown original id {}", row.original_id)))?;
        let mut names = vec![row.type1];
        names.extend(row.type2.filter(|t| !t.is_empty()));
        let types = parse_type_list(&names).map_err(|e| fail(e.to_string()))?;
        let image = Raster::load_rgba(&base.join(&row.image_path)).map_err(|e| fail(e.to_string()))?;
        pairs.push(RegionalPair::new((*original).clone(), row.variant_id, image, types).map_err(fail)?);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapTarget {
    /// Swap the original to the variant's types (the task proper).
    Variant,
    /// Keep the original's own types; a reference point for the task.
    Original,
}

/// Swaps each original to the target types at `magnitude` and scores the
/// result against the variant image.
pub fn original_to_regional_report(
    params: &crate::model::Params<f32>,
    pairs: &[RegionalPair],
    magnitude: f64,
    target: SwapTarget,
    model: ModelTag,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty("no regional pairs"));
    }
    let scores = pairs.par_iter().map(|pair| -> Result<ImageScore, EvalError> {
        let original = prepare_eval_image(&pair.original.image)?;
        let variant = prepare_eval_image(&pair.variant_image)?;
        let types = match target {
            SwapTarget::Variant => &pair.variant_types,
            SwapTarget::Original => &pair.original.types,
        };
        let out = type_swap(params, &original, types, magnitude)?;
        let (mse, ssim) = score_pair(&variant.to_rgb(), &out.to_rgb())?;
        Ok(ImageScore {
            id: pair.variant_id.clone(),
            split: Split::Test,
            background: Some(Background::Black),
            flipped: false,
            mse,
            ssim,
        })
    });
    let set = match target {
        SwapTarget::Variant => "original to regional",
        SwapTarget::Original => "original to regional (own types)",
    };
    EvalReport::from_scores(set, model, scores.collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, Params};
    use CreatureType::*;

    fn record(id: &str, types: Vec<CreatureType>) -> SpriteRecord {
        SpriteRecord {
            id: id.into(),
            name: id.into(),
            types,
            image: Raster::from_fn(48, 48, 4, |x, y, c| if c == 3 { 1.0 } else { ((x + y * c) % 9) as f32 / 8.0 }),
            split: Split::Test,
        }
    }

    #[test]
    fn pair_rejects_identical_types() {
        let img = Raster::filled(48, 48, &[0.5, 0.5, 0.5, 1.0]);
        assert!(RegionalPair::new(record("a", vec![Fire, Flying]), "b".into(), img.clone(), vec![Flying, Fire]).is_err());
        assert!(RegionalPair::new(record("a", vec![Fire]), "b".into(), img.clone(), vec![Fire, Ice]).is_ok());
        assert!(RegionalPair::new(record("a", vec![Fire]), "b".into(), img, vec![]).is_err());
    }

    #[test]
    fn csv_loading_resolves_ids_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        Raster::filled(40, 40, &[0.2, 0.4, 0.6, 1.0])
            .save_png(&dir.path().join("v.png"))
            .unwrap();
        let csv = dir.path().join("regional.csv");
        std::fs::write(
            &csv,
            "original_id,variant_id,type1,type2,image_path\n001,001-alola,ice,steel,v.png\n002,002-galar,ghost,,v.png\n",
        )
        .unwrap();
        let records = vec![record("001", vec![Ground]), record("002", vec![Ground])];
        let pairs = load_regional_pairs(&csv, &records).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].variant_types, vec![Ice, Steel]);
        assert_eq!(pairs[1].variant_types, vec![Ghost]);

        std::fs::write(&csv, "original_id,variant_id,type1,type2,image_path\n999,x,ice,,v.png\n").unwrap();
        assert!(matches!(load_regional_pairs(&csv, &records), Err(EvalError::Regional { row: 1, .. })));
    }

    #[test]
    fn report_covers_every_pair() {
        let config = ArchConfig {
            conv_filters: [4, 8],
            deconv_filters: [8, 4],
            latent_dim: 4,
            ..ArchConfig::default()
        };
        let p = Params::<f32>::init(&config, 3).unwrap();
        let img = Raster::filled(48, 48, &[0.9, 0.1, 0.1, 1.0]);
        let pairs = vec![
            RegionalPair::new(record("a", vec![Fire]), "a-r".into(), img.clone(), vec![Ice]).unwrap(),
            RegionalPair::new(record("b", vec![Water]), "b-r".into(), img, vec![Dark, Fairy]).unwrap(),
        ];
        let r = original_to_regional_report(&p, &pairs, 20.0, SwapTarget::Variant, ModelTag::Transfer).unwrap();
        assert_eq!(r.images.len(), 2);
        assert_eq!(r.test.unwrap().count, 2);
        assert!(r.train.is_none());
        assert!(original_to_regional_report(&p, &[], 20.0, SwapTarget::Variant, ModelTag::Transfer).is_err());
    }
}
