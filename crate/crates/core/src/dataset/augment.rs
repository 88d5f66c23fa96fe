use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentedInstance, DatasetError, SpriteRecord, Split};
use crate::color::rgb_to_hsv;
use crate::raster::{Raster, RasterError, SIDE};
use crate::resize::resize_bicubic;
use crate::seed::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Black,
    White,
    NoiseA,
    NoiseB,
}

impl Background {
    pub const TRAIN: [Background; 4] = [
        Background::Black,
        Background::White,
        Background::NoiseA,
        Background::NoiseB,
    ];
    pub const TEST: [Background; 2] = [Background::Black, Background::White];

    pub fn tag(self) -> &'static str {
        match self {
            Background::Black => "black",
            Background::White => "white",
            Background::NoiseA => "noise_a",
            Background::NoiseB => "noise_b",
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Background::NoiseA | Background::NoiseB)
    }

    pub fn for_split(split: Split) -> &'static [Background] {
        match split {
            Split::Train => &Self::TRAIN,
            Split::Test => &Self::TEST,
        }
    }
}

/// Resizes a sprite's source image to the model resolution.
pub fn prepare_sprite(record: &SpriteRecord) -> Result<Raster, RasterError> {
    record.image.expect_channels(4)?;
    resize_bicubic(&record.image, SIDE)
}

/// `alpha * foreground + (1 - alpha) * background`. Noise backgrounds are
/// uniform per pixel and channel, regenerated from `(seed, source_id, tag)`.
pub fn composite_background(
    image: &Raster,
    background: Background,
    seed: u64,
    source_id: &str,
) -> Result<Raster, RasterError> {
    image.expect_channels(4)?;
    let (w, h) = (image.width(), image.height());
    let backdrop: Raster = match background {
        Background::Black => Raster::filled(w, h, &[0.0; 3]),
        Background::White => Raster::filled(w, h, &[1.0; 3]),
        Background::NoiseA | Background::NoiseB => {
            let mut rng = derive_rng(seed, &[b"background", source_id.as_bytes(), background.tag().as_bytes()]);
            Raster::from_fn(w, h, 3, |_, _, _| rng.random::<f32>())
        }
    };
    let data = image
        .pixels()
        .zip(backdrop.pixels())
        .flat_map(|(fg, bg)| {
            let a = fg[3];
            [0, 1, 2].map(|c| a * fg[c] + (1.0 - a) * bg[c])
        })
        .collect();
    Raster::new(w, h, 3, data)
}

/// Expands each record into its (background x flip) variants: eight for
/// training records, four for test records (no noise backgrounds).
pub fn build_augmented_set(records: &[SpriteRecord], seed: u64) -> Result<Vec<AugmentedInstance>, DatasetError> {
    let mut out = Vec::with_capacity(records.len() * 8);
    for record in records {
        let small = prepare_sprite(record)?;
        let type_vector = record.type_vector();
        for &background in Background::for_split(record.split) {
            let rgb = composite_background(&small, background, seed, &record.id)?;
            let image = rgb_to_hsv(&rgb)?;
            for flipped in [false, true] {
                out.push(AugmentedInstance {
                    source_id: record.id.clone(),
                    image: if flipped { image.flip_horizontal() } else { image.clone() },
                    type_vector,
                    background,
                    flipped,
                    split: record.split,
                });
            }
        }
    }
    Ok(out)
}

/// Creature-level random split. `round(test_fraction * n)` records go to the
/// test side; both sides keep input order and have their `split` field set.
pub fn split_dataset(
    records: &[SpriteRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<SpriteRecord>, Vec<SpriteRecord>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::Fraction(test_fraction));
    }
    let total = records.len();
    let n_test = (test_fraction * total as f64).round() as usize;
    if n_test == 0 || n_test >= total {
        return Err(DatasetError::DegenerateSplit {
            total,
            fraction: test_fraction,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut derive_rng(seed, &[b"split"]));
    let mut is_test = vec![false; total];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(total - n_test), Vec::with_capacity(n_test));
    for (record, test_side) in records.iter().zip(is_test) {
        let mut r = record.clone();
        if test_side {
            r.split = Split::Test;
            test.push(r);
        } else {
            r.split = Split::Train;
            train.push(r);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CreatureType;
    use std::collections::HashSet;

    fn record(id: &str, split: Split) -> SpriteRecord {
        let image = Raster::from_fn(48, 48, 4, |x, y, c| {
            if c == 3 {
                if (x as i32 - 24).pow(2) + (y as i32 - 24).pow(2) < 300 {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((x * 5 + y * 3 + c * 40) % 100) as f32 / 100.0
            }
        });
        SpriteRecord {
            id: id.to_string(),
            name: id.to_uppercase(),
            types: vec![CreatureType::Fire],
            image,
            split,
        }
    }

    #[test]
    fn opaque_on_white_is_unchanged() {
        let img = Raster::from_fn(32, 32, 4, |x, y, c| if c == 3 { 1.0 } else { ((x + y + c) % 7) as f32 / 7.0 });
        let out = composite_background(&img, Background::White, 1, "a").unwrap();
        assert_eq!(out, img.without_alpha().unwrap());
    }

    #[test]
    fn transparent_on_black_is_zero() {
        let img = Raster::filled(32, 32, &[0.7, 0.2, 0.9, 0.0]);
        let out = composite_background(&img, Background::Black, 1, "a").unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_is_deterministic_and_tag_dependent() {
        let img = Raster::filled(32, 32, &[0.0, 0.0, 0.0, 0.0]);
        let a1 = composite_background(&img, Background::NoiseA, 9, "x").unwrap();
        let a2 = composite_background(&img, Background::NoiseA, 9, "x").unwrap();
        let b = composite_background(&img, Background::NoiseB, 9, "x").unwrap();
        let other = composite_background(&img, Background::NoiseA, 9, "y").unwrap();
        assert_eq!(a1.data(), a2.data());
        assert_ne!(a1.data(), b.data());
        assert_ne!(a1.data(), other.data());
        assert!(a1.data().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn counts_per_split() {
        let records = vec![record("a", Split::Train), record("b", Split::Test)];
        let set = build_augmented_set(&records, 3).unwrap();
        assert_eq!(set.iter().filter(|i| i.source_id == "a").count(), 8);
        let test: Vec<_> = set.iter().filter(|i| i.source_id == "b").collect();
        assert_eq!(test.len(), 4);
        assert!(test.iter().all(|i| !i.background.is_noise()));
        assert!(set.iter().all(|i| i.image.side() == SIDE));
    }

    #[test]
    fn flipped_equals_reversed_columns() {
        let set = build_augmented_set(&[record("a", Split::Train)], 3).unwrap();
        for pair in set.chunks(2) {
            assert!(!pair[0].flipped && pair[1].flipped);
            assert_eq!(pair[0].background, pair[1].background);
            assert_eq!(pair[0].image.flip_horizontal(), pair[1].image);
        }
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let records: Vec<_> = (0..50).map(|i| record(&format!("r{i}"), Split::Train)).collect();
        let (train, test) = split_dataset(&records, 0.2, 11).unwrap();
        assert_eq!((train.len(), test.len()), (40, 10));
        let train_ids: HashSet<_> = train.iter().map(|r| r.id.clone()).collect();
        let test_ids: HashSet<_> = test.iter().map(|r| r.id.clone()).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        assert_eq!(train_ids.len() + test_ids.len(), 50);
        assert!(test.iter().all(|r| r.split == Split::Test));
        let (train2, _) = split_dataset(&records, 0.2, 11).unwrap();
        let ids = |v: &[SpriteRecord]| v.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&train), ids(&train2));
        let (train3, _) = split_dataset(&records, 0.2, 12).unwrap();
        assert_ne!(ids(&train), ids(&train3));
    }

    #[test]
    fn degenerate_splits_rejected() {
        let records: Vec<_> = (0..3).map(|i| record(&format!("r{i}"), Split::Train)).collect();
        assert!(matches!(split_dataset(&records, 0.0, 1), Err(DatasetError::Fraction(_))));
        assert!(matches!(split_dataset(&records, 1.0, 1), Err(DatasetError::Fraction(_))));
        assert!(matches!(
            split_dataset(&records, 0.01, 1),
            Err(DatasetError::DegenerateSplit { .. })
        ));
    }
}
