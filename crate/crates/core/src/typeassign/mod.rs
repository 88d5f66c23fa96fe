//! Labels an untyped image collection (faces) with one creature type per
//! image: each image prefers the types whose mean HSV colour is closest to
//! its own, and quotas force the label distribution to match the creatures'
//! type distribution. Capacitated deferred acceptance resolves the conflict.

mod matching;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matching::{deferred_acceptance, find_blocking_pair};

use crate::color::{rgb_to_hsv, rgb_to_hsv_pixel, ColorError, HsvImage};
use crate::dataset::{FaceImage, SpriteRecord};
use crate::raster::{Raster, RasterError};
use crate::types::{CreatureType, NUM_TYPES};

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("no sprite carries type {0}")]
    EmptyType(CreatureType),
    #[error("image has no visible pixels")]
    EmptyMask,
    #[error("quotas sum to {quota_sum} but there are {images} images")]
    QuotaSum { quota_sum: usize, images: usize },
    #[error("preference row {row} contains a negative or non-finite distance")]
    BadDistance { row: usize },
    #[error("{ids} ids for {rows} preference rows")]
    IdCount { ids: usize, rows: usize },
    #[error("type distribution has zero total weight")]
    NoWeight,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error("assignment row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeColorProfile {
    pub creature_type: CreatureType,
    pub mean_hsv: [f64; 3],
    /// Number of images contributing to the mean.
    pub sample_count: usize,
}

/// Sum of HSV over pixels with alpha > 0, and how many there were.
fn masked_hsv_sum(rgba: &Raster) -> Result<([f64; 3], usize), RasterError> {
    rgba.expect_channels(4)?;
    let mut sum = [0f64; 3];
    let mut count = 0usize;
    for p in rgba.pixels().filter(|p| p[3] > 0.0) {
        let hsv = rgb_to_hsv_pixel([p[0] as f64, p[1] as f64, p[2] as f64]);
        for c in 0..3 {
            sum[c] += hsv[c];
        }
        count += 1;
    }
    Ok((sum, count))
}

/// Mean HSV of the visible (alpha > 0) pixels of an RGBA raster.
pub fn masked_mean_hsv(rgba: &Raster) -> Result<[f64; 3], AssignError> {
    let (sum, count) = masked_hsv_sum(rgba)?;
    if count == 0 {
        return Err(AssignError::EmptyMask);
    }
    Ok(sum.map(|s| s / count as f64))
}

/// Mean over every pixel of an HSV image.
pub fn image_mean_hsv(image: &HsvImage) -> [f64; 3] {
    let mut sum = [0f64; 3];
    let mut count = 0usize;
    for p in image.raster().pixels() {
        for c in 0..3 {
            sum[c] += p[c] as f64;
        }
        count += 1;
    }
    sum.map(|s| s / count as f64)
}

/// Per-type mean HSV over all visible pixels of all sprites of that type.
/// Dual-typed sprites count towards both of their types.
pub fn type_mean_hsv<'a, I>(sprites: I) -> Result<Vec<TypeColorProfile>, AssignError>
where
    I: IntoIterator<Item = (&'a [CreatureType], &'a Raster)>,
{
    let mut sums = [[0f64; 3]; NUM_TYPES];
    let mut pixels = [0usize; NUM_TYPES];
    let mut images = [0usize; NUM_TYPES];
    for (types, rgba) in sprites {
        let (sum, count) = masked_hsv_sum(rgba)?;
        for t in types {
            let i = t.index();
            for c in 0..3 {
                sums[i][c] += sum[c];
            }
            pixels[i] += count;
            images[i] += 1;
        }
    }
    CreatureType::ALL
        .iter()
        .map(|&t| {
            let i = t.index();
            if pixels[i] == 0 {
                return Err(AssignError::EmptyType(t));
            }
            Ok(TypeColorProfile {
                creature_type: t,
                mean_hsv: sums[i].map(|s| s / pixels[i] as f64),
                sample_count: images[i],
            })
        })
        .collect()
}

/// Mean squared HSV distance from every image mean to every type profile.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    rows: Vec<Vec<f64>>,
}

impl PreferenceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, AssignError> {
        for (row, values) in rows.iter().enumerate() {
            if values.len() != NUM_TYPES || values.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(AssignError::BadDistance { row });
            }
        }
        Ok(PreferenceMatrix { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn distance(&self, image: usize, t: CreatureType) -> f64 {
        self.rows[image][t.index()]
    }

    /// The type each image ranks first (ties to the lower type index).
    pub fn first_choices(&self) -> Vec<CreatureType> {
        self.rows
            .iter()
            .map(|row| {
                let best = (0..NUM_TYPES)
                    .min_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)))
                    .expect("18 columns");
                CreatureType::ALL[best]
            })
            .collect()
    }
}

pub fn preference_matrix(image_means: &[[f64; 3]], profiles: &[TypeColorProfile]) -> Result<PreferenceMatrix, AssignError> {
    let mut by_type = [[0f64; 3]; NUM_TYPES];
    let mut present = [false; NUM_TYPES];
    for p in profiles {
        by_type[p.creature_type.index()] = p.mean_hsv;
        present[p.creature_type.index()] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(AssignError::EmptyType(CreatureType::ALL[missing]));
    }
    let rows = image_means
        .iter()
        .map(|m| {
            by_type
                .iter()
                .map(|profile| (0..3).map(|c| (m[c] - profile[c]).powi(2)).sum::<f64>() / 3.0)
                .collect()
        })
        .collect();
    PreferenceMatrix::from_rows(rows)
}

/// Per-type capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeQuota(pub [usize; NUM_TYPES]);

impl TypeQuota {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, t: CreatureType) -> usize {
        self.0[t.index()]
    }
}

/// Type weights of a creature population: 1 for a mono-type creature's type,
/// 0.5 for each type of a dual-type creature.
pub fn type_weights<'a, I>(creature_types: I) -> [f64; NUM_TYPES]
where
    I: IntoIterator<Item = &'a [CreatureType]>,
{
    let mut weights = [0f64; NUM_TYPES];
    for types in creature_types {
        let share = 1.0 / types.len() as f64;
        for t in types {
            weights[t.index()] += share;
        }
    }
    weights
}

/// Largest-remainder apportionment of `n_images` to the given weights;
/// remainder ties go to the lower type index.
pub fn quotas_from_weights(weights: &[f64; NUM_TYPES], n_images: usize) -> Result<TypeQuota, AssignError> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(AssignError::NoWeight);
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n_images as f64).collect();
    let mut quota = [0usize; NUM_TYPES];
    for (q, e) in quota.iter_mut().zip(&exact) {
        *q = e.floor() as usize;
    }
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..NUM_TYPES).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &t in order.iter().take(n_images.saturating_sub(assigned)) {
        quota[t] += 1;
    }
    Ok(TypeQuota(quota))
}

pub fn type_quotas<'a, I>(creature_types: I, n_images: usize) -> Result<TypeQuota, AssignError>
where
    I: IntoIterator<Item = &'a [CreatureType]>,
{
    quotas_from_weights(&type_weights(creature_types), n_images)
}

/// Image id to assigned type, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub ids: Vec<String>,
    pub types: Vec<CreatureType>,
}

impl Assignment {
    pub fn counts(&self) -> [usize; NUM_TYPES] {
        let mut counts = [0usize; NUM_TYPES];
        for t in &self.types {
            counts[t.index()] += 1;
        }
        counts
    }

    pub fn as_map(&self) -> HashMap<&str, CreatureType> {
        self.ids.iter().map(String::as_str).zip(self.types.iter().copied()).collect()
    }

    /// Writes `image_id,assigned_type`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), AssignError> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["image_id", "assigned_type"]).map_err(csv_err)?;
        for (id, t) in self.ids.iter().zip(&self.types) {
            csv.write_record([id.as_str(), t.name()]).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Reads what [`Assignment::write_csv`] wrote.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Assignment, AssignError> {
        let mut csv = csv::Reader::from_reader(reader);
        let (mut ids, mut types) = (Vec::new(), Vec::new());
        for (i, record) in csv.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| AssignError::Row { row, message: e.to_string() })?;
            if record.len() != 2 {
                return Err(AssignError::Row {
                    row,
                    message: format!("expected 2 fields, got {}", record.len()),
                });
            }
            let t: CreatureType = record[1]
                .parse()
                .map_err(|e: crate::types::TypeError| AssignError::Row { row, message: e.to_string() })?;
            ids.push(record[0].to_string());
            types.push(t);
        }
        Ok(Assignment { ids, types })
    }
}

fn csv_err(e: csv::Error) -> AssignError {
    AssignError::Io(std::io::Error::other(e))
}

/// Ranks image ids lexicographically; used for type-side tie breaking.
fn id_ranks(ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; ids.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Image-proposing deferred acceptance with types as capacity-limited
/// receivers. Distance ties: images pick the lower type index, types keep the
/// lexicographically smaller image id.
pub fn gale_shapley_assign(prefs: &PreferenceMatrix, ids: &[String], quotas: &TypeQuota) -> Result<Assignment, AssignError> {
    if ids.len() != prefs.len() {
        return Err(AssignError::IdCount {
            ids: ids.len(),
            rows: prefs.len(),
        });
    }
    if quotas.total() != prefs.len() {
        return Err(AssignError::QuotaSum {
            quota_sum: quotas.total(),
            images: prefs.len(),
        });
    }
    let matched = deferred_acceptance(prefs.rows(), &quotas.0, &id_ranks(ids));
    Ok(Assignment {
        ids: ids.to_vec(),
        types: matched.into_iter().map(|t| CreatureType::ALL[t]).collect(),
    })
}

/// Checks stability of an assignment against its preferences and quotas.
pub fn blocking_pair(prefs: &PreferenceMatrix, quotas: &TypeQuota, assignment: &Assignment) -> Option<(usize, CreatureType)> {
    let current: Vec<usize> = assignment.types.iter().map(|t| t.index()).collect();
    find_blocking_pair(prefs.rows(), &quotas.0, &id_ranks(&assignment.ids), &current).map(|(i, t)| (i, CreatureType::ALL[t]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeAudit {
    pub creature_type: CreatureType,
    pub quota: usize,
    pub first_choice: usize,
    pub first_choice_share: f64,
    pub assigned: usize,
    pub assigned_share: f64,
}

/// How far the quotas pushed images away from their first choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentSummary {
    pub images: usize,
    pub reassigned: usize,
    pub per_type: Vec<TypeAudit>,
}

impl AssignmentSummary {
    pub fn new(prefs: &PreferenceMatrix, quotas: &TypeQuota, assignment: &Assignment) -> Self {
        let first = prefs.first_choices();
        let mut first_counts = [0usize; NUM_TYPES];
        for t in &first {
            first_counts[t.index()] += 1;
        }
        let final_counts = assignment.counts();
        let n = assignment.types.len();
        let share = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        let reassigned = first.iter().zip(&assignment.types).filter(|(a, b)| a != b).count();
        AssignmentSummary {
            images: n,
            reassigned,
            per_type: CreatureType::ALL
                .iter()
                .map(|&t| TypeAudit {
                    creature_type: t,
                    quota: quotas.get(t),
                    first_choice: first_counts[t.index()],
                    first_choice_share: share(first_counts[t.index()]),
                    assigned: final_counts[t.index()],
                    assigned_share: share(final_counts[t.index()]),
                })
                .collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), AssignError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Everything produced by labelling a face set.
#[derive(Debug, Clone)]
pub struct FaceLabelling {
    pub profiles: Vec<TypeColorProfile>,
    pub quotas: TypeQuota,
    pub preferences: PreferenceMatrix,
    pub assignment: Assignment,
    pub summary: AssignmentSummary,
}

/// Type colour profiles from the sprites, per-face mean HSV, quotas from the
/// sprites' type distribution, then stable matching.
pub fn label_faces(sprites: &[SpriteRecord], faces: &[FaceImage]) -> Result<FaceLabelling, AssignError> {
    let profiles = type_mean_hsv(sprites.iter().map(|s| (s.types.as_slice(), &s.image)))?;
    let means = faces
        .iter()
        .map(|f| Ok(image_mean_hsv(&rgb_to_hsv(&f.image)?)))
        .collect::<Result<Vec<_>, AssignError>>()?;
    let preferences = preference_matrix(&means, &profiles)?;
    let quotas = type_quotas(sprites.iter().map(|s| s.types.as_slice()), faces.len())?;
    let ids: Vec<String> = faces.iter().map(|f| f.id.clone()).collect();
    let assignment = gale_shapley_assign(&preferences, &ids, &quotas)?;
    let summary = AssignmentSummary::new(&preferences, &quotas, &assignment);
    Ok(FaceLabelling {
        profiles,
        quotas,
        preferences,
        assignment,
        summary,
    })
}
