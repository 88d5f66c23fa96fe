//! Reconstruction quality, type swapping, the original-to-regional task and
//! latent interpolation.

mod metrics;
mod regional;
mod render;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{gaussian_taps, mse_rgb, ssim_plane, ssim_yuv, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use regional::{
    load_regional_pairs, original_to_regional_report, prepare_eval_image, RegionalPair, SwapTarget,
    REGIONAL_MAGNITUDE,
};
pub use render::{contact_sheet, markdown_table, Metric, PREVIEW_SIDE};

use crate::color::{ColorError, HsvImage};
use crate::dataset::{AugmentedInstance, Background, Split};
use crate::model::{ModelError, Params};
use crate::raster::{Raster, RasterError};
use crate::types::{validate_type_list, CreatureType, TypeError, TypeVector};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("expected 3 channels, got {0}")]
    Channels(usize),
    #[error("{width}x{height} image is smaller than the 11x11 SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error("magnitude must be a positive finite number, got {0}")]
    Magnitude(f64),
    #[error("interpolation needs at least 2 steps, got {0}")]
    Steps(usize),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error("regional pair {row}: {message}")]
    Regional { row: usize, message: String },
    #[error(transparent)]
    Types(#[from] TypeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Transfer,
    Baseline,
    Other,
}

impl ModelTag {
    /// Reads the plan name at the start of a checkpoint provenance string.
    pub fn from_provenance(provenance: &str) -> ModelTag {
        if provenance.starts_with("transfer") {
            ModelTag::Transfer
        } else if provenance.starts_with("baseline") {
            ModelTag::Baseline
        } else {
            ModelTag::Other
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Transfer => "transfer",
            ModelTag::Baseline => "baseline",
            ModelTag::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub split: Split,
    pub background: Option<Background>,
    pub flipped: bool,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mse: f64,
    pub ssim: f64,
}

impl Aggregate {
    fn of<'a>(scores: impl Iterator<Item = &'a ImageScore>) -> Option<Aggregate> {
        let (mut count, mut mse, mut ssim) = (0usize, 0.0, 0.0);
        for s in scores {
            count += 1;
            mse += s.mse;
            ssim += s.ssim;
        }
        (count > 0).then(|| Aggregate {
            count,
            mse: mse / count as f64,
            ssim: ssim / count as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub set: String,
    pub model: ModelTag,
    pub test: Option<Aggregate>,
    pub train: Option<Aggregate>,
    pub combined: Aggregate,
    pub images: Vec<ImageScore>,
}

impl EvalReport {
    pub fn from_scores(set: &str, model: ModelTag, images: Vec<ImageScore>) -> Result<EvalReport, EvalError> {
        let combined = Aggregate::of(images.iter()).ok_or(EvalError::Empty("no images scored"))?;
        Ok(EvalReport {
            set: set.to_string(),
            model,
            test: Aggregate::of(images.iter().filter(|s| s.split == Split::Test)),
            train: Aggregate::of(images.iter().filter(|s| s.split == Split::Train)),
            combined,
            images,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Which augmented renderings enter a reconstruction report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSelection {
    /// The unflipped black-background rendering of each creature.
    BlackOnly,
    AllVariants,
}

impl VariantSelection {
    pub fn includes(self, inst: &AugmentedInstance) -> bool {
        match self {
            VariantSelection::BlackOnly => inst.background == Background::Black && !inst.flipped,
            VariantSelection::AllVariants => true,
        }
    }
}

pub fn score_pair(input: &Raster, output: &Raster) -> Result<(f64, f64), EvalError> {
    Ok((mse_rgb(input, output)?, ssim_yuv(input, output)?))
}

/// Decodes `image` under `types` through the latent mean.
pub fn reconstruct_one(params: &Params<f32>, image: &HsvImage, types: TypeVector) -> Result<HsvImage, EvalError> {
    Ok(params.reconstruct(&[image], &[types])?.remove(0))
}

/// Encodes each selected instance with its own type vector, decodes the mean
/// latent and scores the RGB output against the RGB input.
pub fn reconstruction_report(
    params: &Params<f32>,
    instances: &[AugmentedInstance],
    model: ModelTag,
    selection: VariantSelection,
) -> Result<EvalReport, EvalError> {
    let chosen: Vec<&AugmentedInstance> = instances.iter().filter(|i| selection.includes(i)).collect();
    if chosen.is_empty() {
        return Err(EvalError::Empty("no instances match the variant selection"));
    }
    let scores = chosen.par_iter().map(|inst| -> Result<ImageScore, EvalError> {
        let out = reconstruct_one(params, &inst.image, inst.type_vector)?;
        let (mse, ssim) = score_pair(&inst.image.to_rgb(), &out.to_rgb())?;
        Ok(ImageScore {
            id: inst.source_id.clone(),
            split: inst.split,
            background: Some(inst.background),
            flipped: inst.flipped,
            mse,
            ssim,
        })
    });
    let set = match selection {
        VariantSelection::BlackOnly => "reconstruction (black background)",
        VariantSelection::AllVariants => "reconstruction (all variants)",
    };
    EvalReport::from_scores(set, model, scores.collect::<Result<_, _>>()?)
}

pub fn check_magnitude(magnitude: f64) -> Result<(), EvalError> {
    if magnitude.is_finite() && magnitude > 0.0 {
        Ok(())
    } else {
        Err(EvalError::Magnitude(magnitude))
    }
}

/// Re-renders `image` as the given types. Only the target types are given to
/// the encoder, scaled to `magnitude`.
pub fn type_swap(
    params: &Params<f32>,
    image: &HsvImage,
    target_types: &[CreatureType],
    magnitude: f64,
) -> Result<HsvImage, EvalError> {
    validate_type_list(target_types)?;
    check_magnitude(magnitude)?;
    reconstruct_one(params, image, TypeVector::encode(target_types, magnitude)?)
}

/// `steps` evenly spaced coefficients from 0 to 1 inclusive.
pub fn interpolation_coefficients(steps: usize) -> Vec<f32> {
    (0..steps).map(|k| k as f32 / (steps - 1) as f32).collect()
}

/// Decodes points on the segment between the two mean latents; the first and
/// last frames are the two reconstructions.
pub fn interpolate_latents(
    params: &Params<f32>,
    image_a: &HsvImage,
    types_a: TypeVector,
    image_b: &HsvImage,
    types_b: TypeVector,
    steps: usize,
) -> Result<Vec<HsvImage>, EvalError> {
    if steps < 2 {
        return Err(EvalError::Steps(steps));
    }
    let codes = params.encode(&[image_a, image_b], &[types_a, types_b], None)?;
    let (za, zb) = (&codes[0].mean, &codes[1].mean);
    let latents: Vec<Vec<f32>> = interpolation_coefficients(steps)
        .into_iter()
        .map(|t| za.iter().zip(zb).map(|(a, b)| (1.0 - t) * a + t * b).collect())
        .collect();
    Ok(params.decode(&latents)?.into_iter().map(|o| o.image).collect())
}
