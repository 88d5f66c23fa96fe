//! The type-conditioned convolutional VAE.
//!
//! Encoder: two 2x2/stride-2 convolutions (leaky ReLU), flatten, append the
//! type vector, then two linear heads for the latent mean and log-variance.
//! Decoder: a linear layer to `flat + 18` units whose last 18 values are the
//! reconstructed type logits; the rest is reshaped to a grid and passed
//! through two 2x2/stride-2 transposed convolutions (leaky ReLU) and a final
//! 2x2/stride-1 transposed convolution with three output channels.
//!
//! Tensors are NHWC and row-major. Each convolution is expressed as a matrix
//! product over 2x2 blocks (see [`crate::tensor`]).

mod loss;
mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{kl_divergence, LossBreakdown};
pub use network::{Batch, DecoderState, EncoderState, ForwardPass};

use crate::color::HsvImage;
use crate::seed::derive_rng;
use crate::tensor::Scalar;
use crate::types::{TypeVector, NUM_TYPES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite values after {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid architecture: {0}")]
    Config(String),
}

/// Layer widths and numeric options. Stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_side: usize,
    pub channels: usize,
    /// Filters of the two encoder convolutions.
    pub conv_filters: [usize; 2],
    /// Filters of the two stride-2 decoder transposed convolutions.
    pub deconv_filters: [usize; 2],
    pub latent_dim: usize,
    pub type_dim: usize,
    pub leaky_slope: f64,
    /// Whether the reconstructed type logits enter the loss.
    pub type_loss: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_side: 32,
            channels: 3,
            conv_filters: [512, 1024],
            deconv_filters: [1024, 512],
            latent_dim: 128,
            type_dim: NUM_TYPES,
            leaky_slope: 0.2,
            type_loss: true,
        }
    }
}

impl ArchConfig {
    /// 8x8 inputs, 4/8 filters, latent size 4. Only meant for gradient checks.
    pub fn miniature() -> Self {
        ArchConfig {
            image_side: 8,
            conv_filters: [4, 8],
            deconv_filters: [8, 4],
            latent_dim: 4,
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_side == 0 || self.image_side % 4 != 0 {
            return Err(ModelError::Config(format!(
                "image side {} is not a positive multiple of 4",
                self.image_side
            )));
        }
        let widths = [
            self.channels,
            self.conv_filters[0],
            self.conv_filters[1],
            self.deconv_filters[0],
            self.deconv_filters[1],
            self.latent_dim,
        ];
        if widths.contains(&0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        if self.type_dim != NUM_TYPES {
            return Err(ModelError::Config(format!("type width must be {NUM_TYPES}")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::Config("leaky slope must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.image_side * self.image_side * self.channels
    }

    /// Side of the encoder's innermost grid.
    pub fn grid_side(&self) -> usize {
        self.image_side / 4
    }

    /// Length of the flattened innermost feature map.
    pub fn flat_dim(&self) -> usize {
        self.grid_side() * self.grid_side() * self.conv_filters[1]
    }

    /// Width of the decoder's first linear layer (`flat + types`).
    pub fn decoder_width(&self) -> usize {
        self.flat_dim() + self.type_dim
    }
}

/// A weight matrix (`rows x cols`, row-major) and its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(rows: usize, cols: usize, bias_len: usize) -> Self {
        Layer {
            rows,
            cols,
            weight: vec![T::zero(); rows * cols],
            bias: vec![T::zero(); bias_len],
        }
    }

    fn glorot(rows: usize, cols: usize, bias_len: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut layer = Self::zeros(rows, cols, bias_len);
        for w in layer.weight.iter_mut() {
            *w = T::from_real(rng.random_range(-limit..limit));
        }
        layer
    }
}

pub const LAYER_NAMES: [&str; 8] = [
    "conv1",
    "conv2",
    "enc_mean",
    "enc_logvar",
    "dec_fc",
    "deconv1",
    "deconv2",
    "deconv3",
];

/// All trainable tensors. The same structure holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: ArchConfig,
    /// `(4 * channels) x conv_filters[0]`
    pub conv1: Layer<T>,
    /// `(4 * conv_filters[0]) x conv_filters[1]`
    pub conv2: Layer<T>,
    /// `(flat + types) x latent`
    pub enc_mean: Layer<T>,
    pub enc_logvar: Layer<T>,
    /// `latent x (flat + types)`
    pub dec_fc: Layer<T>,
    /// `conv_filters[1] x (4 * deconv_filters[0])`, bias per output channel
    pub deconv1: Layer<T>,
    /// `deconv_filters[0] x (4 * deconv_filters[1])`
    pub deconv2: Layer<T>,
    /// `deconv_filters[1] x (4 * channels)`
    pub deconv3: Layer<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &ArchConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let (f1, f2) = (c.conv_filters[0], c.conv_filters[1]);
        let (g1, g2) = (c.deconv_filters[0], c.deconv_filters[1]);
        Ok(Params {
            config: config.clone(),
            conv1: Layer::zeros(4 * c.channels, f1, f1),
            conv2: Layer::zeros(4 * f1, f2, f2),
            enc_mean: Layer::zeros(c.decoder_width(), c.latent_dim, c.latent_dim),
            enc_logvar: Layer::zeros(c.decoder_width(), c.latent_dim, c.latent_dim),
            dec_fc: Layer::zeros(c.latent_dim, c.decoder_width(), c.decoder_width()),
            deconv1: Layer::zeros(f2, 4 * g1, g1),
            deconv2: Layer::zeros(g1, 4 * g2, g2),
            deconv3: Layer::zeros(g2, 4 * c.channels, c.channels),
        })
    }

    /// Glorot-uniform weights (fans as for the equivalent 2x2 kernels), zero
    /// biases. Each layer draws from its own seeded stream.
    pub fn init(config: &ArchConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let (f1, f2) = (c.conv_filters[0], c.conv_filters[1]);
        let (g1, g2) = (c.deconv_filters[0], c.deconv_filters[1]);
        let rng = |name: &str| derive_rng(seed, &[b"init", name.as_bytes()]);
        let w = c.decoder_width();
        Ok(Params {
            config: config.clone(),
            conv1: Layer::glorot(4 * c.channels, f1, f1, 4 * c.channels, 4 * f1, &mut rng("conv1")),
            conv2: Layer::glorot(4 * f1, f2, f2, 4 * f1, 4 * f2, &mut rng("conv2")),
            enc_mean: Layer::glorot(w, c.latent_dim, c.latent_dim, w, c.latent_dim, &mut rng("enc_mean")),
            enc_logvar: Layer::glorot(w, c.latent_dim, c.latent_dim, w, c.latent_dim, &mut rng("enc_logvar")),
            dec_fc: Layer::glorot(c.latent_dim, w, w, c.latent_dim, w, &mut rng("dec_fc")),
            deconv1: Layer::glorot(f2, 4 * g1, g1, 4 * f2, 4 * g1, &mut rng("deconv1")),
            deconv2: Layer::glorot(g1, 4 * g2, g2, 4 * g1, 4 * g2, &mut rng("deconv2")),
            deconv3: Layer::glorot(g2, 4 * c.channels, c.channels, 4 * g2, 4 * c.channels, &mut rng("deconv3")),
        })
    }

    pub fn layers(&self) -> [(&'static str, &Layer<T>); 8] {
        [
            ("conv1", &self.conv1),
            ("conv2", &self.conv2),
            ("enc_mean", &self.enc_mean),
            ("enc_logvar", &self.enc_logvar),
            ("dec_fc", &self.dec_fc),
            ("deconv1", &self.deconv1),
            ("deconv2", &self.deconv2),
            ("deconv3", &self.deconv3),
        ]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut Layer<T>); 8] {
        [
            ("conv1", &mut self.conv1),
            ("conv2", &mut self.conv2),
            ("enc_mean", &mut self.enc_mean),
            ("enc_logvar", &mut self.enc_logvar),
            ("dec_fc", &mut self.dec_fc),
            ("deconv1", &mut self.deconv1),
            ("deconv2", &mut self.deconv2),
            ("deconv3", &mut self.deconv3),
        ]
    }

    /// Every tensor as `(name, values)`, weights before biases.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| [(format!("{name}.weight"), &l.weight[..]), (format!("{name}.bias"), &l.bias[..])])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &mut l.weight[..]),
                    (format!("{name}.bias"), &mut l.bias[..]),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let conv = |l: &Layer<T>| Layer {
            rows: l.rows,
            cols: l.cols,
            weight: l.weight.iter().map(|v| U::from_real(v.real())).collect(),
            bias: l.bias.iter().map(|v| U::from_real(v.real())).collect(),
        };
        Params {
            config: self.config.clone(),
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
            enc_mean: conv(&self.enc_mean),
            enc_logvar: conv(&self.enc_logvar),
            dec_fc: conv(&self.dec_fc),
            deconv1: conv(&self.deconv1),
            deconv2: conv(&self.deconv2),
            deconv3: conv(&self.deconv3),
        }
    }
}

/// Posterior parameters and a draw for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mean: Vec<f32>,
    pub log_variance: Vec<f32>,
    pub sample: Vec<f32>,
}

/// Decoder result for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub image_logits: Vec<f32>,
    /// `clamp(relu(image_logits), 0, 1)`
    pub image: HsvImage,
    pub type_logits: Vec<f32>,
}

/// Samples per forward call during inference. Single-sample calls make every
/// output bit-identical regardless of what else is in the request.
const INFERENCE_CHUNK: usize = 1;

impl Params<f32> {
    fn pack(&self, images: &[&HsvImage], types: &[TypeVector]) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
        if images.len() != types.len() {
            return Err(ModelError::Shape {
                what: "type vectors",
                expected: images.len(),
                actual: types.len(),
            });
        }
        let mut x = Vec::with_capacity(images.len() * self.config.image_len());
        for img in images {
            if img.data().len() != self.config.image_len() {
                return Err(ModelError::Shape {
                    what: "image",
                    expected: self.config.image_len(),
                    actual: img.data().len(),
                });
            }
            x.extend_from_slice(img.data());
        }
        let t = types.iter().flat_map(|v| v.values().iter().copied()).collect();
        Ok((x, t))
    }

    /// Encodes images under the given type vectors. `noise` supplies the
    /// reparameterisation draw; pass `None` for a zero draw (sample = mean).
    pub fn encode(
        &self,
        images: &[&HsvImage],
        types: &[TypeVector],
        noise: Option<&mut dyn rand::RngCore>,
    ) -> Result<Vec<LatentCode>, ModelError> {
        let (x, t) = self.pack(images, types)?;
        let latent = self.config.latent_dim;
        let mut out = Vec::with_capacity(images.len());
        let mut noise = noise;
        for (xs, ts) in x
            .chunks(INFERENCE_CHUNK * self.config.image_len())
            .zip(t.chunks(INFERENCE_CHUNK * NUM_TYPES))
        {
            let n = ts.len() / NUM_TYPES;
            let batch = Batch::new(&self.config, xs, ts)?;
            let enc = self.encoder_forward(&batch)?;
            let eps: Vec<f32> = match noise.as_deref_mut() {
                Some(rng) => standard_normal(rng, n * latent),
                None => vec![0.0; n * latent],
            };
            let z = reparameterize(&enc.mean, &enc.log_variance, &eps);
            for i in 0..n {
                let r = i * latent..(i + 1) * latent;
                out.push(LatentCode {
                    mean: enc.mean[r.clone()].to_vec(),
                    log_variance: enc.log_variance[r.clone()].to_vec(),
                    sample: z[r].to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn decode(&self, latents: &[Vec<f32>]) -> Result<Vec<ModelOutput>, ModelError> {
        let latent = self.config.latent_dim;
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFERENCE_CHUNK) {
            let mut z = Vec::with_capacity(chunk.len() * latent);
            for l in chunk {
                if l.len() != latent {
                    return Err(ModelError::Shape {
                        what: "latent",
                        expected: latent,
                        actual: l.len(),
                    });
                }
                z.extend_from_slice(l);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite("decoder input"));
            }
            let dec = self.decoder_forward(&z, chunk.len())?;
            let img_len = self.config.image_len();
            for i in 0..chunk.len() {
                let logits = dec.image_logits[i * img_len..(i + 1) * img_len].to_vec();
                let image = HsvImage::from_clamped(self.config.image_side, logits.iter().map(|v| v.max(0.0)).collect())
                    .map_err(|_| ModelError::NonFinite("decoder output"))?;
                out.push(ModelOutput {
                    image_logits: logits,
                    image,
                    type_logits: dec.type_logits[i * NUM_TYPES..(i + 1) * NUM_TYPES].to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// Deterministic reconstruction through the latent mean.
    pub fn reconstruct(&self, images: &[&HsvImage], types: &[TypeVector]) -> Result<Vec<HsvImage>, ModelError> {
        let codes = self.encode(images, types, None)?;
        let means: Vec<Vec<f32>> = codes.into_iter().map(|c| c.mean).collect();
        Ok(self.decode(&means)?.into_iter().map(|o| o.image).collect())
    }
}

/// `mean + exp(0.5 * log_variance) * eps`, element-wise.
pub fn reparameterize<T: Scalar>(mean: &[T], log_variance: &[T], eps: &[T]) -> Vec<T> {
    let half = T::from_real(0.5);
    mean.iter()
        .zip(log_variance)
        .zip(eps)
        .map(|((m, lv), e)| *m + (half * *lv).exp() * *e)
        .collect()
}

pub fn standard_normal<T: Scalar>(rng: &mut (impl rand::RngCore + ?Sized), n: usize) -> Vec<T> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_real(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_parameter_layout() {
        let c = ArchConfig::default();
        assert_eq!(c.flat_dim(), 8 * 8 * 1024);
        assert_eq!(c.decoder_width(), 65554);
        let p = Params::<f32>::zeros(&c).unwrap();
        assert_eq!((p.conv1.rows, p.conv1.cols), (12, 512));
        assert_eq!((p.conv2.rows, p.conv2.cols), (2048, 1024));
        assert_eq!((p.enc_mean.rows, p.enc_mean.cols), (65554, 128));
        assert_eq!((p.dec_fc.rows, p.dec_fc.cols), (128, 65554));
        assert_eq!((p.deconv1.rows, p.deconv1.cols), (1024, 4096));
        assert_eq!((p.deconv2.rows, p.deconv2.cols), (1024, 2048));
        assert_eq!((p.deconv3.rows, p.deconv3.cols), (512, 12));
        assert_eq!(p.tensors().len(), 16);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_side = ArchConfig {
            image_side: 30,
            ..ArchConfig::miniature()
        };
        assert!(bad_side.validate().is_err());
        let bad_slope = ArchConfig {
            leaky_slope: 0.0,
            ..ArchConfig::miniature()
        };
        assert!(bad_slope.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let c = ArchConfig::miniature();
        let a = Params::<f32>::init(&c, 1).unwrap();
        let b = Params::<f32>::init(&c, 1).unwrap();
        let d = Params::<f32>::init(&c, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert!(a.conv1.bias.iter().all(|v| *v == 0.0));
        let limit = (6.0f64 / (12.0 + 16.0)).sqrt() as f32;
        assert!(a.conv1.weight.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_noise_sample_is_mean() {
        let z = reparameterize(&[0.5f64, -1.0], &[0.3, 2.0], &[0.0, 0.0]);
        assert_eq!(z, vec![0.5, -1.0]);
        let z = reparameterize(&[0.0f64], &[0.0], &[1.5]);
        assert_eq!(z, vec![1.5]);
    }
}
