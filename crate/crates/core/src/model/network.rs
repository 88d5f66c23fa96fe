use super::{reparameterize, ArchConfig, ModelError, Params};
use crate::tensor::{
    add_channel_bias, add_column_sums, add_row_bias, leaky_relu_backward, leaky_relu_in_place, matmul,
    patchify, shift_gather, shift_scatter, sigmoid, unpatchify, Scalar,
};

/// A borrowed batch: `size x side x side x channels` HSV targets and
/// `size x 18` type vectors.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub images: &'a [T],
    pub types: &'a [T],
    pub size: usize,
}

impl<'a, T: Scalar> Batch<'a, T> {
    pub fn new(config: &ArchConfig, images: &'a [T], types: &'a [T]) -> Result<Self, ModelError> {
        let size = types.len() / config.type_dim;
        if size == 0 || types.len() != size * config.type_dim {
            return Err(ModelError::Shape {
                what: "type batch",
                expected: size.max(1) * config.type_dim,
                actual: types.len(),
            });
        }
        if images.len() != size * config.image_len() {
            return Err(ModelError::Shape {
                what: "image batch",
                expected: size * config.image_len(),
                actual: images.len(),
            });
        }
        Ok(Batch { images, types, size })
    }
}

/// Encoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderState<T> {
    /// `(B * (S/2)^2) x (4 * channels)` input blocks
    pub input_blocks: Vec<T>,
    /// `B x S/2 x S/2 x conv_filters[0]` after leaky ReLU
    pub conv1_out: Vec<T>,
    /// `(B * (S/4)^2) x (4 * conv_filters[0])`
    pub conv2_blocks: Vec<T>,
    /// `B x S/4 x S/4 x conv_filters[1]` after leaky ReLU
    pub conv2_out: Vec<T>,
    /// `B x (flat + 18)`: flattened features then the type vector
    pub latent_input: Vec<T>,
    pub mean: Vec<T>,
    pub log_variance: Vec<T>,
}

/// Decoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DecoderState<T> {
    /// `B x S/4 x S/4 x conv_filters[1]` after leaky ReLU
    pub grid: Vec<T>,
    pub type_logits: Vec<T>,
    /// `B x S/2 x S/2 x deconv_filters[0]` after leaky ReLU
    pub deconv1_out: Vec<T>,
    /// `B x S x S x deconv_filters[1]` after leaky ReLU
    pub deconv2_out: Vec<T>,
    /// `B x S x S x channels`
    pub image_logits: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub batch_size: usize,
    pub encoder: EncoderState<T>,
    pub noise: Vec<T>,
    pub latent: Vec<T>,
    pub decoder: DecoderState<T>,
}

fn check_finite<T: Scalar>(values: &[T], stage: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(stage))
    }
}

impl<T: Scalar> Params<T> {
    fn slope(&self) -> T {
        T::from_real(self.config.leaky_slope)
    }

    pub fn encoder_forward(&self, batch: &Batch<'_, T>) -> Result<EncoderState<T>, ModelError> {
        let c = &self.config;
        let b = batch.size;
        let s = c.image_side;
        let (f1, f2) = (c.conv_filters[0], c.conv_filters[1]);
        let slope = self.slope();

        let input_blocks = patchify(batch.images, b, s, s, c.channels);
        let rows1 = b * (s / 2) * (s / 2);
        let mut conv1_out = vec![T::zero(); rows1 * f1];
        matmul(rows1, f1, 4 * c.channels, &input_blocks, false, &self.conv1.weight, false, &mut conv1_out, false);
        add_row_bias(&mut conv1_out, &self.conv1.bias);
        leaky_relu_in_place(&mut conv1_out, slope);

        let conv2_blocks = patchify(&conv1_out, b, s / 2, s / 2, f1);
        let rows2 = b * (s / 4) * (s / 4);
        let mut conv2_out = vec![T::zero(); rows2 * f2];
        matmul(rows2, f2, 4 * f1, &conv2_blocks, false, &self.conv2.weight, false, &mut conv2_out, false);
        add_row_bias(&mut conv2_out, &self.conv2.bias);
        leaky_relu_in_place(&mut conv2_out, slope);
        check_finite(&conv2_out, "encoder convolutions")?;

        let flat = c.flat_dim();
        let width = c.decoder_width();
        let mut latent_input = Vec::with_capacity(b * width);
        for i in 0..b {
            latent_input.extend_from_slice(&conv2_out[i * flat..(i + 1) * flat]);
            latent_input.extend_from_slice(&batch.types[i * c.type_dim..(i + 1) * c.type_dim]);
        }

        let l = c.latent_dim;
        let mut mean = vec![T::zero(); b * l];
        matmul(b, l, width, &latent_input, false, &self.enc_mean.weight, false, &mut mean, false);
        add_row_bias(&mut mean, &self.enc_mean.bias);
        let mut log_variance = vec![T::zero(); b * l];
        matmul(b, l, width, &latent_input, false, &self.enc_logvar.weight, false, &mut log_variance, false);
        add_row_bias(&mut log_variance, &self.enc_logvar.bias);
        check_finite(&mean, "latent mean")?;
        check_finite(&log_variance, "latent log-variance")?;

        Ok(EncoderState {
            input_blocks,
            conv1_out,
            conv2_blocks,
            conv2_out,
            latent_input,
            mean,
            log_variance,
        })
    }

    pub fn decoder_forward(&self, latent: &[T], b: usize) -> Result<DecoderState<T>, ModelError> {
        let c = &self.config;
        let s = c.image_side;
        let (f2, g1, g2) = (c.conv_filters[1], c.deconv_filters[0], c.deconv_filters[1]);
        let flat = c.flat_dim();
        let width = c.decoder_width();
        let slope = self.slope();
        if latent.len() != b * c.latent_dim {
            return Err(ModelError::Shape {
                what: "latent batch",
                expected: b * c.latent_dim,
                actual: latent.len(),
            });
        }

        let mut fc = vec![T::zero(); b * width];
        matmul(b, width, c.latent_dim, latent, false, &self.dec_fc.weight, false, &mut fc, false);
        add_row_bias(&mut fc, &self.dec_fc.bias);
        let mut grid = Vec::with_capacity(b * flat);
        let mut type_logits = Vec::with_capacity(b * c.type_dim);
        for row in fc.chunks_exact(width) {
            grid.extend_from_slice(&row[..flat]);
            type_logits.extend_from_slice(&row[flat..]);
        }
        leaky_relu_in_place(&mut grid, slope);

        let q = s / 4;
        let rows1 = b * q * q;
        let mut blocks1 = vec![T::zero(); rows1 * 4 * g1];
        matmul(rows1, 4 * g1, f2, &grid, false, &self.deconv1.weight, false, &mut blocks1, false);
        let mut deconv1_out = unpatchify(&blocks1, b, q, q, g1);
        drop(blocks1);
        add_channel_bias(&mut deconv1_out, &self.deconv1.bias);
        leaky_relu_in_place(&mut deconv1_out, slope);

        let h = s / 2;
        let rows2 = b * h * h;
        let mut blocks2 = vec![T::zero(); rows2 * 4 * g2];
        matmul(rows2, 4 * g2, g1, &deconv1_out, false, &self.deconv2.weight, false, &mut blocks2, false);
        let mut deconv2_out = unpatchify(&blocks2, b, h, h, g2);
        drop(blocks2);
        add_channel_bias(&mut deconv2_out, &self.deconv2.bias);
        leaky_relu_in_place(&mut deconv2_out, slope);

        let rows3 = b * s * s;
        let mut blocks3 = vec![T::zero(); rows3 * 4 * c.channels];
        matmul(rows3, 4 * c.channels, g2, &deconv2_out, false, &self.deconv3.weight, false, &mut blocks3, false);
        let mut image_logits = shift_scatter(&blocks3, b, s, c.channels);
        add_channel_bias(&mut image_logits, &self.deconv3.bias);
        check_finite(&image_logits, "decoder")?;
        check_finite(&type_logits, "type reconstruction")?;

        Ok(DecoderState {
            grid,
            type_logits,
            deconv1_out,
            deconv2_out,
            image_logits,
        })
    }

    /// Full pass with an explicit standard-normal draw `noise` (`B x latent`).
    pub fn forward(&self, batch: &Batch<'_, T>, noise: &[T]) -> Result<ForwardPass<T>, ModelError> {
        if noise.len() != batch.size * self.config.latent_dim {
            return Err(ModelError::Shape {
                what: "noise",
                expected: batch.size * self.config.latent_dim,
                actual: noise.len(),
            });
        }
        let encoder = self.encoder_forward(batch)?;
        let latent = reparameterize(&encoder.mean, &encoder.log_variance, noise);
        check_finite(&latent, "reparameterisation")?;
        let decoder = self.decoder_forward(&latent, batch.size)?;
        Ok(ForwardPass {
            batch_size: batch.size,
            encoder,
            noise: noise.to_vec(),
            latent,
            decoder,
        })
    }

    /// Gradient of [`Params::loss`] with respect to every parameter.
    pub fn backward(&self, batch: &Batch<'_, T>, pass: &ForwardPass<T>) -> Params<T> {
        let c = &self.config;
        let b = batch.size;
        let s = c.image_side;
        let (f1, f2) = (c.conv_filters[0], c.conv_filters[1]);
        let (g1, g2) = (c.deconv_filters[0], c.deconv_filters[1]);
        let (flat, width, l) = (c.flat_dim(), c.decoder_width(), c.latent_dim);
        let slope = self.slope();
        let inv_b = T::one() / T::from_real(b as f64);
        let half = T::from_real(0.5);
        let mut grad = Params::zeros(c).expect("config already validated");
        let enc = &pass.encoder;
        let dec = &pass.decoder;

        // Image cross-entropy: d/dlogit = sigmoid(logit) - target.
        let d_logits: Vec<T> = dec
            .image_logits
            .iter()
            .zip(batch.images)
            .map(|(z, y)| (sigmoid(*z) - *y) * inv_b)
            .collect();
        add_column_sums(&d_logits, &mut grad.deconv3.bias);
        let d_blocks3 = shift_gather(&d_logits, b, s, c.channels);
        let rows3 = b * s * s;
        matmul(g2, 4 * c.channels, rows3, &dec.deconv2_out, true, &d_blocks3, false, &mut grad.deconv3.weight, false);
        let mut d_h4 = vec![T::zero(); rows3 * g2];
        matmul(rows3, g2, 4 * c.channels, &d_blocks3, false, &self.deconv3.weight, true, &mut d_h4, false);
        drop(d_blocks3);
        leaky_relu_backward(&mut d_h4, &dec.deconv2_out, slope);
        add_column_sums(&d_h4, &mut grad.deconv2.bias);

        let h = s / 2;
        let rows2 = b * h * h;
        let d_blocks2 = patchify(&d_h4, b, s, s, g2);
        drop(d_h4);
        matmul(g1, 4 * g2, rows2, &dec.deconv1_out, true, &d_blocks2, false, &mut grad.deconv2.weight, false);
        let mut d_h3 = vec![T::zero(); rows2 * g1];
        matmul(rows2, g1, 4 * g2, &d_blocks2, false, &self.deconv2.weight, true, &mut d_h3, false);
        drop(d_blocks2);
        leaky_relu_backward(&mut d_h3, &dec.deconv1_out, slope);
        add_column_sums(&d_h3, &mut grad.deconv1.bias);

        let q = s / 4;
        let rows1 = b * q * q;
        let d_blocks1 = patchify(&d_h3, b, h, h, g1);
        drop(d_h3);
        matmul(f2, 4 * g1, rows1, &dec.grid, true, &d_blocks1, false, &mut grad.deconv1.weight, false);
        let mut d_grid = vec![T::zero(); rows1 * f2];
        matmul(rows1, f2, 4 * g1, &d_blocks1, false, &self.deconv1.weight, true, &mut d_grid, false);
        drop(d_blocks1);
        leaky_relu_backward(&mut d_grid, &dec.grid, slope);

        let clamp01 = |v: T| v.max(T::zero()).min(T::one());
        let mut d_fc = Vec::with_capacity(b * width);
        for i in 0..b {
            d_fc.extend_from_slice(&d_grid[i * flat..(i + 1) * flat]);
            for k in 0..c.type_dim {
                let g = if c.type_loss {
                    let idx = i * c.type_dim + k;
                    (sigmoid(dec.type_logits[idx]) - clamp01(batch.types[idx])) * inv_b
                } else {
                    T::zero()
                };
                d_fc.push(g);
            }
        }
        drop(d_grid);
        add_column_sums(&d_fc, &mut grad.dec_fc.bias);
        matmul(l, width, b, &pass.latent, true, &d_fc, false, &mut grad.dec_fc.weight, false);
        let mut d_z = vec![T::zero(); b * l];
        matmul(b, l, width, &d_fc, false, &self.dec_fc.weight, true, &mut d_z, false);
        drop(d_fc);

        // z = mean + exp(lv / 2) * eps, plus the KL term's own gradients.
        let mut d_mean = vec![T::zero(); b * l];
        let mut d_logvar = vec![T::zero(); b * l];
        for k in 0..b * l {
            let (mu, lv, eps) = (enc.mean[k], enc.log_variance[k], pass.noise[k]);
            let std = (half * lv).exp();
            d_mean[k] = d_z[k] + mu * inv_b;
            d_logvar[k] = d_z[k] * eps * half * std + half * (lv.exp() - T::one()) * inv_b;
        }
        add_column_sums(&d_mean, &mut grad.enc_mean.bias);
        add_column_sums(&d_logvar, &mut grad.enc_logvar.bias);
        matmul(width, l, b, &enc.latent_input, true, &d_mean, false, &mut grad.enc_mean.weight, false);
        matmul(width, l, b, &enc.latent_input, true, &d_logvar, false, &mut grad.enc_logvar.weight, false);
        let mut d_input = vec![T::zero(); b * width];
        matmul(b, width, l, &d_mean, false, &self.enc_mean.weight, true, &mut d_input, false);
        matmul(b, width, l, &d_logvar, false, &self.enc_logvar.weight, true, &mut d_input, true);

        let mut d_h2 = Vec::with_capacity(b * flat);
        for row in d_input.chunks_exact(width) {
            d_h2.extend_from_slice(&row[..flat]);
        }
        drop(d_input);
        leaky_relu_backward(&mut d_h2, &enc.conv2_out, slope);
        add_column_sums(&d_h2, &mut grad.conv2.bias);
        let rows_e2 = b * q * q;
        matmul(4 * f1, f2, rows_e2, &enc.conv2_blocks, true, &d_h2, false, &mut grad.conv2.weight, false);
        let mut d_blocks_e2 = vec![T::zero(); rows_e2 * 4 * f1];
        matmul(rows_e2, 4 * f1, f2, &d_h2, false, &self.conv2.weight, true, &mut d_blocks_e2, false);
        let mut d_h1 = unpatchify(&d_blocks_e2, b, q, q, f1);
        drop(d_blocks_e2);
        leaky_relu_backward(&mut d_h1, &enc.conv1_out, slope);
        add_column_sums(&d_h1, &mut grad.conv1.bias);
        let rows_e1 = b * h * h;
        matmul(4 * c.channels, f1, rows_e1, &enc.input_blocks, true, &d_h1, false, &mut grad.conv1.weight, false);

        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NUM_TYPES;

    fn toy_batch(config: &ArchConfig, b: usize) -> (Vec<f64>, Vec<f64>) {
        let images = (0..b * config.image_len()).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let mut types = vec![0.0; b * NUM_TYPES];
        for i in 0..b {
            types[i * NUM_TYPES + (i * 5) % NUM_TYPES] = 1.0;
        }
        (images, types)
    }

    #[test]
    fn zero_params_give_zero_latent_and_output() {
        let c = ArchConfig::miniature();
        let p = Params::<f64>::zeros(&c).unwrap();
        let (x, t) = toy_batch(&c, 2);
        let batch = Batch::new(&c, &x, &t).unwrap();
        let eps = vec![0.7; 2 * c.latent_dim];
        let pass = p.forward(&batch, &eps).unwrap();
        assert!(pass.encoder.mean.iter().all(|v| *v == 0.0));
        assert!(pass.encoder.log_variance.iter().all(|v| *v == 0.0));
        assert_eq!(pass.latent, eps);
        assert!(pass.decoder.image_logits.iter().all(|v| *v == 0.0));
        assert!(pass.decoder.type_logits.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_shape_errors() {
        let c = ArchConfig::miniature();
        let x = vec![0.0f64; c.image_len()];
        assert!(Batch::new(&c, &x, &[0.0; 17]).is_err());
        assert!(Batch::new(&c, &x[1..], &[0.0; 18]).is_err());
        let p = Params::<f64>::zeros(&c).unwrap();
        let t = vec![0.0; 18];
        let batch = Batch::new(&c, &x, &t).unwrap();
        assert!(p.forward(&batch, &[0.0; 3]).is_err());
    }

    #[test]
    fn non_finite_input_fails_fast() {
        let c = ArchConfig::miniature();
        let p = Params::<f64>::init(&c, 3).unwrap();
        let mut x = vec![0.5f64; c.image_len()];
        x[5] = f64::NAN;
        let t = vec![0.0; 18];
        let batch = Batch::new(&c, &x, &t).unwrap();
        assert!(matches!(p.forward(&batch, &[0.0; 4]), Err(ModelError::NonFinite(_))));
    }

    #[test]
    fn samples_in_a_batch_are_independent() {
        let c = ArchConfig::miniature();
        let p = Params::<f64>::init(&c, 4).unwrap();
        let (x, t) = toy_batch(&c, 3);
        let batch = Batch::new(&c, &x, &t).unwrap();
        let eps: Vec<f64> = (0..3 * c.latent_dim).map(|i| (i as f64 * 0.3).sin()).collect();
        let joint = p.forward(&batch, &eps).unwrap();
        let il = c.image_len();
        let single_x = &x[il..2 * il];
        let single_t = &t[NUM_TYPES..2 * NUM_TYPES];
        let single = p
            .forward(&Batch::new(&c, single_x, single_t).unwrap(), &eps[c.latent_dim..2 * c.latent_dim])
            .unwrap();
        for (a, b) in joint.decoder.image_logits[il..2 * il].iter().zip(&single.decoder.image_logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
