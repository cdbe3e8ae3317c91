//! Convolutional variational autoencoder used as an online state compressor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, clip_global_norm, conv_trunk, AdamState, LayerSpec, Network, ParamSet, Scalar, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub conv_features: usize,
    pub conv_layers: usize,
    /// Keep updating after the exploration episodes.
    pub train_online: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            beta: 1.0,
            lr: 1e-3,
            grad_clip: 0.005,
            conv_features: 16,
            conv_layers: 4,
            train_online: true,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.latent_dim == 0 || self.conv_features == 0 || self.conv_layers == 0 {
            return Err(Error::config("[vae] latent_dim, conv_features and conv_layers must be positive"));
        }
        if !(self.beta >= 0.0) || !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::config("[vae] beta must be non-negative, lr and grad_clip positive"));
        }
        let step = 1usize.checked_shl(self.conv_layers as u32).unwrap_or(0);
        if step == 0 || height % step != 0 || width % step != 0 {
            return Err(Error::config(format!(
                "[vae] image {height}x{width} must be divisible by 2^conv_layers = {step} to mirror the encoder"
            )));
        }
        Ok(())
    }
}

/// Encoder and decoder topology. Parameters live in [`VaeParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct VaeNets {
    pub encoder: Network,
    pub decoder: Network,
    pub latent_dim: usize,
}

impl VaeNets {
    pub fn new(cfg: &VaeConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate(height, width)?;
        let f = cfg.conv_features;
        let mut enc = conv_trunk("enc_", f, cfg.conv_layers);
        enc.push(LayerSpec::dense("enc_stats", 2 * cfg.latent_dim));
        let encoder = Network::new(vec![vec![1, height, width]], enc)?;

        let (h, w) = (height >> cfg.conv_layers, width >> cfg.conv_layers);
        let mut dec = vec![
            LayerSpec::dense("dec_fc", f * h * w),
            LayerSpec::reshape("dec_reshape", &[f, h, w]),
            LayerSpec::relu("dec_relu_fc"),
        ];
        for i in 0..cfg.conv_layers {
            let last = i + 1 == cfg.conv_layers;
            dec.push(LayerSpec::conv_transpose(format!("dec_deconv{i}"), if last { 1 } else { f }));
            dec.push(if last { LayerSpec::sigmoid("dec_out") } else { LayerSpec::relu(format!("dec_relu{i}")) });
        }
        let decoder = Network::new(vec![vec![cfg.latent_dim]], dec)?;
        if decoder.output_shape() != encoder.input_shapes()[0].as_slice() {
            return Err(Error::config("[vae] decoder does not mirror the encoder input shape"));
        }
        Ok(Self { encoder, decoder, latent_dim: cfg.latent_dim })
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> VaeParams<T> {
        VaeParams { encoder: self.encoder.init(seed), decoder: self.decoder.init(seed.wrapping_add(1)) }
    }

    /// Latent mean and log-variance, each `[B, latent_dim]`.
    pub fn encode<T: Scalar>(&self, params: &VaeParams<T>, images: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.encoder.predict(&params.encoder, &[images])?.hsplit(self.latent_dim)
    }

    pub fn decode<T: Scalar>(&self, params: &VaeParams<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.predict(&params.decoder, &[z])
    }

    /// Loss terms for fixed reparameterization noise `eps` (`[B, latent_dim]`).
    pub fn elbo<T: Scalar>(
        &self,
        params: &VaeParams<T>,
        images: &Tensor<T>,
        eps: &Tensor<T>,
        beta: f64,
    ) -> Result<ElboTerms> {
        let (mu, logvar) = self.encode(params, images)?;
        let z = reparameterize_with(&mu, &logvar, eps)?;
        let recon = self.decode(params, &z)?;
        Ok(terms(images, &recon, &mu, &logvar, beta))
    }

    /// Loss terms and their gradients for fixed noise `eps`. Also returns the
    /// latent means of `images`.
    pub fn elbo_gradients<T: Scalar>(
        &self,
        params: &VaeParams<T>,
        images: &Tensor<T>,
        eps: &Tensor<T>,
        beta: f64,
    ) -> Result<(ElboTerms, VaeParams<T>, Tensor<T>)> {
        let n = images.batch();
        let l = self.latent_dim;
        let (stats, enc_tape) = self.encoder.forward(&params.encoder, &[images])?;
        let (mu, logvar) = stats.hsplit(l)?;
        let z = reparameterize_with(&mu, &logvar, eps)?;
        let (recon, dec_tape) = self.decoder.forward(&params.decoder, &[&z])?;
        let t = terms(images, &recon, &mu, &logvar, beta);

        let inv_n = 1.0 / n as f64;
        let mut d_recon = recon.clone();
        d_recon
            .data_mut()
            .iter_mut()
            .zip(images.data())
            .for_each(|(g, &x)| *g = T::lit(2.0 * inv_n) * (*g - x));
        let dec = self.decoder.backward(&params.decoder, &dec_tape, &d_recon)?;
        let dz = &dec.inputs[0];
        let mut d_stats = Vec::with_capacity(n * 2 * l);
        let b = T::lit(beta * inv_n);
        let half = T::lit(0.5);
        for i in 0..n {
            let (m, lv, e, g) = (mu.row(i), logvar.row(i), eps.row(i), dz.row(i));
            d_stats.extend((0..l).map(|k| g[k] + b * m[k]));
            d_stats.extend((0..l).map(|k| {
                let sd = (half * lv[k]).exp();
                g[k] * e[k] * half * sd + b * half * (sd * sd - T::one())
            }));
        }
        let d_stats = Tensor::from_vec(stats.shape(), d_stats)?;
        let enc = self.encoder.backward_params(&params.encoder, &enc_tape, &d_stats)?;
        Ok((t, VaeParams { encoder: enc.params, decoder: dec.params }, mu))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T = f32> {
    pub encoder: ParamSet<T>,
    pub decoder: ParamSet<T>,
}

impl<T: Scalar> VaeParams<T> {
    pub fn cast<U: Scalar>(&self) -> VaeParams<U> {
        VaeParams { encoder: self.encoder.cast(), decoder: self.decoder.cast() }
    }
}

/// Batch-averaged loss terms: `recon` is the per-image sum of squared pixel
/// errors, `kl` the per-image KL divergence to the standard normal prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

fn terms<T: Scalar>(images: &Tensor<T>, recon: &Tensor<T>, mu: &Tensor<T>, logvar: &Tensor<T>, beta: f64) -> ElboTerms {
    let n = images.batch() as f64;
    let r = reconstruction_error(images.data(), recon.data()) / n;
    let to64 = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    let kl = kl_divergence(&to64(mu), &to64(logvar)) / n;
    ElboTerms { loss: r + beta * kl, recon: r, kl }
}

/// `Σ (x̂ − x)²`.
pub fn reconstruction_error<T: Scalar>(x: &[T], recon: &[T]) -> f64 {
    x.iter().zip(recon).map(|(&a, &b)| (b.as_f64() - a.as_f64()).powi(2)).sum()
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
}

/// `z = μ + exp(logvar / 2) ⊙ ε` with the supplied noise.
pub fn reparameterize_with<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(Error::contract("mu, logvar and noise shapes differ"));
    }
    let half = T::lit(0.5);
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Tensor::from_vec(mu.shape(), data)
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// `z = μ + exp(logvar / 2) ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(mu: &Tensor<T>, logvar: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
    reparameterize_with(mu, logvar, &standard_normal(mu.shape(), rng))
}

/// Trainable VAE with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub config: VaeConfig,
    pub nets: VaeNets,
    pub params: VaeParams,
    pub adam_encoder: AdamState,
    pub adam_decoder: AdamState,
}

/// Result of one VAE step.
#[derive(Clone, Debug)]
pub struct VaeStep {
    pub terms: ElboTerms,
    /// Latent means of the batch, computed before the step.
    pub mu: Tensor,
}

impl Vae {
    pub fn new(config: &VaeConfig, height: usize, width: usize, seed: u64) -> Result<Self> {
        let nets = VaeNets::new(config, height, width)?;
        let params: VaeParams = nets.init(seed);
        Ok(Self {
            adam_encoder: AdamState::new(&params.encoder, config.lr),
            adam_decoder: AdamState::new(&params.decoder, config.lr),
            config: config.clone(),
            nets,
            params,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.nets.latent_dim
    }

    pub fn encode(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        self.nets.encode(&self.params, images)
    }

    /// Latent means only, the policy-time encoding.
    pub fn encode_mean(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.encode(images)?.0)
    }

    /// `μ(image) ++ [speed, steering]` for one observation.
    pub fn encode_state(&self, image: &Tensor, speed: f32, steering: f32) -> Result<Vec<f32>> {
        if image.batch() != 1 {
            return Err(Error::contract("encode_state takes a single image"));
        }
        let mut v = self.encode_mean(image)?.into_data();
        v.extend([speed, steering]);
        Ok(v)
    }

    /// Decoded latent means, for reconstruction dumps.
    pub fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        self.nets.decode(&self.params, &self.encode_mean(images)?)
    }

    pub fn elbo_loss<R: Rng + ?Sized>(&self, images: &Tensor, rng: &mut R) -> Result<ElboTerms> {
        let eps = standard_normal(&[images.batch(), self.latent_dim()], rng);
        self.nets.elbo(&self.params, images, &eps, self.config.beta)
    }

    /// One clipped Adam step on the ELBO loss of `images`.
    pub fn update<R: Rng + ?Sized>(&mut self, images: &Tensor, rng: &mut R) -> Result<VaeStep> {
        if images.batch() == 0 {
            return Err(Error::contract("empty VAE batch"));
        }
        let eps = standard_normal(&[images.batch(), self.latent_dim()], rng);
        let (terms, mut g, mu) = self.nets.elbo_gradients(&self.params, images, &eps, self.config.beta)?;
        if !terms.loss.is_finite() {
            return Err(Error::NumericFault { layer: "enc_stats".into() });
        }
        clip_global_norm(&mut [&mut g.encoder, &mut g.decoder], self.config.grad_clip)?;
        adam_step(&mut self.params.encoder, &g.encoder, &mut self.adam_encoder)?;
        adam_step(&mut self.params.decoder, &g.decoder, &mut self.adam_decoder)?;
        Ok(VaeStep { terms, mu })
    }

    pub fn save(&self, w: &mut Writer) {
        self.params.encoder.encode(w);
        self.params.decoder.encode(w);
        self.adam_encoder.encode(w);
        self.adam_decoder.encode(w);
    }

    /// Restores parameters and optimizer state into a freshly built VAE.
    pub fn load(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let encoder = ParamSet::decode(r)?;
        let decoder = ParamSet::decode(r)?;
        encoder.check_layout(&self.params.encoder)?;
        decoder.check_layout(&self.params.decoder)?;
        let adam_encoder = AdamState::decode(r)?;
        let adam_decoder = AdamState::decode(r)?;
        self.params = VaeParams { encoder, decoder };
        self.adam_encoder = adam_encoder;
        self.adam_decoder = adam_decoder;
        Ok(())
    }
}

