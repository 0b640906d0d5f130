//! The toy conditional latent diffusion model: a small convolutional
//! autoencoder, a matching encoder for the packed RAW conditioning, a
//! three-resolution UNet denoiser with timestep and text embeddings, and
//! checkpoint round-tripping with self-describing architecture metadata.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_checkpoint, load_state_into, save_checkpoint};
use crate::nn::layers::{set_trainable, Conv2d, ConvTranspose2d, Embedding, GroupNorm, Linear, ParamList};
use crate::nn::ops;
use crate::nn::tensor::Tensor;

use super::schedule::NoiseSchedule;

/// Prompt template vocabulary; id 0 is reserved for the null conditioning.
pub const TEXT_TEMPLATES: [&str; 3] =
    ["a photo taken at night", "a dark indoor scene", "a low light photograph"];

/// Null text conditioning id.
pub const NULL_TEXT_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Latent channels produced by the autoencoder.
    pub c_lat: usize,
    /// Base width of the autoencoder / conditioning encoder.
    pub ae_base: usize,
    /// Base width of the UNet; levels use 1x, 2x and 3x this.
    pub unet_base: usize,
    /// Timestep/text embedding width.
    pub emb_dim: usize,
    /// Text vocabulary size including the null id.
    pub vocab_size: usize,
    /// Diffusion steps of the training schedule.
    pub t_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            c_lat: 4,
            ae_base: 16,
            unet_base: 16,
            emb_dim: 64,
            vocab_size: 1 + TEXT_TEMPLATES.len(),
            t_steps: 1000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_lat == 0 {
            return Err(Error::Parameter("c_lat must be >= 1".into()));
        }
        for (name, v) in [("ae_base", self.ae_base), ("unet_base", self.unet_base)] {
            if v == 0 || v % 8 != 0 {
                return Err(Error::Parameter(format!("{name} must be a positive multiple of 8, got {v}")));
            }
        }
        if self.emb_dim < 2 || self.emb_dim % 2 != 0 {
            return Err(Error::Parameter(format!("emb_dim must be even, got {}", self.emb_dim)));
        }
        if self.vocab_size < 2 {
            return Err(Error::Parameter("vocab must hold the null id plus at least one prompt".into()));
        }
        if self.t_steps < 2 {
            return Err(Error::Parameter("t_steps must be >= 2".into()));
        }
        Ok(())
    }
}

/// Two-level convolutional autoencoder (4x spatial downsample) with extra
/// processing blocks at the bottleneck resolution.
pub struct Autoencoder {
    e1: Conv2d,
    gn_e1: GroupNorm,
    e2: Conv2d,
    gn_e2: GroupNorm,
    e3: Conv2d,
    gn_e3: GroupNorm,
    e4: Conv2d,
    d1: Conv2d,
    gn_d1: GroupNorm,
    d2: Conv2d,
    gn_d2: GroupNorm,
    d3: ConvTranspose2d,
    gn_d3: GroupNorm,
    d4: Conv2d,
    gn_d4: GroupNorm,
    d5: Conv2d,
}

impl Autoencoder {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.ae_base;
        Autoencoder {
            e1: Conv2d::new(3, b, 4, 2, 1, rng),
            gn_e1: GroupNorm::new(b),
            e2: Conv2d::new(b, 2 * b, 4, 2, 1, rng),
            gn_e2: GroupNorm::new(2 * b),
            e3: Conv2d::new(2 * b, 2 * b, 3, 1, 1, rng),
            gn_e3: GroupNorm::new(2 * b),
            e4: Conv2d::new(2 * b, cfg.c_lat, 3, 1, 1, rng),
            d1: Conv2d::new(cfg.c_lat, 2 * b, 3, 1, 1, rng),
            gn_d1: GroupNorm::new(2 * b),
            d2: Conv2d::new(2 * b, 2 * b, 3, 1, 1, rng),
            gn_d2: GroupNorm::new(2 * b),
            d3: ConvTranspose2d::new(2 * b, b, 4, 2, 1, rng),
            gn_d3: GroupNorm::new(b),
            d4: Conv2d::new(b, b, 3, 1, 1, rng),
            gn_d4: GroupNorm::new(b),
            d5: Conv2d::new(b, 3, 3, 1, 1, rng),
        }
    }

    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = ops::silu(&self.gn_e1.forward(&self.e1.forward(x)?)?);
        let h = ops::silu(&self.gn_e2.forward(&self.e2.forward(&h)?)?);
        let h = ops::silu(&self.gn_e3.forward(&self.e3.forward(&h)?)?);
        self.e4.forward(&h)
    }

    pub fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = ops::silu(&self.gn_d1.forward(&self.d1.forward(z)?)?);
        let h = ops::silu(&self.gn_d2.forward(&self.d2.forward(&h)?)?);
        let h = ops::silu(&self.gn_d3.forward(&self.d3.forward(&h)?)?);
        let h = ops::nearest_upsample(&h, 2)?;
        let h = ops::silu(&self.gn_d4.forward(&self.d4.forward(&h)?)?);
        self.d5.forward(&h)
    }

    fn params(&self, out: &mut ParamList) {
        self.e1.params("ae.e1", out);
        self.gn_e1.params("ae.gn_e1", out);
        self.e2.params("ae.e2", out);
        self.gn_e2.params("ae.gn_e2", out);
        self.e3.params("ae.e3", out);
        self.gn_e3.params("ae.gn_e3", out);
        self.e4.params("ae.e4", out);
        self.d1.params("ae.d1", out);
        self.gn_d1.params("ae.gn_d1", out);
        self.d2.params("ae.d2", out);
        self.gn_d2.params("ae.gn_d2", out);
        self.d3.params("ae.d3", out);
        self.gn_d3.params("ae.gn_d3", out);
        self.d4.params("ae.d4", out);
        self.gn_d4.params("ae.gn_d4", out);
        self.d5.params("ae.d5", out);
    }
}

/// Encoder for the 4-channel packed conditioning, mirroring the
/// autoencoder's downsampling so both latents share a resolution.
pub struct CondEncoder {
    c1: Conv2d,
    gn_c1: GroupNorm,
    c2: Conv2d,
    gn_c2: GroupNorm,
    c3: Conv2d,
}

impl CondEncoder {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.ae_base;
        CondEncoder {
            c1: Conv2d::new(4, b, 3, 2, 1, rng),
            gn_c1: GroupNorm::new(b),
            c2: Conv2d::new(b, 2 * b, 3, 2, 1, rng),
            gn_c2: GroupNorm::new(2 * b),
            c3: Conv2d::new(2 * b, cfg.c_lat, 3, 1, 1, rng),
        }
    }

    pub fn encode(&self, c: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = ops::silu(&self.gn_c1.forward(&self.c1.forward(c)?)?);
        let h = ops::silu(&self.gn_c2.forward(&self.c2.forward(&h)?)?);
        self.c3.forward(&h)
    }

    fn params(&self, out: &mut ParamList) {
        self.c1.params("cond.c1", out);
        self.gn_c1.params("cond.gn_c1", out);
        self.c2.params("cond.c2", out);
        self.gn_c2.params("cond.gn_c2", out);
        self.c3.params("cond.c3", out);
    }
}

struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    emb_proj: Linear,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(cin: usize, cout: usize, emb_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            gn1: GroupNorm::new(cin),
            conv1: Conv2d::new(cin, cout, 3, 1, 1, rng),
            emb_proj: Linear::new(emb_dim, cout, rng),
            gn2: GroupNorm::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 1, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(cin, cout, 1, 1, 0, rng)),
        }
    }

    fn forward(&self, x: &Tensor<f32>, emb: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = self.conv1.forward(&ops::silu(&self.gn1.forward(x)?))?;
        let h = ops::add(&h, &self.emb_proj.forward(emb)?)?;
        let h = self.conv2.forward(&ops::silu(&self.gn2.forward(&h)?))?;
        let sc = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        ops::add(&sc, &h)
    }

    fn params(&self, prefix: &str, out: &mut ParamList) {
        self.gn1.params(&format!("{prefix}.gn1"), out);
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.emb_proj.params(&format!("{prefix}.emb"), out);
        self.gn2.params(&format!("{prefix}.gn2"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        if let Some(s) = &self.skip {
            s.params(&format!("{prefix}.skip"), out);
        }
    }
}

/// Three-resolution UNet predicting the noise component of a noisy latent,
/// conditioned through channel concatenation, a sinusoidal timestep
/// embedding and a learned text embedding added as a bias.
pub struct Denoiser {
    stem: Conv2d,
    down1: ResBlock,
    down2: ResBlock,
    mid_in: ResBlock,
    mid: ResBlock,
    up2: ResBlock,
    up1: ResBlock,
    out_gn: GroupNorm,
    out_conv: Conv2d,
    t_mlp1: Linear,
    t_mlp2: Linear,
    text_embed: Embedding,
    emb_dim: usize,
}

impl Denoiser {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (w0, w1, w2) = (cfg.unet_base, 2 * cfg.unet_base, 3 * cfg.unet_base);
        Denoiser {
            stem: Conv2d::new(2 * cfg.c_lat, w0, 3, 1, 1, rng),
            down1: ResBlock::new(w0, w0, cfg.emb_dim, rng),
            down2: ResBlock::new(w0, w1, cfg.emb_dim, rng),
            mid_in: ResBlock::new(w1, w2, cfg.emb_dim, rng),
            mid: ResBlock::new(w2, w2, cfg.emb_dim, rng),
            up2: ResBlock::new(w2 + w1, w1, cfg.emb_dim, rng),
            up1: ResBlock::new(w1 + w0, w0, cfg.emb_dim, rng),
            out_gn: GroupNorm::new(w0),
            // Zero-initialized head: the untrained model predicts zero noise.
            out_conv: Conv2d::zeroed(w0, cfg.c_lat, 3, 1, 1),
            t_mlp1: Linear::new(cfg.emb_dim, cfg.emb_dim, rng),
            t_mlp2: Linear::new(cfg.emb_dim, cfg.emb_dim, rng),
            text_embed: Embedding::new(cfg.vocab_size, cfg.emb_dim, rng),
            emb_dim: cfg.emb_dim,
        }
    }

    fn embedding(&self, ts: &[usize], text_ids: &[usize]) -> Result<Tensor<f32>> {
        let sin = sinusoidal_embedding(ts, self.emb_dim);
        let h = ops::silu(&self.t_mlp1.forward(&sin)?);
        let t_emb = self.t_mlp2.forward(&h)?;
        let txt = self.text_embed.forward(text_ids)?;
        ops::add(&t_emb, &txt)
    }

    /// z_t and cond are `[N, c_lat, h, w]` with h, w divisible by 4.
    pub fn forward(
        &self,
        z_t: &Tensor<f32>,
        cond: &Tensor<f32>,
        ts: &[usize],
        text_ids: &[usize],
    ) -> Result<Tensor<f32>> {
        let zsh = z_t.shape();
        if zsh != cond.shape() {
            return Err(Error::Dimension(format!(
                "noisy latent {:?} and conditioning latent {:?} must match",
                zsh,
                cond.shape()
            )));
        }
        if zsh[2] % 4 != 0 || zsh[3] % 4 != 0 {
            return Err(Error::Dimension(format!(
                "latent {}x{} must be divisible by 4 for the UNet",
                zsh[2], zsh[3]
            )));
        }
        let emb = self.embedding(ts, text_ids)?;
        let x = ops::concat_channels(z_t, cond)?;
        let h0 = self.stem.forward(&x)?;
        let d1 = self.down1.forward(&h0, &emb)?;
        let d2 = self.down2.forward(&ops::avg_pool(&d1, 2)?, &emb)?;
        let m = self.mid_in.forward(&ops::avg_pool(&d2, 2)?, &emb)?;
        let m = self.mid.forward(&m, &emb)?;
        let u2 = self.up2.forward(&ops::concat_channels(&ops::nearest_upsample(&m, 2)?, &d2)?, &emb)?;
        let u1 = self.up1.forward(&ops::concat_channels(&ops::nearest_upsample(&u2, 2)?, &d1)?, &emb)?;
        self.out_conv.forward(&ops::silu(&self.out_gn.forward(&u1)?))
    }

    fn params(&self, out: &mut ParamList) {
        self.stem.params("unet.stem", out);
        self.down1.params("unet.down1", out);
        self.down2.params("unet.down2", out);
        self.mid_in.params("unet.mid_in", out);
        self.mid.params("unet.mid", out);
        self.up2.params("unet.up2", out);
        self.up1.params("unet.up1", out);
        self.out_gn.params("unet.out_gn", out);
        self.out_conv.params("unet.out", out);
        self.t_mlp1.params("unet.t_mlp1", out);
        self.t_mlp2.params("unet.t_mlp2", out);
        self.text_embed.params("unet.text", out);
    }
}

/// Fixed sinusoidal features of the integer timestep.
pub fn sinusoidal_embedding(ts: &[usize], dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    let mut data = vec![0.0f32; ts.len() * dim];
    for (n, &t) in ts.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000.0f64).ln() * i as f64 / (half.max(2) - 1) as f64).exp();
            let arg = t as f64 * freq;
            data[n * dim + i] = arg.sin() as f32;
            data[n * dim + half + i] = arg.cos() as f32;
        }
    }
    Tensor::from_vec(&[ts.len(), dim], data).expect("embedding buffer sized to shape")
}

/// The abstract surface training and sampling run against; lets tests swap
/// in analytic stand-ins for the learned networks.
pub trait ConditionalDenoiser {
    fn schedule(&self) -> &NoiseSchedule;
    fn latent_channels(&self) -> usize;
    /// Reference image to latent z0.
    fn encode_reference(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
    /// Packed conditioning image to conditioning latent.
    fn encode_condition(&self, c: &Tensor<f32>) -> Result<Tensor<f32>>;
    /// Latent back to image space.
    fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>>;
    /// Noise estimate for a batch of noisy latents.
    fn predict_eps(
        &self,
        z_t: &Tensor<f32>,
        cond: &Tensor<f32>,
        ts: &[usize],
        text_ids: &[usize],
    ) -> Result<Tensor<f32>>;
    fn null_text_id(&self) -> usize {
        NULL_TEXT_ID
    }
}

pub struct DiffusionModel {
    pub cfg: ModelConfig,
    pub ae: Autoencoder,
    pub cond_enc: CondEncoder,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    /// Scalar normalizer applied to reference latents (std over a probe
    /// batch after autoencoder pretraining).
    pub latent_scale: Tensor<f32>,
}

const META_NAME: &str = "meta.arch";
const META_VERSION: f32 = 1.0;

impl DiffusionModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DiffusionModel {
            ae: Autoencoder::new(&cfg, &mut rng),
            cond_enc: CondEncoder::new(&cfg, &mut rng),
            denoiser: Denoiser::new(&cfg, &mut rng),
            schedule: NoiseSchedule::default_linear(cfg.t_steps)?,
            latent_scale: Tensor::full(&[1], 1.0),
            cfg,
        })
    }

    pub fn set_latent_scale(&self, s: f32) {
        self.latent_scale.update_data(|d| d[0] = s);
    }

    pub fn latent_scale_value(&self) -> f32 {
        self.latent_scale.item()
    }

    pub fn ae_params(&self) -> ParamList {
        let mut out = Vec::new();
        self.ae.params(&mut out);
        out
    }

    /// Parameters trained during the diffusion phase: conditioning encoder
    /// plus the denoiser (with its embeddings).
    pub fn denoiser_params(&self) -> ParamList {
        let mut out = Vec::new();
        self.cond_enc.params(&mut out);
        self.denoiser.params(&mut out);
        out
    }

    /// Every tensor persisted in a checkpoint, fixed order.
    pub fn all_params(&self) -> ParamList {
        let mut out = self.ae_params();
        out.append(&mut self.denoiser_params());
        out.push(("latent_scale".into(), self.latent_scale.clone()));
        out
    }

    pub fn freeze_autoencoder(&self) {
        set_trainable(&self.ae_params(), false);
    }

    fn meta_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[7],
            vec![
                META_VERSION,
                self.cfg.c_lat as f32,
                self.cfg.ae_base as f32,
                self.cfg.unet_base as f32,
                self.cfg.emb_dim as f32,
                self.cfg.vocab_size as f32,
                self.cfg.t_steps as f32,
            ],
        )
        .expect("meta tensor")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut params = self.all_params();
        params.push((META_NAME.into(), self.meta_tensor()));
        save_checkpoint(&params, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let meta = ck.get(META_NAME)?;
        if meta.data.len() != 7 || meta.data[0] != META_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model metadata in {}",
                path.display()
            )));
        }
        let cfg = ModelConfig {
            c_lat: meta.data[1] as usize,
            ae_base: meta.data[2] as usize,
            unet_base: meta.data[3] as usize,
            emb_dim: meta.data[4] as usize,
            vocab_size: meta.data[5] as usize,
            t_steps: meta.data[6] as usize,
        };
        let model = DiffusionModel::new(cfg, 0)?;
        let mut params = model.all_params();
        params.push((META_NAME.into(), model.meta_tensor()));
        load_state_into(&params, &ck)?;
        Ok(model)
    }
}

impl ConditionalDenoiser for DiffusionModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn latent_channels(&self) -> usize {
        self.cfg.c_lat
    }

    fn encode_reference(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let z = self.ae.encode(x)?;
        Ok(ops::scale(&z, 1.0 / self.latent_scale_value()))
    }

    fn encode_condition(&self, c: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.cond_enc.encode(c)
    }

    fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.ae.decode(&ops::scale(z, self.latent_scale_value()))
    }

    fn predict_eps(
        &self,
        z_t: &Tensor<f32>,
        cond: &Tensor<f32>,
        ts: &[usize],
        text_ids: &[usize],
    ) -> Result<Tensor<f32>> {
        self.denoiser.forward(z_t, cond, ts, text_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::no_grad;

    #[test]
    fn shapes_roundtrip_through_autoencoder() {
        let model = DiffusionModel::new(ModelConfig::default(), 1).unwrap();
        let x = Tensor::<f32>::zeros(&[2, 3, 32, 32]);
        let z = no_grad(|| model.encode_reference(&x)).unwrap();
        assert_eq!(z.shape(), vec![2, 4, 8, 8]);
        let y = no_grad(|| model.decode(&z)).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn denoiser_maps_latent_to_latent_and_first_layer_takes_double_channels() {
        let model = DiffusionModel::new(ModelConfig::default(), 2).unwrap();
        assert_eq!(model.denoiser.stem.weight.shape()[1], 2 * model.cfg.c_lat);
        let z = Tensor::<f32>::zeros(&[1, 4, 16, 16]);
        let c = Tensor::<f32>::zeros(&[1, 4, 16, 16]);
        let eps = no_grad(|| model.predict_eps(&z, &c, &[500], &[1])).unwrap();
        assert_eq!(eps.shape(), vec![1, 4, 16, 16]);
    }

    #[test]
    fn zero_initialized_head_predicts_zero() {
        let model = DiffusionModel::new(ModelConfig::default(), 3).unwrap();
        let z = Tensor::<f32>::full(&[1, 4, 8, 8], 0.7);
        let c = Tensor::<f32>::full(&[1, 4, 8, 8], -0.3);
        let eps = no_grad(|| model.predict_eps(&z, &c, &[10], &[2])).unwrap();
        assert!(eps.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn save_load_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.drck");
        let model = DiffusionModel::new(ModelConfig::default(), 4).unwrap();
        model.set_latent_scale(0.37);
        model.save(&path).unwrap();
        let loaded = DiffusionModel::load(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.latent_scale_value(), 0.37);
        for ((na, a), (nb, b)) in model.all_params().iter().zip(loaded.all_params().iter()) {
            assert_eq!(na, nb);
            let (av, bv) = (a.to_vec(), b.to_vec());
            assert_eq!(av.len(), bv.len(), "{na}");
            for (x, y) in av.iter().zip(&bv) {
                assert_eq!(x.to_bits(), y.to_bits(), "mismatch in {na}");
            }
        }
    }

    #[test]
    fn sinusoidal_embedding_is_bounded_and_distinct() {
        let e = sinusoidal_embedding(&[1, 500, 1000], 64);
        assert_eq!(e.shape(), vec![3, 64]);
        let d = e.to_vec();
        assert!(d.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(d[0..64], d[64..128]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(DiffusionModel::new(ModelConfig { ae_base: 12, ..Default::default() }, 0).is_err());
        assert!(DiffusionModel::new(ModelConfig { emb_dim: 63, ..Default::default() }, 0).is_err());
        assert!(DiffusionModel::new(ModelConfig { vocab_size: 1, ..Default::default() }, 0).is_err());
    }
}
