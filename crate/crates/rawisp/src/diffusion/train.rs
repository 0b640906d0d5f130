//! Training: autoencoder pretraining on references, then conditional
//! diffusion with per-example conditioning dropout, patch augmentation and
//! periodic checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{Executor, Par};
use crate::isp::read_ppm;
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::tensor::{no_grad, Tensor};
use crate::raw::{bicubic_upsample, normalize_amplify, pack_bayer, read_braw};
use crate::sim::Manifest;
use crate::util::derive_seed;

use super::model::{ConditionalDenoiser, DiffusionModel, ModelConfig};
use super::schedule::forward_diffuse;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Square patch side; must be a multiple of 16.
    pub patch: usize,
    pub batch: usize,
    /// Diffusion optimization steps.
    pub steps: usize,
    /// Autoencoder pretraining steps (0 skips pretraining).
    pub ae_steps: usize,
    pub lr: f64,
    pub ae_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Pairs held out of training for the validation batch.
    pub val_pairs: usize,
    pub val_every: usize,
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch: 64,
            batch: 16,
            steps: 2000,
            ae_steps: 800,
            lr: 1e-3,
            ae_lr: 2e-3,
            warmup_steps: 500,
            weight_decay: 1e-2,
            seed: 42,
            val_pairs: 8,
            val_every: 250,
            checkpoint_every: 1000,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch < 16 || self.patch % 16 != 0 {
            return Err(Error::Parameter(format!(
                "patch must be a multiple of 16, got {}",
                self.patch
            )));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::Parameter("batch and steps must be >= 1".into()));
        }
        if self.val_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Parameter("val_every and checkpoint_every must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.ae_lr > 0.0) {
            return Err(Error::Parameter("learning rates must be positive".into()));
        }
        self.model.validate()
    }
}

/// One preprocessed pair held in memory: the conditioning chain applied to
/// the noisy RAW (planar 4xHxW) and the sRGB reference (planar 3xHxW).
pub struct PairData {
    pub cond: Vec<f32>,
    pub reference: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub ratio: f64,
    pub text_id: usize,
}

/// Load and preprocess every manifest pair. Conditioning follows the
/// pack -> black-subtract/amplify -> bicubic x2 chain with alpha taken from
/// the manifest ratio.
pub fn load_pairs(manifest: &Manifest, dir: &Path, vocab_size: usize) -> Result<Vec<PairData>> {
    let results: Vec<Result<PairData>> = Par::map_indexed(manifest.rows.len(), |i| {
        let row = &manifest.rows[i];
        let braw = read_braw(&dir.join(&row.noisy))?;
        let meta = braw.meta();
        let packed = pack_bayer(&braw)?;
        let normed = normalize_amplify(&packed, meta.black_level, meta.white_level, row.ratio as f32)?;
        let up = bicubic_upsample(&normed, 2)?;

        let reference = read_ppm(&dir.join(&row.reference))?;
        if reference.width != up.width || reference.height != up.height {
            return Err(Error::Dimension(format!(
                "pair {}: reference {}x{} does not match conditioning {}x{}",
                Manifest::pair_id(row),
                reference.width,
                reference.height,
                up.width,
                up.height
            )));
        }
        Ok(PairData {
            cond: up.to_planar(),
            reference: reference.to_planar(),
            width: up.width,
            height: up.height,
            ratio: row.ratio,
            text_id: 1 + i % (vocab_size - 1),
        })
    });
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// Which conditioning inputs were nulled for a training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutKind {
    Kept,
    TextOnly,
    Both,
}

const P_TEXT_ONLY: f64 = 0.05;
const P_BOTH: f64 = 0.05;

/// Squared-error diffusion loss for a batch with everything pinned:
/// timesteps, noise, text ids, and an optional 0/1 mask zeroing the
/// conditioning latent per sample.
pub fn diffusion_mse<M: ConditionalDenoiser>(
    model: &M,
    x_ref: &Tensor<f32>,
    c_packed: &Tensor<f32>,
    text_ids: &[usize],
    ts: &[usize],
    eps: &Tensor<f32>,
    cond_mask: Option<&[f32]>,
) -> Result<Tensor<f32>> {
    let xsh = x_ref.shape();
    let csh = c_packed.shape();
    if xsh.len() != 4 || csh.len() != 4 || xsh[0] != csh[0] || xsh[2..] != csh[2..] {
        return Err(Error::Dimension(format!(
            "reference patches {xsh:?} and conditioning patches {csh:?} must share batch and size"
        )));
    }
    let z0 = model.encode_reference(x_ref)?;
    let mut cond = model.encode_condition(c_packed)?;
    if let Some(mask) = cond_mask {
        cond = crate::nn::ops::scale_per_sample(&cond, mask)?;
    }
    let z_t = forward_diffuse(&z0, ts, eps, model.schedule())?;
    let eps_hat = model.predict_eps(&z_t, &cond, ts, text_ids)?;
    crate::nn::ops::mse_loss(&eps_hat, eps)
}

/// One stochastic loss evaluation: samples per-example timesteps and noise,
/// applies the 5%/5% conditioning dropout (text-only, then both image and
/// text), and returns the mean squared error with the per-example dropout
/// decisions.
pub fn training_loss<M: ConditionalDenoiser>(
    model: &M,
    x_ref: &Tensor<f32>,
    c_packed: &Tensor<f32>,
    text_ids: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Vec<DropoutKind>)> {
    let n = x_ref.shape().first().copied().unwrap_or(0);
    if text_ids.len() != n {
        return Err(Error::Dimension(format!("{} text ids for batch of {n}", text_ids.len())));
    }
    let t_total = model.schedule().t_steps();
    let ts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=t_total)).collect();
    let kinds: Vec<DropoutKind> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < P_TEXT_ONLY {
                DropoutKind::TextOnly
            } else if u < P_TEXT_ONLY + P_BOTH {
                DropoutKind::Both
            } else {
                DropoutKind::Kept
            }
        })
        .collect();

    let z0_probe = model.encode_reference(&x_ref.detach())?;
    let zsh = z0_probe.shape();
    let eps = Tensor::randn(&zsh, 1.0, rng);

    let eff_text: Vec<usize> = text_ids
        .iter()
        .zip(&kinds)
        .map(|(&id, k)| if *k == DropoutKind::Kept { id } else { model.null_text_id() })
        .collect();
    let mask: Vec<f32> =
        kinds.iter().map(|k| if *k == DropoutKind::Both { 0.0 } else { 1.0 }).collect();

    let loss = diffusion_mse(model, x_ref, c_packed, &eff_text, &ts, &eps, Some(&mask))?;
    Ok((loss, kinds))
}

/// Fixed validation batch: center crops of held-out pairs with evenly
/// spread timesteps and frozen noise.
pub struct ValBatch {
    pub x_ref: Tensor<f32>,
    pub c_packed: Tensor<f32>,
    pub text_ids: Vec<usize>,
    pub ts: Vec<usize>,
    pub eps: Tensor<f32>,
}

pub fn build_val_batch(
    pairs: &[PairData],
    patch: usize,
    c_lat: usize,
    t_steps: usize,
    seed: u64,
) -> Result<ValBatch> {
    if pairs.is_empty() {
        return Err(Error::Parameter("validation needs at least one pair".into()));
    }
    let n = pairs.len();
    let mut x = Vec::with_capacity(n * 3 * patch * patch);
    let mut c = Vec::with_capacity(n * 4 * patch * patch);
    let mut text_ids = Vec::with_capacity(n);
    for p in pairs {
        let y0 = (p.height - patch) / 2;
        let x0 = (p.width - patch) / 2;
        x.extend(extract_patch(&p.reference, 3, p.height, p.width, y0, x0, patch, false));
        c.extend(extract_patch(&p.cond, 4, p.height, p.width, y0, x0, patch, false));
        text_ids.push(p.text_id);
    }
    let ts: Vec<usize> = (0..n).map(|i| (((2 * i + 1) * t_steps) / (2 * n)).clamp(1, t_steps)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let eps = Tensor::randn(&[n, c_lat, patch / 4, patch / 4], 1.0, &mut rng);
    Ok(ValBatch {
        x_ref: Tensor::from_vec(&[n, 3, patch, patch], x)?,
        c_packed: Tensor::from_vec(&[n, 4, patch, patch], c)?,
        text_ids,
        ts,
        eps,
    })
}

pub fn validation_loss<M: ConditionalDenoiser>(model: &M, batch: &ValBatch) -> Result<f64> {
    let loss = no_grad(|| {
        diffusion_mse(model, &batch.x_ref, &batch.c_packed, &batch.text_ids, &batch.ts, &batch.eps, None)
    })?;
    Ok(loss.item() as f64)
}

fn extract_patch(
    planar: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    y0: usize,
    x0: usize,
    patch: usize,
    flip: bool,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(channels * patch * patch);
    for ch in 0..channels {
        for y in 0..patch {
            let row = &planar[(ch * height + y0 + y) * width + x0..(ch * height + y0 + y) * width + x0 + patch];
            if flip {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub ae_steps: usize,
    pub steps: usize,
    pub val_first: f64,
    pub val_last: f64,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

/// Full training run: autoencoder pretraining, latent scale calibration,
/// then conditional diffusion. Writes `loss.log`, periodic
/// `ckpt_step*.drck` files and the final `model.drck` into `out_dir`.
pub fn train(
    manifest: &Manifest,
    manifest_dir: &Path,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    if manifest.rows.is_empty() {
        return Err(Error::Validation("manifest has no pairs".into()));
    }
    let pairs = load_pairs(manifest, manifest_dir, cfg.model.vocab_size)?;
    for (i, p) in pairs.iter().enumerate() {
        if p.width < cfg.patch || p.height < cfg.patch {
            return Err(Error::Dimension(format!(
                "pair {i} is {}x{}, smaller than patch {}",
                p.width, p.height, cfg.patch
            )));
        }
    }
    let n = pairs.len();
    let (train_pairs, held_out) = if n == 1 {
        (&pairs[..], &pairs[..])
    } else {
        let val_n = cfg.val_pairs.clamp(1, n / 2);
        (&pairs[..n - val_n], &pairs[n - val_n..])
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("loss.log");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?,
    );

    let model = DiffusionModel::new(cfg.model, derive_seed(cfg.seed, 100, 0))?;

    // Phase 1: reconstruction pretraining of the autoencoder.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, 0));
    if cfg.ae_steps > 0 {
        let ae_cfg = AdamConfig {
            lr: cfg.ae_lr,
            warmup_steps: (cfg.ae_steps / 10).max(1),
            total_steps: cfg.ae_steps,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        };
        let mut opt = Adam::new(model.ae_params(), ae_cfg);
        for step in 1..=cfg.ae_steps {
            let x = sample_batch(train_pairs, cfg, &mut rng, 3);
            let x = Tensor::from_vec(&[cfg.batch, 3, cfg.patch, cfg.patch], x)?;
            opt.zero_grads();
            let z = model.ae.encode(&x)?;
            let recon = model.ae.decode(&z)?;
            let loss = crate::nn::ops::mse_loss(&recon, &x)?;
            loss.backward()?;
            opt.step()?;
            if step % 100 == 0 || step == cfg.ae_steps || step == 1 {
                writeln!(log, "{step}\tae\t{:.6}", loss.item()).map_err(|e| Error::io(&log_path, e))?;
            }
        }
    }
    model.freeze_autoencoder();

    // Latent scale: std of encoded probe patches.
    let probe_n = train_pairs.len().min(16).max(1);
    let mut probe = Vec::with_capacity(probe_n * 3 * cfg.patch * cfg.patch);
    for p in &train_pairs[..probe_n] {
        let y0 = (p.height - cfg.patch) / 2;
        let x0 = (p.width - cfg.patch) / 2;
        probe.extend(extract_patch(&p.reference, 3, p.height, p.width, y0, x0, cfg.patch, false));
    }
    let probe = Tensor::from_vec(&[probe_n, 3, cfg.patch, cfg.patch], probe)?;
    let z = no_grad(|| model.ae.encode(&probe))?;
    let zd = z.to_vec();
    let mean = zd.iter().map(|&v| v as f64).sum::<f64>() / zd.len() as f64;
    let var = zd.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / zd.len() as f64;
    let std = var.sqrt();
    if std.is_finite() && std > 1e-6 {
        model.set_latent_scale(std as f32);
    }

    // Phase 2: conditional diffusion training.
    let val_batch =
        build_val_batch(held_out, cfg.patch, cfg.model.c_lat, cfg.model.t_steps, cfg.seed)?;
    let val_first = validation_loss(&model, &val_batch)?;
    writeln!(log, "0\tval\t{val_first:.6}").map_err(|e| Error::io(&log_path, e))?;

    let diff_cfg = AdamConfig {
        lr: cfg.lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.steps,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut opt = Adam::new(model.denoiser_params(), diff_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3, 0));
    let mut val_last = val_first;
    for step in 1..=cfg.steps {
        let (x, c, text_ids) = sample_pair_batch(train_pairs, cfg, &mut rng);
        let x = Tensor::from_vec(&[cfg.batch, 3, cfg.patch, cfg.patch], x)?;
        let c = Tensor::from_vec(&[cfg.batch, 4, cfg.patch, cfg.patch], c)?;
        opt.zero_grads();
        let (loss, _kinds) = training_loss(&model, &x, &c, &text_ids, &mut rng)?;
        loss.backward()?;
        opt.step()?;
        if step % 50 == 0 || step == 1 || step == cfg.steps {
            writeln!(log, "{step}\ttrain\t{:.6}", loss.item()).map_err(|e| Error::io(&log_path, e))?;
        }
        if step % cfg.val_every == 0 || step == cfg.steps {
            val_last = validation_loss(&model, &val_batch)?;
            writeln!(log, "{step}\tval\t{val_last:.6}").map_err(|e| Error::io(&log_path, e))?;
        }
        if step % cfg.checkpoint_every == 0 && step != cfg.steps {
            model.save(&out_dir.join(format!("ckpt_step{step:06}.drck")))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let ckpt = out_dir.join("model.drck");
    model.save(&ckpt)?;
    Ok(TrainReport {
        ae_steps: cfg.ae_steps,
        steps: cfg.steps,
        val_first,
        val_last,
        checkpoint: ckpt,
        loss_log: log_path,
    })
}

fn sample_batch(
    pairs: &[PairData],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    channels: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(cfg.batch * channels * cfg.patch * cfg.patch);
    for _ in 0..cfg.batch {
        let p = &pairs[rng.gen_range(0..pairs.len())];
        let y0 = rng.gen_range(0..=p.height - cfg.patch);
        let x0 = rng.gen_range(0..=p.width - cfg.patch);
        let flip = rng.gen_bool(0.5);
        out.extend(extract_patch(&p.reference, channels, p.height, p.width, y0, x0, cfg.patch, flip));
    }
    out
}

fn sample_pair_batch(
    pairs: &[PairData],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, Vec<f32>, Vec<usize>) {
    let mut x = Vec::with_capacity(cfg.batch * 3 * cfg.patch * cfg.patch);
    let mut c = Vec::with_capacity(cfg.batch * 4 * cfg.patch * cfg.patch);
    let mut ids = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let p = &pairs[rng.gen_range(0..pairs.len())];
        let y0 = rng.gen_range(0..=p.height - cfg.patch);
        let x0 = rng.gen_range(0..=p.width - cfg.patch);
        let flip = rng.gen_bool(0.5);
        x.extend(extract_patch(&p.reference, 3, p.height, p.width, y0, x0, cfg.patch, flip));
        c.extend(extract_patch(&p.cond, 4, p.height, p.width, y0, x0, cfg.patch, flip));
        ids.push(p.text_id);
    }
    (x, c, ids)
}
