//! Run configuration: a flat `key = value` text format with `[section]`
//! headers. Every documented key has a default; unknown or duplicate keys
//! are validation errors so typos cannot silently change behavior.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diffusion::{GuidanceConfig, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::isp::{GammaMode, IspConfig};
use crate::raw::CfaPattern;
use crate::sim::SensorNoiseParams;

/// Parsed key/value entries, section-qualified as `section.key`.
#[derive(Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Validation(format!(
                    "config line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if entries.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Validation(format!("duplicate config key {full}")));
            }
        }
        Ok(ConfigMap { entries, consumed: BTreeSet::new() })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply `section.key=value` command-line overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                return Err(Error::Validation(format!(
                    "override {o:?} must look like section.key=value"
                )));
            };
            self.entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => {
                self.consumed.insert(key.to_string());
                v.parse().map_err(|_| {
                    Error::Validation(format!("config key {key}: cannot parse {v:?}"))
                })
            }
        }
    }

    fn get_str(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.consumed.insert(key.to_string());
        }
        v
    }

    fn get_list(&mut self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.get_str(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::Validation(format!("config key {key}: bad number {s:?}"))
                    })
                })
                .collect(),
        }
    }

    /// Error out on any key that was never consumed.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<String> = self
            .entries
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

/// Everything one run needs, shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub ratios: Vec<f64>,
    pub pattern: CfaPattern,
    pub noise: SensorNoiseParams,
    pub isp: IspConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub sample_steps: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("ckpt"),
            output_dir: PathBuf::from("out"),
            scenes: 8,
            width: 96,
            height: 96,
            ratios: vec![100.0, 300.0],
            pattern: CfaPattern::Rggb,
            noise: SensorNoiseParams { seed: 42, ..Default::default() },
            isp: IspConfig::default(),
            train: TrainConfig::default(),
            guidance: GuidanceConfig::default(),
            sample_steps: 50,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn from_map(mut m: ConfigMap) -> Result<Self> {
        let d = RunConfig::default();

        let dataset_dir = m.get_str("paths.dataset_dir").map(PathBuf::from).unwrap_or(d.dataset_dir);
        let checkpoint_dir =
            m.get_str("paths.checkpoint_dir").map(PathBuf::from).unwrap_or(d.checkpoint_dir);
        let output_dir = m.get_str("paths.output_dir").map(PathBuf::from).unwrap_or(d.output_dir);

        let seed = m.get("seeds.seed", d.seed)?;

        let scenes = m.get("sim.scenes", d.scenes)?;
        let width = m.get("sim.width", d.width)?;
        let height = m.get("sim.height", d.height)?;
        let ratios = m.get_list("sim.ratios", d.ratios)?;
        let pattern = match m.get_str("sim.pattern") {
            None => d.pattern,
            Some(p) => CfaPattern::parse(&p).map_err(|e| Error::Validation(e.to_string()))?,
        };
        let noise = SensorNoiseParams {
            full_well_photons: m.get("sim.full_well", d.noise.full_well_photons)?,
            read_noise_dn: m.get("sim.read_noise_dn", d.noise.read_noise_dn)?,
            black_level: m.get("sim.black_level", d.noise.black_level)?,
            white_level: m.get("sim.white_level", d.noise.white_level)?,
            seed,
        };

        let wb = m.get_list("isp.wb", d.isp.wb_gains.iter().map(|&v| v as f64).collect())?;
        if wb.len() != 3 {
            return Err(Error::Validation(format!("isp.wb needs 3 values, got {}", wb.len())));
        }
        let ccm_flat = m.get_list(
            "isp.ccm",
            d.isp.ccm.iter().flatten().map(|&v| v as f64).collect(),
        )?;
        if ccm_flat.len() != 9 {
            return Err(Error::Validation(format!("isp.ccm needs 9 values, got {}", ccm_flat.len())));
        }
        let gamma = match m.get_str("isp.gamma") {
            None => d.isp.gamma,
            Some(g) if g.eq_ignore_ascii_case("srgb") => GammaMode::Srgb,
            Some(g) => GammaMode::Exponent(g.parse().map_err(|_| {
                Error::Validation(format!("isp.gamma must be \"srgb\" or a number, got {g:?}"))
            })?),
        };
        let mut ccm = [[0.0f32; 3]; 3];
        for (i, v) in ccm_flat.iter().enumerate() {
            ccm[i / 3][i % 3] = *v as f32;
        }
        let isp = IspConfig { wb_gains: [wb[0] as f32, wb[1] as f32, wb[2] as f32], ccm, gamma };

        let model = ModelConfig {
            c_lat: m.get("train.c_lat", d.train.model.c_lat)?,
            ae_base: m.get("train.ae_base", d.train.model.ae_base)?,
            unet_base: m.get("train.unet_base", d.train.model.unet_base)?,
            emb_dim: m.get("train.emb_dim", d.train.model.emb_dim)?,
            vocab_size: m.get("train.vocab", d.train.model.vocab_size)?,
            t_steps: m.get("train.t_steps", d.train.model.t_steps)?,
        };
        let train = TrainConfig {
            patch: m.get("train.patch", d.train.patch)?,
            batch: m.get("train.batch", d.train.batch)?,
            steps: m.get("train.steps", d.train.steps)?,
            ae_steps: m.get("train.ae_steps", d.train.ae_steps)?,
            lr: m.get("train.lr", d.train.lr)?,
            ae_lr: m.get("train.ae_lr", d.train.ae_lr)?,
            warmup_steps: m.get("train.warmup", d.train.warmup_steps)?,
            weight_decay: m.get("train.weight_decay", d.train.weight_decay)?,
            seed,
            val_pairs: m.get("train.val_pairs", d.train.val_pairs)?,
            val_every: m.get("train.val_every", d.train.val_every)?,
            checkpoint_every: m.get("train.checkpoint_every", d.train.checkpoint_every)?,
            model,
        };

        let guidance = GuidanceConfig {
            s_image: m.get("guidance.s_image", d.guidance.s_image)?,
            s_text: m.get("guidance.s_text", d.guidance.s_text)?,
        };
        let sample_steps = m.get("train.sample_steps", d.sample_steps)?;

        m.finish()?;
        let cfg = RunConfig {
            dataset_dir,
            checkpoint_dir,
            output_dir,
            scenes,
            width,
            height,
            ratios,
            pattern,
            noise,
            isp,
            train,
            guidance,
            sample_steps,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut map = match path {
            Some(p) => ConfigMap::from_file(p)?,
            None => ConfigMap::default(),
        };
        map.apply_overrides(overrides)?;
        Self::from_map(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(Error::Validation("sim.scenes must be >= 1".into()));
        }
        if self.width == 0 || self.height == 0 || self.width % 16 != 0 || self.height % 16 != 0 {
            return Err(Error::Validation(format!(
                "scene size {}x{} must be a positive multiple of 16",
                self.width, self.height
            )));
        }
        if self.ratios.is_empty() {
            return Err(Error::Validation("sim.ratios must not be empty".into()));
        }
        for &r in &self.ratios {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(Error::Validation(format!("ratio {r} must be >= 1")));
            }
        }
        if self.sample_steps == 0 {
            return Err(Error::Validation("train.sample_steps must be >= 1".into()));
        }
        self.noise.validate().map_err(|e| Error::Validation(e.to_string()))?;
        self.isp.validate().map_err(|e| Error::Validation(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Validation(e.to_string()))?;
        self.guidance.validate().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }
}
