//! Synthetic paired low-light data: procedural scenes, CFA sampling and a
//! shot-plus-read sensor noise model.

mod manifest;

pub use manifest::{Manifest, ManifestRow, read_manifest, write_manifest};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::exec::{Executor, Par, Seq};
use crate::isp::{run_pipeline, write_ppm, IspConfig};
use crate::raw::{BayerImage, CfaColor, CfaPattern, Colorspace, LinearImage, Mosaic, SensorMeta};
use crate::util::derive_seed;

/// Photon-to-DN conversion and noise parameters of the simulated sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoiseParams {
    /// Electrons collected at white level for a unit-rate pixel.
    pub full_well_photons: f64,
    /// Gaussian readout noise, in DN.
    pub read_noise_dn: f64,
    pub black_level: u16,
    pub white_level: u16,
    /// Base RNG seed for dataset generation.
    pub seed: u64,
}

impl Default for SensorNoiseParams {
    fn default() -> Self {
        SensorNoiseParams {
            full_well_photons: 10_000.0,
            read_noise_dn: 2.0,
            black_level: 512,
            white_level: 16383,
            seed: 0,
        }
    }
}

impl SensorNoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.full_well_photons > 0.0) {
            return Err(Error::Parameter(format!(
                "full well must be positive, got {}",
                self.full_well_photons
            )));
        }
        if !(self.read_noise_dn >= 0.0) {
            return Err(Error::Parameter(format!(
                "read noise must be non-negative, got {}",
                self.read_noise_dn
            )));
        }
        if self.black_level >= self.white_level {
            return Err(Error::Parameter(format!(
                "black level {} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32, color: [f32; 3] },
    Disk { cx: f32, cy: f32, r: f32, soft: f32, color: [f32; 3] },
}

struct SceneSpec {
    c0: [f32; 3],
    c1: [f32; 3],
    dir: (f32, f32),
    sin_freq: (f32, f32),
    sin_phase: f32,
    sin_amp: f32,
    shapes: Vec<Shape>,
    lattice_w: usize,
    lattice_h: usize,
    lattice: Vec<f32>,
    noise_amp: f32,
}

const LATTICE_CELL: usize = 4;

fn draw_scene_spec(width: usize, height: usize, rng: &mut ChaCha8Rng) -> SceneSpec {
    let mut color = |lo: f32, hi: f32| {
        [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
    };
    let c0 = color(0.10, 0.55);
    let c1 = color(0.25, 0.85);
    let angle = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let dir = (angle.cos(), angle.sin());
    let sin_freq = (
        rng.gen_range(1.0f32..3.5) * std::f32::consts::TAU / width as f32,
        rng.gen_range(1.0f32..3.5) * std::f32::consts::TAU / height as f32,
    );
    let sin_phase = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let sin_amp = rng.gen_range(0.02f32..0.08);

    let n_shapes = rng.gen_range(6..=12);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let color = [
            rng.gen_range(0.05f32..0.95),
            rng.gen_range(0.05f32..0.95),
            rng.gen_range(0.05f32..0.95),
        ];
        if rng.gen_bool(0.5) {
            let cx = rng.gen_range(0.0f32..width as f32);
            let cy = rng.gen_range(0.0f32..height as f32);
            let w = rng.gen_range(0.08f32..0.4) * width as f32;
            let h = rng.gen_range(0.08f32..0.4) * height as f32;
            shapes.push(Shape::Rect {
                x0: cx - w / 2.0,
                y0: cy - h / 2.0,
                x1: cx + w / 2.0,
                y1: cy + h / 2.0,
                color,
            });
        } else {
            shapes.push(Shape::Disk {
                cx: rng.gen_range(0.0f32..width as f32),
                cy: rng.gen_range(0.0f32..height as f32),
                r: rng.gen_range(0.05f32..0.25) * width.min(height) as f32,
                soft: rng.gen_range(0.5f32..3.0),
                color,
            });
        }
    }

    let lattice_w = width / LATTICE_CELL + 2;
    let lattice_h = height / LATTICE_CELL + 2;
    let lattice = (0..lattice_w * lattice_h).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let noise_amp = rng.gen_range(0.01f32..0.035);

    SceneSpec {
        c0,
        c1,
        dir,
        sin_freq,
        sin_phase,
        sin_amp,
        shapes,
        lattice_w,
        lattice_h,
        lattice,
        noise_amp,
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl SceneSpec {
    fn value_noise(&self, x: usize, y: usize) -> f32 {
        let fx = x as f32 / LATTICE_CELL as f32;
        let fy = y as f32 / LATTICE_CELL as f32;
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        let tx = fx - ix as f32;
        let ty = fy - iy as f32;
        let at = |gx: usize, gy: usize| {
            self.lattice[(gy.min(self.lattice_h - 1)) * self.lattice_w + gx.min(self.lattice_w - 1)]
        };
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    fn pixel(&self, x: usize, y: usize, width: usize, height: usize) -> [f32; 3] {
        let u = x as f32 + 0.5;
        let v = y as f32 + 0.5;
        // Smooth base gradient along a random direction.
        let proj = (u * self.dir.0 + v * self.dir.1)
            / (width as f32 * self.dir.0.abs() + height as f32 * self.dir.1.abs()).max(1.0);
        let t = proj.clamp(-1.0, 1.0) * 0.5 + 0.5;
        let s = self.sin_amp * (u * self.sin_freq.0 + v * self.sin_freq.1 + self.sin_phase).sin();
        let mut px = [0.0f32; 3];
        for c in 0..3 {
            px[c] = self.c0[c] * (1.0 - t) + self.c1[c] * t + s;
        }
        // Composite shapes in draw order.
        for shape in &self.shapes {
            match *shape {
                Shape::Rect { x0, y0, x1, y1, color } => {
                    if u >= x0 && u < x1 && v >= y0 && v < y1 {
                        px = color;
                    }
                }
                Shape::Disk { cx, cy, r, soft, color } => {
                    let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                    if d < r + soft {
                        let a = 1.0 - smoothstep(r - soft, r + soft, d);
                        for c in 0..3 {
                            px[c] = px[c] * (1.0 - a) + color[c] * a;
                        }
                    }
                }
            }
        }
        // Fine luminance texture.
        let n = self.noise_amp * self.value_noise(x, y);
        for c in px.iter_mut() {
            *c = (*c + n).clamp(0.0, 1.0);
        }
        px
    }
}

/// Procedural test scene: a smooth gradient, random rectangles and disks,
/// and fine value-noise texture. Deterministic in `seed`; values in [0, 1].
pub fn synthesize_scene(width: usize, height: usize, seed: u64) -> LinearImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = draw_scene_spec(width, height, &mut rng);
    let mut img = LinearImage::new(width, height, 3, Colorspace::Linear);
    Par::for_each_chunk_mut(&mut img.data, width * 3, |y, row| {
        for x in 0..width {
            let px = spec.pixel(x, y, width, height);
            row[x * 3..x * 3 + 3].copy_from_slice(&px);
        }
    });
    img
}

/// Sample a full-color scene through a CFA: each site keeps the channel the
/// filter admits. The result is a photon-rate mosaic in [0, 1].
pub fn mosaic_scene(scene: &LinearImage, pattern: CfaPattern) -> Result<Mosaic> {
    if scene.channels != 3 {
        return Err(Error::Dimension(format!("expected 3 channels, got {}", scene.channels)));
    }
    let (w, h) = (scene.width, scene.height);
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = match pattern.color_at(y, x) {
                CfaColor::Red => 0,
                CfaColor::Green => 1,
                CfaColor::Blue => 2,
            };
            data[y * w + x] = scene.get(y, x, c);
        }
    }
    Ok(Mosaic { width: w, height: h, pattern, data })
}

fn expose_impl<E: Executor>(
    rates: &Mosaic,
    exposure_frac: f64,
    params: &SensorNoiseParams,
    seed: u64,
) -> Result<BayerImage> {
    if !(exposure_frac > 0.0 && exposure_frac <= 1.0) {
        return Err(Error::Parameter(format!(
            "exposure fraction must be in (0, 1], got {exposure_frac}"
        )));
    }
    params.validate()?;
    let (w, h) = (rates.width, rates.height);
    let black = params.black_level as f64;
    let white = params.white_level as f64;
    let gain = (white - black) / params.full_well_photons;
    let read_noise = params.read_noise_dn;
    let full_well = params.full_well_photons;
    let src = &rates.data;

    let mut data = vec![0u16; w * h];
    // One ChaCha stream per row keeps parallel and sequential runs identical.
    E::for_each_chunk_mut(&mut data, w, |y, row| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(y as u64);
        let normal = Normal::new(0.0f64, read_noise.max(f64::MIN_POSITIVE)).unwrap();
        for (x, out) in row.iter_mut().enumerate() {
            let rate = src[y * w + x].max(0.0) as f64;
            let lambda = rate * full_well * exposure_frac;
            let photons = if lambda > 0.0 {
                Poisson::new(lambda).unwrap().sample(&mut rng)
            } else {
                0.0
            };
            let read = if read_noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let dn = black + photons * gain + read;
            *out = dn.clamp(0.0, white).round() as u16;
        }
    });

    let meta = SensorMeta {
        black_level: params.black_level,
        white_level: params.white_level,
        exposure_s: exposure_frac,
        iso: 1600,
    };
    BayerImage::new(w, h, rates.pattern, meta, data)
}

/// Simulate a capture of `rates` at a fraction of the reference exposure:
/// shot noise per site plus Gaussian read noise, quantized to u16 DN.
pub fn expose(
    rates: &Mosaic,
    exposure_frac: f64,
    params: &SensorNoiseParams,
    seed: u64,
) -> Result<BayerImage> {
    expose_impl::<Par>(rates, exposure_frac, params, seed)
}

/// Sequential twin of [`expose`] for benchmarking the fallback.
pub fn expose_seq(
    rates: &Mosaic,
    exposure_frac: f64,
    params: &SensorNoiseParams,
    seed: u64,
) -> Result<BayerImage> {
    expose_impl::<Seq>(rates, exposure_frac, params, seed)
}

/// Noise-free full-exposure conversion of a rate mosaic to DN. Used for the
/// long-exposure reference side of a pair.
pub fn clean_frame(rates: &Mosaic, params: &SensorNoiseParams) -> Result<BayerImage> {
    params.validate()?;
    let black = params.black_level as f64;
    let white = params.white_level as f64;
    let data: Vec<u16> = rates
        .data
        .iter()
        .map(|&r| {
            let dn = black + (r.max(0.0) as f64) * (white - black);
            dn.clamp(0.0, white).round() as u16
        })
        .collect();
    let meta = SensorMeta {
        black_level: params.black_level,
        white_level: params.white_level,
        exposure_s: 1.0,
        iso: 100,
    };
    BayerImage::new(rates.width, rates.height, rates.pattern, meta, data)
}

/// Everything [`make_dataset`] needs to know about the synthetic pairs.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub ratios: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub pattern: CfaPattern,
    pub noise: SensorNoiseParams,
    pub isp: IspConfig,
}

/// Generate paired (noisy short-exposure `.braw`, clean reference PPM) data
/// and write a manifest describing the pairs. Fully deterministic in
/// `noise.seed`.
pub fn make_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    if cfg.ratios.is_empty() {
        return Err(Error::Parameter("ratio list must not be empty".into()));
    }
    for &r in &cfg.ratios {
        if !(r >= 1.0 && r.is_finite()) {
            return Err(Error::Parameter(format!("amplification ratio must be >= 1, got {r}")));
        }
    }
    cfg.noise.validate()?;
    cfg.isp.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut rows = Vec::with_capacity(cfg.n_scenes * cfg.ratios.len());
    for scene_idx in 0..cfg.n_scenes {
        let scene_seed = derive_seed(cfg.noise.seed, scene_idx as u64, 0);
        let scene = synthesize_scene(cfg.width, cfg.height, scene_seed);
        let rates = mosaic_scene(&scene, cfg.pattern)?;

        let reference = clean_frame(&rates, &cfg.noise)?;
        let ref_srgb = run_pipeline(&reference, &cfg.isp, 1.0)?;
        let ref_name = format!("reference_{scene_idx:04}.ppm");
        write_ppm(&ref_srgb, &out_dir.join(&ref_name))?;

        for (ratio_idx, &ratio) in cfg.ratios.iter().enumerate() {
            let noise_seed = derive_seed(cfg.noise.seed, scene_idx as u64, 1 + ratio_idx as u64);
            let noisy = expose(&rates, 1.0 / ratio, &cfg.noise, noise_seed)?;
            let noisy_name = format!("noisy_{scene_idx:04}_x{ratio}.braw");
            crate::raw::write_braw(&noisy, &out_dir.join(&noisy_name))?;
            rows.push(ManifestRow {
                noisy: noisy_name,
                reference: ref_name.clone(),
                ratio,
                seed: noise_seed,
            });
        }
    }

    let manifest = Manifest { rows };
    write_manifest(&manifest, &out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_deterministic_and_bounded() {
        let a = synthesize_scene(32, 32, 99);
        let b = synthesize_scene(32, 32, 99);
        assert_eq!(a.data, b.data);
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = synthesize_scene(32, 32, 100);
        assert_ne!(a.data, c.data, "distinct seeds must differ");
    }

    #[test]
    fn scene_bounded_many_seeds() {
        for seed in 0..1000 {
            let img = synthesize_scene(16, 16, seed);
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)), "seed {seed}");
        }
    }

    #[test]
    fn mosaic_of_gray_is_constant() {
        let mut scene = LinearImage::new(8, 8, 3, Colorspace::Linear);
        for v in scene.data.iter_mut() {
            *v = 0.4;
        }
        let m = mosaic_scene(&scene, CfaPattern::Rggb).unwrap();
        assert_eq!((m.width, m.height), (8, 8));
        assert!(m.data.iter().all(|&v| (v - 0.4).abs() < 1e-7));
    }

    #[test]
    fn expose_zero_rate_hits_black_level() {
        let rates = Mosaic { width: 8, height: 8, pattern: CfaPattern::Rggb, data: vec![0.0; 64] };
        let params = SensorNoiseParams { read_noise_dn: 0.0, ..Default::default() };
        let img = expose(&rates, 1.0, &params, 5).unwrap();
        assert!(img.data().iter().all(|&s| s == params.black_level));
    }

    #[test]
    fn expose_deterministic_and_par_matches_seq() {
        let scene = synthesize_scene(16, 16, 3);
        let rates = mosaic_scene(&scene, CfaPattern::Bggr).unwrap();
        let params = SensorNoiseParams::default();
        let a = expose(&rates, 0.01, &params, 77).unwrap();
        let b = expose(&rates, 0.01, &params, 77).unwrap();
        let c = expose_seq(&rates, 0.01, &params, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = expose(&rates, 0.01, &params, 78).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn expose_rejects_bad_fraction() {
        let rates = Mosaic { width: 2, height: 2, pattern: CfaPattern::Rggb, data: vec![0.5; 4] };
        let params = SensorNoiseParams::default();
        assert!(expose(&rates, 0.0, &params, 1).is_err());
        assert!(expose(&rates, 1.5, &params, 1).is_err());
    }

    #[test]
    fn demosaic_of_smooth_scene_is_close() {
        // Mosaic then demosaic of a smooth scene should stay near the scene.
        let mut scene = LinearImage::new(64, 64, 3, Colorspace::Linear);
        for y in 0..64 {
            for x in 0..64 {
                scene.set(y, x, 0, 0.4 + 0.2 * (x as f32 / 17.0).sin());
                scene.set(y, x, 1, 0.5 + 0.2 * (y as f32 / 23.0).cos());
                scene.set(y, x, 2, 0.3 + 0.1 * ((x + y) as f32 / 29.0).sin());
            }
        }
        let rates = mosaic_scene(&scene, CfaPattern::Rggb).unwrap();
        let rgb = crate::isp::demosaic_mosaic(&rates);
        let mse: f64 = rgb
            .data
            .iter()
            .zip(&scene.data)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / rgb.data.len() as f64;
        let psnr = 10.0 * (1.0 / mse).log10();
        assert!(psnr > 40.0, "demosaic smoke PSNR too low: {psnr:.2} dB");
    }
}
