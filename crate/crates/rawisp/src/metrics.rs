//! PSNR and SSIM, plus batch evaluation of model outputs against references.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::{Executor, Par, Seq};
use crate::isp::read_ppm;
use crate::raw::LinearImage;
use crate::sim::Manifest;

/// PSNR values are capped here so identical images do not skew averages.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB over all pixels and channels.
/// Returns the 100 dB cap when the MSE vanishes.
pub fn psnr(a: &LinearImage, b: &LinearImage, max_val: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean structural similarity over sliding Gaussian-weighted windows
/// (11x11, sigma 1.5, K1=0.01, K2=0.03, L=1), computed on the channel-mean
/// grayscale image.
pub fn ssim(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    ssim_impl::<Par>(a, b)
}

/// Sequential twin of [`ssim`] for benchmarking the fallback.
pub fn ssim_seq(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    ssim_impl::<Seq>(a, b)
}

fn ssim_impl<E: Executor>(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let ga = grayscale(a);
    let gb = grayscale(b);
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let half = SSIM_WINDOW / 2;
    let rows = h - SSIM_WINDOW + 1;
    let cols = w - SSIM_WINDOW + 1;
    let _ = half;

    // Per-row partial sums, reduced in index order for determinism.
    let partials: Vec<f64> = E::map_indexed(rows, |wy| {
        let mut acc = 0.0f64;
        for wx in 0..cols {
            let mut mu_x = 0.0f64;
            let mut mu_y = 0.0f64;
            let mut xx = 0.0f64;
            let mut yy = 0.0f64;
            let mut xy = 0.0f64;
            for ky in 0..SSIM_WINDOW {
                let row_off = (wy + ky) * w + wx;
                let krow = &kernel[ky * SSIM_WINDOW..(ky + 1) * SSIM_WINDOW];
                for kx in 0..SSIM_WINDOW {
                    let kw = krow[kx];
                    let x = ga[row_off + kx];
                    let y = gb[row_off + kx];
                    mu_x += kw * x;
                    mu_y += kw * y;
                    xx += kw * (x * x);
                    yy += kw * (y * y);
                    // Parenthesized so the accumulation is bitwise symmetric
                    // in the two images.
                    xy += kw * (x * y);
                }
            }
            let var_x = xx - mu_x * mu_x;
            let var_y = yy - mu_y * mu_y;
            let cov = xy - mu_x * mu_y;
            let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            acc += num / den;
        }
        acc
    });
    let total: f64 = partials.iter().sum();
    Ok(total / (rows * cols) as f64)
}

fn grayscale(img: &LinearImage) -> Vec<f64> {
    let c = img.channels;
    img.data
        .chunks(c)
        .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
        .collect()
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut k = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -half..=half {
        for x in -half..=half {
            let d2 = (x * x + y * y) as f64;
            k.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn check_same_shape(a: &LinearImage, b: &LinearImage) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::Dimension(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// One evaluated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub ratio: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Aggregate over all pairs sharing an amplification ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSummary {
    pub ratio: f64,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub records: Vec<PairRecord>,
    pub summaries: Vec<RatioSummary>,
}

impl EvalReport {
    pub fn from_records(records: Vec<PairRecord>) -> Self {
        let mut ratios: Vec<f64> = Vec::new();
        for r in &records {
            if !ratios.iter().any(|&x| x == r.ratio) {
                ratios.push(r.ratio);
            }
        }
        let summaries = ratios
            .into_iter()
            .map(|ratio| {
                let group: Vec<&PairRecord> = records.iter().filter(|r| r.ratio == ratio).collect();
                let n = group.len() as f64;
                RatioSummary {
                    ratio,
                    count: group.len(),
                    mean_psnr: group.iter().map(|r| r.psnr_db).sum::<f64>() / n,
                    mean_ssim: group.iter().map(|r| r.ssim).sum::<f64>() / n,
                }
            })
            .collect();
        EvalReport { records, summaries }
    }

    pub fn summary_for(&self, ratio: f64) -> Option<&RatioSummary> {
        self.summaries.iter().find(|s| s.ratio == ratio)
    }

    /// Tab-separated report: per-pair rows, then `mean` rows per ratio.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("pair_id\tratio\tpsnr_db\tssim\n");
        for r in &self.records {
            text.push_str(&format!("{}\t{}\t{:.4}\t{:.6}\n", r.pair_id, r.ratio, r.psnr_db, r.ssim));
        }
        for s in &self.summaries {
            text.push_str(&format!("mean\t{}\t{:.4}\t{:.6}\n", s.ratio, s.mean_psnr, s.mean_ssim));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>8} {:>10} {:>8}", "pair", "ratio", "psnr(dB)", "ssim")?;
        for r in &self.records {
            writeln!(f, "{:<28} {:>8} {:>10.2} {:>8.4}", r.pair_id, r.ratio, r.psnr_db, r.ssim)?;
        }
        for s in &self.summaries {
            writeln!(
                f,
                "{:<28} {:>8} {:>10.2} {:>8.4}",
                format!("mean of {} pairs", s.count),
                s.ratio,
                s.mean_psnr,
                s.mean_ssim
            )?;
        }
        Ok(())
    }
}

/// Compare one output image per manifest pair against its reference.
/// Outputs are looked up as `<outputs_dir>/<pair_id>.ppm`.
pub fn evaluate(manifest: &Manifest, manifest_dir: &Path, outputs_dir: &Path) -> Result<EvalReport> {
    let results: Vec<Result<PairRecord>> = Par::map_indexed(manifest.rows.len(), |i| {
        let row = &manifest.rows[i];
        let pair_id = Manifest::pair_id(row);
        let out_path = outputs_dir.join(format!("{pair_id}.ppm"));
        if !out_path.exists() {
            return Err(Error::Validation(format!(
                "missing output image for pair {pair_id}: {}",
                out_path.display()
            )));
        }
        let reference = read_ppm(&manifest_dir.join(&row.reference))?;
        let output = read_ppm(&out_path)?;
        Ok(PairRecord {
            pair_id,
            ratio: row.ratio,
            psnr_db: psnr(&output, &reference, 1.0)?,
            ssim: ssim(&output, &reference)?,
        })
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }
    Ok(EvalReport::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::Colorspace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(w: usize, h: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> LinearImage {
        let mut img = LinearImage::new(w, h, 3, Colorspace::Srgb);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(y, x, c, f(y, x, c));
                }
            }
        }
        img
    }

    #[test]
    fn psnr_identical_capped() {
        let a = image(8, 8, |y, x, c| (y + x + c) as f32 / 20.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_constant_offset_is_twenty() {
        let a = image(16, 16, |_, _, _| 0.0);
        let b = image(16, 16, |_, _, _| 0.1);
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-6, "psnr {v}");
    }

    #[test]
    fn psnr_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = image(12, 9, |_, _, _| rng.gen_range(0.0..1.0));
        let b = image(12, 9, |_, _, _| rng.gen_range(0.0..1.0));
        // Naive oracle: accumulate the sum first, divide later.
        let mut sum = 0.0f64;
        for (x, y) in a.data.iter().zip(&b.data) {
            sum += (*x as f64 - *y as f64).powi(2);
        }
        let mse = sum / a.data.len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn psnr_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = image(13, 11, |_, _, _| rng.gen_range(0.0..1.0));
        let b = image(13, 11, |_, _, _| rng.gen_range(0.0..1.0));
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = image(8, 8, |_, _, _| 0.0);
        let b = image(8, 9, |_, _, _| 0.0);
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = image(16, 16, |_, _, _| rng.gen_range(0.0..1.0));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_checkerboard_negative() {
        let a = image(16, 16, |y, x, _| ((x + y) % 2) as f32);
        let b = image(16, 16, |y, x, _| 1.0 - ((x + y) % 2) as f32);
        let v = ssim(&a, &b).unwrap();
        assert!(v < 0.0, "expected strongly negative ssim, got {v}");
    }

    #[test]
    fn ssim_tiny_noise_stays_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = image(16, 16, |_, _, _| 0.5);
        let b = image(16, 16, |_, _, _| 0.5 + rng.gen_range(-0.003f32..0.003));
        let v = ssim(&a, &b).unwrap();
        assert!(v > 0.9 && v < 1.0, "ssim {v}");
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = image(14, 14, |_, _, _| rng.gen_range(0.0..1.0));
            let b = image(14, 14, |_, _, _| rng.gen_range(0.0..1.0));
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn ssim_window_too_large() {
        let a = image(8, 8, |_, _, _| 0.5);
        assert!(matches!(ssim(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_par_matches_seq() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = image(24, 20, |_, _, _| rng.gen_range(0.0..1.0));
        let b = image(24, 20, |_, _, _| rng.gen_range(0.0..1.0));
        assert_eq!(ssim(&a, &b).unwrap(), ssim_seq(&a, &b).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = image(16, 16, |y, x, _| ((x * 3 + y * 5) % 17) as f32 / 17.0);
        let mut last = f64::INFINITY;
        for sigma in [0.01f32, 0.05, 0.1] {
            let noisy = LinearImage {
                data: base
                    .data
                    .iter()
                    .map(|&v| v + sigma * rng.gen_range(-1.0f32..1.0))
                    .collect(),
                ..base.clone()
            };
            let v = psnr(&base, &noisy, 1.0).unwrap();
            assert!(v < last, "psnr must decrease with noise: {v} !< {last}");
            last = v;
        }
    }
}
