//! Bayer RAW containers and the preprocessing chain that feeds the model:
//! pack into four channels, subtract black level, amplify, upsample.

mod bicubic;
mod braw;

pub use bicubic::{bicubic_upsample, bicubic_upsample_seq};
pub use braw::{read_braw, write_braw};

use crate::error::{Error, Result};
use crate::exec::{Executor, Par};

/// Color of a single CFA site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaColor {
    Red,
    Green,
    Blue,
}

/// 2x2 Bayer color filter array layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl CfaPattern {
    pub const ALL: [CfaPattern; 4] =
        [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg];

    /// Wire code used by the `.braw` container.
    pub fn code(self) -> u8 {
        match self {
            CfaPattern::Rggb => 0,
            CfaPattern::Bggr => 1,
            CfaPattern::Grbg => 2,
            CfaPattern::Gbrg => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(CfaPattern::Rggb),
            1 => Ok(CfaPattern::Bggr),
            2 => Ok(CfaPattern::Grbg),
            3 => Ok(CfaPattern::Gbrg),
            other => Err(Error::Parameter(format!("unknown CFA pattern code {other}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rggb" => Ok(CfaPattern::Rggb),
            "bggr" => Ok(CfaPattern::Bggr),
            "grbg" => Ok(CfaPattern::Grbg),
            "gbrg" => Ok(CfaPattern::Gbrg),
            other => Err(Error::Parameter(format!("unknown CFA pattern \"{other}\""))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CfaPattern::Rggb => "rggb",
            CfaPattern::Bggr => "bggr",
            CfaPattern::Grbg => "grbg",
            CfaPattern::Gbrg => "gbrg",
        }
    }

    /// Color recorded at absolute pixel position (y, x).
    pub fn color_at(self, y: usize, x: usize) -> CfaColor {
        let (dy, dx) = (y % 2, x % 2);
        let sites = self.channel_sites();
        if (dy, dx) == sites[0] {
            CfaColor::Red
        } else if (dy, dx) == sites[2] {
            CfaColor::Blue
        } else {
            CfaColor::Green
        }
    }

    /// Positions of the canonical channels [R, Gr, B, Gb] inside the 2x2
    /// tile, as (dy, dx). Gr is the green sharing a row with red, Gb the
    /// green sharing a row with blue.
    pub fn channel_sites(self) -> [(usize, usize); 4] {
        match self {
            CfaPattern::Rggb => [(0, 0), (0, 1), (1, 1), (1, 0)],
            CfaPattern::Bggr => [(1, 1), (1, 0), (0, 0), (0, 1)],
            CfaPattern::Grbg => [(0, 1), (0, 0), (1, 0), (1, 1)],
            CfaPattern::Gbrg => [(1, 0), (1, 1), (0, 1), (0, 0)],
        }
    }
}

/// Sensor metadata carried alongside the mosaic samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorMeta {
    pub black_level: u16,
    pub white_level: u16,
    pub exposure_s: f64,
    pub iso: u32,
}

impl Default for SensorMeta {
    fn default() -> Self {
        SensorMeta { black_level: 512, white_level: 16383, exposure_s: 1.0, iso: 100 }
    }
}

/// Single-channel CFA mosaic of raw sensor samples (digital numbers).
#[derive(Debug, Clone, PartialEq)]
pub struct BayerImage {
    width: usize,
    height: usize,
    pattern: CfaPattern,
    meta: SensorMeta,
    data: Vec<u16>,
}

impl BayerImage {
    pub fn new(
        width: usize,
        height: usize,
        pattern: CfaPattern,
        meta: SensorMeta,
        data: Vec<u16>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Dimension(format!(
                "Bayer dimensions must be even and non-zero, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "sample count {} does not match {width}x{height}",
                data.len()
            )));
        }
        if meta.black_level >= meta.white_level {
            return Err(Error::Parameter(format!(
                "black level {} must be below white level {}",
                meta.black_level, meta.white_level
            )));
        }
        if let Some(s) = data.iter().find(|&&s| s > meta.white_level) {
            return Err(Error::Parameter(format!(
                "sample {s} exceeds white level {}",
                meta.white_level
            )));
        }
        Ok(BayerImage { width, height, pattern, meta, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pattern(&self) -> CfaPattern {
        self.pattern
    }

    pub fn meta(&self) -> SensorMeta {
        self.meta
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn sample(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// Half-resolution 4-channel image in canonical R-Gr-B-Gb order.
/// Values are raw DN straight after [`pack_bayer`] and linear scene-referred
/// after [`normalize_amplify`]. Stored interleaved, `(y * width + x) * 4 + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRaw {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub amplification: f32,
}

impl PackedRaw {
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 4 + c]
    }
}

/// Color space tag for [`LinearImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colorspace {
    Linear,
    Srgb,
}

/// Dense float image, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub colorspace: Colorspace,
    pub data: Vec<f32>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, channels: usize, colorspace: Colorspace) -> Self {
        LinearImage { width, height, channels, colorspace, data: vec![0.0; width * height * channels] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Repack interleaved storage into planar `[C, H, W]` order.
    pub fn to_planar(&self) -> Vec<f32> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0f32; w * h * c];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch * h + y) * w + x] = self.get(y, x, ch);
                }
            }
        }
        out
    }

    /// Inverse of [`LinearImage::to_planar`].
    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        colorspace: Colorspace,
        planar: &[f32],
    ) -> Result<Self> {
        if planar.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "planar buffer length {} does not match {channels}x{height}x{width}",
                planar.len()
            )));
        }
        let mut img = LinearImage::new(width, height, channels, colorspace);
        for ch in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.set(y, x, ch, planar[(ch * height + y) * width + x]);
                }
            }
        }
        Ok(img)
    }
}

/// Float-valued CFA plane: photon rates from the simulator or normalized DN
/// inside the classical pipeline. Same geometry as [`BayerImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub width: usize,
    pub height: usize,
    pub pattern: CfaPattern,
    pub data: Vec<f32>,
}

impl Mosaic {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Rearrange a Bayer mosaic into the packed R-Gr-B-Gb representation at half
/// resolution. Values stay raw DN; normalization is a separate step.
pub fn pack_bayer(img: &BayerImage) -> Result<PackedRaw> {
    if img.width % 2 != 0 || img.height % 2 != 0 {
        return Err(Error::Dimension(format!(
            "packing requires even dimensions, got {}x{}",
            img.width, img.height
        )));
    }
    let (pw, ph) = (img.width / 2, img.height / 2);
    let sites = img.pattern.channel_sites();
    let src = &img.data;
    let src_w = img.width;
    let mut data = vec![0.0f32; pw * ph * 4];
    Par::for_each_chunk_mut(&mut data, pw * 4, |y, row| {
        for x in 0..pw {
            for (c, &(dy, dx)) in sites.iter().enumerate() {
                row[x * 4 + c] = src[(2 * y + dy) * src_w + (2 * x + dx)] as f32;
            }
        }
    });
    Ok(PackedRaw { width: pw, height: ph, data, amplification: 1.0 })
}

/// Exact inverse of [`pack_bayer`] for packed images that still hold raw DN.
/// Used as the round-trip oracle for the packing step.
pub fn remosaic(packed: &PackedRaw, pattern: CfaPattern, meta: SensorMeta) -> Result<BayerImage> {
    let (w, h) = (packed.width * 2, packed.height * 2);
    if packed.data.len() != packed.width * packed.height * 4 {
        return Err(Error::Dimension(format!(
            "packed buffer length {} does not match {}x{}x4",
            packed.data.len(),
            packed.width,
            packed.height
        )));
    }
    let sites = pattern.channel_sites();
    let mut data = vec![0u16; w * h];
    for y in 0..packed.height {
        for x in 0..packed.width {
            for (c, &(dy, dx)) in sites.iter().enumerate() {
                data[(2 * y + dy) * w + (2 * x + dx)] = packed.get(y, x, c).round() as u16;
            }
        }
    }
    BayerImage::new(w, h, pattern, meta, data)
}

/// The full model-side preprocessing chain: pack into R-Gr-B-Gb, subtract
/// the frame's black level and amplify, then bicubic-upsample back to the
/// original resolution.
pub fn preprocess(img: &BayerImage, alpha: f32) -> Result<LinearImage> {
    let packed = pack_bayer(img)?;
    let meta = img.meta();
    let normed = normalize_amplify(&packed, meta.black_level, meta.white_level, alpha)?;
    bicubic_upsample(&normed, 2)
}

/// Subtract the black level (clamping at zero), rescale to the sensor's
/// dynamic range and apply the amplification factor. No upper clamp: the
/// downstream model sees amplified linear data.
pub fn normalize_amplify(
    packed: &PackedRaw,
    black_level: u16,
    white_level: u16,
    alpha: f32,
) -> Result<PackedRaw> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::Parameter(format!("amplification must be positive, got {alpha}")));
    }
    if black_level >= white_level {
        return Err(Error::Parameter(format!(
            "black level {black_level} must be below white level {white_level}"
        )));
    }
    let black = black_level as f32;
    let range = (white_level - black_level) as f32;
    let src = &packed.data;
    let mut data = vec![0.0f32; src.len()];
    let row_len = packed.width * 4;
    Par::for_each_chunk_mut(&mut data, row_len, |y, row| {
        let src_row = &src[y * row_len..(y + 1) * row_len];
        for (out, &dn) in row.iter_mut().zip(src_row) {
            *out = alpha * (dn - black).max(0.0) / range;
        }
    });
    Ok(PackedRaw { width: packed.width, height: packed.height, data, amplification: alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> SensorMeta {
        SensorMeta::default()
    }

    #[test]
    fn pack_rggb_tile() {
        let img =
            BayerImage::new(2, 2, CfaPattern::Rggb, meta(), vec![1000, 800, 700, 400]).unwrap();
        let p = pack_bayer(&img).unwrap();
        assert_eq!(p.width, 1);
        assert_eq!(p.height, 1);
        assert_eq!(p.data, vec![1000.0, 800.0, 400.0, 700.0]);
    }

    #[test]
    fn pack_bggr_canonicalizes() {
        let img =
            BayerImage::new(2, 2, CfaPattern::Bggr, meta(), vec![400, 700, 800, 1000]).unwrap();
        let p = pack_bayer(&img).unwrap();
        assert_eq!(p.data, vec![1000.0, 800.0, 400.0, 700.0]);
    }

    #[test]
    fn remosaic_inverts_pack() {
        let p = PackedRaw { width: 1, height: 1, data: vec![1000.0, 800.0, 400.0, 700.0], amplification: 1.0 };
        let img = remosaic(&p, CfaPattern::Rggb, meta()).unwrap();
        assert_eq!(img.data(), &[1000, 800, 700, 400]);
    }

    #[test]
    fn remosaic_zero_frame() {
        let p = PackedRaw { width: 2, height: 2, data: vec![0.0; 16], amplification: 1.0 };
        let img = remosaic(&p, CfaPattern::Gbrg, meta()).unwrap();
        assert!(img.data().iter().all(|&s| s == 0));
    }

    #[test]
    fn roundtrip_all_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pattern in CfaPattern::ALL {
            for _ in 0..25 {
                let data: Vec<u16> = (0..64 * 64).map(|_| rng.gen_range(0..=16383)).collect();
                let img = BayerImage::new(64, 64, pattern, meta(), data).unwrap();
                let back = remosaic(&pack_bayer(&img).unwrap(), pattern, meta()).unwrap();
                assert_eq!(back, img, "roundtrip failed for {pattern:?}");
            }
        }
    }

    #[test]
    fn odd_dimensions_rejected() {
        let err = BayerImage::new(3, 2, CfaPattern::Rggb, meta(), vec![0; 6]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn normalize_reference_values() {
        let p = PackedRaw { width: 1, height: 1, data: vec![600.0, 500.0, 600.0, 512.0], amplification: 1.0 };
        let n = normalize_amplify(&p, 512, 16383, 1.0).unwrap();
        assert!((n.data[0] - (600.0 - 512.0) / 15871.0).abs() < 1e-9);
        assert_eq!(n.data[1], 0.0, "below black level clamps to zero");
        let n100 = normalize_amplify(&p, 512, 16383, 100.0).unwrap();
        assert!((n100.data[0] - 0.554470).abs() < 1e-4);
    }

    #[test]
    fn normalize_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..256).map(|_| rng.gen_range(0.0..16383.0)).collect();
        let p = PackedRaw { width: 8, height: 8, data, amplification: 1.0 };
        let a = normalize_amplify(&p, 512, 16383, 3.0).unwrap();
        let b = normalize_amplify(&p, 512, 16383, 1.0).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - 3.0 * y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_rejects_bad_alpha() {
        let p = PackedRaw { width: 1, height: 1, data: vec![0.0; 4], amplification: 1.0 };
        assert!(matches!(normalize_amplify(&p, 512, 16383, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(normalize_amplify(&p, 512, 16383, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn color_at_matches_sites() {
        for pattern in CfaPattern::ALL {
            let sites = pattern.channel_sites();
            assert_eq!(pattern.color_at(sites[0].0, sites[0].1), CfaColor::Red);
            assert_eq!(pattern.color_at(sites[1].0, sites[1].1), CfaColor::Green);
            assert_eq!(pattern.color_at(sites[2].0, sites[2].1), CfaColor::Blue);
            assert_eq!(pattern.color_at(sites[3].0, sites[3].1), CfaColor::Green);
        }
    }

    #[test]
    fn planar_roundtrip() {
        let mut img = LinearImage::new(3, 2, 4, Colorspace::Linear);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        let planar = img.to_planar();
        let back = LinearImage::from_planar(3, 2, 4, Colorspace::Linear, &planar).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn samples_above_white_rejected() {
        let err = BayerImage::new(2, 2, CfaPattern::Rggb, meta(), vec![0, 0, 0, 20000]).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }
}
