//! The `.braw` container: a minimal little-endian RAW file.
//!
//! Layout: magic `BRAW`, version u16 (=1), width u32, height u32, pattern u8
//! (0=RGGB 1=BGGR 2=GRBG 3=GBRG), black_level u16, white_level u16,
//! exposure_us u64, iso u32, then height*width u16 samples row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raw::{BayerImage, CfaPattern, SensorMeta};

const MAGIC: &[u8; 4] = b"BRAW";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 2 + 2 + 8 + 4;

pub fn write_braw(img: &BayerImage, path: &Path) -> Result<()> {
    let meta = img.meta();
    let mut buf = Vec::with_capacity(HEADER_LEN + img.data().len() * 2);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(img.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(img.height() as u32).to_le_bytes());
    buf.push(img.pattern().code());
    buf.extend_from_slice(&meta.black_level.to_le_bytes());
    buf.extend_from_slice(&meta.white_level.to_le_bytes());
    let exposure_us = (meta.exposure_s * 1e6).round() as u64;
    buf.extend_from_slice(&exposure_us.to_le_bytes());
    buf.extend_from_slice(&meta.iso.to_le_bytes());
    for &s in img.data() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn read_braw(path: &Path) -> Result<BayerImage> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &buf[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected BRAW"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}, expected {VERSION}")));
    }
    let width = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
    let pattern = CfaPattern::from_code(buf[14])
        .map_err(|e| Error::format(path, e.to_string()))?;
    let black_level = u16::from_le_bytes([buf[15], buf[16]]);
    let white_level = u16::from_le_bytes([buf[17], buf[18]]);
    let exposure_us = u64::from_le_bytes(buf[19..27].try_into().unwrap());
    let iso = u32::from_le_bytes(buf[27..31].try_into().unwrap());

    let expected = HEADER_LEN + width * height * 2;
    if buf.len() != expected {
        return Err(Error::format(
            path,
            format!("payload length {} does not match {width}x{height} ({} expected)", buf.len(), expected),
        ));
    }
    let data: Vec<u16> = buf[HEADER_LEN..]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let meta = SensorMeta {
        black_level,
        white_level,
        exposure_s: exposure_us as f64 / 1e6,
        iso,
    };
    BayerImage::new(width, height, pattern, meta, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.braw");
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<u16> = (0..16 * 12).map(|_| rng.gen_range(0..=16383)).collect();
        let meta = SensorMeta { black_level: 512, white_level: 16383, exposure_s: 0.01, iso: 1600 };
        let img = BayerImage::new(16, 12, CfaPattern::Grbg, meta, data).unwrap();
        write_braw(&img, &path).unwrap();
        let back = read_braw(&path).unwrap();
        assert_eq!(back, img);

        // Re-writing must reproduce the same bytes.
        let bytes1 = std::fs::read(&path).unwrap();
        write_braw(&back, &path).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.braw");
        std::fs::write(&path, b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK").unwrap();
        assert!(matches!(read_braw(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.braw");
        let img = BayerImage::new(
            4,
            4,
            CfaPattern::Rggb,
            SensorMeta::default(),
            vec![100; 16],
        )
        .unwrap();
        write_braw(&img, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_braw(&path), Err(Error::Format { .. })));
    }
}
