//! Binary PPM (P6, 8-bit) reader and writer for sRGB output images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raw::{Colorspace, LinearImage};

/// Write an sRGB image as binary PPM with maxval 255.
pub fn write_ppm(img: &LinearImage, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Dimension(format!("ppm requires 3 channels, got {}", img.channels)));
    }
    if img.colorspace != Colorspace::Srgb {
        return Err(Error::Parameter("ppm payload must be sRGB-encoded".into()));
    }
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.reserve(img.data.len());
    for &v in &img.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Read a binary PPM into an sRGB image with values in [0, 1].
pub fn read_ppm(path: &Path) -> Result<LinearImage> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let magic = next_token(&buf, &mut pos).ok_or_else(|| Error::format(path, "missing magic"))?;
    if magic != b"P6" {
        return Err(Error::format(path, "expected P6 magic"));
    }
    let width = parse_usize(&buf, &mut pos).ok_or_else(|| Error::format(path, "missing width"))?;
    let height = parse_usize(&buf, &mut pos).ok_or_else(|| Error::format(path, "missing height"))?;
    let maxval = parse_usize(&buf, &mut pos).ok_or_else(|| Error::format(path, "missing maxval"))?;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height * 3;
    if buf.len() < pos + expected {
        return Err(Error::format(path, "truncated pixel data"));
    }
    let mut img = LinearImage::new(width, height, 3, Colorspace::Srgb);
    for (v, &b) in img.data.iter_mut().zip(&buf[pos..pos + expected]) {
        *v = b as f32 / 255.0;
    }
    Ok(img)
}

fn next_token<'a>(buf: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    if *pos >= buf.len() {
        return None;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&buf[start..*pos])
}

fn parse_usize(buf: &[u8], pos: &mut usize) -> Option<usize> {
    let tok = next_token(buf, pos)?;
    std::str::from_utf8(tok).ok()?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut img = LinearImage::new(3, 2, 3, Colorspace::Srgb);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 13.0 % 256.0) / 255.0;
        }
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        // Byte-stable on rewrite.
        let b1 = std::fs::read(&path).unwrap();
        write_ppm(&back, &path).unwrap();
        assert_eq!(b1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn rejects_linear_payload() {
        let dir = tempfile::tempdir().unwrap();
        let img = LinearImage::new(2, 2, 3, Colorspace::Linear);
        assert!(write_ppm(&img, &dir.path().join("x.ppm")).is_err());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 2\n255\n0000").unwrap();
        assert!(matches!(read_ppm(&path), Err(Error::Format { .. })));
    }
}
