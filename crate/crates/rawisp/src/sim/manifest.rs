//! Dataset manifest: one tab-separated record per pair.
//!
//! Columns: noisy path, reference path, amplification ratio, RNG seed.
//! Paths are relative to the manifest's directory.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub noisy: String,
    pub reference: String,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Pair id used in reports and output file names: the noisy file stem.
    pub fn pair_id(row: &ManifestRow) -> String {
        Path::new(&row.noisy)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| row.noisy.clone())
    }

    /// Distinct ratios in first-appearance order.
    pub fn ratios(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for row in &self.rows {
            if !out.iter().any(|&r| r == row.ratio) {
                out.push(row.ratio);
            }
        }
        out
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut text = String::new();
    for row in &manifest.rows {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", row.noisy, row.reference, row.ratio, row.seed));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(
                path,
                format!("line {}: expected 4 tab-separated fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let ratio: f64 = fields[2]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad ratio {:?}", lineno + 1, fields[2])))?;
        let seed: u64 = fields[3]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad seed {:?}", lineno + 1, fields[3])))?;
        rows.push(ManifestRow {
            noisy: fields[0].to_string(),
            reference: fields[1].to_string(),
            ratio,
            seed,
        });
    }
    Ok(Manifest { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let m = Manifest {
            rows: vec![
                ManifestRow {
                    noisy: "noisy_0000_x100.braw".into(),
                    reference: "reference_0000.ppm".into(),
                    ratio: 100.0,
                    seed: 12345,
                },
                ManifestRow {
                    noisy: "noisy_0000_x300.braw".into(),
                    reference: "reference_0000.ppm".into(),
                    ratio: 300.0,
                    seed: 999,
                },
            ],
        };
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.ratios(), vec![100.0, 300.0]);
        assert_eq!(Manifest::pair_id(&back.rows[0]), "noisy_0000_x100");
    }

    #[test]
    fn rejects_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "a\tb\tc\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
