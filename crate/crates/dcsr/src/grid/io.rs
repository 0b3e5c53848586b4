//! Dataset container format shared by all modules.
//!
//! A dataset directory holds `manifest.json` (resolution, count, domain
//! length, provenance tag, dtype) and `data.bin` with `count * resolution`
//! little-endian f64 values, sample-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Field, ProvenanceTag};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub resolution: usize,
    pub count: usize,
    pub domain_length: f64,
    pub tag: ProvenanceTag,
    pub dtype: String,
}

pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        resolution: data.resolution(),
        count: data.len(),
        domain_length: data.fields()[0].domain_length(),
        tag: data.tag().clone(),
        dtype: "f64le".to_string(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut bytes = Vec::with_capacity(data.len() * data.resolution() * 8);
    for f in data.fields() {
        for v in f.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join("data.bin"), bytes)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.dtype != "f64le" {
        return Err(Error::invalid(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }
    let bytes = fs::read(dir.join("data.bin"))?;
    let expected = manifest.count * manifest.resolution * 8;
    if bytes.len() != expected {
        return Err(Error::invalid(format!(
            "data.bin has {} bytes, manifest expects {expected}",
            bytes.len()
        )));
    }
    let mut fields = Vec::with_capacity(manifest.count);
    for s in 0..manifest.count {
        let start = s * manifest.resolution * 8;
        let values = (0..manifest.resolution)
            .map(|i| {
                let off = start + i * 8;
                f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
            })
            .collect();
        fields.push(Field::new(values, manifest.domain_length)?);
    }
    Dataset::new(fields, manifest.tag)
}

/// One row per sample, header `x0,x1,...`.
pub fn export_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    let header: Vec<String> = (0..data.resolution()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for f in data.fields() {
        let row: Vec<String> = f.values().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn dataset_round_trip() {
        let mut rng = crate::seeds::stream(11, &[]);
        let fields: Vec<Field> = (0..5)
            .map(|_| {
                Field::from_values((0..16).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
            })
            .collect();
        let tag = ProvenanceTag::new("lf", "white", 11);
        let data = Dataset::new(fields, tag).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_dataset(&data, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();

        assert_eq!(back.tag(), data.tag());
        assert_eq!(back.len(), data.len());
        for (a, b) in back.fields().iter().zip(data.fields()) {
            assert_eq!(a.values(), b.values());
        }
    }
}
