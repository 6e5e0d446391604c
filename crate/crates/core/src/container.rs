//! On-disk image container: a directory of raw little-endian `f32` arrays
//! described by `manifest.json`. Every write bumps the manifest version and
//! keeps a `manifest.v<N>.json` snapshot of it.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Radiograph, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub version: u64,
    pub grid_size: usize,
    pub pixel_pitch: f64,
    pub roi_radius: f64,
    pub entries: Vec<Entry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Container {
    dir: PathBuf,
    manifest: Manifest,
}

pub fn write_raw_f32(path: &Path, data: &Array2<f64>) -> Result<u64> {
    let bytes: Vec<u8> = data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_raw_f32(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::InvalidInput(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            rows * cols * 4,
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::InvalidInput(e.to_string()))
}

impl Container {
    pub fn create(
        dir: &Path,
        grid_size: usize,
        pixel_pitch: f64,
        roi_radius: f64,
        metadata: serde_json::Value,
    ) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            version: 0,
            grid_size,
            pixel_pitch,
            roi_radius,
            entries: Vec::new(),
            metadata,
        };
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported container schema {}", manifest.schema_version)));
        }
        for e in &manifest.entries {
            if e.byte_length != (e.rows * e.cols * 4) as u64 {
                return Err(Error::InvalidInput(format!("entry {} has inconsistent byte length", e.name)));
            }
        }
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn metadata_mut(&mut self) -> &mut serde_json::Value {
        &mut self.manifest.metadata
    }

    pub fn contains(&self, name: &str) -> bool {
        self.manifest.entries.iter().any(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.entries.iter().map(|e| e.name.as_str())
    }

    /// Stores `data` under `name`, replacing any previous entry of that name.
    pub fn put_array(&mut self, name: &str, data: &Array2<f64>) -> Result<()> {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::InvalidInput(format!("invalid entry name '{name}'")));
        }
        let file = format!("{name}.f32");
        let byte_length = write_raw_f32(&self.dir.join(&file), data)?;
        let entry = Entry { name: name.to_string(), file, rows: data.nrows(), cols: data.ncols(), byte_length };
        match self.manifest.entries.iter_mut().find(|e| e.name == name) {
            Some(slot) => *slot = entry,
            None => self.manifest.entries.push(entry),
        }
        Ok(())
    }

    pub fn put_radiograph(&mut self, name: &str, r: &Radiograph) -> Result<()> {
        if r.size() != self.manifest.grid_size {
            return Err(Error::GridMismatch {
                expected: self.manifest.grid_size.to_string(),
                found: r.size().to_string(),
            });
        }
        self.put_array(name, r.data())
    }

    pub fn array(&self, name: &str) -> Result<Array2<f64>> {
        let e = self
            .manifest
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("container has no entry '{name}'")))?;
        read_raw_f32(&self.dir.join(&e.file), e.rows, e.cols)
    }

    pub fn radiograph(&self, name: &str) -> Result<Radiograph> {
        Radiograph::new(self.array(name)?, self.manifest.pixel_pitch, self.manifest.roi_radius)
    }

    /// Writes the manifest as the next version.
    pub fn commit(&mut self) -> Result<u64> {
        self.manifest.version += 1;
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.dir.join(format!("manifest.v{}.json", self.manifest.version)), &text)?;
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(self.manifest.version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let r = Radiograph::new(Array2::from_shape_fn((5, 5), |(i, j)| 0.1 * (i * 5 + j) as f64), 0.5, 1.0).unwrap();
        let mut c = Container::create(dir.path(), 5, 0.5, 1.0, serde_json::json!({"seed": 3})).unwrap();
        c.put_radiograph("d0", &r).unwrap();
        assert_eq!(c.commit().unwrap(), 1);
        let mut back = Container::open(dir.path()).unwrap();
        assert_eq!(back.radiograph("d0").unwrap(), r.quantized_f32());
        assert_eq!(back.manifest().metadata["seed"], 3);
        back.put_radiograph("d1", &r).unwrap();
        assert_eq!(back.commit().unwrap(), 2);
        assert!(dir.path().join("manifest.v1.json").exists());
        assert_eq!(Container::open(dir.path()).unwrap().names().count(), 2);
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Container::create(dir.path(), 3, 1.0, 1.0, serde_json::Value::Null).unwrap();
        c.put_array("x", &Array2::zeros((3, 3))).unwrap();
        c.commit().unwrap();
        fs::write(dir.path().join("x.f32"), [0u8; 7]).unwrap();
        assert!(Container::open(dir.path()).unwrap().array("x").is_err());
        assert!(c.put_radiograph("y", &Radiograph::constant(5, 0.0, 1.0, 1.0).unwrap()).is_err());
    }
}
