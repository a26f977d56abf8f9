//! Dataset representation and the on-disk directory layout.
//!
//! A dataset directory holds `manifest.csv` (id, stage, sex, filename) next to
//! an `images/` folder of 8-bit PGM files. Externally produced datasets in
//! the same layout load through the same path as the synthetic ones.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pgm;

/// Sex tag used for stratification; the synthetic generator calls its two
/// deterministic morphology variants A and B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sex {
    A,
    B,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sex::A => write!(f, "A"),
            Sex::B => write!(f, "B"),
        }
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Sex> {
        match s {
            "A" => Ok(Sex::A),
            "B" => Ok(Sex::B),
            other => Err(Error::Data(format!("unknown sex tag '{other}'"))),
        }
    }
}

/// One grayscale image with its ordinal stage label and sex tag.
#[derive(Debug, Clone)]
pub struct StagedSample {
    pub id: String,
    pub stage: u8,
    pub sex: Sex,
    /// Row-major pixels in `[0,1]`, `image_size` x `image_size`.
    pub image: Vec<f64>,
}

/// An in-memory dataset of square grayscale images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub image_size: usize,
    pub samples: Vec<StagedSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct stages present, ascending.
    pub fn stages(&self) -> Vec<u8> {
        let mut stages: Vec<u8> = self.samples.iter().map(|s| s.stage).collect();
        stages.sort_unstable();
        stages.dedup();
        stages
    }
}

/// Write `manifest.csv` + `images/*.pgm`. Pixels are quantized to 8 bits;
/// identical datasets produce byte-identical directories.
pub fn save_dataset<P: AsRef<Path>>(dir: P, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut manifest = String::from("id,stage,sex,filename\n");
    for sample in &dataset.samples {
        if sample.image.len() != dataset.image_size * dataset.image_size {
            return Err(Error::Dim(format!(
                "sample {} has {} pixels, expected {}",
                sample.id,
                sample.image.len(),
                dataset.image_size * dataset.image_size
            )));
        }
        let filename = format!("{}.pgm", sample.id);
        pgm::write(
            images.join(&filename),
            dataset.image_size,
            dataset.image_size,
            &pgm::quantize(&sample.image),
        )?;
        manifest.push_str(&format!(
            "{},{},{},images/{}\n",
            sample.id, sample.stage, sample.sex, filename
        ));
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`] (or any external data
/// in the same layout).
pub fn load_dataset<P: AsRef<Path>>(dir: P) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.csv");
    let manifest = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let mut lines = manifest.lines();
    match lines.next() {
        Some("id,stage,sex,filename") => {}
        _ => {
            return Err(Error::Data(format!(
                "{}: missing 'id,stage,sex,filename' header",
                manifest_path.display()
            )))
        }
    }
    let mut samples = Vec::new();
    let mut image_size = None;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "{} line {}: expected 4 fields",
                manifest_path.display(),
                lineno + 2
            )));
        }
        let stage: u8 = fields[1]
            .parse()
            .map_err(|_| Error::Data(format!("bad stage '{}'", fields[1])))?;
        let sex: Sex = fields[2].parse()?;
        let (w, h, pixels) = pgm::read(dir.join(fields[3]))?;
        if w != h {
            return Err(Error::Data(format!("image {} is not square", fields[3])));
        }
        match image_size {
            None => image_size = Some(w),
            Some(s) if s == w => {}
            Some(s) => {
                return Err(Error::Data(format!(
                    "image {} is {w}x{h}, dataset uses {s}x{s}",
                    fields[3]
                )))
            }
        }
        samples.push(StagedSample {
            id: fields[0].to_string(),
            stage,
            sex,
            image: pgm::dequantize(&pixels),
        });
    }
    let image_size = image_size.ok_or_else(|| Error::Data("dataset has no samples".into()))?;
    Ok(Dataset {
        image_size,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        Dataset {
            image_size: 4,
            samples: vec![
                StagedSample {
                    id: "s0_000".into(),
                    stage: 0,
                    sex: Sex::A,
                    image: (0..16).map(|v| f64::from(v) / 15.0).collect(),
                },
                StagedSample {
                    id: "s3_001".into(),
                    stage: 3,
                    sex: Sex::B,
                    image: vec![0.5; 16],
                },
            ],
        }
    }

    #[test]
    fn save_load_roundtrip_on_quantized_grid() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.image_size, 4);
        assert_eq!(back.len(), 2);
        assert_eq!(back.samples[0].stage, 0);
        assert_eq!(back.samples[1].sex, Sex::B);
        // second save of the loaded dataset is byte-identical (values sit on
        // the 8-bit grid after one quantization)
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(dir2.path(), &back).unwrap();
        let m1 = std::fs::read(dir.path().join("manifest.csv")).unwrap();
        let m2 = std::fs::read(dir2.path().join("manifest.csv")).unwrap();
        assert_eq!(m1, m2);
        let i1 = std::fs::read(dir.path().join("images/s0_000.pgm")).unwrap();
        let i2 = std::fs::read(dir2.path().join("images/s0_000.pgm")).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn load_rejects_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
    }
}
