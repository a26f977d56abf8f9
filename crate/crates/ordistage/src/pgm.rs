//! Minimal 8-bit binary PGM (P5) reader/writer.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Write an 8-bit grayscale image.
pub fn write<P: AsRef<Path>>(path: P, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Dim(format!(
            "pgm: {}x{} needs {} pixels, got {}",
            width,
            height,
            width * height,
            pixels.len()
        )));
    }
    let mut file = std::fs::File::create(path)?;
    write!(file, "P5\n{width} {height}\n255\n")?;
    file.write_all(pixels)?;
    Ok(())
}

/// Read an 8-bit P5 file; comments (`#`) in the header are tolerated.
pub fn read<P: AsRef<Path>>(path: P) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("pgm: truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(Error::Data("pgm: not a binary P5 file".into()));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::Data("pgm: bad width".into()))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::Data("pgm: bad height".into()))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::Data("pgm: bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Data(format!("pgm: unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    if pos + width * height > bytes.len() {
        return Err(Error::Data("pgm: truncated pixel data".into()));
    }
    Ok((width, height, bytes[pos..pos + width * height].to_vec()))
}

/// Quantize a `[0,1]` image to 8 bits.
pub fn quantize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Map 8-bit pixels back to `[0,1]`.
pub fn dequantize(pixels: &[u8]) -> Vec<f64> {
    pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
}

/// Write an arbitrary-range image min-max normalized, recording the applied
/// normalization in a `<path>.norm.txt` sidecar.
pub fn write_normalized<P: AsRef<Path>>(
    path: P,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<()> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels: Vec<u8> = if span > 0.0 {
        values
            .iter()
            .map(|&v| (((v - lo) / span) * 255.0).round() as u8)
            .collect()
    } else {
        vec![0u8; values.len()]
    };
    write(&path, width, height, &pixels)?;
    let sidecar = format!("{}.norm.txt", path.as_ref().display());
    std::fs::write(sidecar, format!("min {lo}\nmax {hi}\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let pixels: Vec<u8> = (0..12).map(|v| (v * 20) as u8).collect();
        write(&path, 4, 3, &pixels).unwrap();
        let (w, h, back) = read(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, pixels);
    }

    #[test]
    fn quantization_is_inverse_on_grid_points() {
        let values: Vec<f64> = (0..=255).map(|v| f64::from(v) / 255.0).collect();
        assert_eq!(dequantize(&quantize(&values)), values);
    }

    #[test]
    fn normalized_write_emits_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        write_normalized(&path, 2, 2, &[-1.0, 0.0, 1.0, 3.0]).unwrap();
        let sidecar = std::fs::read_to_string(dir.path().join("map.pgm.norm.txt")).unwrap();
        assert!(sidecar.contains("min -1"));
        assert!(sidecar.contains("max 3"));
        let (_, _, px) = read(&path).unwrap();
        assert_eq!(px[0], 0);
        assert_eq!(px[3], 255);
    }
}
