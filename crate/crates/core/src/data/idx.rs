//! IDX image/label files, optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parses the header and returns (dims, payload).
fn parse(bytes: &[u8], magic: u32, ndims: usize, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let header = 4 + 4 * ndims;
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < header {
        return Err(bad(format!("file too short for a {header}-byte header")));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(bad(format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let dims: Vec<usize> = (0..ndims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload holds {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    Ok((dims, payload.to_vec()))
}

/// Loads an IDX image file and its label file. Pixels are scaled to
/// `[0, 1]`; each image becomes one row of `rows·cols` features. Class names
/// default to the decimal label values.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (dims, pixels) = parse(&read_maybe_gz(images)?, IMAGE_MAGIC, 3, images)?;
    let (ldims, label_bytes) = parse(&read_maybe_gz(labels)?, LABEL_MAGIC, 1, labels)?;
    if dims[0] != ldims[0] {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            dims[0], ldims[0]
        )));
    }
    let n = dims[0];
    let d = dims[1] * dims[2];
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("{}: empty image set", images.display())));
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Tensor::new(&[n, d], data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, (0..classes).map(|c| c.to_string()).collect(), Split::Train)
}

/// Writes an uncompressed IDX pair. `pixels` holds `n·rows·cols` bytes.
pub fn write_idx(images: &Path, labels: &Path, pixels: &[u8], rows: usize, cols: usize, label_values: &[u8]) -> Result<()> {
    let n = label_values.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::shape(format!(
            "{} pixel bytes for {n} images of {rows}×{cols}",
            pixels.len()
        )));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [n, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    fs::write(images, img)?;
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(label_values);
    fs::write(labels, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn roundtrip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        let pixels: Vec<u8> = vec![0, 255, 51, 102, 7, 8, 9, 10];
        write_idx(&img, &lab, &pixels, 2, 2, &[3, 1]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.features().shape(), &[2, 4]);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.features().row(0), &[0.0, 1.0, 0.2, 0.4]);

        let gz = dir.path().join("img.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&fs::read(&img).unwrap()).unwrap();
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        let ds_gz = load_idx(&gz, &lab).unwrap();
        assert_eq!(ds_gz.features(), ds.features());
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&img, &lab, &[1, 2, 3, 4, 5, 6, 7, 8], 2, 2, &[0, 1]).unwrap();
        let mut bytes = fs::read(&img).unwrap();
        bytes.pop();
        fs::write(&img, &bytes).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Format(_))));

        write_idx(&img, &lab, &[1, 2, 3, 4], 2, 2, &[0]).unwrap();
        let other = dir.path().join("lab2");
        let mut l = LABEL_MAGIC.to_be_bytes().to_vec();
        l.extend_from_slice(&2u32.to_be_bytes());
        l.extend_from_slice(&[0, 1]);
        fs::write(&other, l).unwrap();
        assert!(matches!(load_idx(&img, &other), Err(Error::Consistency(_))));

        assert!(matches!(load_idx(&lab, &lab), Err(Error::Format(_))));
    }
}
