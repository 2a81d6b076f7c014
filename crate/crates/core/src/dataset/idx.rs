//! IDX container format (MNIST): big-endian `u32` magic, big-endian `u32`
//! dimension sizes, then the unsigned-byte payload.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::Format(format!("{} header truncated", self.what)))?;
        self.pos += 4;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            return Err(Error::Format(format!(
                "{} payload truncated: expected {len} bytes, found {}",
                self.what,
                rest.len()
            )));
        }
        if rest.len() > len {
            return Err(Error::Format(format!("{} has {} trailing bytes", self.what, rest.len() - len)));
        }
        self.pos += len;
        Ok(rest)
    }
}

/// Parses an image file (magic `0x00000803`, dims n×rows×cols) and a label
/// file (magic `0x00000801`, dim n). Pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let mut img = Reader {
        bytes: images,
        pos: 0,
        what: "images",
    };
    let magic = img.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let n_features = rows * cols;
    let pixels = img.payload(n * n_features)?;

    let mut lab = Reader {
        bytes: labels,
        pos: 0,
        what: "labels",
    };
    let magic = lab.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n_labels = lab.u32()? as usize;
    if n_labels != n {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    let label_bytes = lab.payload(n)?;

    if n_features == 0 {
        return Err(Error::Format("images have zero pixels".into()));
    }
    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let n_classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    LabeledDataset::new(features, labels, n_features, n_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path.as_ref()).map_err(|e| Error::io(images_path.as_ref(), e))?;
    let labels = std::fs::read(labels_path.as_ref()).map_err(|e| Error::io(labels_path.as_ref(), e))?;
    parse_idx(&images, &labels)
}

/// Serialises pixel rows back to an IDX image file. Values are rescaled by
/// 255 and rounded.
pub fn encode_idx_images(data: &LabeledDataset, rows: u32, cols: u32) -> Result<Vec<u8>> {
    if (rows * cols) as usize != data.n_features() {
        return Err(Error::Dimension {
            expected: data.n_features(),
            actual: (rows * cols) as usize,
        });
    }
    let mut out = Vec::with_capacity(16 + data.features().len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend(data.features().iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn encode_idx_labels(data: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + data.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend(data.labels().iter().map(|&l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two 28x28 images with labels [3, 7], written byte by byte.
    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        for i in 0..2 * 784 {
            images.push((i % 256) as u8);
        }
        let labels = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 3, 7];
        (images, labels)
    }

    #[test]
    fn parses_fixture() {
        let (images, labels) = fixture();
        let d = parse_idx(&images, &labels).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.n_features(), 784);
        assert_eq!(d.labels(), &[3, 7]);
        assert_eq!(d.row(0)[0], 0.0);
        assert_eq!(d.row(0)[255], 1.0);
        assert!(d.features().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn reserialising_reproduces_bytes() {
        let (images, labels) = fixture();
        let d = parse_idx(&images, &labels).unwrap();
        assert_eq!(encode_idx_images(&d, 28, 28).unwrap(), images);
        assert_eq!(encode_idx_labels(&d), labels);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let (images, _) = fixture();
        let mut bad_labels = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 3, 7];
        assert!(matches!(parse_idx(&images, &bad_labels), Err(Error::Format(_))));
        bad_labels[3] = 0x01;
        assert!(parse_idx(&images, &bad_labels).is_ok());
        assert!(matches!(parse_idx(&bad_labels, &bad_labels), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_mismatched_inputs_are_rejected() {
        let (images, labels) = fixture();
        assert!(matches!(parse_idx(&images[..images.len() - 1], &labels), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&images[..10], &labels), Err(Error::Format(_))));
        let three = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 3, 3, 7, 1];
        assert!(matches!(parse_idx(&images, &three), Err(Error::Format(_))));
        let mut extra = labels.clone();
        extra.push(9);
        assert!(matches!(parse_idx(&images, &extra), Err(Error::Format(_))));
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap().len(), 2);
        assert!(matches!(load_idx(dir.path().join("nope"), &lp), Err(Error::Io { .. })));
    }
}
