//! IDX file reader (MNIST family), plain or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, header promises {expected} bytes but {found} are present")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u8,
        classes: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("EMNIST Balanced training files not found under {root}; tried {tried}. Download the IDX files and point FADE_DATA_ROOT (or --data-root) at their directory")]
    NotFound { root: PathBuf, tried: String },
}

/// Raw image block: `count` images of `rows x cols` bytes each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let truncated = |need: usize| IdxError::Truncated {
        path: path.to_path_buf(),
        expected: need,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let word = |i: usize| u32::from_be_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    if word(0) != magic {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found: word(0),
        });
    }
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(truncated(need));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8], IdxError> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..expected])
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages, IdxError> {
    let bytes = read_bytes(path)?;
    let dims = header(path, &bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = payload(path, &bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

/// Labels, each checked to lie in `0..classes`.
pub fn load_idx_labels(path: &Path, classes: usize) -> Result<Vec<u8>, IdxError> {
    let bytes = read_bytes(path)?;
    let count = header(path, &bytes, LABELS_MAGIC, 1)?[0];
    let labels = payload(path, &bytes, 8, count)?.to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| usize::from(l) >= classes) {
        return Err(IdxError::LabelOutOfRange {
            path: path.to_path_buf(),
            index,
            label,
            classes,
        });
    }
    Ok(labels)
}

/// Images and labels with matching counts.
pub fn read_idx_pair(images: &Path, labels: &Path, classes: usize) -> Result<(IdxImages, Vec<u8>), IdxError> {
    let img = load_idx_images(images)?;
    let lab = load_idx_labels(labels, classes)?;
    if img.count != lab.len() {
        return Err(IdxError::CountMismatch {
            images: img.count,
            labels: lab.len(),
        });
    }
    Ok((img, lab))
}

/// Locate the EMNIST Balanced training pair under `root` (or `root/gzip`),
/// accepting plain or `.gz` files, and load it.
pub fn load_emnist_dir(root: &Path, classes: usize) -> Result<(IdxImages, Vec<u8>), IdxError> {
    const IMAGES: &str = "emnist-balanced-train-images-idx3-ubyte";
    const LABELS: &str = "emnist-balanced-train-labels-idx1-ubyte";
    let mut tried = Vec::new();
    for dir in [root.to_path_buf(), root.join("gzip")] {
        for ext in ["", ".gz"] {
            let img = dir.join(format!("{IMAGES}{ext}"));
            let lab = dir.join(format!("{LABELS}{ext}"));
            if img.is_file() && lab.is_file() {
                return read_idx_pair(&img, &lab, classes);
            }
            tried.push(img.display().to_string());
        }
    }
    Err(IdxError::NotFound {
        root: root.to_path_buf(),
        tried: tried.join(", "),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    pub(crate) fn images_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for w in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&w.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    pub(crate) fn labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for w in [LABELS_MAGIC, labels.len() as u32] {
            b.extend_from_slice(&w.to_be_bytes());
        }
        b.extend_from_slice(labels);
        b
    }

    pub(crate) fn gzip(bytes: &[u8]) -> Vec<u8> {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap()
    }

    #[test]
    fn two_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 3 * 2).map(|i| (i * 21) as u8).collect();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab.gz");
        fs::write(&img, images_bytes(2, 3, 2, &pixels)).unwrap();
        fs::write(&lab, gzip(&labels_bytes(&[4, 46]))).unwrap();
        let (images, labels) = read_idx_pair(&img, &lab, 47).unwrap();
        assert_eq!((images.count, images.rows, images.cols), (2, 3, 2));
        assert_eq!(images.pixels, pixels);
        assert_eq!(labels, vec![4, 46]);
    }

    #[test]
    fn descriptive_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");

        fs::write(&p, labels_bytes(&[1])).unwrap();
        assert!(matches!(load_idx_images(&p), Err(IdxError::BadMagic { found: LABELS_MAGIC, .. })));

        fs::write(&p, images_bytes(3, 2, 2, &[0; 5])).unwrap();
        match load_idx_images(&p) {
            Err(IdxError::Truncated { expected, found, .. }) => assert_eq!((expected, found), (28, 21)),
            other => panic!("{other:?}"),
        }

        fs::write(&p, labels_bytes(&[0, 47])).unwrap();
        assert!(matches!(load_idx_labels(&p, 47), Err(IdxError::LabelOutOfRange { index: 1, label: 47, .. })));

        let missing = load_emnist_dir(dir.path(), 47).unwrap_err();
        assert!(missing.to_string().contains("FADE_DATA_ROOT"));
    }
}
