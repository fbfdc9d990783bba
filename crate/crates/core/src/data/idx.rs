//! IDX file ingestion (the classic big-endian image/label container).
//!
//! Only the two record types needed here are supported: `0x00000803`
//! (unsigned-byte images, 3 dimensions) and `0x00000801` (unsigned-byte
//! labels, 1 dimension). Pixels are scaled to [0, 1] by 1/255 on load.

use crate::data::Dataset;
use crate::error::{Error, Result};
use std::io::Read as _;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| Error::Data(format!("{}: truncated header", path.display())))
}

/// Parse an images file: magic, count, rows, cols, then row-major pixels.
fn load_images(path: &Path) -> Result<(Vec<f64>, usize, usize, usize)> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x} (images)",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Data(format!(
            "{}: expected {} pixel bytes for {n} images of {rows}x{cols}, found {}",
            path.display(),
            n * rows * cols,
            body.len()
        )));
    }
    let pixels = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((pixels, n, rows, cols))
}

/// Parse a labels file: magic, count, then one byte per label.
fn load_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x} (labels)",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Data(format!(
            "{}: expected {n} label bytes, found {}",
            path.display(),
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Load an (images, labels) IDX file pair into a [`Dataset`].
pub fn load_idx(images_path: &Path, labels_path: &Path, name: &str) -> Result<Dataset> {
    let (images, n, rows, cols) = load_images(images_path)?;
    if rows != cols {
        return Err(Error::Data(format!(
            "{}: images are {rows}x{cols}, need square images",
            images_path.display()
        )));
    }
    let labels = load_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{}: {} labels for {n} images in {}",
            labels_path.display(),
            labels.len(),
            images_path.display()
        )));
    }
    if n == 0 {
        return Err(Error::Data(format!("{}: empty dataset", images_path.display())));
    }
    let num_classes = usize::from(*labels.iter().max().unwrap()) + 1;
    Ok(Dataset {
        name: name.to_string(),
        images,
        labels,
        n,
        side: rows,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Write a tiny hand-built IDX pair: two 2x2 images with known bytes.
    fn write_fixture(dir: &Path, label_count: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let imgs = dir.join("imgs");
        let labs = dir.join("labs");
        let mut img_bytes = Vec::new();
        img_bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&[0, 51, 102, 255, 10, 20, 30, 40]);
        std::fs::write(&imgs, img_bytes).unwrap();
        let mut lab_bytes = Vec::new();
        lab_bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lab_bytes.extend_from_slice(&(label_count as u32).to_be_bytes());
        lab_bytes.extend_from_slice(&vec![1u8; label_count]);
        std::fs::write(&labs, lab_bytes).unwrap();
        (imgs, labs)
    }

    #[test]
    fn fixture_pixels_recover_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_fixture(dir.path(), 2);
        let ds = load_idx(&imgs, &labs, "fixture").unwrap();
        assert_eq!(ds.n, 2);
        assert_eq!(ds.side, 2);
        let expected = [0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0];
        assert_eq!(&ds.images[..4], &expected);
        assert_eq!(ds.labels, vec![1, 1]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_fixture(dir.path(), 1);
        let err = load_idx(&imgs, &labs, "fixture").unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        assert!(err.to_string().contains("1 labels for 2 images"));
    }

    #[test]
    fn bad_magic_is_rejected_with_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("bogus");
        std::fs::write(&bogus, [0u8; 32]).unwrap();
        let (_, labs) = write_fixture(dir.path(), 2);
        let err = load_idx(&bogus, &labs, "fixture").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&5u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend_from_slice(&[7u8; 100]); // far fewer than 5*28*28
        std::fs::write(&short, bytes).unwrap();
        let (_, labs) = write_fixture(dir.path(), 2);
        let err = load_idx(&short, &labs, "fixture").unwrap_err();
        assert!(err.to_string().contains("expected 3920 pixel bytes"));
    }
}
