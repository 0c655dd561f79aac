//! MNIST-family IDX files (uncompressed) as a one-factor dataset.

use std::path::Path;

use ndarray::Array2;

use super::FactorDataset;
use crate::error::{Error, Result};
use crate::nets::ImageShape;

fn be_u32(b: &[u8], at: usize) -> Result<usize> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| Error::Data("truncated IDX header".into()))
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<FactorDataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    if be_u32(&img, 0)? != 0x803 || be_u32(&lab, 0)? != 0x801 {
        return Err(Error::Data("bad IDX magic numbers".into()));
    }
    let (n, h, w) = (be_u32(&img, 4)?, be_u32(&img, 8)?, be_u32(&img, 12)?);
    let n_labels = be_u32(&lab, 4)?;
    if n != n_labels {
        return Err(Error::Data(format!(
            "count mismatch: {n} images vs {n_labels} labels"
        )));
    }
    let pixels = img
        .get(16..16 + n * h * w)
        .ok_or_else(|| Error::Data("truncated IDX image payload".into()))?
        .to_vec();
    let classes = lab
        .get(8..8 + n)
        .ok_or_else(|| Error::Data("truncated IDX label payload".into()))?;
    let size = classes.iter().copied().max().unwrap_or(0) as usize + 1;
    let values = Array2::from_shape_fn((n, 1), |(i, _)| classes[i] as usize);
    FactorDataset::new(
        pixels,
        255,
        ImageShape {
            channels: 1,
            height: h,
            width: w,
        },
        values,
        vec![size],
        vec!["class".into()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_tiny_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend([0, 255, 128, 7, 1, 2, 3, 4]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 9];
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lab).unwrap();
        let ds = load_idx(dir.path().join("i"), dir.path().join("l")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.factor_sizes, vec![10]);
        assert_eq!(ds.raw_image(0), &[0, 255, 128, 7]);
        assert_eq!(ds.normalize(255), 1.0);
        assert_eq!(ds.normalize(0), -1.0);
        std::fs::write(dir.path().join("l"), &lab[..9]).unwrap();
        assert!(load_idx(dir.path().join("i"), dir.path().join("l")).is_err());
    }
}
