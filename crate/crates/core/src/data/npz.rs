//! dSprites-style `.npz` archives: `imgs` (N×H×W bytes), `latents_classes`
//! (N×(K+1) integers whose first column is the constant colour factor) and the
//! per-factor sizes, either as a `latents_sizes` array or inside the pickled
//! `metadata` dictionary of the original release.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::npy::{read_npy, scan_pickled_int_array, write_npy, NpyArray, NpyData};
use super::FactorDataset;
use crate::error::{Error, Result};
use crate::nets::ImageShape;

pub const DSPRITES_FACTOR_NAMES: [&str; 5] = ["shape", "scale", "orientation", "pos_x", "pos_y"];

fn entry(
    zip: &mut zip::ZipArchive<BufReader<File>>,
    name: &str,
) -> Result<Option<NpyArray>> {
    let file = match zip.by_name(&format!("{name}.npy")) {
        Ok(f) => f,
        Err(zip::result::ZipError::FileNotFound) => return Ok(None),
        Err(e) => return Err(Error::Data(format!("{name}: {e}"))),
    };
    read_npy(file).map(Some)
}

pub fn load_dsprites(path: impl AsRef<Path>) -> Result<FactorDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut zip = zip::ZipArchive::new(BufReader::new(file))
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;

    let imgs = entry(&mut zip, "imgs")?.ok_or_else(|| Error::Data("missing array `imgs`".into()))?;
    let (classes_shape, classes) = entry(&mut zip, "latents_classes")?
        .ok_or_else(|| Error::Data("missing array `latents_classes`".into()))?
        .into_i64("latents_classes")?;
    if classes_shape.len() != 2 || classes_shape[1] < 2 {
        return Err(Error::Data(format!(
            "latents_classes has shape {classes_shape:?}, expected N×(K+1)"
        )));
    }
    let (n, cols) = (classes_shape[0], classes_shape[1]);

    let sizes: Vec<i64> = match entry(&mut zip, "latents_sizes")? {
        Some(arr) => arr.into_i64("latents_sizes")?.1,
        None => match entry(&mut zip, "metadata")? {
            Some(NpyArray {
                data: NpyData::Object(pickle),
                ..
            }) => scan_pickled_int_array(&pickle, "latents_sizes", cols).ok_or_else(|| {
                Error::Data("metadata does not carry `latents_sizes`".into())
            })?,
            _ => return Err(Error::Data("missing factor sizes metadata".into())),
        },
    };
    if sizes.len() != cols {
        return Err(Error::Data(format!(
            "{} factor sizes for {cols} factor columns",
            sizes.len()
        )));
    }

    let (shape, pixels) = match (imgs.shape.as_slice(), imgs.data) {
        (&[m, h, w], NpyData::U8(p)) => (vec![m, 1, h, w], p),
        (&[m, c, h, w], NpyData::U8(p)) => (vec![m, c, h, w], p),
        (s, _) => {
            return Err(Error::Data(format!(
                "imgs must be N×H×W or N×C×H×W bytes, got shape {s:?}"
            )))
        }
    };
    if shape[0] != n {
        return Err(Error::Data(format!(
            "count mismatch: {} images vs {n} factor rows",
            shape[0]
        )));
    }
    let image_shape = ImageShape {
        channels: shape[1],
        height: shape[2],
        width: shape[3],
    };

    // column 0 is the constant colour factor
    let k = cols - 1;
    let mut values = Array2::<usize>::zeros((n, k));
    for row in 0..n {
        for col in 0..k {
            let v = classes[row * cols + col + 1];
            values[[row, col]] = usize::try_from(v)
                .map_err(|_| Error::Data(format!("negative factor class {v}")))?;
        }
    }
    let factor_sizes = sizes[1..]
        .iter()
        .map(|&s| usize::try_from(s).map_err(|_| Error::Data(format!("bad factor size {s}"))))
        .collect::<Result<Vec<_>>>()?;

    let names = match entry(&mut zip, "latents_names")? {
        Some(NpyArray {
            data: NpyData::Str(names),
            ..
        }) if names.len() == cols => names[1..].to_vec(),
        _ if k == DSPRITES_FACTOR_NAMES.len() => {
            DSPRITES_FACTOR_NAMES.iter().map(|s| s.to_string()).collect()
        }
        _ => (0..k).map(|i| format!("factor{i}")).collect(),
    };

    let levels = if pixels.iter().all(|&p| p <= 1) { 1 } else { 255 };
    FactorDataset::new(pixels, levels, image_shape, values, factor_sizes, names)
}

/// Writes `ds` in the archive layout read by [`load_dsprites`], with an
/// explicit `latents_sizes` array and factor names.
pub fn save_npz(ds: &FactorDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: std::io::Error| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut zip = zip::ZipWriter::new(BufWriter::new(file));
    let opts = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated);
    let n = ds.len();
    let s = ds.image_shape();
    let mut pixels = Vec::with_capacity(n * s.pixels());
    for i in 0..n {
        pixels.extend_from_slice(ds.raw_image(i));
    }
    let img_shape = if s.channels == 1 {
        vec![n, s.height, s.width]
    } else {
        vec![n, s.channels, s.height, s.width]
    };
    let k = ds.n_factors();
    let mut classes = Vec::with_capacity(n * (k + 1));
    for row in ds.factor_values.rows() {
        classes.push(0);
        classes.extend(row.iter().map(|&v| v as i64));
    }
    let mut sizes = vec![1i64];
    sizes.extend(ds.factor_sizes.iter().map(|&v| v as i64));
    let mut names = vec!["color".to_string()];
    names.extend(ds.factor_names.iter().cloned());

    let arrays = [
        ("imgs", NpyArray { shape: img_shape, data: NpyData::U8(pixels) }),
        ("latents_classes", NpyArray { shape: vec![n, k + 1], data: NpyData::I64(classes) }),
        ("latents_sizes", NpyArray { shape: vec![k + 1], data: NpyData::I64(sizes) }),
        ("latents_names", NpyArray { shape: vec![k + 1], data: NpyData::Str(names) }),
    ];
    for (name, arr) in arrays {
        zip.start_file(format!("{name}.npy"), opts)
            .map_err(|e| Error::Data(format!("{name}: {e}")))?;
        write_npy(&mut zip, &arr).map_err(io)?;
    }
    zip.finish()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .flush()
        .map_err(io)?;
    Ok(())
}
