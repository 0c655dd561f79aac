#![allow(dead_code)]

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use sha2::{Digest, Sha256};
use tcgan::data::{generate_synthetic, FactorDataset, SyntheticSpec};
use tcgan::nets::{ArchConfig, NetworkBundle, ParamGroup};
use tcgan::trainer::Representation;

pub fn small_arch() -> ArchConfig {
    ArchConfig {
        base_channels: 8,
        generator_channels: 16,
        feature_width: 32,
        tcd_hidden: 64,
        tcd_layers: 2,
        leaky_slope: 0.2,
    }
}

pub fn synthetic() -> FactorDataset {
    generate_synthetic(&SyntheticSpec::default(), 0).unwrap()
}

pub fn synthetic_with(x: usize, y: usize, sizes: usize, size_step: usize) -> FactorDataset {
    let spec = SyntheticSpec {
        x_positions: x,
        y_positions: y,
        sizes,
        size_step,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, 0).unwrap()
}

fn hash_tensor(t: &Tensor) -> [u8; 32] {
    let v: Vec<f32> = t.to_dtype(DType::F32).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let mut h = Sha256::new();
    for x in v {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

/// Digest of every parameter group.
pub fn group_hashes(bundle: &NetworkBundle) -> BTreeMap<ParamGroup, [u8; 32]> {
    ParamGroup::ALL
        .iter()
        .map(|&g| {
            let mut h = Sha256::new();
            for (name, v) in bundle.group_params(g) {
                h.update(name.as_bytes());
                h.update(hash_tensor(v.as_tensor()));
            }
            (g, h.finalize().into())
        })
        .collect()
}

/// Groups whose digest differs between two snapshots.
pub fn changed(
    a: &BTreeMap<ParamGroup, [u8; 32]>,
    b: &BTreeMap<ParamGroup, [u8; 32]>,
) -> Vec<ParamGroup> {
    a.iter().filter(|(g, h)| b[g] != **h).map(|(g, _)| *g).collect()
}

/// Reads the square of each synthetic image back from its pixels: centre
/// column, centre row and side length.
pub struct SquareReader;

impl Representation for SquareReader {
    fn encode(&self, images: &Tensor) -> tcgan::Result<Array2<f64>> {
        let (n, _, h, w) = images.dims4()?;
        let px: Vec<f32> = images.flatten_all()?.to_vec1()?;
        let mut out = Array2::zeros((n, 3));
        for i in 0..n {
            let img = &px[i * h * w..(i + 1) * h * w];
            let (mut x0, mut x1, mut y0, mut y1) = (w, 0, h, 0);
            for r in 0..h {
                for c in 0..w {
                    if img[r * w + c] > 0.0 {
                        x0 = x0.min(c);
                        x1 = x1.max(c);
                        y0 = y0.min(r);
                        y1 = y1.max(r);
                    }
                }
            }
            out[[i, 0]] = (x0 + x1) as f64 / 2.0;
            out[[i, 1]] = (y0 + y1) as f64 / 2.0;
            out[[i, 2]] = (x1 + 1 - x0) as f64;
        }
        Ok(out)
    }
}
