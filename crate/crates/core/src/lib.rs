//! TC-GAN: an InfoGAN-style generator whose structured latent codes are
//! additionally pushed toward mutual independence by a total-correlation
//! penalty, together with the data loaders and disentanglement metrics used
//! to evaluate it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
