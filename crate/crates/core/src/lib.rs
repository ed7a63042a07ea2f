//! Fourier-domain semantic-aware mixup for domain generalization.
//!
//! Images are split into per-channel amplitude and phase spectra
//! ([`fourier`]); sample pairs are classified by domain and label agreement
//! and mixed according to a [`mixup::MixupPolicy`]; a small convolutional
//! classifier ([`model`]) is trained with an EMA teacher and KL consistency
//! ([`train`]) on leave-one-domain-out folds of a [`data::Dataset`].

#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod exec;
pub mod fourier;
pub mod io;
pub mod mixup;
pub mod model;
pub mod plane;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use plane::{ComplexPlane, Image, ImagePlane};
pub use rustfft::num_complex::Complex64;
