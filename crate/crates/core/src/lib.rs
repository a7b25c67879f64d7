//! Trainable, perfectly reconstructing time-frequency transforms built from
//! i-RevNet lifting stages, together with the surrounding speech-enhancement
//! machinery: masking in the learned domain, a clipped-SDR objective, a
//! canonical-dual STFT baseline and SI-SDR evaluation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, WAV IO and the
//! command-line driver live in the `liftbank` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod irevnet;
pub mod layers;
pub mod masking;
pub mod numerics;
pub mod objective;
pub mod optim;
pub mod params;
pub mod stft;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
pub use params::Parameterized;
