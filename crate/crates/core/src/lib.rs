//! Single-codebook neural speech codec.
//!
//! A waveform is encoded by a strided residual CNN and LSTM into one latent
//! frame per `R` samples, each frame is projected to a low-dimensional space
//! and snapped to the nearest L2-normalized codeword, and a mirrored decoder
//! reconstructs the waveform. Training combines a multi-scale mel loss, VQ
//! losses and a least-squares GAN objective against multi-period and
//! multi-resolution STFT discriminators.

pub mod adversary;
pub mod bitstream;
pub mod checkpoint;
pub mod dsp;
pub mod error;
pub mod gradsuite;
pub mod model;
pub mod nd;
pub mod quantizer;
pub mod trainer;

pub use error::{Error, Result};
