//! Spectral analysis: STFT magnitudes, mel filterbanks, the multi-scale mel
//! reconstruction loss and mel cepstral distortion.

mod mcd;
mod mel;
mod stft;

pub use mcd::{mcd, mcd_with, mel_cepstrum, McdConfig};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelLoss, MelScaleSpec};
pub use stft::{hann_window, stft_magnitude, stft_rows, windowed_rfft, StftConfig};

#[cfg(test)]
mod tests;
