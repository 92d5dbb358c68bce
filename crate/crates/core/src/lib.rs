//! Speech enhancement with variational-autoencoder speech priors.
//!
//! This crate holds the algorithmic core of the toolkit: short-time Fourier
//! analysis and synthesis, a small dense-network substrate with reverse-mode
//! gradients, the three generative speech priors (VAE, label-conditional
//! CVAE, and the adversarially disentangled ACVAE), their training loops,
//! NMF-based noise modeling with Monte Carlo EM enhancement, and the
//! evaluation metrics. Everything here is pure computation over in-memory
//! buffers and is `no_std` (with `alloc`); file formats, WAV I/O, and the
//! command-line driver live in the companion `acvae-cli` crate.
//!
//! Module map:
//!
//! - [`dsp`]: STFT/ISTFT, voice-activity labeling, SNR-controlled mixing,
//!   synthetic corpus generation.
//! - [`nn`]: fixed-architecture MLPs, reverse-mode gradients, Adam,
//!   gradient checking, parameter serialization.
//! - [`vae`]: the model bundle (encoder, decoder, classifier, discriminator)
//!   and every loss term, all expressed as minimizations.
//! - [`train`]: batching, the two-step adversarial update, early stopping,
//!   checkpointing.
//! - [`enhance`]: test-time speech estimation — NMF noise model, Metropolis
//!   latent sampling, MCEM parameter updates, Monte-Carlo Wiener output.
//! - [`eval`]: SI-SDR, F1, disentanglement probing, experiment grids.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dsp;
pub mod enhance;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod serial;
pub mod train;
pub mod vae;

pub use ndarray;
pub use num_complex;

