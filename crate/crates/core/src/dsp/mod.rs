//! Time-frequency analysis/synthesis, VAD labeling, SNR-controlled mixing,
//! and synthetic corpus generation.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! - Analysis uses a periodic Hann window; synthesis uses the same window
//!   with overlap-add normalized by the accumulated squared window (WOLA).
//! - Frames start at multiples of `hop`; a signal of length `len` yields
//!   `1 + (len - window_len) / hop` frames, all fully inside the signal.
//! - Spectra keep only the `window_len/2 + 1` non-negative frequency bins.
//!   Energy computations double the interior bins to account for the
//!   discarded negative frequencies (see [`spectral_energy`]).

mod fft;
mod synth;

pub use synth::{synth_corpus, CorpusItem, SynthCorpus};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use fft::RealFft;

#[derive(Debug, Clone, PartialEq)]
pub enum DspError {
    /// Signal shorter than one analysis window.
    SignalTooShort { len: usize, window_len: usize },
    /// Sample rate of the input does not match the config.
    SampleRateMismatch { expected: u32, found: u32 },
    /// Config violates an invariant (hop/window relation, power of two...).
    BadConfig(String),
    /// Input contains NaN or infinite values.
    NonFinite(&'static str),
    /// Two signals that must align do not.
    LengthMismatch { left: usize, right: usize },
    /// Labels do not match the frame count of the paired signal.
    LabelMismatch { labels: usize, frames: usize },
    /// No active frames: SNR on speech segments is undefined.
    NoActiveFrames,
    /// Noise has zero energy on the active segment.
    ZeroNoiseEnergy,
    /// Corpus spec invalid.
    BadCorpusSpec(String),
}

impl fmt::Display for DspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DspError::SignalTooShort { len, window_len } => {
                write!(f, "signal of {len} samples is shorter than one window ({window_len})")
            }
            DspError::SampleRateMismatch { expected, found } => {
                write!(f, "sample rate mismatch: config {expected} Hz, signal {found} Hz")
            }
            DspError::BadConfig(msg) => write!(f, "bad STFT config: {msg}"),
            DspError::NonFinite(what) => write!(f, "non-finite values in {what}"),
            DspError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right} samples")
            }
            DspError::LabelMismatch { labels, frames } => {
                write!(f, "label count {labels} does not match frame count {frames}")
            }
            DspError::NoActiveFrames => write!(f, "no active frames in labels"),
            DspError::ZeroNoiseEnergy => write!(f, "noise has zero energy on active segment"),
            DspError::BadCorpusSpec(msg) => write!(f, "bad corpus spec: {msg}"),
        }
    }
}

impl core::error::Error for DspError {}

/// Short-time Fourier transform configuration.
///
/// Defaults: 16 kHz, 64 ms (1024-sample) periodic Hann window, 75% overlap
/// (hop 256), giving 513 frequency bins and a frame rate of 62.5 frames/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, window_len: 1024, hop: 256 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate == 0 {
            return Err(DspError::BadConfig(String::from("sample_rate must be positive")));
        }
        if !self.window_len.is_power_of_two() || self.window_len < 2 {
            return Err(DspError::BadConfig(format!(
                "window_len {} must be a power of two >= 2 (radix-2 FFT)",
                self.window_len
            )));
        }
        if self.hop == 0 || self.window_len % self.hop != 0 {
            return Err(DspError::BadConfig(format!(
                "hop {} must divide window_len {}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    /// Number of non-negative frequency bins F = window_len/2 + 1.
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Frames per second = sample_rate / hop.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Frame count for a signal of `len` samples, if it fits one window.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        if len < self.window_len {
            None
        } else {
            Some(1 + (len - self.window_len) / self.hop)
        }
    }

    /// Periodic Hann window of length `window_len`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len;
        (0..n)
            .map(|t| 0.5 * (1.0 - libm::cos(2.0 * core::f64::consts::PI * t as f64 / n as f64)))
            .collect()
    }
}

/// A mono audio signal with its sample rate and an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub id: String,
}

impl Utterance {
    pub fn new(samples: Vec<f64>, sample_rate: u32, id: impl Into<String>) -> Self {
        Self { samples, sample_rate, id: id.into() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// N x F complex STFT of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Array2<Complex64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }
}

/// N x F non-negative short-time power spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: Array2<f64>,
}

impl PowerSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Hard,
    Soft,
}

/// Per-frame voice-activity labels: hard values in {0, 1} or soft values
/// in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeq {
    pub values: Vec<f64>,
    pub kind: LabelKind,
}

impl LabelSeq {
    pub fn hard(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v == 0.0 || v == 1.0));
        Self { values, kind: LabelKind::Hard }
    }

    pub fn soft(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        Self { values, kind: LabelKind::Soft }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of active (> 0.5) frames.
    pub fn active_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&v| v > 0.5).count() as f64 / self.values.len() as f64
    }

    pub fn as_array(&self) -> Array1<f64> {
        Array1::from_vec(self.values.clone())
    }
}

/// Noise families for the synthetic corpus. White and pink are stationary;
/// bursts and amplitude-modulated noise are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Burst,
    Modulated,
}

impl NoiseKind {
    pub fn is_stationary(&self) -> bool {
        matches!(self, NoiseKind::White | NoiseKind::Pink)
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Burst => "burst",
            NoiseKind::Modulated => "modulated",
        }
    }
}

/// Recipe for a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub utterance_seconds: f64,
    pub noise_kinds: Vec<NoiseKind>,
    pub snr_db_list: Vec<f64>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 20,
            n_test: 20,
            utterance_seconds: 2.0,
            noise_kinds: vec![
                NoiseKind::White,
                NoiseKind::Pink,
                NoiseKind::Burst,
                NoiseKind::Modulated,
            ],
            snr_db_list: vec![0.0, 5.0, 10.0],
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(DspError::BadCorpusSpec(String::from("all split counts must be >= 1")));
        }
        if !(self.utterance_seconds >= 1.0) {
            return Err(DspError::BadCorpusSpec(String::from(
                "utterance_seconds must be >= 1.0 so every utterance fits \
                 at least one silence and one speech segment",
            )));
        }
        if self.noise_kinds.is_empty() {
            return Err(DspError::BadCorpusSpec(String::from("noise_kinds must be non-empty")));
        }
        if self.snr_db_list.is_empty() {
            return Err(DspError::BadCorpusSpec(String::from("snr_db_list must be non-empty")));
        }
        Ok(())
    }
}

fn check_finite(samples: &[f64], what: &'static str) -> Result<(), DspError> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite(what));
    }
    Ok(())
}

/// Forward STFT. Frames start at multiples of `hop`; only signals of at
/// least one window are accepted.
pub fn stft(u: &Utterance, cfg: &StftConfig) -> Result<ComplexSpectrogram, DspError> {
    cfg.validate()?;
    if u.sample_rate != cfg.sample_rate {
        return Err(DspError::SampleRateMismatch { expected: cfg.sample_rate, found: u.sample_rate });
    }
    let n_frames = cfg
        .num_frames(u.len())
        .ok_or(DspError::SignalTooShort { len: u.len(), window_len: cfg.window_len })?;
    check_finite(&u.samples, "stft input")?;

    let window = cfg.window();
    let mut fft = RealFft::new(cfg.window_len);
    let bins = cfg.bins();
    let mut frames = Array2::from_elem((n_frames, bins), Complex64::new(0.0, 0.0));
    let mut buf = vec![0.0f64; cfg.window_len];
    for (i, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = i * cfg.hop;
        for (t, b) in buf.iter_mut().enumerate() {
            *b = u.samples[start + t] * window[t];
        }
        fft.forward(&buf, row.as_slice_mut().expect("row is contiguous"));
    }
    Ok(ComplexSpectrogram { frames, config: *cfg })
}

/// Inverse STFT by weighted overlap-add. The synthesis window equals the
/// analysis window and the output is normalized by the accumulated squared
/// window, so `istft(stft(u))` reconstructs the interior of `u` exactly up
/// to rounding. Samples whose window-weight accumulation is ~zero (the very
/// edges) are emitted as zeros.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Utterance, DspError> {
    let cfg = &spec.config;
    cfg.validate()?;
    if spec.frames.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(DspError::NonFinite("istft input"));
    }
    let n_frames = spec.num_frames();
    let out_len = (n_frames.saturating_sub(1)) * cfg.hop + cfg.window_len;
    let window = cfg.window();
    let mut fft = RealFft::new(cfg.window_len);
    let mut acc = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];
    let mut frame = vec![0.0f64; cfg.window_len];
    for (i, row) in spec.frames.rows().into_iter().enumerate() {
        fft.inverse(row.as_slice().expect("row is contiguous"), &mut frame);
        let start = i * cfg.hop;
        for (t, &w) in window.iter().enumerate() {
            acc[start + t] += frame[t] * w;
            norm[start + t] += w * w;
        }
    }
    for (a, &n) in acc.iter_mut().zip(&norm) {
        if n > 1e-12 {
            *a /= n;
        } else {
            *a = 0.0;
        }
    }
    Ok(Utterance::new(acc, cfg.sample_rate, "istft"))
}

/// Entrywise squared magnitude.
pub fn power(spec: &ComplexSpectrogram) -> PowerSpectrogram {
    PowerSpectrogram { frames: spec.frames.mapv(|c| c.re * c.re + c.im * c.im) }
}

/// Total spectral energy of the spectrogram under the one-sided convention:
/// per frame, `(|X_0|^2 + 2 * sum_{0<k<W/2} |X_k|^2 + |X_{W/2}|^2) / W`.
/// Equals the window-weighted time-domain energy (Parseval).
pub fn spectral_energy(spec: &ComplexSpectrogram) -> f64 {
    let bins = spec.num_bins();
    let w = spec.config.window_len as f64;
    let mut total = 0.0;
    for row in spec.frames.rows() {
        let mut e = row[0].norm_sqr() + row[bins - 1].norm_sqr();
        for k in 1..bins - 1 {
            e += 2.0 * row[k].norm_sqr();
        }
        total += e / w;
    }
    total
}

/// Window-weighted time-domain energy over the same frames the STFT sees.
pub fn windowed_energy(u: &Utterance, cfg: &StftConfig) -> Result<f64, DspError> {
    let n_frames = cfg
        .num_frames(u.len())
        .ok_or(DspError::SignalTooShort { len: u.len(), window_len: cfg.window_len })?;
    let window = cfg.window();
    let mut total = 0.0;
    for i in 0..n_frames {
        let start = i * cfg.hop;
        for (t, &w) in window.iter().enumerate() {
            let x = u.samples[start + t] * w;
            total += x * x;
        }
    }
    Ok(total)
}

/// Ground-truth VAD by time-domain thresholding of clean speech: a frame is
/// active iff its RMS exceeds the loudest frame's RMS scaled by
/// `threshold_db` (default -30 dB). The threshold is relative, so labels are
/// invariant to global scaling; an all-zero signal yields all-zero labels.
pub fn vad_ground_truth(
    u: &Utterance,
    cfg: &StftConfig,
    threshold_db: f64,
) -> Result<LabelSeq, DspError> {
    cfg.validate()?;
    let n_frames = cfg
        .num_frames(u.len())
        .ok_or(DspError::SignalTooShort { len: u.len(), window_len: cfg.window_len })?;
    check_finite(&u.samples, "vad input")?;
    let rms: Vec<f64> = (0..n_frames)
        .map(|i| {
            let start = i * cfg.hop;
            let sum_sq: f64 = u.samples[start..start + cfg.window_len].iter().map(|x| x * x).sum();
            libm::sqrt(sum_sq / cfg.window_len as f64)
        })
        .collect();
    let max_rms = rms.iter().cloned().fold(0.0, f64::max);
    let threshold = max_rms * libm::pow(10.0, threshold_db / 20.0);
    let values = rms.iter().map(|&r| if r > threshold { 1.0 } else { 0.0 }).collect();
    Ok(LabelSeq::hard(values))
}

/// Default VAD threshold relative to the loudest frame, in dB.
pub const VAD_THRESHOLD_DB: f64 = -30.0;

/// Scale the noise so that the SNR **measured on samples inside active
/// frames** equals `snr_db`, then mix. The labels must come from
/// `vad_ground_truth` on `s` with the same `cfg`. Returns the mixture and
/// the noise scale that was applied.
pub fn mix_at_snr(
    s: &Utterance,
    b: &Utterance,
    snr_db: f64,
    labels: &LabelSeq,
    cfg: &StftConfig,
) -> Result<(Utterance, f64), DspError> {
    if s.len() != b.len() {
        return Err(DspError::LengthMismatch { left: s.len(), right: b.len() });
    }
    if s.sample_rate != b.sample_rate {
        return Err(DspError::SampleRateMismatch { expected: s.sample_rate, found: b.sample_rate });
    }
    check_finite(&s.samples, "mix speech input")?;
    check_finite(&b.samples, "mix noise input")?;
    let mask = active_sample_mask(s.len(), labels, cfg)?;
    let mut e_s = 0.0;
    let mut e_b = 0.0;
    let mut n_active = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            e_s += s.samples[i] * s.samples[i];
            e_b += b.samples[i] * b.samples[i];
            n_active += 1;
        }
    }
    if n_active == 0 {
        return Err(DspError::NoActiveFrames);
    }
    if e_b <= 0.0 {
        return Err(DspError::ZeroNoiseEnergy);
    }
    let scale = libm::sqrt(e_s / (e_b * libm::pow(10.0, snr_db / 10.0)));
    let samples = s
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&ss, &bb)| ss + scale * bb)
        .collect();
    Ok((Utterance::new(samples, s.sample_rate, s.id.clone()), scale))
}

/// Boolean per-sample mask covering the union of active frames. Frame i
/// covers samples [i*hop, i*hop + window_len).
fn active_sample_mask(
    len: usize,
    labels: &LabelSeq,
    cfg: &StftConfig,
) -> Result<Vec<bool>, DspError> {
    let frames = cfg
        .num_frames(len)
        .ok_or(DspError::SignalTooShort { len, window_len: cfg.window_len })?;
    if frames != labels.len() {
        return Err(DspError::LabelMismatch { labels: labels.len(), frames });
    }
    let mut mask = vec![false; len];
    for (i, &v) in labels.values.iter().enumerate() {
        if v > 0.5 {
            let start = i * cfg.hop;
            for m in &mut mask[start..start + cfg.window_len] {
                *m = true;
            }
        }
    }
    Ok(mask)
}

/// Recompute the active-segment SNR of a (speech, noise) pair after scaling;
/// used by tests and the corpus self-checks.
pub fn active_snr_db(
    s: &Utterance,
    scaled_noise: &Utterance,
    labels: &LabelSeq,
    cfg: &StftConfig,
) -> Result<f64, DspError> {
    if s.len() != scaled_noise.len() {
        return Err(DspError::LengthMismatch { left: s.len(), right: scaled_noise.len() });
    }
    let mask = active_sample_mask(s.len(), labels, cfg)?;
    let mut e_s = 0.0;
    let mut e_b = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            e_s += s.samples[i] * s.samples[i];
            e_b += scaled_noise.samples[i] * scaled_noise.samples[i];
        }
    }
    if e_b <= 0.0 {
        return Err(DspError::ZeroNoiseEnergy);
    }
    Ok(10.0 * libm::log10(e_s / e_b))
}
