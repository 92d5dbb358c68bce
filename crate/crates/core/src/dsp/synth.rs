//! Synthetic corpus generation.
//!
//! "Speech" is an amplitude-modulated harmonic stack — randomized
//! fundamental in [90, 250] Hz, 4..=10 harmonics, a formant-like resonance
//! on top of a 1/m^p spectral tilt — interleaved with genuine silences of
//! 0.2..0.8 s. A -80 dB Gaussian floor runs under the whole utterance so
//! that power spectra never degenerate to exact zeros while silence frames
//! still label as inactive. Stationary noises are white and pink;
//! nonstationary ones are on/off bursts (over a quiet bed) and slow
//! amplitude-modulated white noise.
//!
//! Every utterance draws from its own RNG streams keyed by
//! (seed, purpose, global utterance index), so corpora are bit-reproducible
//! and could be generated in any order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;

use super::{
    mix_at_snr, vad_ground_truth, CorpusSpec, DspError, LabelSeq, NoiseKind, StftConfig,
    Utterance, VAD_THRESHOLD_DB,
};
use crate::rng::{self, tag};

/// One corpus entry: aligned clean speech, raw noise, mixture, and labels.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: alloc::string::String,
    pub clean: Utterance,
    pub noise: Utterance,
    pub mixture: Utterance,
    pub labels: LabelSeq,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SynthCorpus {
    pub train: Vec<CorpusItem>,
    pub val: Vec<CorpusItem>,
    pub test: Vec<CorpusItem>,
}

impl SynthCorpus {
    pub fn split(&self, name: &str) -> Option<&[CorpusItem]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

const FLOOR_AMP: f64 = 1e-4; // -80 dB re full scale
const PEAK: f64 = 0.95;

fn peak_normalize(samples: &mut [f64], target: f64) {
    let peak = samples.iter().fold(0.0f64, |m, &x| m.max(libm::fabs(x)));
    if peak > 0.0 {
        let s = target / peak;
        for x in samples.iter_mut() {
            *x *= s;
        }
    }
}

fn rms_normalize(samples: &mut [f64], target: f64) {
    let ms: f64 = samples.iter().map(|x| x * x).sum::<f64>() / samples.len().max(1) as f64;
    if ms > 0.0 {
        let s = target / libm::sqrt(ms);
        for x in samples.iter_mut() {
            *x *= s;
        }
    }
}

/// A single voiced segment: harmonic stack with spectral tilt, one formant
/// resonance, slow amplitude modulation, and 10 ms edge ramps.
fn speech_segment(rng: &mut ChaCha8Rng, out: &mut [f64], sample_rate: u32) {
    let sr = sample_rate as f64;
    let f0 = rng::uniform_in(rng, 90.0, 250.0);
    let n_harm = 4 + rng::below(rng, 7); // 4..=10
    let tilt = rng::uniform_in(rng, 0.6, 1.4);
    let formant_hz = rng::uniform_in(rng, 300.0, 2500.0);
    let formant_bw = rng::uniform_in(rng, 150.0, 600.0);
    let am_hz = rng::uniform_in(rng, 2.0, 6.0);
    let am_phase = rng::uniform_in(rng, 0.0, 2.0 * PI);

    let nyquist = sr / 2.0;
    let mut amps = Vec::with_capacity(n_harm);
    let mut phases = Vec::with_capacity(n_harm);
    for m in 1..=n_harm {
        let f = f0 * m as f64;
        if f >= 0.95 * nyquist {
            break;
        }
        let resonance = 1.0 / (1.0 + ((f - formant_hz) / formant_bw) * ((f - formant_hz) / formant_bw));
        amps.push((1.0 / libm::pow(m as f64, tilt)) * (0.4 + 2.0 * resonance));
        phases.push(rng::uniform_in(rng, 0.0, 2.0 * PI));
    }

    let ramp = (0.01 * sr) as usize;
    let seg_len = out.len();
    for (t, o) in out.iter_mut().enumerate() {
        let time = t as f64 / sr;
        let mut v = 0.0;
        for (m, (&a, &ph)) in amps.iter().zip(&phases).enumerate() {
            v += a * libm::sin(2.0 * PI * f0 * (m + 1) as f64 * time + ph);
        }
        let am = 0.4 + 0.6 * 0.5 * (1.0 - libm::cos(2.0 * PI * am_hz * time + am_phase));
        let mut edge = 1.0;
        if t < ramp {
            edge = 0.5 * (1.0 - libm::cos(PI * t as f64 / ramp as f64));
        }
        let from_end = seg_len - 1 - t;
        if from_end < ramp {
            edge = edge.min(0.5 * (1.0 - libm::cos(PI * from_end as f64 / ramp as f64)));
        }
        *o = v * am * edge;
    }
}

/// Clean utterance: silence / speech segments alternating, then peak
/// normalization and the quiet Gaussian floor.
fn clean_utterance(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut samples = vec![0.0f64; len];
    // First silence is kept short so at least one full speech segment fits.
    let mut pos = (rng::uniform_in(rng, 0.2, 0.35) * sr) as usize;
    let mut speech_turn = true;
    while pos < len {
        if speech_turn {
            let dur = (rng::uniform_in(rng, 0.4, 0.8) * sr) as usize;
            let end = (pos + dur).min(len);
            speech_segment(rng, &mut samples[pos..end], sample_rate);
            pos = end;
        } else {
            let dur = (rng::uniform_in(rng, 0.2, 0.8) * sr) as usize;
            pos += dur;
        }
        speech_turn = !speech_turn;
    }
    peak_normalize(&mut samples, PEAK);
    for x in samples.iter_mut() {
        *x += FLOOR_AMP * rng::normal(rng);
    }
    samples
}

fn pink(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // Paul Kellet's three-pole approximation of a 1/f spectrum.
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    (0..len)
        .map(|_| {
            let w = rng::normal(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

fn noise_utterance(rng: &mut ChaCha8Rng, kind: NoiseKind, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut samples = match kind {
        NoiseKind::White => (0..len).map(|_| rng::normal(rng)).collect::<Vec<f64>>(),
        NoiseKind::Pink => pink(rng, len),
        NoiseKind::Burst => {
            // Loud bursts over a quiet bed, so active speech segments always
            // overlap nonzero noise energy.
            let mut out: Vec<f64> = (0..len).map(|_| 0.05 * rng::normal(rng)).collect();
            let mut pos = (rng::uniform_in(rng, 0.0, 0.3) * sr) as usize;
            loop {
                let on = (rng::uniform_in(rng, 0.08, 0.30) * sr) as usize;
                let off = (rng::uniform_in(rng, 0.10, 0.40) * sr) as usize;
                if pos >= len {
                    break;
                }
                let end = (pos + on).min(len);
                for o in &mut out[pos..end] {
                    *o += rng::normal(rng);
                }
                pos = end + off;
            }
            out
        }
        NoiseKind::Modulated => {
            let f = rng::uniform_in(rng, 0.5, 4.0);
            let phase = rng::uniform_in(rng, 0.0, 2.0 * PI);
            (0..len)
                .map(|t| {
                    let env = 0.15 + 0.85 * 0.5 * (1.0 + libm::sin(2.0 * PI * f * t as f64 / sr + phase));
                    env * rng::normal(rng)
                })
                .collect()
        }
    };
    rms_normalize(&mut samples, 0.1);
    samples
}

fn make_item(
    spec: &CorpusSpec,
    stft_cfg: &StftConfig,
    split: &str,
    index_in_split: usize,
    global_index: u64,
) -> Result<CorpusItem, DspError> {
    let len = (spec.utterance_seconds * stft_cfg.sample_rate as f64) as usize;
    let mut speech_rng = rng::stream(&[spec.seed, tag::CORPUS_SPEECH, global_index]);
    let mut noise_rng = rng::stream(&[spec.seed, tag::CORPUS_NOISE, global_index]);

    let kind = spec.noise_kinds[index_in_split % spec.noise_kinds.len()];
    let snr_db = spec.snr_db_list[(index_in_split / spec.noise_kinds.len()) % spec.snr_db_list.len()];

    let id = format!("{split}_{index_in_split:04}");
    let clean = Utterance::new(
        clean_utterance(&mut speech_rng, len, stft_cfg.sample_rate),
        stft_cfg.sample_rate,
        id.clone(),
    );
    let noise = Utterance::new(
        noise_utterance(&mut noise_rng, kind, len, stft_cfg.sample_rate),
        stft_cfg.sample_rate,
        format!("{id}_noise"),
    );
    let labels = vad_ground_truth(&clean, stft_cfg, VAD_THRESHOLD_DB)?;
    let (mut mixture, noise_scale) = mix_at_snr(&clean, &noise, snr_db, &labels, stft_cfg)?;
    mixture.id = format!("{id}_mix");
    Ok(CorpusItem { id, clean, noise, mixture, labels, snr_db, noise_kind: kind, noise_scale })
}

/// Generate the {train, val, test} corpus described by `spec`.
/// Deterministic given `spec.seed`.
pub fn synth_corpus(spec: &CorpusSpec, stft_cfg: &StftConfig) -> Result<SynthCorpus, DspError> {
    spec.validate()?;
    stft_cfg.validate()?;
    let mut corpus = SynthCorpus::default();
    let mut global = 0u64;
    for (split, count, bucket) in [
        ("train", spec.n_train, &mut corpus.train),
        ("val", spec.n_val, &mut corpus.val),
        ("test", spec.n_test, &mut corpus.test),
    ] {
        for i in 0..count {
            bucket.push(make_item(spec, stft_cfg, split, i, global)?);
            global += 1;
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::active_snr_db;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_train: 3,
            n_val: 1,
            n_test: 2,
            utterance_seconds: 2.0,
            noise_kinds: vec![NoiseKind::White, NoiseKind::Burst],
            snr_db_list: vec![0.0, 5.0],
            seed: 42,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = StftConfig::default();
        let a = synth_corpus(&small_spec(), &cfg).unwrap();
        let b = synth_corpus(&small_spec(), &cfg).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.clean.samples, y.clean.samples);
            assert_eq!(x.noise.samples, y.noise.samples);
            assert_eq!(x.mixture.samples, y.mixture.samples);
            assert_eq!(x.labels.values, y.labels.values);
        }
        let c = synth_corpus(&CorpusSpec { seed: 43, ..small_spec() }, &cfg).unwrap();
        assert_ne!(a.train[0].clean.samples, c.train[0].clean.samples);
    }

    #[test]
    fn every_clean_utterance_has_active_and_silent_frames() {
        let cfg = StftConfig::default();
        let corpus = synth_corpus(&small_spec(), &cfg).unwrap();
        for item in corpus.train.iter().chain(&corpus.val).chain(&corpus.test) {
            let labels = vad_ground_truth(&item.clean, &cfg, VAD_THRESHOLD_DB).unwrap();
            let active = labels.values.iter().filter(|&&v| v == 1.0).count();
            assert!(active >= 1, "{}: no active frames", item.id);
            assert!(active < labels.len(), "{}: no silent frames", item.id);
        }
    }

    #[test]
    fn mixtures_hit_their_spec_snr() {
        let cfg = StftConfig::default();
        let corpus = synth_corpus(&small_spec(), &cfg).unwrap();
        for item in corpus.test.iter().chain(&corpus.train) {
            let scaled = Utterance::new(
                item.noise.samples.iter().map(|v| v * item.noise_scale).collect(),
                16_000,
                "sn",
            );
            let measured = active_snr_db(&item.clean, &scaled, &item.labels, &cfg).unwrap();
            assert!(
                (measured - item.snr_db).abs() < 1e-6,
                "{}: measured {measured}, wanted {}",
                item.id,
                item.snr_db
            );
        }
    }
}
