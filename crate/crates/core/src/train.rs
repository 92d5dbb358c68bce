//! Training loops for the three variants: frame-level batching, the
//! two-step adversarial update, early stopping with best-epoch restore,
//! and checkpointing.
//!
//! Each training step runs (1) one Adam update of the encoder, classifier,
//! and decoder from `model_loss`, then (2), for the adversarial variant,
//! one Adam update of the discriminator from `discriminator_loss` with its
//! own optimizer state. Early stopping watches the validation
//! adversarial-encoder term for the adversarial variant (lower means the
//! discriminator is closer to maximal uncertainty) and validation
//! `recon + kl` for the baselines.
//!
//! All randomness (shuffles, reparameterization noise) is drawn from
//! streams keyed by (seed, purpose, epoch), so a checkpoint taken at an
//! epoch boundary resumes bit-exactly.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, CorpusItem, LabelSeq, PowerSpectrogram, StftConfig};
use crate::nn::{self, AdamHyper, AdamState, MlpParams, NnError};
use crate::rng::{self, tag};
use crate::serial::{Reader, SerialError, Writer};
use crate::vae::{
    discriminator_loss, model_loss, model_loss_value, Ablation, LossBreakdown, ModelBundle,
    VaeError, Variant,
};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    MisalignedLabels { utterance: usize, labels: usize, frames: usize },
    NonFiniteLoss { epoch: usize, batch: usize },
    BadConfig(String),
    /// Resume attempted with a bundle/config that does not match the state.
    ResumeMismatch(String),
    Vae(VaeError),
    Nn(NnError),
    Dsp(dsp::DspError),
    Serial(SerialError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::MisalignedLabels { utterance, labels, frames } => {
                write!(f, "utterance {utterance}: {labels} labels but {frames} frames")
            }
            TrainError::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
            TrainError::BadConfig(msg) => write!(f, "bad train config: {msg}"),
            TrainError::ResumeMismatch(msg) => write!(f, "resume mismatch: {msg}"),
            TrainError::Vae(e) => write!(f, "{e}"),
            TrainError::Nn(e) => write!(f, "{e}"),
            TrainError::Dsp(e) => write!(f, "{e}"),
            TrainError::Serial(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<VaeError> for TrainError {
    fn from(e: VaeError) -> Self {
        TrainError::Vae(e)
    }
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Nn(e)
    }
}

impl From<dsp::DspError> for TrainError {
    fn from(e: dsp::DspError) -> Self {
        TrainError::Dsp(e)
    }
}

impl From<SerialError> for TrainError {
    fn from(e: SerialError) -> Self {
        TrainError::Serial(e)
    }
}

/// Training configuration. Defaults: batch 128, patience 10, 500 epochs
/// cap, Adam at 1e-3, alpha = beta = 10, latent dimension 16.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub variant: Variant,
    pub ablation: Ablation,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            patience_epochs: 10,
            max_epochs: 500,
            lr: 1e-3,
            alpha: 10.0,
            beta: 10.0,
            seed: 0,
            variant: Variant::Vae,
            ablation: Ablation::None,
            latent_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig(String::from("batch_size must be >= 1")));
        }
        if self.patience_epochs == 0 {
            return Err(TrainError::BadConfig(String::from("patience_epochs must be >= 1")));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::BadConfig(String::from("max_epochs must be >= 1")));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::BadConfig(String::from("lr must be positive")));
        }
        Ok(())
    }
}

/// Frame-level dataset: power-spectrum rows pooled across utterances with
/// their aligned labels.
#[derive(Debug, Clone)]
pub struct FrameDataset {
    pub power: Array2<f64>,
    pub labels: Array1<f64>,
}

impl FrameDataset {
    pub fn len(&self) -> usize {
        self.power.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of active frames.
    pub fn label_balance(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&v| v > 0.5).count() as f64 / self.len() as f64
    }

    /// Deterministic row order for one epoch.
    pub fn shuffled_indices(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut r = rng::stream(&[seed, tag::SHUFFLE, epoch as u64]);
        rng::shuffle(&mut r, &mut order);
        order
    }

    pub fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array1<f64>) {
        (
            self.power.select(Axis(0), idx),
            Array1::from_iter(idx.iter().map(|&i| self.labels[i])),
        )
    }
}

/// Pool per-utterance power spectrograms and labels into one frame dataset.
pub fn make_frame_dataset(
    spectra: &[PowerSpectrogram],
    labels: &[LabelSeq],
) -> Result<FrameDataset, TrainError> {
    if spectra.len() != labels.len() {
        return Err(TrainError::MisalignedLabels {
            utterance: usize::MAX,
            labels: labels.len(),
            frames: spectra.len(),
        });
    }
    let mut total = 0;
    for (u, (s, l)) in spectra.iter().zip(labels).enumerate() {
        if s.num_frames() != l.len() {
            return Err(TrainError::MisalignedLabels {
                utterance: u,
                labels: l.len(),
                frames: s.num_frames(),
            });
        }
        total += s.num_frames();
    }
    let bins = spectra.first().map(|s| s.frames.ncols()).unwrap_or(0);
    let mut power = Array2::zeros((total, bins));
    let mut y = Array1::zeros(total);
    let mut row = 0;
    for (s, l) in spectra.iter().zip(labels) {
        for (frame, &label) in s.frames.rows().into_iter().zip(&l.values) {
            power.row_mut(row).assign(&frame);
            y[row] = label;
            row += 1;
        }
    }
    Ok(FrameDataset { power, labels: y })
}

/// Convenience: frame dataset over the clean utterances of corpus items.
pub fn dataset_from_corpus(
    items: &[CorpusItem],
    cfg: &StftConfig,
) -> Result<FrameDataset, TrainError> {
    let mut spectra = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for item in items {
        spectra.push(dsp::power(&dsp::stft(&item.clean, cfg)?));
        labels.push(item.labels.clone());
    }
    make_frame_dataset(&spectra, &labels)
}

/// One epoch in the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub early_stop_epoch: Option<usize>,
}

/// Patience-based early stopping on a minimized metric; strictly smaller
/// means improved.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub since_best: usize,
    pub stopped_at: Option<usize>,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_metric: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            stopped_at: None,
        }
    }

    /// Feed the metric of `epoch`; returns true when this epoch improved on
    /// the best so far. Sets `stopped_at` once `patience` consecutive
    /// non-improving epochs have been seen.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric < self.best_metric {
            self.best_metric = metric;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.stopped_at = Some(epoch);
            }
            false
        }
    }
}

struct ModelAdam {
    encoder: AdamState,
    classifier: Option<AdamState>,
    decoder: AdamState,
}

/// Parameter snapshot of every network in a bundle.
#[derive(Debug, Clone, PartialEq)]
struct BundleParams {
    encoder: MlpParams,
    classifier: Option<MlpParams>,
    decoder: MlpParams,
    discriminator: Option<MlpParams>,
}

impl BundleParams {
    fn of(bundle: &ModelBundle) -> Self {
        Self {
            encoder: bundle.encoder.params.clone(),
            classifier: bundle.classifier.as_ref().map(|n| n.params.clone()),
            decoder: bundle.decoder.params.clone(),
            discriminator: bundle.discriminator.as_ref().map(|n| n.params.clone()),
        }
    }

    fn restore(&self, bundle: &mut ModelBundle) {
        bundle.encoder.params = self.encoder.clone();
        if let (Some(net), Some(p)) = (bundle.classifier.as_mut(), self.classifier.as_ref()) {
            net.params = p.clone();
        }
        bundle.decoder.params = self.decoder.clone();
        if let (Some(net), Some(p)) = (bundle.discriminator.as_mut(), self.discriminator.as_ref()) {
            net.params = p.clone();
        }
    }
}

/// Full state of a training run; checkpointable between epochs.
pub struct TrainState {
    pub bundle: ModelBundle,
    pub cfg: TrainConfig,
    adam_model: ModelAdam,
    adam_disc: Option<AdamState>,
    stopper: EarlyStopper,
    best_params: BundleParams,
    pub log: TrainLog,
    next_epoch: usize,
}

impl TrainState {
    pub fn new(bundle: ModelBundle, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        bundle.validate()?;
        if bundle.variant != cfg.variant || bundle.ablation != cfg.ablation {
            return Err(TrainError::ResumeMismatch(String::from(
                "bundle variant/ablation does not match config",
            )));
        }
        let hyper = AdamHyper { lr: cfg.lr, ..Default::default() };
        let adam_model = ModelAdam {
            encoder: AdamState::new(&bundle.encoder.params, hyper),
            classifier: bundle.classifier.as_ref().map(|n| AdamState::new(&n.params, hyper)),
            decoder: AdamState::new(&bundle.decoder.params, hyper),
        };
        let adam_disc = bundle.discriminator.as_ref().map(|n| AdamState::new(&n.params, hyper));
        let best_params = BundleParams::of(&bundle);
        Ok(Self {
            bundle,
            adam_model,
            adam_disc,
            stopper: EarlyStopper::new(cfg.patience_epochs),
            best_params,
            log: TrainLog::default(),
            next_epoch: 0,
            cfg,
        })
    }

    pub fn finished(&self) -> bool {
        self.stopper.stopped_at.is_some() || self.next_epoch >= self.cfg.max_epochs
    }

    pub fn epochs_done(&self) -> usize {
        self.next_epoch
    }

    /// One full epoch: shuffled training batches (two-step update), then a
    /// validation sweep and the early-stopping bookkeeping.
    pub fn run_epoch(
        &mut self,
        train_ds: &FrameDataset,
        val_ds: &FrameDataset,
        clock: &mut dyn FnMut() -> f64,
    ) -> Result<EpochRecord, TrainError> {
        let epoch = self.next_epoch;
        let started = clock();
        let seed = self.cfg.seed;
        let batch_size = self.cfg.batch_size;
        let latent = self.bundle.latent_dim;

        let order = train_ds.shuffled_indices(seed, epoch);
        let mut noise_rng = rng::stream(&[seed, tag::TRAIN_NOISE, epoch as u64]);
        let mut train_sum = SumBreakdown::default();
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let (p, y) = train_ds.gather(chunk);
            let mut noise = Array2::zeros((chunk.len(), latent));
            rng::fill_normal(&mut noise_rng, noise.as_slice_mut().expect("contiguous"));

            // step 1: encoder/classifier/decoder
            let (breakdown, grads) = model_loss(&self.bundle, p.view(), y.view(), noise.view())?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            nn::adam_step(
                &mut self.bundle.encoder.params,
                &grads.encoder,
                &mut self.adam_model.encoder,
            )?;
            if let (Some(net), Some(g), Some(state)) = (
                self.bundle.classifier.as_mut(),
                grads.classifier.as_ref(),
                self.adam_model.classifier.as_mut(),
            ) {
                if self.bundle.ablation == Ablation::None {
                    nn::adam_step(&mut net.params, g, state)?;
                }
            }
            nn::adam_step(
                &mut self.bundle.decoder.params,
                &grads.decoder,
                &mut self.adam_model.decoder,
            )?;

            // step 2: discriminator, with a fresh latent sample from the
            // just-updated encoder
            let mut dis_bce = breakdown.dis_bce;
            if self.bundle.variant == Variant::Acvae {
                let mut noise2 = Array2::zeros((chunk.len(), latent));
                rng::fill_normal(&mut noise_rng, noise2.as_slice_mut().expect("contiguous"));
                let (value, psi_grads) =
                    discriminator_loss(&self.bundle, p.view(), y.view(), noise2.view())?;
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
                }
                let state = self.adam_disc.as_mut().expect("acvae has a discriminator");
                let net = self.bundle.discriminator.as_mut().expect("acvae has a discriminator");
                nn::adam_step(&mut net.params, &psi_grads, state)?;
                dis_bce = value / self.bundle.alpha.max(f64::MIN_POSITIVE);
            }
            train_sum.add(&LossBreakdown { dis_bce, ..breakdown }, chunk.len());
        }
        let train_mean = train_sum.mean();

        let val_mean = self.evaluate(val_ds, epoch)?;
        if !val_mean.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: usize::MAX });
        }

        let metric = match self.bundle.variant {
            Variant::Acvae => val_mean.adv_ent,
            _ => val_mean.recon + val_mean.kl,
        };
        if self.stopper.observe(epoch, metric) {
            self.best_params = BundleParams::of(&self.bundle);
        }

        let record =
            EpochRecord { epoch, train: train_mean, val: val_mean, wall_secs: clock() - started };
        self.log.records.push(record);
        self.log.best_epoch = self.stopper.best_epoch;
        self.log.early_stop_epoch = self.stopper.stopped_at;
        self.next_epoch += 1;
        Ok(record)
    }

    /// Mean loss terms over a dataset with deterministic per-epoch noise.
    fn evaluate(&self, ds: &FrameDataset, epoch: usize) -> Result<LossBreakdown, TrainError> {
        let mut rng = rng::stream(&[self.cfg.seed, tag::VAL_NOISE, epoch as u64]);
        let mut sum = SumBreakdown::default();
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(self.cfg.batch_size) {
            let (p, y) = ds.gather(chunk);
            let mut noise = Array2::zeros((chunk.len(), self.bundle.latent_dim));
            rng::fill_normal(&mut rng, noise.as_slice_mut().expect("contiguous"));
            let breakdown = model_loss_value(&self.bundle, p.view(), y.view(), noise.view())?;
            sum.add(&breakdown, chunk.len());
        }
        Ok(sum.mean())
    }

    /// Restore the best-epoch parameters and hand back bundle and log.
    pub fn finish(mut self) -> (ModelBundle, TrainLog) {
        self.best_params.restore(&mut self.bundle);
        (self.bundle, self.log)
    }

    /// Checkpoint container: magic "ACVC", u32 version, the bundle, the
    /// config, epoch counter, early-stop state, both optimizer states, the
    /// best-parameter snapshot, and the log so far. Randomness is re-derived
    /// from (seed, epoch), so no generator state needs to be stored.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(b"ACVC");
        w.u32(1);
        w.bytes(&self.bundle.to_bytes());

        w.u64(self.cfg.batch_size as u64);
        w.u64(self.cfg.patience_epochs as u64);
        w.u64(self.cfg.max_epochs as u64);
        w.f64(self.cfg.lr);
        w.f64(self.cfg.alpha);
        w.f64(self.cfg.beta);
        w.u64(self.cfg.seed);
        w.u8(match self.cfg.variant {
            Variant::Vae => 0,
            Variant::Cvae => 1,
            Variant::Acvae => 2,
        });
        w.u8(match self.cfg.ablation {
            Ablation::None => 0,
            Ablation::HardLabelBeta0 => 1,
            Ablation::HardLabelBeta0NegDis => 2,
        });
        w.u64(self.cfg.latent_dim as u64);

        w.u64(self.next_epoch as u64);

        w.f64(self.stopper.best_metric);
        w.u64(self.stopper.best_epoch as u64);
        w.u64(self.stopper.since_best as u64);
        w.u64(self.stopper.stopped_at.map(|e| e as u64 + 1).unwrap_or(0));

        let write_adam = |w: &mut Writer, state: &AdamState| {
            w.u64(state.step);
            nn::codec::write_params(w, &state.m);
            nn::codec::write_params(w, &state.v);
        };
        write_adam(&mut w, &self.adam_model.encoder);
        if let Some(s) = &self.adam_model.classifier {
            write_adam(&mut w, s);
        }
        write_adam(&mut w, &self.adam_model.decoder);
        if let Some(s) = &self.adam_disc {
            write_adam(&mut w, s);
        }

        nn::codec::write_params(&mut w, &self.best_params.encoder);
        if let Some(p) = &self.best_params.classifier {
            nn::codec::write_params(&mut w, p);
        }
        nn::codec::write_params(&mut w, &self.best_params.decoder);
        if let Some(p) = &self.best_params.discriminator {
            nn::codec::write_params(&mut w, p);
        }

        w.u64(self.log.records.len() as u64);
        for r in &self.log.records {
            w.u64(r.epoch as u64);
            for v in [
                r.train.recon,
                r.train.kl,
                r.train.adv_ent,
                r.train.clf_bce,
                r.train.dis_bce,
                r.train.total,
                r.val.recon,
                r.val.kl,
                r.val.adv_ent,
                r.val.clf_bce,
                r.val.dis_bce,
                r.val.total,
                r.wall_secs,
            ] {
                w.f64(v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader::new(data);
        r.magic(b"ACVC")?;
        r.version(1)?;
        let bundle_bytes = r.byte_vec()?;
        let bundle = ModelBundle::from_bytes(&bundle_bytes)?;

        let cfg = TrainConfig {
            batch_size: r.u64()? as usize,
            patience_epochs: r.u64()? as usize,
            max_epochs: r.u64()? as usize,
            lr: r.f64()?,
            alpha: r.f64()?,
            beta: r.f64()?,
            seed: r.u64()?,
            variant: match r.u8()? {
                0 => Variant::Vae,
                1 => Variant::Cvae,
                2 => Variant::Acvae,
                other => {
                    return Err(TrainError::Serial(SerialError::Invalid(alloc::format!(
                        "unknown variant tag {other}"
                    ))))
                }
            },
            ablation: match r.u8()? {
                0 => Ablation::None,
                1 => Ablation::HardLabelBeta0,
                2 => Ablation::HardLabelBeta0NegDis,
                other => {
                    return Err(TrainError::Serial(SerialError::Invalid(alloc::format!(
                        "unknown ablation tag {other}"
                    ))))
                }
            },
            latent_dim: r.u64()? as usize,
        };
        let next_epoch = r.u64()? as usize;

        let mut stopper = EarlyStopper::new(cfg.patience_epochs);
        stopper.best_metric = r.f64()?;
        stopper.best_epoch = r.u64()? as usize;
        stopper.since_best = r.u64()? as usize;
        stopper.stopped_at = match r.u64()? {
            0 => None,
            e => Some(e as usize - 1),
        };

        let hyper = AdamHyper { lr: cfg.lr, ..Default::default() };
        let mut read_adam = |r: &mut Reader, spec: &nn::MlpSpec| -> Result<AdamState, TrainError> {
            let step = r.u64()?;
            let m = nn::codec::read_params(r, spec)?;
            let v = nn::codec::read_params(r, spec)?;
            Ok(AdamState { m, v, step, hyper })
        };
        let adam_model = ModelAdam {
            encoder: read_adam(&mut r, &bundle.encoder.spec)?,
            classifier: match &bundle.classifier {
                Some(net) => Some(read_adam(&mut r, &net.spec)?),
                None => None,
            },
            decoder: read_adam(&mut r, &bundle.decoder.spec)?,
        };
        let adam_disc = match &bundle.discriminator {
            Some(net) => Some(read_adam(&mut r, &net.spec)?),
            None => None,
        };

        let best_params = BundleParams {
            encoder: nn::codec::read_params(&mut r, &bundle.encoder.spec)?,
            classifier: match &bundle.classifier {
                Some(net) => Some(nn::codec::read_params(&mut r, &net.spec)?),
                None => None,
            },
            decoder: nn::codec::read_params(&mut r, &bundle.decoder.spec)?,
            discriminator: match &bundle.discriminator {
                Some(net) => Some(nn::codec::read_params(&mut r, &net.spec)?),
                None => None,
            },
        };

        let n_records = r.u64()? as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let epoch = r.u64()? as usize;
            let mut vals = [0.0f64; 13];
            for v in vals.iter_mut() {
                *v = r.f64()?;
            }
            records.push(EpochRecord {
                epoch,
                train: LossBreakdown {
                    recon: vals[0],
                    kl: vals[1],
                    adv_ent: vals[2],
                    clf_bce: vals[3],
                    dis_bce: vals[4],
                    total: vals[5],
                },
                val: LossBreakdown {
                    recon: vals[6],
                    kl: vals[7],
                    adv_ent: vals[8],
                    clf_bce: vals[9],
                    dis_bce: vals[10],
                    total: vals[11],
                },
                wall_secs: vals[12],
            });
        }
        r.expect_end()?;

        let log = TrainLog {
            records,
            best_epoch: stopper.best_epoch,
            early_stop_epoch: stopper.stopped_at,
        };
        Ok(Self { bundle, cfg, adam_model, adam_disc, stopper, best_params, log, next_epoch })
    }
}

#[derive(Default)]
struct SumBreakdown {
    recon: f64,
    kl: f64,
    adv_ent: f64,
    clf_bce: f64,
    dis_bce: f64,
    total: f64,
    rows: usize,
}

impl SumBreakdown {
    fn add(&mut self, b: &LossBreakdown, rows: usize) {
        let w = rows as f64;
        self.recon += b.recon * w;
        self.kl += b.kl * w;
        self.adv_ent += b.adv_ent * w;
        self.clf_bce += b.clf_bce * w;
        self.dis_bce += b.dis_bce * w;
        self.total += b.total * w;
        self.rows += rows;
    }

    fn mean(&self) -> LossBreakdown {
        let w = (self.rows as f64).max(1.0);
        LossBreakdown {
            recon: self.recon / w,
            kl: self.kl / w,
            adv_ent: self.adv_ent / w,
            clf_bce: self.clf_bce / w,
            dis_bce: self.dis_bce / w,
            total: self.total / w,
        }
    }
}

/// Train a fresh bundle to completion (early stop or epoch cap), restoring
/// the best-epoch parameters. `clock` supplies wall time in seconds for the
/// log; pass `&mut || 0.0` when timing is irrelevant.
pub fn train(
    bundle: ModelBundle,
    train_ds: &FrameDataset,
    val_ds: &FrameDataset,
    cfg: TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(ModelBundle, TrainLog), TrainError> {
    let mut state = TrainState::new(bundle, cfg)?;
    while !state.finished() {
        state.run_epoch(train_ds, val_ds, clock)?;
    }
    Ok(state.finish())
}
