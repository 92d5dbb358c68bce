//! The three generative speech priors and every loss term.
//!
//! A [`ModelBundle`] holds the networks of one variant:
//!
//! - `Vae`: encoder (F -> 2L, tanh hidden, identity head) and decoder
//!   (L -> F, tanh hidden, exp head).
//! - `Cvae`: the same with the hard label appended to both the encoder
//!   input (F+1) and the decoder input (L+1).
//! - `Acvae`: encoder without label input, decoder conditioned on the
//!   classifier's soft label estimate, plus the label classifier
//!   (F -> 1, relu hidden, sigmoid head) and the latent discriminator
//!   (L -> 1, relu hidden, sigmoid head) used for adversarial training.
//!
//! Sign conventions: every objective here is **minimized**. The evidence
//! lower bound appears as `loss_recon + loss_kl` (its negation up to the
//! constant F*ln(pi) per frame), the discriminator and classifier use plain
//! binary cross entropy, and the adversarial encoder term is the negative
//! binary entropy of the discriminator output (minimal at an output of 1/2,
//! i.e. a maximally uncertain discriminator).
//!
//! `model_loss` carries gradients for the encoder, classifier, and decoder
//! only; the discriminator sees gradients exclusively through
//! `discriminator_loss`, which in turn treats the latent sample as a
//! constant input. This is the two-step update of the adversarial scheme.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::nn::{self, Activation, MlpParams, MlpSpec, NnError};
use crate::rng::{self, tag};
use crate::serial::{Reader, SerialError, Writer};

/// Additive floor inside the log-power feature map, log(p + FLOOR).
pub const POWER_FLOOR: f64 = 1e-10;
/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before any log.
pub const PROB_CLAMP: f64 = 1e-7;
/// Default latent dimension.
pub const LATENT_DIM: usize = 16;
/// Default adversarial and classifier loss weights.
pub const DEFAULT_ALPHA: f64 = 10.0;
pub const DEFAULT_BETA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum VaeError {
    /// Operation not defined for this variant, or required argument missing.
    VariantMismatch(&'static str),
    /// Conditioning value outside [0, 1].
    CondOutOfRange(f64),
    /// Decoder variance (or provided variance) not strictly positive.
    NonPositiveVariance,
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    Nn(NnError),
    Serial(SerialError),
    Invalid(String),
}

impl fmt::Display for VaeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VaeError::VariantMismatch(msg) => write!(f, "variant mismatch: {msg}"),
            VaeError::CondOutOfRange(v) => write!(f, "conditioning value {v} outside [0, 1]"),
            VaeError::NonPositiveVariance => write!(f, "variance must be strictly positive"),
            VaeError::ShapeMismatch { what, expected, found } => {
                write!(f, "shape mismatch in {what}: expected {expected}, found {found}")
            }
            VaeError::Nn(e) => write!(f, "{e}"),
            VaeError::Serial(e) => write!(f, "{e}"),
            VaeError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl core::error::Error for VaeError {}

impl From<NnError> for VaeError {
    fn from(e: NnError) -> Self {
        VaeError::Nn(e)
    }
}

impl From<SerialError> for VaeError {
    fn from(e: SerialError) -> Self {
        VaeError::Serial(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vae,
    Cvae,
    Acvae,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::Cvae => "cvae",
            Variant::Acvae => "acvae",
        }
    }
}

/// Training-scheme ablations of the adversarial variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// The full scheme: soft-label decoder conditioning, negative-entropy
    /// adversarial term, classifier BCE.
    #[serde(rename = "none")]
    None,
    /// Hard label into the decoder, beta = 0 (classifier unused).
    #[serde(rename = "hard_label_beta0")]
    HardLabelBeta0,
    /// As above, with the adversarial-encoder term replaced by the negated
    /// discriminator BCE.
    #[serde(rename = "hard_label_beta0_negdis")]
    HardLabelBeta0NegDis,
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::HardLabelBeta0 => "hard_label_beta0",
            Ablation::HardLabelBeta0NegDis => "hard_label_beta0_negdis",
        }
    }
}

/// Per-frame Gaussian posterior parameters (mean and log-variance).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
}

/// Sampled latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Array2<f64>,
}

/// One network: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    fn glorot(spec: MlpSpec, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let params = MlpParams::glorot(&spec, rng);
        Self { spec, params }
    }
}

/// All networks and loss weights of one model variant.
#[derive(Debug)]
pub struct ModelBundle {
    pub variant: Variant,
    pub ablation: Ablation,
    pub alpha: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub stft: StftConfig,
    pub encoder: Mlp,
    pub classifier: Option<Mlp>,
    pub decoder: Mlp,
    pub discriminator: Option<Mlp>,
    /// Counts classifier forward passes (ablation invariant checks).
    classifier_evals: AtomicU64,
}

impl Clone for ModelBundle {
    fn clone(&self) -> Self {
        Self {
            variant: self.variant,
            ablation: self.ablation,
            alpha: self.alpha,
            beta: self.beta,
            latent_dim: self.latent_dim,
            stft: self.stft,
            encoder: self.encoder.clone(),
            classifier: self.classifier.clone(),
            decoder: self.decoder.clone(),
            discriminator: self.discriminator.clone(),
            classifier_evals: AtomicU64::new(self.classifier_evals.load(Ordering::Relaxed)),
        }
    }
}

impl ModelBundle {
    /// Build a bundle with Glorot-initialized networks in the standard
    /// configuration (two tanh/relu hidden layers of 128 units each).
    pub fn new(
        variant: Variant,
        ablation: Ablation,
        stft: StftConfig,
        latent_dim: usize,
        alpha: f64,
        beta: f64,
        seed: u64,
    ) -> Result<Self, VaeError> {
        if ablation != Ablation::None && variant != Variant::Acvae {
            return Err(VaeError::VariantMismatch("ablations apply to the acvae variant only"));
        }
        if alpha < 0.0 || beta < 0.0 {
            return Err(VaeError::Invalid(String::from("alpha and beta must be >= 0")));
        }
        if latent_dim == 0 {
            return Err(VaeError::Invalid(String::from("latent_dim must be >= 1")));
        }
        let bins = stft.bins();
        let enc_in = if variant == Variant::Cvae { bins + 1 } else { bins };
        let dec_in = if variant == Variant::Vae { latent_dim } else { latent_dim + 1 };

        let mut enc_rng = rng::stream(&[seed, tag::MODEL_INIT, 0]);
        let mut dec_rng = rng::stream(&[seed, tag::MODEL_INIT, 1]);
        let encoder = Mlp::glorot(
            MlpSpec::standard(enc_in, Activation::Tanh, 2 * latent_dim, Activation::Identity),
            &mut enc_rng,
        );
        let decoder = Mlp::glorot(
            MlpSpec::standard(dec_in, Activation::Tanh, bins, Activation::Exp),
            &mut dec_rng,
        );
        let (classifier, discriminator) = if variant == Variant::Acvae {
            let mut clf_rng = rng::stream(&[seed, tag::MODEL_INIT, 2]);
            let mut dis_rng = rng::stream(&[seed, tag::MODEL_INIT, 3]);
            (
                Some(Mlp::glorot(
                    MlpSpec::standard(bins, Activation::Relu, 1, Activation::Sigmoid),
                    &mut clf_rng,
                )),
                Some(Mlp::glorot(
                    MlpSpec::standard(latent_dim, Activation::Relu, 1, Activation::Sigmoid),
                    &mut dis_rng,
                )),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            variant,
            ablation,
            alpha,
            beta,
            latent_dim,
            stft,
            encoder,
            classifier,
            decoder,
            discriminator,
            classifier_evals: AtomicU64::new(0),
        })
    }

    pub fn classifier_eval_count(&self) -> u64 {
        self.classifier_evals.load(Ordering::Relaxed)
    }

    fn count_classifier_eval(&self) {
        self.classifier_evals.fetch_add(1, Ordering::Relaxed);
    }

    /// Serialize as a versioned container. Layout (little-endian):
    /// magic "ACVB", u32 version, variant u8, ablation u8, alpha f64,
    /// beta f64, latent_dim u32, sample_rate u32, window_len u32, hop u32,
    /// flags u8 (bit0 classifier, bit1 discriminator), then each present
    /// network in order encoder/classifier/decoder/discriminator as an
    /// embedded `nn::codec` spec + params block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(b"ACVB");
        w.u32(1);
        w.u8(match self.variant {
            Variant::Vae => 0,
            Variant::Cvae => 1,
            Variant::Acvae => 2,
        });
        w.u8(match self.ablation {
            Ablation::None => 0,
            Ablation::HardLabelBeta0 => 1,
            Ablation::HardLabelBeta0NegDis => 2,
        });
        w.f64(self.alpha);
        w.f64(self.beta);
        w.u32(self.latent_dim as u32);
        w.u32(self.stft.sample_rate);
        w.u32(self.stft.window_len as u32);
        w.u32(self.stft.hop as u32);
        let mut flags = 0u8;
        if self.classifier.is_some() {
            flags |= 1;
        }
        if self.discriminator.is_some() {
            flags |= 2;
        }
        w.u8(flags);
        for net in
            [Some(&self.encoder), self.classifier.as_ref(), Some(&self.decoder), self.discriminator.as_ref()]
                .into_iter()
                .flatten()
        {
            nn::codec::write_spec(&mut w, &net.spec);
            nn::codec::write_params(&mut w, &net.params);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, VaeError> {
        let mut r = Reader::new(data);
        r.magic(b"ACVB")?;
        r.version(1)?;
        let variant = match r.u8()? {
            0 => Variant::Vae,
            1 => Variant::Cvae,
            2 => Variant::Acvae,
            other => return Err(VaeError::Invalid(alloc::format!("unknown variant tag {other}"))),
        };
        let ablation = match r.u8()? {
            0 => Ablation::None,
            1 => Ablation::HardLabelBeta0,
            2 => Ablation::HardLabelBeta0NegDis,
            other => return Err(VaeError::Invalid(alloc::format!("unknown ablation tag {other}"))),
        };
        let alpha = r.f64()?;
        let beta = r.f64()?;
        let latent_dim = r.u32()? as usize;
        let stft = StftConfig {
            sample_rate: r.u32()?,
            window_len: r.u32()? as usize,
            hop: r.u32()? as usize,
        };
        let flags = r.u8()?;
        let read_net = |r: &mut Reader| -> Result<Mlp, VaeError> {
            let spec = nn::codec::read_spec(r)?;
            let params = nn::codec::read_params(r, &spec)?;
            Ok(Mlp { spec, params })
        };
        let encoder = read_net(&mut r)?;
        let classifier = if flags & 1 != 0 { Some(read_net(&mut r)?) } else { None };
        let decoder = read_net(&mut r)?;
        let discriminator = if flags & 2 != 0 { Some(read_net(&mut r)?) } else { None };
        r.expect_end()?;

        let bundle = Self {
            variant,
            ablation,
            alpha,
            beta,
            latent_dim,
            stft,
            encoder,
            classifier,
            decoder,
            discriminator,
            classifier_evals: AtomicU64::new(0),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let bins = self.stft.bins();
        let enc_in = if self.variant == Variant::Cvae { bins + 1 } else { bins };
        if self.encoder.spec.input_dim != enc_in {
            return Err(VaeError::ShapeMismatch {
                what: "encoder input",
                expected: enc_in,
                found: self.encoder.spec.input_dim,
            });
        }
        if self.encoder.spec.output_dim != 2 * self.latent_dim {
            return Err(VaeError::ShapeMismatch {
                what: "encoder output",
                expected: 2 * self.latent_dim,
                found: self.encoder.spec.output_dim,
            });
        }
        let dec_in = if self.variant == Variant::Vae { self.latent_dim } else { self.latent_dim + 1 };
        if self.decoder.spec.input_dim != dec_in {
            return Err(VaeError::ShapeMismatch {
                what: "decoder input",
                expected: dec_in,
                found: self.decoder.spec.input_dim,
            });
        }
        if self.decoder.spec.output_dim != bins {
            return Err(VaeError::ShapeMismatch {
                what: "decoder output",
                expected: bins,
                found: self.decoder.spec.output_dim,
            });
        }
        if self.variant == Variant::Acvae
            && (self.classifier.is_none() || self.discriminator.is_none())
        {
            return Err(VaeError::VariantMismatch("acvae requires classifier and discriminator"));
        }
        if self.ablation != Ablation::None && self.variant != Variant::Acvae {
            return Err(VaeError::VariantMismatch("ablations apply to the acvae variant only"));
        }
        Ok(())
    }
}

/// Loss terms of one batch, all batch means. `total` is the weighted
/// combination that training minimizes; `dis_bce` is the unweighted
/// discriminator BCE logged for diagnostics (it is *not* part of `total`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub adv_ent: f64,
    pub clf_bce: f64,
    pub dis_bce: f64,
    pub total: f64,
}

/// Gradients for every network of a bundle. `model_loss` fills the
/// discriminator slot with zeros: the adversary is updated in its own step.
#[derive(Debug, Clone)]
pub struct BundleGrads {
    pub encoder: MlpParams,
    pub classifier: Option<MlpParams>,
    pub decoder: MlpParams,
    pub discriminator: Option<MlpParams>,
}

/// Log-power features, `ln(p + 1e-10)`.
pub fn log_features(p: ArrayView2<f64>) -> Array2<f64> {
    p.mapv(|v| libm::log(v + POWER_FLOOR))
}

fn clamp_prob(q: f64) -> f64 {
    q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn append_column(m: ArrayView2<f64>, col: ArrayView1<f64>) -> Array2<f64> {
    let col2 = col.insert_axis(Axis(1));
    concatenate(Axis(1), &[m, col2.view()]).expect("row counts match")
}

fn check_cond_range(cond: ArrayView1<f64>) -> Result<(), VaeError> {
    for &v in cond {
        if !(0.0..=1.0).contains(&v) {
            return Err(VaeError::CondOutOfRange(v));
        }
    }
    Ok(())
}

/// Approximate posterior parameters for a batch of power-spectrum rows.
/// The CVAE variant requires the per-frame label; the others reject it.
pub fn encode(
    bundle: &ModelBundle,
    p: ArrayView2<f64>,
    y: Option<ArrayView1<f64>>,
) -> Result<GaussianPosterior, VaeError> {
    let feats = log_features(p);
    let input = match (bundle.variant, y) {
        (Variant::Cvae, Some(labels)) => {
            if labels.len() != p.nrows() {
                return Err(VaeError::ShapeMismatch {
                    what: "encoder labels",
                    expected: p.nrows(),
                    found: labels.len(),
                });
            }
            check_cond_range(labels)?;
            append_column(feats.view(), labels)
        }
        (Variant::Cvae, None) => {
            return Err(VaeError::VariantMismatch("cvae encoder requires labels"))
        }
        (_, Some(_)) => {
            return Err(VaeError::VariantMismatch("only the cvae encoder takes labels"))
        }
        (_, None) => feats,
    };
    let (out, _) = nn::forward(&bundle.encoder.spec, &bundle.encoder.params, input.view())?;
    let l = bundle.latent_dim;
    Ok(GaussianPosterior {
        mu: out.slice(ndarray::s![.., ..l]).to_owned(),
        log_var: out.slice(ndarray::s![.., l..]).to_owned(),
    })
}

/// z = mu + exp(log_var / 2) * noise.
pub fn reparameterize(post: &GaussianPosterior, noise: ArrayView2<f64>) -> LatentSample {
    debug_assert_eq!(post.mu.dim(), noise.dim());
    let mut z = post.mu.clone();
    ndarray::Zip::from(&mut z)
        .and(&post.log_var)
        .and(noise)
        .for_each(|z, &lv, &n| *z += libm::exp(0.5 * lv) * n);
    LatentSample { z }
}

/// Decode latent rows to per-bin speech variances (strictly positive).
/// `cond` carries the label column for the conditional variants.
pub fn decode(
    bundle: &ModelBundle,
    z: &LatentSample,
    cond: Option<ArrayView1<f64>>,
) -> Result<Array2<f64>, VaeError> {
    let input = match (bundle.variant, cond) {
        (Variant::Vae, None) => z.z.clone(),
        (Variant::Vae, Some(_)) => {
            return Err(VaeError::VariantMismatch("vae decoder takes no conditioning"))
        }
        (_, Some(c)) => {
            if c.len() != z.z.nrows() {
                return Err(VaeError::ShapeMismatch {
                    what: "decoder conditioning",
                    expected: z.z.nrows(),
                    found: c.len(),
                });
            }
            check_cond_range(c)?;
            append_column(z.z.view(), c)
        }
        (_, None) => {
            return Err(VaeError::VariantMismatch("conditional decoder requires a label column"))
        }
    };
    let (out, _) = nn::forward(&bundle.decoder.spec, &bundle.decoder.params, input.view())?;
    Ok(out)
}

/// Classifier-encoder output q = P(y=1 | frame), clamped away from {0, 1}.
pub fn classify(bundle: &ModelBundle, p: ArrayView2<f64>) -> Result<Array1<f64>, VaeError> {
    let clf = bundle
        .classifier
        .as_ref()
        .ok_or(VaeError::VariantMismatch("classify requires the acvae variant"))?;
    bundle.count_classifier_eval();
    let feats = log_features(p);
    let (out, _) = nn::forward(&clf.spec, &clf.params, feats.view())?;
    Ok(out.column(0).mapv(clamp_prob))
}

/// Discriminator output P(y=1 | z), clamped away from {0, 1}.
pub fn discriminate(bundle: &ModelBundle, z: &LatentSample) -> Result<Array1<f64>, VaeError> {
    let disc = bundle
        .discriminator
        .as_ref()
        .ok_or(VaeError::VariantMismatch("discriminate requires the acvae variant"))?;
    let (out, _) = nn::forward(&disc.spec, &disc.params, z.z.view())?;
    Ok(out.column(0).mapv(clamp_prob))
}

/// Reconstruction loss: batch mean of `sum_f [ln v_f + p_f / v_f]` — the
/// complex-Gaussian negative log-likelihood with the constant F*ln(pi)
/// dropped. Minimized over v at v = p (Itakura-Saito form).
pub fn loss_recon(p: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<f64, VaeError> {
    if p.dim() != v.dim() {
        return Err(VaeError::ShapeMismatch {
            what: "recon loss",
            expected: p.len(),
            found: v.len(),
        });
    }
    let mut total = 0.0;
    for (&pv, &vv) in p.iter().zip(v.iter()) {
        if vv <= 0.0 {
            return Err(VaeError::NonPositiveVariance);
        }
        total += libm::log(vv) + pv / vv;
    }
    Ok(total / p.nrows() as f64)
}

/// KL divergence to the standard normal prior: batch mean of
/// `0.5 * sum_l [mu^2 + v - 1 - ln v]`, v = exp(log_var).
pub fn loss_kl(post: &GaussianPosterior) -> f64 {
    let mut total = 0.0;
    for (&mu, &lv) in post.mu.iter().zip(post.log_var.iter()) {
        let v = libm::exp(lv);
        total += 0.5 * (mu * mu + v - 1.0 - lv);
    }
    total / post.mu.nrows() as f64
}

/// Binary cross entropy, batch mean of `-[y ln q + (1-y) ln(1-q)]`.
pub fn loss_bce(q: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    debug_assert_eq!(q.len(), y.len());
    let mut total = 0.0;
    for (&qv, &yv) in q.iter().zip(y.iter()) {
        let qc = clamp_prob(qv);
        total -= yv * libm::log(qc) + (1.0 - yv) * libm::log(1.0 - qc);
    }
    total / q.len() as f64
}

/// Negative binary entropy, batch mean of `q ln q + (1-q) ln(1-q)`;
/// bounded in [-ln 2, 0], minimal at q = 1/2.
pub fn loss_neg_entropy(q: ArrayView1<f64>) -> f64 {
    let mut total = 0.0;
    for &qv in q {
        let qc = clamp_prob(qv);
        total += qc * libm::log(qc) + (1.0 - qc) * libm::log(1.0 - qc);
    }
    total / q.len() as f64
}

fn check_batch(
    bundle: &ModelBundle,
    p: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView2<f64>,
) -> Result<usize, VaeError> {
    let bins = bundle.stft.bins();
    if p.ncols() != bins {
        return Err(VaeError::ShapeMismatch { what: "power rows", expected: bins, found: p.ncols() });
    }
    let batch = p.nrows();
    if y.len() != batch {
        return Err(VaeError::ShapeMismatch { what: "labels", expected: batch, found: y.len() });
    }
    if noise.dim() != (batch, bundle.latent_dim) {
        return Err(VaeError::ShapeMismatch {
            what: "noise",
            expected: batch * bundle.latent_dim,
            found: noise.len(),
        });
    }
    check_cond_range(y)?;
    Ok(batch)
}

/// Joint forward/backward pass for the encoder/classifier/decoder step.
fn model_pass(
    bundle: &ModelBundle,
    p: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView2<f64>,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<BundleGrads>), VaeError> {
    let batch = check_batch(bundle, p, y, noise)?;
    let b = batch as f64;
    let l = bundle.latent_dim;

    let feats = log_features(p);
    let enc_in = match bundle.variant {
        Variant::Cvae => append_column(feats.view(), y),
        _ => feats.clone(),
    };
    let (enc_out, enc_cache) =
        nn::forward(&bundle.encoder.spec, &bundle.encoder.params, enc_in.view())?;
    let mu = enc_out.slice(ndarray::s![.., ..l]);
    let log_var = enc_out.slice(ndarray::s![.., l..]);

    // z = mu + exp(lv/2) * eps
    let mut sigma = log_var.to_owned();
    sigma.mapv_inplace(|lv| libm::exp(0.5 * lv));
    let mut z = mu.to_owned();
    ndarray::Zip::from(&mut z).and(&sigma).and(noise).for_each(|z, &s, &n| *z += s * n);

    // Classifier (full ACVAE scheme only).
    let uses_classifier = bundle.variant == Variant::Acvae && bundle.ablation == Ablation::None;
    let (q_clamped, q_raw, clf_cache) = if uses_classifier {
        let clf = bundle.classifier.as_ref().expect("validated");
        bundle.count_classifier_eval();
        let (out, cache) = nn::forward(&clf.spec, &clf.params, feats.view())?;
        let raw = out.column(0).to_owned();
        (Some(raw.mapv(clamp_prob)), Some(raw), Some(cache))
    } else {
        (None, None, None)
    };

    // Decoder input.
    let dec_cond: Option<Array1<f64>> = match bundle.variant {
        Variant::Vae => None,
        Variant::Cvae => Some(y.to_owned()),
        Variant::Acvae => match bundle.ablation {
            Ablation::None => Some(q_clamped.clone().expect("classifier ran")),
            _ => Some(y.to_owned()),
        },
    };
    let dec_in = match &dec_cond {
        Some(c) => append_column(z.view(), c.view()),
        None => z.clone(),
    };
    let (speech_var, dec_cache) =
        nn::forward(&bundle.decoder.spec, &bundle.decoder.params, dec_in.view())?;

    // Discriminator output (value only here; its own gradients come from
    // discriminator_loss).
    let (d_clamped, d_raw, disc_cache) = if bundle.variant == Variant::Acvae {
        let disc = bundle.discriminator.as_ref().expect("validated");
        let (out, cache) = nn::forward(&disc.spec, &disc.params, z.view())?;
        let raw = out.column(0).to_owned();
        (Some(raw.mapv(clamp_prob)), Some(raw), Some(cache))
    } else {
        (None, None, None)
    };

    // Loss terms.
    let recon = loss_recon(p, speech_var.view())?;
    let post = GaussianPosterior { mu: mu.to_owned(), log_var: log_var.to_owned() };
    let kl = loss_kl(&post);
    let (adv_ent, dis_bce) = match &d_clamped {
        Some(d) => {
            let dis_bce = loss_bce(d.view(), y);
            let adv = match bundle.ablation {
                Ablation::HardLabelBeta0NegDis => -dis_bce,
                _ => loss_neg_entropy(d.view()),
            };
            (adv, dis_bce)
        }
        None => (0.0, 0.0),
    };
    let clf_bce = match &q_clamped {
        Some(q) => loss_bce(q.view(), y),
        None => 0.0,
    };
    let total = match bundle.variant {
        Variant::Acvae => recon + kl + bundle.alpha * adv_ent + bundle.beta * clf_bce,
        _ => recon + kl,
    };
    let breakdown = LossBreakdown { recon, kl, adv_ent, clf_bce, dis_bce, total };
    if !want_grads {
        return Ok((breakdown, None));
    }

    // ----- Backward pass -----

    // d total / d speech_var = (1/v - p/v^2) / B
    let mut dvar = Array2::zeros(speech_var.raw_dim());
    ndarray::Zip::from(&mut dvar)
        .and(&speech_var)
        .and(p)
        .for_each(|g, &v, &pv| *g = (1.0 / v - pv / (v * v)) / b);
    let (dec_grads, ddec_in) =
        nn::backward(&bundle.decoder.spec, &bundle.decoder.params, &dec_cache, dvar.view())?;

    let mut dz = ddec_in.slice(ndarray::s![.., ..l]).to_owned();
    let dcond_dec: Option<Array1<f64>> = dec_cond.as_ref().map(|_| ddec_in.column(l).to_owned());

    // Adversarial term reaches z through the discriminator input.
    if let (Some(d), Some(raw), Some(cache)) = (&d_clamped, &d_raw, &disc_cache) {
        if bundle.alpha != 0.0 {
            let mut dd = Array1::zeros(batch);
            match bundle.ablation {
                Ablation::HardLabelBeta0NegDis => {
                    // adv = +mean[y ln d + (1-y) ln(1-d)]
                    ndarray::Zip::from(&mut dd).and(d).and(y).for_each(|g, &dv, &yv| {
                        *g = (yv / dv - (1.0 - yv) / (1.0 - dv)) / b;
                    });
                }
                _ => {
                    // adv = mean[d ln d + (1-d) ln(1-d)]; d/dd = logit(d)
                    ndarray::Zip::from(&mut dd).and(d).for_each(|g, &dv| {
                        *g = (libm::log(dv) - libm::log(1.0 - dv)) / b;
                    });
                }
            }
            // clamp: zero gradient where the raw output was clipped
            ndarray::Zip::from(&mut dd).and(raw).for_each(|g, &r| {
                if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&r) {
                    *g = 0.0;
                }
            });
            dd *= bundle.alpha;
            let disc = bundle.discriminator.as_ref().expect("validated");
            let dout = dd.insert_axis(Axis(1));
            let (_psi_grads_dropped, dz_disc) =
                nn::backward(&disc.spec, &disc.params, cache, dout.view())?;
            dz += &dz_disc;
        }
    }

    // Through the reparameterization into the encoder outputs.
    let mut dmu = dz.clone();
    ndarray::Zip::from(&mut dmu).and(&post.mu).for_each(|g, &m| *g += m / b);
    let mut dlv = Array2::zeros(post.log_var.raw_dim());
    ndarray::Zip::from(&mut dlv)
        .and(&dz)
        .and(&sigma)
        .and(noise)
        .for_each(|g, &dzv, &s, &n| *g = 0.5 * dzv * s * n);
    ndarray::Zip::from(&mut dlv).and(&post.log_var).for_each(|g, &lv| {
        *g += 0.5 * (libm::exp(lv) - 1.0) / b;
    });
    let denc_out = concatenate(Axis(1), &[dmu.view(), dlv.view()]).expect("same rows");
    let (enc_grads, _dinput) =
        nn::backward(&bundle.encoder.spec, &bundle.encoder.params, &enc_cache, denc_out.view())?;

    // Classifier gradients: decoder conditioning path + beta * BCE path.
    let clf_grads = if uses_classifier {
        let q = q_clamped.as_ref().expect("classifier ran");
        let raw = q_raw.as_ref().expect("classifier ran");
        let cache = clf_cache.as_ref().expect("classifier ran");
        let mut dq = dcond_dec.expect("acvae decoder is conditioned");
        if bundle.beta != 0.0 {
            ndarray::Zip::from(&mut dq).and(q).and(y).for_each(|g, &qv, &yv| {
                *g += bundle.beta * ((1.0 - yv) / (1.0 - qv) - yv / qv) / b;
            });
        }
        ndarray::Zip::from(&mut dq).and(raw).for_each(|g, &r| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&r) {
                *g = 0.0;
            }
        });
        let clf = bundle.classifier.as_ref().expect("validated");
        let dout = dq.insert_axis(Axis(1));
        let (grads, _) = nn::backward(&clf.spec, &clf.params, cache, dout.view())?;
        Some(grads)
    } else {
        bundle.classifier.as_ref().map(|c| c.params.zeros_like())
    };

    let grads = BundleGrads {
        encoder: enc_grads,
        classifier: clf_grads,
        decoder: dec_grads,
        discriminator: bundle.discriminator.as_ref().map(|d| d.params.zeros_like()),
    };
    Ok((breakdown, Some(grads)))
}

/// Loss and gradients for the VAE update step (encoder, classifier,
/// decoder). The discriminator slot of the returned gradients is zero.
pub fn model_loss(
    bundle: &ModelBundle,
    p: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView2<f64>,
) -> Result<(LossBreakdown, BundleGrads), VaeError> {
    let (breakdown, grads) = model_pass(bundle, p, y, noise, true)?;
    Ok((breakdown, grads.expect("requested gradients")))
}

/// Loss terms only (validation, oracles).
pub fn model_loss_value(
    bundle: &ModelBundle,
    p: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView2<f64>,
) -> Result<LossBreakdown, VaeError> {
    Ok(model_pass(bundle, p, y, noise, false)?.0)
}

/// Discriminator update objective `alpha * BCE(delta(z), y)` and its
/// gradients for the discriminator parameters only. The latent sample is
/// recomputed from the current encoder but treated as a constant input, so
/// no gradient flows to the encoder.
pub fn discriminator_loss(
    bundle: &ModelBundle,
    p: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView2<f64>,
) -> Result<(f64, MlpParams), VaeError> {
    if bundle.variant != Variant::Acvae {
        return Err(VaeError::VariantMismatch("discriminator_loss requires the acvae variant"));
    }
    let batch = check_batch(bundle, p, y, noise)?;
    let b = batch as f64;
    let disc = bundle.discriminator.as_ref().expect("validated");

    let post = encode(bundle, p, None)?;
    let latent = reparameterize(&post, noise);
    let (out, cache) = nn::forward(&disc.spec, &disc.params, latent.z.view())?;
    let raw = out.column(0).to_owned();
    let d = raw.mapv(clamp_prob);
    let value = bundle.alpha * loss_bce(d.view(), y);

    let mut dd = Array1::zeros(batch);
    ndarray::Zip::from(&mut dd).and(&d).and(y).for_each(|g, &dv, &yv| {
        *g = bundle.alpha * ((1.0 - yv) / (1.0 - dv) - yv / dv) / b;
    });
    ndarray::Zip::from(&mut dd).and(&raw).for_each(|g, &r| {
        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&r) {
            *g = 0.0;
        }
    });
    let dout = dd.insert_axis(Axis(1));
    let (grads, _dz) = nn::backward(&disc.spec, &disc.params, &cache, dout.view())?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use alloc::vec;

    /// Small STFT config so the nets stay tiny in unit tests.
    fn small_stft() -> StftConfig {
        StftConfig { sample_rate: 1600, window_len: 32, hop: 8 }
    }

    fn small_bundle(variant: Variant, ablation: Ablation, seed: u64) -> ModelBundle {
        let mut b = ModelBundle::new(variant, ablation, small_stft(), 4, 10.0, 10.0, seed).unwrap();
        // shrink the hidden layers for speed
        for net in [&mut b.encoder, &mut b.decoder] {
            let mut spec = net.spec.clone();
            spec.hidden = vec![(6, spec.hidden[0].1), (6, spec.hidden[0].1)];
            let mut rng = rng::stream(&[seed, 990]);
            net.params = MlpParams::glorot(&spec, &mut rng);
            net.spec = spec;
        }
        for net in [b.classifier.as_mut(), b.discriminator.as_mut()].into_iter().flatten() {
            let mut spec = net.spec.clone();
            spec.hidden = vec![(5, spec.hidden[0].1), (5, spec.hidden[0].1)];
            let mut rng = rng::stream(&[seed, 980]);
            net.params = MlpParams::glorot(&spec, &mut rng);
            net.spec = spec;
        }
        // Nonzero biases keep every relu pre-activation away from the exact
        // kink, where finite differences are undefined.
        let mut bias_rng = rng::stream(&[seed, 970]);
        for net in [Some(&mut b.encoder), Some(&mut b.decoder), b.classifier.as_mut(), b.discriminator.as_mut()]
            .into_iter()
            .flatten()
        {
            for bias in &mut net.params.biases {
                for v in bias.iter_mut() {
                    *v = 0.1 * rng::normal(&mut bias_rng);
                }
            }
        }
        b.validate().unwrap();
        b
    }

    fn random_batch(
        bundle: &ModelBundle,
        batch: usize,
        seed: u64,
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        let mut r = rng::stream(&[seed, 1000]);
        let bins = bundle.stft.bins();
        let mut p = Array2::zeros((batch, bins));
        for v in p.iter_mut() {
            let x = rng::normal(&mut r);
            *v = x * x; // non-negative power
        }
        let y = Array1::from_shape_fn(batch, |_| if rng::uniform(&mut r) < 0.5 { 0.0 } else { 1.0 });
        let mut noise = Array2::zeros((batch, bundle.latent_dim));
        for v in noise.iter_mut() {
            *v = rng::normal(&mut r);
        }
        (p, y, noise)
    }

    #[test]
    fn zero_parameter_encoder_gives_standard_posterior() {
        let mut bundle = small_bundle(Variant::Vae, Ablation::None, 1);
        bundle.encoder.params = MlpParams::zeros(&bundle.encoder.spec);
        let (p, _, _) = random_batch(&bundle, 3, 2);
        let post = encode(&bundle, p.view(), None).unwrap();
        assert!(post.mu.iter().all(|&v| v == 0.0));
        assert!(post.log_var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cvae_label_changes_posterior() {
        let bundle = small_bundle(Variant::Cvae, Ablation::None, 3);
        let (p, _, _) = random_batch(&bundle, 4, 4);
        let y0 = Array1::zeros(4);
        let y1 = Array1::ones(4);
        let post0 = encode(&bundle, p.view(), Some(y0.view())).unwrap();
        let post1 = encode(&bundle, p.view(), Some(y1.view())).unwrap();
        assert_ne!(post0.mu, post1.mu, "flipping the label must move the posterior");
    }

    #[test]
    fn variant_checks_are_enforced() {
        let bundle = small_bundle(Variant::Vae, Ablation::None, 5);
        let (p, y, noise) = random_batch(&bundle, 2, 6);
        assert!(matches!(
            encode(&bundle, p.view(), Some(y.view())),
            Err(VaeError::VariantMismatch(_))
        ));
        assert!(matches!(classify(&bundle, p.view()), Err(VaeError::VariantMismatch(_))));
        let z = LatentSample { z: noise.clone() };
        assert!(matches!(discriminate(&bundle, &z), Err(VaeError::VariantMismatch(_))));
        assert!(matches!(
            discriminator_loss(&bundle, p.view(), y.view(), noise.view()),
            Err(VaeError::VariantMismatch(_))
        ));
    }

    #[test]
    fn reparameterize_edge_cases() {
        let mu = Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 0.5, 0.0]).unwrap();
        let lv = Array2::zeros((2, 2));
        let post = GaussianPosterior { mu: mu.clone(), log_var: lv };
        let zero_noise = Array2::zeros((2, 2));
        assert_eq!(reparameterize(&post, zero_noise.view()).z, mu);

        let post0 = GaussianPosterior { mu: Array2::zeros((2, 2)), log_var: Array2::zeros((2, 2)) };
        let mut noise = Array2::zeros((2, 2));
        noise[(0, 0)] = 1.7;
        noise[(1, 1)] = -0.3;
        assert_eq!(reparameterize(&post0, noise.view()).z, noise);
    }

    #[test]
    fn reparameterize_sample_mean_approaches_mu() {
        let l = 2;
        let n = 100_000;
        let mu_val = 0.7;
        let post = GaussianPosterior {
            mu: Array2::from_elem((n, l), mu_val),
            log_var: Array2::zeros((n, l)),
        };
        let mut r = rng::stream(&[77]);
        let mut noise = Array2::zeros((n, l));
        for v in noise.iter_mut() {
            *v = rng::normal(&mut r);
        }
        let z = reparameterize(&post, noise.view()).z;
        let mean = z.column(0).sum() / n as f64;
        let tol = 4.0 / libm::sqrt(n as f64); // 4 sigma / sqrt(n)
        assert!((mean - mu_val).abs() < tol, "mean {mean}");
    }

    #[test]
    fn zero_parameter_decoder_outputs_unit_variance() {
        let mut bundle = small_bundle(Variant::Vae, Ablation::None, 7);
        bundle.decoder.params = MlpParams::zeros(&bundle.decoder.spec);
        let z = LatentSample { z: Array2::ones((3, bundle.latent_dim)) };
        let v = decode(&bundle, &z, None).unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn decoder_output_is_positive_and_cond_is_validated() {
        let bundle = small_bundle(Variant::Acvae, Ablation::None, 8);
        let mut r = rng::stream(&[9]);
        let mut z = Array2::zeros((5, bundle.latent_dim));
        for v in z.iter_mut() {
            *v = 3.0 * rng::normal(&mut r);
        }
        let cond = Array1::from_elem(5, 0.25);
        let v = decode(&bundle, &LatentSample { z: z.clone() }, Some(cond.view())).unwrap();
        assert!(v.iter().all(|&x| x > 0.0));

        let bad = Array1::from_elem(5, 1.5);
        assert!(matches!(
            decode(&bundle, &LatentSample { z }, Some(bad.view())),
            Err(VaeError::CondOutOfRange(_))
        ));
    }

    #[test]
    fn zero_parameter_classifier_and_discriminator_output_half() {
        let mut bundle = small_bundle(Variant::Acvae, Ablation::None, 10);
        bundle.classifier.as_mut().unwrap().params =
            MlpParams::zeros(&bundle.classifier.as_ref().unwrap().spec);
        bundle.discriminator.as_mut().unwrap().params =
            MlpParams::zeros(&bundle.discriminator.as_ref().unwrap().spec);
        let (p, _, noise) = random_batch(&bundle, 3, 11);
        let q = classify(&bundle, p.view()).unwrap();
        assert!(q.iter().all(|&v| v == 0.5));
        let d = discriminate(&bundle, &LatentSample { z: noise }).unwrap();
        assert!(d.iter().all(|&v| v == 0.5));
        assert_eq!(bundle.classifier_eval_count(), 1);
    }

    #[test]
    fn extreme_preactivation_is_clamped() {
        let mut bundle = small_bundle(Variant::Acvae, Ablation::None, 12);
        // Huge positive bias on the classifier output layer.
        let clf = bundle.classifier.as_mut().unwrap();
        let last = clf.params.biases.len() - 1;
        clf.params.biases[last][0] = 100.0;
        let (p, _, _) = random_batch(&bundle, 2, 13);
        let q = classify(&bundle, p.view()).unwrap();
        assert!(q.iter().all(|&v| v == 1.0 - PROB_CLAMP));
    }

    #[test]
    fn loss_unit_values() {
        // recon(p = v = 1) over F bins = F
        let f = 513;
        let p = Array2::ones((2, f));
        let v = Array2::ones((2, f));
        assert_eq!(loss_recon(p.view(), v.view()).unwrap(), f as f64);

        // kl(0, 0) = 0
        let post = GaussianPosterior { mu: Array2::zeros((3, 4)), log_var: Array2::zeros((3, 4)) };
        assert_eq!(loss_kl(&post), 0.0);

        // kl(mu = 1, v = 1, L = 1) = 0.5
        let post = GaussianPosterior { mu: Array2::ones((1, 1)), log_var: Array2::zeros((1, 1)) };
        assert_eq!(loss_kl(&post), 0.5);

        // bce exact values
        let one = Array1::ones(1);
        assert_eq!(loss_bce(one.view(), one.view()), -libm::log(1.0 - PROB_CLAMP));
        let half = Array1::from_elem(1, 0.5);
        assert!((loss_bce(half.view(), one.view()) - core::f64::consts::LN_2).abs() < 1e-15);

        // negative entropy at 1/2 is -ln 2; symmetric; approaches 0 at the ends
        assert!((loss_neg_entropy(half.view()) + core::f64::consts::LN_2).abs() < 1e-15);
        let q = Array1::from_elem(1, 0.2);
        let q_flip = Array1::from_elem(1, 0.8);
        assert!((loss_neg_entropy(q.view()) - loss_neg_entropy(q_flip.view())).abs() < 1e-15);
        assert!(loss_neg_entropy(one.view()).abs() < 1e-5);
    }

    #[test]
    fn recon_is_minimized_at_v_equals_p() {
        let p = Array2::from_elem((1, 3), 2.0);
        let at_p = loss_recon(p.view(), p.view()).unwrap();
        for &v in &[0.5, 1.0, 3.0, 10.0] {
            let vv = Array2::from_elem((1, 3), v);
            assert!(loss_recon(p.view(), vv.view()).unwrap() > at_p);
        }
        let nonpos = Array2::from_elem((1, 3), 0.0);
        assert!(matches!(
            loss_recon(p.view(), nonpos.view()),
            Err(VaeError::NonPositiveVariance)
        ));
    }

    #[test]
    fn recon_matches_naive_double_loop() {
        let mut r = rng::stream(&[20]);
        let p = Array2::from_shape_fn((4, 7), |_| {
            let x = rng::normal(&mut r);
            x * x
        });
        let v = Array2::from_shape_fn((4, 7), |_| libm::exp(rng::normal(&mut r)));
        let got = loss_recon(p.view(), v.view()).unwrap();
        let mut expected = 0.0;
        for i in 0..4 {
            for j in 0..7 {
                expected += libm::log(v[(i, j)]) + p[(i, j)] / v[(i, j)];
            }
        }
        expected /= 4.0;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_direct_recomputation() {
        let mut r = rng::stream(&[21]);
        let q = Array1::from_shape_fn(64, |_| rng::uniform(&mut r).clamp(1e-7, 1.0 - 1e-7));
        let y = Array1::from_shape_fn(64, |_| if rng::uniform(&mut r) < 0.5 { 0.0 } else { 1.0 });
        let got = loss_bce(q.view(), y.view());
        let mut expected = 0.0;
        for i in 0..64 {
            expected -= y[i] * libm::log(q[i]) + (1.0 - y[i]) * libm::log(1.0 - q[i]);
        }
        expected /= 64.0;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_iff_standard() {
        let mut r = rng::stream(&[22]);
        for _ in 0..50 {
            let mu = Array2::from_shape_fn((2, 3), |_| rng::normal(&mut r));
            let lv = Array2::from_shape_fn((2, 3), |_| rng::normal(&mut r));
            let kl = loss_kl(&GaussianPosterior { mu: mu.clone(), log_var: lv.clone() });
            assert!(kl >= 0.0);
            let standard = mu.iter().all(|&m| m == 0.0) && lv.iter().all(|&v| v == 0.0);
            if !standard {
                assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn minimized_losses_complement_the_elbo_exactly() {
        // loss_recon + loss_kl + ELBO = -F ln(pi), with the ELBO computed
        // independently from the same z and v.
        let bundle = small_bundle(Variant::Vae, Ablation::None, 30);
        let (p, _, noise) = random_batch(&bundle, 5, 31);
        let post = encode(&bundle, p.view(), None).unwrap();
        let z = reparameterize(&post, noise.view());
        let v = decode(&bundle, &z, None).unwrap();
        let minimized = loss_recon(p.view(), v.view()).unwrap() + loss_kl(&post);

        let f = bundle.stft.bins() as f64;
        let pi = core::f64::consts::PI;
        let mut elbo = 0.0;
        for r in 0..p.nrows() {
            for c in 0..p.ncols() {
                elbo += -libm::log(pi) - libm::log(v[(r, c)]) - p[(r, c)] / v[(r, c)];
            }
            for l in 0..bundle.latent_dim {
                let var = libm::exp(post.log_var[(r, l)]);
                elbo -= 0.5
                    * (post.mu[(r, l)] * post.mu[(r, l)] + var - 1.0 - post.log_var[(r, l)]);
            }
        }
        elbo /= p.nrows() as f64;
        let constant = -f * libm::log(pi);
        assert!(
            (minimized + elbo - constant).abs() < 1e-9,
            "sum {} vs constant {constant}",
            minimized + elbo
        );
    }

    #[test]
    fn cvae_with_zeroed_label_weights_reproduces_vae() {
        let vae = small_bundle(Variant::Vae, Ablation::None, 40);
        let mut cvae = small_bundle(Variant::Cvae, Ablation::None, 41);
        // Copy VAE weights into the CVAE, zeroing the extra label row.
        for l in 0..vae.encoder.params.weights.len() {
            let src = &vae.encoder.params.weights[l];
            let dst = &mut cvae.encoder.params.weights[l];
            dst.fill(0.0);
            for ((i, j), &v) in src.indexed_iter() {
                dst[(i, j)] = v;
            }
            cvae.encoder.params.biases[l] = vae.encoder.params.biases[l].clone();
        }
        for l in 0..vae.decoder.params.weights.len() {
            let src = &vae.decoder.params.weights[l];
            let dst = &mut cvae.decoder.params.weights[l];
            dst.fill(0.0);
            for ((i, j), &v) in src.indexed_iter() {
                dst[(i, j)] = v;
            }
            cvae.decoder.params.biases[l] = vae.decoder.params.biases[l].clone();
        }
        let (p, y, noise) = random_batch(&vae, 4, 42);
        let post_vae = encode(&vae, p.view(), None).unwrap();
        let post_cvae = encode(&cvae, p.view(), Some(y.view())).unwrap();
        assert_eq!(post_vae.mu, post_cvae.mu);
        assert_eq!(post_vae.log_var, post_cvae.log_var);
        let z = reparameterize(&post_vae, noise.view());
        let v_vae = decode(&vae, &z, None).unwrap();
        let v_cvae = decode(&cvae, &z, Some(y.view())).unwrap();
        assert_eq!(v_vae, v_cvae);
    }

    #[test]
    fn acvae_with_zero_weights_reduces_to_vae_objective() {
        let mut bundle = small_bundle(Variant::Acvae, Ablation::None, 50);
        bundle.alpha = 0.0;
        bundle.beta = 0.0;
        let (p, y, noise) = random_batch(&bundle, 4, 51);
        let bd = model_loss_value(&bundle, p.view(), y.view(), noise.view()).unwrap();
        assert_eq!(bd.total, bd.recon + bd.kl);
    }

    #[test]
    fn losses_stay_finite_on_random_batches() {
        for (variant, ablation) in [
            (Variant::Vae, Ablation::None),
            (Variant::Cvae, Ablation::None),
            (Variant::Acvae, Ablation::None),
            (Variant::Acvae, Ablation::HardLabelBeta0),
            (Variant::Acvae, Ablation::HardLabelBeta0NegDis),
        ] {
            let bundle = small_bundle(variant, ablation, 60);
            for trial in 0..200 {
                let (p, y, noise) = random_batch(&bundle, 3, 1000 + trial);
                let bd = model_loss_value(&bundle, p.view(), y.view(), noise.view()).unwrap();
                for v in [bd.recon, bd.kl, bd.adv_ent, bd.clf_bce, bd.dis_bce, bd.total] {
                    assert!(v.is_finite(), "{variant:?}/{ablation:?} trial {trial}: {bd:?}");
                }
            }
        }
    }

    #[test]
    fn neg_entropy_bounds_hold_in_model_loss() {
        let bundle = small_bundle(Variant::Acvae, Ablation::None, 61);
        let (p, y, noise) = random_batch(&bundle, 16, 62);
        let bd = model_loss_value(&bundle, p.view(), y.view(), noise.view()).unwrap();
        assert!(bd.adv_ent >= -core::f64::consts::LN_2 - 1e-12 && bd.adv_ent <= 0.0);
        assert!(bd.clf_bce >= 0.0);
        assert!(bd.dis_bce >= 0.0);
    }

    /// Finite-difference checks of the composite gradients for every
    /// variant, ablation, and trainable network.
    #[test]
    fn model_loss_gradients_match_finite_differences() {
        for (variant, ablation) in [
            (Variant::Vae, Ablation::None),
            (Variant::Cvae, Ablation::None),
            (Variant::Acvae, Ablation::None),
            (Variant::Acvae, Ablation::HardLabelBeta0),
            (Variant::Acvae, Ablation::HardLabelBeta0NegDis),
        ] {
            let bundle = small_bundle(variant, ablation, 70);
            let (p, y, noise) = random_batch(&bundle, 3, 71);
            let (_, grads) = model_loss(&bundle, p.view(), y.view(), noise.view()).unwrap();

            let report = grad_check(
                |params| {
                    let mut b = bundle.clone();
                    b.encoder.params = params.clone();
                    model_loss_value(&b, p.view(), y.view(), noise.view()).unwrap().total
                },
                &bundle.encoder.params,
                &grads.encoder,
                &GradCheckConfig { tolerance: 1e-5, ..Default::default() },
            );
            assert!(
                report.pass,
                "{variant:?}/{ablation:?} encoder: {} at {}",
                report.max_rel_err, report.worst_coord
            );

            let report = grad_check(
                |params| {
                    let mut b = bundle.clone();
                    b.decoder.params = params.clone();
                    model_loss_value(&b, p.view(), y.view(), noise.view()).unwrap().total
                },
                &bundle.decoder.params,
                &grads.decoder,
                &GradCheckConfig { tolerance: 1e-5, ..Default::default() },
            );
            assert!(
                report.pass,
                "{variant:?}/{ablation:?} decoder: {} at {}",
                report.max_rel_err, report.worst_coord
            );

            if variant == Variant::Acvae && ablation == Ablation::None {
                let report = grad_check(
                    |params| {
                        let mut b = bundle.clone();
                        b.classifier.as_mut().unwrap().params = params.clone();
                        model_loss_value(&b, p.view(), y.view(), noise.view()).unwrap().total
                    },
                    &bundle.classifier.as_ref().unwrap().params,
                    grads.classifier.as_ref().unwrap(),
                    &GradCheckConfig { tolerance: 1e-5, ..Default::default() },
                );
                assert!(report.pass, "classifier: {} at {}", report.max_rel_err, report.worst_coord);
            }
        }
    }

    #[test]
    fn psi_gradient_from_model_loss_is_identically_zero() {
        let bundle = small_bundle(Variant::Acvae, Ablation::None, 80);
        let (p, y, noise) = random_batch(&bundle, 4, 81);
        let (bd, grads) = model_loss(&bundle, p.view(), y.view(), noise.view()).unwrap();
        assert!(grads.discriminator.as_ref().unwrap().iter_all().all(|v| v == 0.0));

        // ...even though perturbing psi changes the total
        let mut perturbed = bundle.clone();
        let disc = perturbed.discriminator.as_mut().unwrap();
        disc.params.biases[0][0] += 0.5;
        let bd2 = model_loss_value(&perturbed, p.view(), y.view(), noise.view()).unwrap();
        assert_ne!(bd.total, bd2.total);
    }

    #[test]
    fn discriminator_loss_gradients_match_finite_differences() {
        let bundle = small_bundle(Variant::Acvae, Ablation::None, 90);
        let (p, y, noise) = random_batch(&bundle, 4, 91);
        let (_, psi_grads) = discriminator_loss(&bundle, p.view(), y.view(), noise.view()).unwrap();
        let report = grad_check(
            |params| {
                let mut b = bundle.clone();
                b.discriminator.as_mut().unwrap().params = params.clone();
                discriminator_loss(&b, p.view(), y.view(), noise.view()).unwrap().0
            },
            &bundle.discriminator.as_ref().unwrap().params,
            &psi_grads,
            &GradCheckConfig { tolerance: 1e-5, ..Default::default() },
        );
        assert!(report.pass, "psi: {} at {}", report.max_rel_err, report.worst_coord);
    }

    #[test]
    fn perturbing_phi_does_not_change_discriminator_gradients_directly() {
        // discriminator_loss reaches phi only through the recomputed z; its
        // returned gradient set contains psi entries exclusively.
        let bundle = small_bundle(Variant::Acvae, Ablation::None, 92);
        let (p, y, noise) = random_batch(&bundle, 4, 93);
        let (v1, _) = discriminator_loss(&bundle, p.view(), y.view(), noise.view()).unwrap();
        let mut moved = bundle.clone();
        moved.encoder.params.biases[0][0] += 0.3;
        let (v2, _) = discriminator_loss(&moved, p.view(), y.view(), noise.view()).unwrap();
        assert_ne!(v1, v2, "value depends on z, which depends on the encoder");
    }

    #[test]
    fn discriminator_loss_values() {
        // Untrained (zero-parameter) discriminator on a balanced batch:
        // output 1/2 everywhere, so the loss is alpha * ln 2.
        let mut bundle = small_bundle(Variant::Acvae, Ablation::None, 94);
        bundle.discriminator.as_mut().unwrap().params =
            MlpParams::zeros(&bundle.discriminator.as_ref().unwrap().spec);
        let (p, _, noise) = random_batch(&bundle, 4, 95);
        let y = Array1::from_vec(vec![0.0, 1.0, 0.0, 1.0]);
        let (value, _) = discriminator_loss(&bundle, p.view(), y.view(), noise.view()).unwrap();
        assert!((value - bundle.alpha * core::f64::consts::LN_2).abs() < 1e-12);

        // Perfect separation drives the loss toward zero: saturate the
        // output bias so the discriminator always answers "speech".
        let mut sure = small_bundle(Variant::Acvae, Ablation::None, 96);
        {
            let disc = sure.discriminator.as_mut().unwrap();
            disc.params = MlpParams::zeros(&disc.spec);
            let last = disc.params.biases.len() - 1;
            disc.params.biases[last][0] = 50.0;
        }
        let all_speech = Array1::ones(4);
        let (value, _) =
            discriminator_loss(&sure, p.view(), all_speech.view(), noise.view()).unwrap();
        assert!(value < 1e-5, "loss {value}");
    }

    #[test]
    fn hard_label_ablation_never_evaluates_the_classifier() {
        let bundle = small_bundle(Variant::Acvae, Ablation::HardLabelBeta0, 97);
        let (p, y, noise) = random_batch(&bundle, 4, 98);
        let _ = model_loss(&bundle, p.view(), y.view(), noise.view()).unwrap();
        let _ = model_loss_value(&bundle, p.view(), y.view(), noise.view()).unwrap();
        assert_eq!(bundle.classifier_eval_count(), 0);
    }

    #[test]
    fn bundle_round_trips_through_bytes() {
        for (variant, ablation) in [
            (Variant::Vae, Ablation::None),
            (Variant::Cvae, Ablation::None),
            (Variant::Acvae, Ablation::HardLabelBeta0NegDis),
        ] {
            let bundle = small_bundle(variant, ablation, 99);
            let bytes = bundle.to_bytes();
            let back = ModelBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back.variant, bundle.variant);
            assert_eq!(back.ablation, bundle.ablation);
            assert_eq!(back.alpha, bundle.alpha);
            assert_eq!(back.encoder.params, bundle.encoder.params);
            assert_eq!(back.decoder.params, bundle.decoder.params);
            assert_eq!(
                back.classifier.as_ref().map(|c| &c.params),
                bundle.classifier.as_ref().map(|c| &c.params)
            );
            // serialization is stable
            assert_eq!(back.to_bytes(), bytes);
        }
    }
}

