//! Minimal dense-network substrate: forward/backward passes for small
//! fixed MLPs, Adam, gradient checking, and parameter serialization.
//!
//! Everything is double precision. Batches are row-major `B x dim` arrays;
//! layer l computes `act(X W_l + b_l)` with `W_l` of shape `in x out`.
//! Reverse-mode gradients are exact for the forward map, including the
//! clamped-exp output head (the clamp contributes zero gradient outside
//! [-30, 30]).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::serial::{Reader, SerialError, Writer};

/// Pre-activation bound for the exp output head.
pub const EXP_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    NonFinite { tensor: String },
    StaleCache(&'static str),
    BadSpec(String),
    Serial(SerialError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch { what, expected, found } => {
                write!(f, "shape mismatch in {what}: expected {expected}, found {found}")
            }
            NnError::NonFinite { tensor } => write!(f, "non-finite values in {tensor}"),
            NnError::StaleCache(what) => write!(f, "stale forward cache: {what}"),
            NnError::BadSpec(msg) => write!(f, "bad MLP spec: {msg}"),
            NnError::Serial(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for NnError {}

impl From<SerialError> for NnError {
    fn from(e: SerialError) -> Self {
        NnError::Serial(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    /// exp with pre-activation clamped to [-EXP_CLAMP, EXP_CLAMP].
    Exp,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-z)),
            Activation::Exp => libm::exp(z.clamp(-EXP_CLAMP, EXP_CLAMP)),
        }
    }

    /// Derivative given pre-activation `z` and post-activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Exp => {
                if (-EXP_CLAMP..=EXP_CLAMP).contains(&z) {
                    a
                } else {
                    0.0
                }
            }
        }
    }

    fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::Exp => 4,
        }
    }

    fn from_id(id: u8) -> Result<Self, NnError> {
        Ok(match id {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            4 => Activation::Exp,
            other => return Err(NnError::BadSpec(format!("unknown activation id {other}"))),
        })
    }
}

/// Architecture of a fixed MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub output_dim: usize,
    pub output_activation: Activation,
}

impl MlpSpec {
    /// Two hidden layers of 128 units, the configuration used throughout.
    pub fn standard(
        input_dim: usize,
        hidden_activation: Activation,
        output_dim: usize,
        output_activation: Activation,
    ) -> Self {
        Self {
            input_dim,
            hidden: alloc::vec![(128, hidden_activation), (128, hidden_activation)],
            output_dim,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::BadSpec(String::from("dims must be >= 1")));
        }
        if self.hidden.iter().any(|&(w, _)| w == 0) {
            return Err(NnError::BadSpec(String::from("hidden widths must be >= 1")));
        }
        Ok(())
    }

    /// (in, out, activation) for every layer, in order.
    pub fn layers(&self) -> Vec<(usize, usize, Activation)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &(w, act) in &self.hidden {
            dims.push((prev, w, act));
            prev = w;
        }
        dims.push((prev, self.output_dim, self.output_activation));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|&(i, o, _)| i * o + o).sum()
    }
}

/// Per-layer weights and biases. The same container carries gradients and
/// Adam moment accumulators, which share the shapes of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    /// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
    pub fn glorot(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out, _) in spec.layers() {
            let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let mut w = Array2::zeros((fan_in, fan_out));
            for v in w.iter_mut() {
                *v = rng::uniform_in(rng, -bound, bound);
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out, _) in spec.layers() {
            weights.push(Array2::zeros((fan_in, fan_out)));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        let layers = spec.layers();
        self.weights.len() == layers.len()
            && self.biases.len() == layers.len()
            && layers.iter().enumerate().all(|(l, &(i, o, _))| {
                self.weights[l].dim() == (i, o) && self.biases[l].len() == o
            })
    }

    /// Flat read access: biases follow weights within each layer.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return *w.iter().nth(idx).expect("index in range");
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            if idx < w.len() {
                *w.iter_mut().nth(idx).expect("index in range") = value;
                return;
            }
            idx -= w.len();
            if idx < b.len() {
                b[idx] = value;
                return;
            }
            idx -= b.len();
        }
        panic!("flat index out of range");
    }

    /// Human-readable location of a flat index, e.g. `layer 1 weights[260]`.
    pub fn describe_flat(&self, mut idx: usize) -> String {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if idx < w.len() {
                return format!("layer {l} weights[{idx}]");
            }
            idx -= w.len();
            if idx < b.len() {
                return format!("layer {l} bias[{idx}]");
            }
            idx -= b.len();
        }
        format!("index out of range ({idx} past end)")
    }

    /// Elementwise accumulate `other * scale` into `self`.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.zip_mut_with(b, |x, &y| *x += scale * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.zip_mut_with(b, |x, &y| *x += scale * y);
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().copied().chain(b.iter().copied()))
    }
}

/// Intermediate state of a forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// inputs[l] is the input to layer l; the final entry is the output.
    inputs: Vec<Array2<f64>>,
    /// pre_acts[l] is X W_l + b_l before the activation.
    pre_acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().expect("cache holds at least the input")
    }
}

/// Forward pass over a batch. Returns the output and the cache needed for
/// the backward pass.
pub fn forward(
    spec: &MlpSpec,
    params: &MlpParams,
    batch: ArrayView2<f64>,
) -> Result<(Array2<f64>, ForwardCache), NnError> {
    spec.validate()?;
    if batch.ncols() != spec.input_dim {
        return Err(NnError::ShapeMismatch {
            what: "forward input",
            expected: spec.input_dim,
            found: batch.ncols(),
        });
    }
    if !params.matches(spec) {
        return Err(NnError::ShapeMismatch {
            what: "params vs spec",
            expected: spec.n_params(),
            found: params.n_params(),
        });
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite { tensor: String::from("forward input") });
    }

    let mut inputs = Vec::with_capacity(spec.hidden.len() + 2);
    let mut pre_acts = Vec::with_capacity(spec.hidden.len() + 1);
    inputs.push(batch.to_owned());
    for (l, (_, _, act)) in spec.layers().into_iter().enumerate() {
        let x = inputs.last().expect("non-empty");
        let mut z = x.dot(&params.weights[l]);
        z += &params.biases[l];
        let a = z.mapv(|v| act.apply(v));
        pre_acts.push(z);
        inputs.push(a);
    }
    let output = inputs.last().expect("non-empty").clone();
    Ok((output, ForwardCache { inputs, pre_acts }))
}

/// Reverse-mode gradients of the forward map. `output_grad` is the loss
/// gradient with respect to the post-activation output. Returns parameter
/// gradients and the gradient with respect to the batch input.
pub fn backward(
    spec: &MlpSpec,
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
) -> Result<(MlpParams, Array2<f64>), NnError> {
    let layers = spec.layers();
    if cache.pre_acts.len() != layers.len() || cache.inputs.len() != layers.len() + 1 {
        return Err(NnError::StaleCache("layer count does not match spec"));
    }
    if cache.inputs[0].ncols() != spec.input_dim {
        return Err(NnError::StaleCache("input width does not match spec"));
    }
    let batch_size = cache.inputs[0].nrows();
    if output_grad.dim() != (batch_size, spec.output_dim) {
        return Err(NnError::ShapeMismatch {
            what: "output_grad",
            expected: spec.output_dim,
            found: output_grad.ncols(),
        });
    }

    let mut grads = params.zeros_like();
    let mut upstream = output_grad.to_owned();
    for (l, &(_, _, act)) in layers.iter().enumerate().rev() {
        // dZ = upstream ⊙ act'(Z)
        let mut dz = upstream;
        ndarray::Zip::from(&mut dz)
            .and(&cache.pre_acts[l])
            .and(&cache.inputs[l + 1])
            .for_each(|g, &z, &a| *g *= act.derivative(z, a));
        grads.weights[l] = cache.inputs[l].t().dot(&dz);
        grads.biases[l] = dz.sum_axis(Axis(0));
        upstream = dz.dot(&params.weights[l].t());
    }
    Ok((grads, upstream))
}

/// Adam hyperparameters; spec defaults lr 1e-3, beta1 0.9, beta2 0.999,
/// eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam state for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamHyper) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, hyper }
    }
}

/// One Adam update, in place. Errors on non-finite gradients, naming the
/// offending tensor.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamState,
) -> Result<(), NnError> {
    for (l, (w, b)) in grads.weights.iter().zip(&grads.biases).enumerate() {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { tensor: format!("gradient of layer {l} weights") });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { tensor: format!("gradient of layer {l} bias") });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - libm::pow(h.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(h.beta2, t as f64);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= h.lr * m_hat / (libm::sqrt(v_hat) + h.eps);
    };

    for l in 0..params.weights.len() {
        let (pw, gw) = (&mut params.weights[l], &grads.weights[l]);
        let (mw, vw) = (&mut state.m.weights[l], &mut state.v.weights[l]);
        for (((p, &g), m), v) in pw.iter_mut().zip(gw.iter()).zip(mw.iter_mut()).zip(vw.iter_mut())
        {
            update(p, g, m, v);
        }
        let (pb, gb) = (&mut params.biases[l], &grads.biases[l]);
        let (mb, vb) = (&mut state.m.biases[l], &mut state.v.biases[l]);
        for (((p, &g), m), v) in pb.iter_mut().zip(gb.iter()).zip(mb.iter_mut()).zip(vb.iter_mut())
        {
            update(p, g, m, v);
        }
    }
    Ok(())
}

/// Configuration for the finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// How many coordinates to probe (all of them if the parameter count is
    /// smaller).
    pub n_coords: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, n_coords: 200, tolerance: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Location of the worst coordinate, e.g. "layer 0 weights[17]".
    pub worst_coord: String,
    pub n_checked: usize,
    pub pass: bool,
}

/// Compare analytic gradients against central finite differences of
/// `loss_fn` on a random coordinate subset.
pub fn grad_check(
    mut loss_fn: impl FnMut(&MlpParams) -> f64,
    params: &MlpParams,
    analytic: &MlpParams,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let total = params.n_params();
    let coords: Vec<usize> = if total <= cfg.n_coords {
        (0..total).collect()
    } else {
        let mut rng = rng::stream(&[cfg.seed, rng::tag::GRAD_CHECK]);
        let mut all: Vec<usize> = (0..total).collect();
        rng::shuffle(&mut rng, &mut all);
        all.truncate(cfg.n_coords);
        all
    };

    let mut work = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = String::from("none");
    for &c in &coords {
        let original = work.get_flat(c);
        work.set_flat(c, original + cfg.step);
        let plus = loss_fn(&work);
        work.set_flat(c, original - cfg.step);
        let minus = loss_fn(&work);
        work.set_flat(c, original);
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let exact = analytic.get_flat(c);
        let denom = libm::fabs(exact).max(libm::fabs(numeric)).max(1e-8);
        let rel = libm::fabs(exact - numeric) / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = params.describe_flat(c);
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_coord: worst,
        n_checked: coords.len(),
        pass: max_rel_err < cfg.tolerance,
    }
}

pub mod codec {
    //! Parameter container: `MLPB` magic, u32 version, spec descriptor,
    //! then per-layer row-major weights and biases as little-endian f64.
    //!
    //! Layout (all integers little-endian):
    //! ```text
    //! magic      4 bytes  "MLPB"
    //! version    u32      1
    //! input_dim  u32
    //! n_hidden   u32
    //!   width    u32      } per hidden layer
    //!   act      u8       }
    //! output_dim u32
    //! out_act    u8
    //! per layer l in 0..=n_hidden:
    //!   weights  u64 count, then count f64 (row-major, in x out)
    //!   bias     u64 count, then count f64
    //! ```

    use super::*;

    pub const MAGIC: &[u8; 4] = b"MLPB";
    pub const VERSION: u32 = 1;

    pub fn write_spec(w: &mut Writer, spec: &MlpSpec) {
        w.u32(spec.input_dim as u32);
        w.u32(spec.hidden.len() as u32);
        for &(width, act) in &spec.hidden {
            w.u32(width as u32);
            w.u8(act.id());
        }
        w.u32(spec.output_dim as u32);
        w.u8(spec.output_activation.id());
    }

    pub fn read_spec(r: &mut Reader) -> Result<MlpSpec, NnError> {
        let input_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(NnError::BadSpec(format!("implausible hidden layer count {n_hidden}")));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            let width = r.u32()? as usize;
            let act = Activation::from_id(r.u8()?)?;
            hidden.push((width, act));
        }
        let output_dim = r.u32()? as usize;
        let output_activation = Activation::from_id(r.u8()?)?;
        let spec = MlpSpec { input_dim, hidden, output_dim, output_activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn write_params(w: &mut Writer, params: &MlpParams) {
        for (wl, bl) in params.weights.iter().zip(&params.biases) {
            w.f64_slice(wl.as_slice().expect("weights are standard layout"));
            w.f64_slice(bl.as_slice().expect("bias is contiguous"));
        }
    }

    pub fn read_params(r: &mut Reader, spec: &MlpSpec) -> Result<MlpParams, NnError> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out, _) in spec.layers() {
            let wv = r.f64_vec()?;
            if wv.len() != fan_in * fan_out {
                return Err(NnError::Serial(SerialError::Invalid(format!(
                    "weight tensor has {} values, expected {}",
                    wv.len(),
                    fan_in * fan_out
                ))));
            }
            if wv.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { tensor: String::from("stored weights") });
            }
            weights.push(Array2::from_shape_vec((fan_in, fan_out), wv).expect("shape checked"));
            let bv = r.f64_vec()?;
            if bv.len() != fan_out {
                return Err(NnError::Serial(SerialError::Invalid(format!(
                    "bias tensor has {} values, expected {fan_out}",
                    bv.len()
                ))));
            }
            if bv.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { tensor: String::from("stored bias") });
            }
            biases.push(Array1::from_vec(bv));
        }
        Ok(MlpParams { weights, biases })
    }

    /// Encode one (spec, params) pair as a standalone container.
    pub fn encode(spec: &MlpSpec, params: &MlpParams) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC);
        w.u32(VERSION);
        write_spec(&mut w, spec);
        write_params(&mut w, params);
        w.finish()
    }

    /// Decode a standalone container produced by `encode`.
    pub fn decode(data: &[u8]) -> Result<(MlpSpec, MlpParams), NnError> {
        let mut r = Reader::new(data);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let spec = read_spec(&mut r)?;
        let params = read_params(&mut r, &spec)?;
        r.expect_end()?;
        Ok((spec, params))
    }
}
