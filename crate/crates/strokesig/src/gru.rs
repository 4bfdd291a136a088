//! Learned stroke representation: a single-layer GRU over patch sequences.
//!
//! Each stroke becomes two sequences of 11×11 grayscale patches (121-dim
//! vectors in (−1,1)) sampled along its skeleton in both directions. A GRU
//! consumes the sequence; the final hidden state feeds a linear + softmax
//! classifier and doubles as a learned feature vector for the kernel
//! classifier. Training uses truncated backpropagation through time: the
//! sequence is chopped into τ-step windows, each window gets its own
//! cross-entropy loss on the window-final softmax (against the sequence
//! label), gradients are globally norm-clipped and applied with RMSProp,
//! and the hidden state carries across windows as a constant.
//!
//! The recurrence, with σ the logistic function and ⊙ elementwise product:
//!
//! ```text
//! r_t = σ(U_r h_{t−1} + W_r x_t)
//! z_t = σ(U_z h_{t−1} + W_z x_t)
//! ĥ_t = tanh(U (r_t ⊙ h_{t−1}) + W x_t)
//! h_t = z_t ⊙ ĥ_t + (1 − z_t) ⊙ h_{t−1}
//! ```
//!
//! Biases are omitted by default to match the equations exactly; a config
//! flag turns them on.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Pixel};
use crate::raster::DrawingImage;
use crate::segment::Stroke;

/// Side of the patch fed to the network (after rescaling).
pub const PATCH_SIDE: usize = 11;
/// Flattened patch dimensionality.
pub const PATCH_DIM: usize = PATCH_SIDE * PATCH_SIDE;
/// Radius (= stride) in fixed patch mode.
pub const FIXED_RADIUS: usize = 5;

/// Direction a patch sequence was sampled in.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

/// A stroke's patch sequence: T patches of `PATCH_DIM` values in (−1,1).
#[derive(Clone, Debug)]
pub struct PatchSequence {
    pub patches: Vec<Vec<f64>>,
    pub drawing_id: String,
    pub stroke_id: usize,
    pub direction: Direction,
    pub label: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Patch sampling mode: fixed 11×11, or a per-drawing radius with bilinear
/// rescaling to 11×11 (used for technique mixes with very different stroke
/// widths).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "radius")]
pub enum PatchConfig {
    Fixed,
    Adaptive(usize),
}

impl PatchConfig {
    pub fn radius(self) -> usize {
        match self {
            PatchConfig::Fixed => FIXED_RADIUS,
            PatchConfig::Adaptive(r) => r.max(1),
        }
    }
}

/// Adaptive patch radius for a drawing: the median over strokes of the mean
/// rib length in pixels, rounded to the nearest integer (at least 1).
pub fn adaptive_radius(strokes: &[Stroke], mm_per_px: f64) -> usize {
    let mut means: Vec<f64> = strokes
        .iter()
        .filter(|s| !s.ribs_mm.is_empty())
        .map(|s| s.mean_rib_mm() / mm_per_px)
        .collect();
    if means.is_empty() {
        return FIXED_RADIUS;
    }
    means.sort_by(f64::total_cmp);
    let n = means.len();
    let median = if n % 2 == 1 { means[n / 2] } else { (means[n / 2 - 1] + means[n / 2]) / 2.0 };
    (median.round() as usize).max(1)
}

fn gray_to_unit(g: u8) -> f64 {
    ((g as f64 + 0.5) / 256.0) * 2.0 - 1.0
}

/// Median gray level of the image — the background tone for patch padding.
fn median_gray(pixels: &Grid<u8>) -> u8 {
    let mut hist = [0u64; 256];
    for (_, &g) in pixels.iter_cells() {
        hist[g as usize] += 1;
    }
    let half = (pixels.len() as u64).div_ceil(2);
    let mut cum = 0;
    for (g, &c) in hist.iter().enumerate() {
        cum += c;
        if cum >= half {
            return g as u8;
        }
    }
    255
}

/// Bilinear resample of a square patch to `out_side`².
fn bilinear_resize(src: &[f64], side: usize, out_side: usize) -> Vec<f64> {
    if side == out_side {
        return src.to_vec();
    }
    let mut out = vec![0.0; out_side * out_side];
    for oy in 0..out_side {
        for ox in 0..out_side {
            let (sx, sy) = if side == 1 {
                (0.0, 0.0)
            } else {
                (
                    ox as f64 * (side - 1) as f64 / (out_side - 1) as f64,
                    oy as f64 * (side - 1) as f64 / (out_side - 1) as f64,
                )
            };
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(side - 1);
            let y1 = (y0 + 1).min(side - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let v = src[y0 * side + x0] * (1.0 - fx) * (1.0 - fy)
                + src[y0 * side + x1] * fx * (1.0 - fy)
                + src[y1 * side + x0] * (1.0 - fx) * fy
                + src[y1 * side + x1] * fx * fy;
            out[oy * out_side + ox] = v;
        }
    }
    out
}

fn extract_patch(pixels: &Grid<u8>, center: Pixel, r: usize, pad: f64) -> Vec<f64> {
    let side = 2 * r + 1;
    let ri = r as i32;
    let mut raw = Vec::with_capacity(side * side);
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let v = pixels
                .at(Pixel::new(center.x + dx, center.y + dy))
                .map(|&g| gray_to_unit(g))
                .unwrap_or(pad);
            raw.push(v);
        }
    }
    bilinear_resize(&raw, side, PATCH_SIDE)
}

/// Sample forward and reverse patch sequences along a stroke skeleton.
/// Sample points step by the patch half-width (50% overlap); patches
/// hanging over the image border are padded with the background gray.
pub fn sample_patch_sequence(
    stroke: &Stroke,
    img: &DrawingImage,
    cfg: PatchConfig,
    label: usize,
) -> Result<(PatchSequence, PatchSequence)> {
    if stroke.skeleton.is_empty() {
        return Err(Error::Empty(format!("stroke {} has an empty skeleton", stroke.id)));
    }
    let r = cfg.radius();
    let stride = r.max(1);
    let pad = gray_to_unit(median_gray(&img.pixels));
    let patches: Vec<Vec<f64>> = stroke
        .skeleton
        .iter()
        .step_by(stride)
        .map(|&p| extract_patch(&img.pixels, p, r, pad))
        .collect();
    let forward = PatchSequence {
        patches: patches.clone(),
        drawing_id: img.id.clone(),
        stroke_id: stroke.id,
        direction: Direction::Forward,
        label,
    };
    let mut rev = patches;
    rev.reverse();
    let reverse = PatchSequence {
        patches: rev,
        drawing_id: img.id.clone(),
        stroke_id: stroke.id,
        direction: Direction::Reverse,
        label,
    };
    Ok((forward, reverse))
}

/// GRU weights (biases zero unless enabled at init).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruParams {
    pub u_r: Array2<f64>,
    pub w_r: Array2<f64>,
    pub u_z: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u: Array2<f64>,
    pub w: Array2<f64>,
    pub u_s: Array2<f64>,
    pub b_r: Array1<f64>,
    pub b_z: Array1<f64>,
    pub b_h: Array1<f64>,
    pub b_s: Array1<f64>,
    /// When false (the default), bias gradients are discarded so the bias
    /// vectors stay zero and the recurrence matches the bias-free equations.
    pub use_biases: bool,
}

impl GruParams {
    pub fn hidden_size(&self) -> usize {
        self.u_r.nrows()
    }

    pub fn input_size(&self) -> usize {
        self.w_r.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.u_s.nrows()
    }

    /// Initialize every weight from N(0, std²) with a seeded generator.
    pub fn init(
        hidden: usize,
        input: usize,
        classes: usize,
        std: f64,
        use_biases: bool,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| normal.sample(rng))
        };
        let u_r = mat(hidden, hidden);
        let w_r = mat(hidden, input);
        let u_z = mat(hidden, hidden);
        let w_z = mat(hidden, input);
        let u = mat(hidden, hidden);
        let w = mat(hidden, input);
        let u_s = mat(classes, hidden);
        GruParams {
            u_r,
            w_r,
            u_z,
            w_z,
            u,
            w,
            u_s,
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
            b_s: Array1::zeros(classes),
            use_biases,
        }
    }

    pub fn zeros(hidden: usize, input: usize, classes: usize) -> Self {
        GruParams {
            u_r: Array2::zeros((hidden, hidden)),
            w_r: Array2::zeros((hidden, input)),
            u_z: Array2::zeros((hidden, hidden)),
            w_z: Array2::zeros((hidden, input)),
            u: Array2::zeros((hidden, hidden)),
            w: Array2::zeros((hidden, input)),
            u_s: Array2::zeros((classes, hidden)),
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
            b_s: Array1::zeros(classes),
            use_biases: false,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} does not match network input {}",
                x.len(),
                self.input_size()
            )));
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One recurrence step: h_t from h_{t−1} and x_t.
pub fn gru_step(p: &GruParams, h_prev: &Array1<f64>, x: &[f64]) -> Result<Array1<f64>> {
    p.check_input(x)?;
    let xv = ndarray::aview1(x);
    let r = (p.u_r.dot(h_prev) + p.w_r.dot(&xv) + &p.b_r).mapv(sigmoid);
    let z = (p.u_z.dot(h_prev) + p.w_z.dot(&xv) + &p.b_z).mapv(sigmoid);
    let hh = (p.u.dot(&(&r * h_prev)) + p.w.dot(&xv) + &p.b_h).mapv(f64::tanh);
    Ok(&z * &hh + (1.0 - &z) * h_prev)
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - m).exp());
    let sum = exp.sum();
    exp / sum
}

/// Run the recurrence from h₀ = 0 over the whole sequence and return the
/// softmax class posterior from the final hidden state.
pub fn forward_classify(p: &GruParams, seq: &PatchSequence) -> Result<Array1<f64>> {
    let h = final_hidden(p, seq)?;
    Ok(softmax(&(p.u_s.dot(&h) + &p.b_s)))
}

/// Final hidden state of the recurrence (the learned feature vector).
pub fn hidden_features(p: &GruParams, seq: &PatchSequence) -> Result<Array1<f64>> {
    final_hidden(p, seq)
}

fn final_hidden(p: &GruParams, seq: &PatchSequence) -> Result<Array1<f64>> {
    if seq.is_empty() {
        return Err(Error::Empty("patch sequence is empty".into()));
    }
    let mut h = Array1::zeros(p.hidden_size());
    for x in &seq.patches {
        h = gru_step(p, &h, x)?;
    }
    Ok(h)
}

/// Stroke-level posterior: the mean of the forward- and reverse-sequence
/// posteriors.
pub fn stroke_posterior(p: &GruParams, fwd: &PatchSequence, rev: &PatchSequence) -> Result<Array1<f64>> {
    let a = forward_classify(p, fwd)?;
    let b = forward_classify(p, rev)?;
    Ok((a + b) / 2.0)
}

/// Stroke-level learned features: the mean of the two directions' final
/// hidden states.
pub fn stroke_hidden(p: &GruParams, fwd: &PatchSequence, rev: &PatchSequence) -> Result<Array1<f64>> {
    let a = final_hidden(p, fwd)?;
    let b = final_hidden(p, rev)?;
    Ok((a + b) / 2.0)
}

/// Gradient (or squared-gradient accumulator) with the same layout as the
/// parameters.
#[derive(Clone, Debug)]
pub struct Grads {
    pub u_r: Array2<f64>,
    pub w_r: Array2<f64>,
    pub u_z: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u: Array2<f64>,
    pub w: Array2<f64>,
    pub u_s: Array2<f64>,
    pub b_r: Array1<f64>,
    pub b_z: Array1<f64>,
    pub b_h: Array1<f64>,
    pub b_s: Array1<f64>,
}

impl Grads {
    pub fn zeros_like(p: &GruParams) -> Self {
        Grads {
            u_r: Array2::zeros(p.u_r.raw_dim()),
            w_r: Array2::zeros(p.w_r.raw_dim()),
            u_z: Array2::zeros(p.u_z.raw_dim()),
            w_z: Array2::zeros(p.w_z.raw_dim()),
            u: Array2::zeros(p.u.raw_dim()),
            w: Array2::zeros(p.w.raw_dim()),
            u_s: Array2::zeros(p.u_s.raw_dim()),
            b_r: Array1::zeros(p.b_r.len()),
            b_z: Array1::zeros(p.b_z.len()),
            b_h: Array1::zeros(p.b_h.len()),
            b_s: Array1::zeros(p.b_s.len()),
        }
    }

    fn mats(&self) -> [&Array2<f64>; 7] {
        [&self.u_r, &self.w_r, &self.u_z, &self.w_z, &self.u, &self.w, &self.u_s]
    }

    fn mats_mut(&mut self) -> [&mut Array2<f64>; 7] {
        [
            &mut self.u_r,
            &mut self.w_r,
            &mut self.u_z,
            &mut self.w_z,
            &mut self.u,
            &mut self.w,
            &mut self.u_s,
        ]
    }

    fn vecs(&self) -> [&Array1<f64>; 4] {
        [&self.b_r, &self.b_z, &self.b_h, &self.b_s]
    }

    fn vecs_mut(&mut self) -> [&mut Array1<f64>; 4] {
        [&mut self.b_r, &mut self.b_z, &mut self.b_h, &mut self.b_s]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.mats_mut().into_iter().zip(other.mats()) {
            *a += b;
        }
        for (a, b) in self.vecs_mut().into_iter().zip(other.vecs()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.mats_mut() {
            *m *= s;
        }
        for v in self.vecs_mut() {
            *v *= s;
        }
    }

    /// Euclidean norm over every entry.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for m in self.mats() {
            acc += m.iter().map(|v| v * v).sum::<f64>();
        }
        for v in self.vecs() {
            acc += v.iter().map(|x| x * x).sum::<f64>();
        }
        acc.sqrt()
    }

    fn zero_biases(&mut self) {
        for v in self.vecs_mut() {
            v.fill(0.0);
        }
    }
}

/// Scale the gradient so its global norm is at most `max_norm`; returns the
/// pre-clip norm. Direction is preserved.
pub fn clip_global_norm(g: &mut Grads, max_norm: f64) -> f64 {
    let norm = g.global_norm();
    if norm > max_norm && norm > 0.0 {
        g.scale(max_norm / norm);
    }
    norm
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Forward + backward over one τ-window starting from a fixed (detached)
/// hidden state. Returns the gradient of the window's cross-entropy (taken
/// on the window-final softmax against `label`), the loss, and the final
/// hidden state to carry into the next window.
pub fn window_gradients(
    p: &GruParams,
    h0: &Array1<f64>,
    window: &[Vec<f64>],
    label: usize,
) -> Result<(Grads, f64, Array1<f64>)> {
    if window.is_empty() {
        return Err(Error::Empty("empty TBPTT window".into()));
    }
    if label >= p.n_classes() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            p.n_classes()
        )));
    }
    let k = window.len();
    let mut hs = Vec::with_capacity(k + 1); // h_0..h_k
    let mut rs = Vec::with_capacity(k);
    let mut zs = Vec::with_capacity(k);
    let mut hhs = Vec::with_capacity(k);
    hs.push(h0.clone());
    for x in window {
        p.check_input(x)?;
        let xv = ndarray::aview1(x);
        let h_prev = hs.last().unwrap();
        let r = (p.u_r.dot(h_prev) + p.w_r.dot(&xv) + &p.b_r).mapv(sigmoid);
        let z = (p.u_z.dot(h_prev) + p.w_z.dot(&xv) + &p.b_z).mapv(sigmoid);
        let hh = (p.u.dot(&(&r * h_prev)) + p.w.dot(&xv) + &p.b_h).mapv(f64::tanh);
        let h = &z * &hh + (1.0 - &z) * h_prev;
        rs.push(r);
        zs.push(z);
        hhs.push(hh);
        hs.push(h);
    }
    let h_last = hs[k].clone();
    let y = softmax(&(p.u_s.dot(&h_last) + &p.b_s));
    let loss = -y[label].max(1e-300).ln();

    let mut g = Grads::zeros_like(p);
    // d loss / d logits = ŷ − onehot(label).
    let mut dlogits = y;
    dlogits[label] -= 1.0;
    g.u_s = outer(&dlogits, &h_last);
    g.b_s = dlogits.clone();
    let mut dh = p.u_s.t().dot(&dlogits);

    for t in (0..k).rev() {
        let h_prev = &hs[t];
        let (r, z, hh) = (&rs[t], &zs[t], &hhs[t]);
        let xv = ndarray::aview1(&window[t]);
        let dz = &dh * &(hh - h_prev);
        let da_z = &dz * z * &(1.0 - z);
        let dhh = &dh * z;
        let da_h = &dhh * &(1.0 - hh * hh);
        let mut dh_prev = &dh * &(1.0 - z);

        g.u += &outer(&da_h, &(r * h_prev));
        g.w += &outer(&da_h, &xv.to_owned());
        let drh = p.u.t().dot(&da_h); // gradient into (r ⊙ h_prev)
        dh_prev = dh_prev + &drh * r;
        let dr = &drh * h_prev;
        let da_r = &dr * r * &(1.0 - r);

        g.u_r += &outer(&da_r, h_prev);
        g.w_r += &outer(&da_r, &xv.to_owned());
        g.u_z += &outer(&da_z, h_prev);
        g.w_z += &outer(&da_z, &xv.to_owned());
        g.b_r += &da_r;
        g.b_z += &da_z;
        g.b_h += &da_h;

        dh_prev = dh_prev + p.u_r.t().dot(&da_r) + p.u_z.t().dot(&da_z);
        dh = dh_prev;
    }
    Ok((g, loss, h_last))
}

/// Training hyperparameters. Defaults follow the recurrence's reference
/// settings: τ = 30, RMSProp(0.9, 1e−8) at lr 0.001, clip 5, N(0,1) init.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub tau: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub init_std: f64,
    pub decay: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub use_biases: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            tau: 30,
            lr: 0.001,
            clip_norm: 5.0,
            init_std: 1.0,
            decay: 0.9,
            eps: 1e-8,
            epochs: 20,
            batch_size: 32,
            hidden: 64,
            use_biases: false,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// RMSProp state: a running mean of squared gradients per parameter.
#[derive(Clone, Debug)]
pub struct RmsProp {
    s: Grads,
    decay: f64,
    eps: f64,
    lr: f64,
}

impl RmsProp {
    pub fn new(p: &GruParams, cfg: &TrainingConfig) -> Self {
        RmsProp { s: Grads::zeros_like(p), decay: cfg.decay, eps: cfg.eps, lr: cfg.lr }
    }

    /// θ ← θ − lr · g / (√s + ε) after s ← decay·s + (1−decay)·g².
    pub fn apply(&mut self, p: &mut GruParams, g: &Grads) {
        let (decay, eps, lr) = (self.decay, self.eps, self.lr);
        let step = |t: &mut f64, gv: f64, s: &mut f64| {
            *s = decay * *s + (1.0 - decay) * gv * gv;
            *t -= lr * gv / (s.sqrt() + eps);
        };
        let mats = [
            (&mut p.u_r, &g.u_r, &mut self.s.u_r),
            (&mut p.w_r, &g.w_r, &mut self.s.w_r),
            (&mut p.u_z, &g.u_z, &mut self.s.u_z),
            (&mut p.w_z, &g.w_z, &mut self.s.w_z),
            (&mut p.u, &g.u, &mut self.s.u),
            (&mut p.w, &g.w, &mut self.s.w),
            (&mut p.u_s, &g.u_s, &mut self.s.u_s),
        ];
        for (theta, grad, state) in mats {
            for ((t, &gv), s) in theta.iter_mut().zip(grad.iter()).zip(state.iter_mut()) {
                step(t, gv, s);
            }
        }
        let vecs = [
            (&mut p.b_r, &g.b_r, &mut self.s.b_r),
            (&mut p.b_z, &g.b_z, &mut self.s.b_z),
            (&mut p.b_h, &g.b_h, &mut self.s.b_h),
            (&mut p.b_s, &g.b_s, &mut self.s.b_s),
        ];
        for (theta, grad, state) in vecs {
            for ((t, &gv), s) in theta.iter_mut().zip(grad.iter()).zip(state.iter_mut()) {
                step(t, gv, s);
            }
        }
    }
}

/// One truncated-BPTT pass over a single sequence: per τ-window, backprop,
/// clip, update, carry the hidden state. Returns the mean window loss.
pub fn tbptt_train_step(
    p: &mut GruParams,
    seq: &PatchSequence,
    cfg: &TrainingConfig,
    opt: &mut RmsProp,
) -> Result<f64> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(Error::Empty("cannot train on an empty sequence".into()));
    }
    let mut h = Array1::zeros(p.hidden_size());
    let mut total = 0.0;
    let mut windows = 0;
    for window in seq.patches.chunks(cfg.tau) {
        let (mut g, loss, h_end) = window_gradients(p, &h, window, seq.label)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
        }
        if !p.use_biases {
            g.zero_biases();
        }
        clip_global_norm(&mut g, cfg.clip_norm);
        opt.apply(p, &g);
        h = h_end;
        total += loss;
        windows += 1;
    }
    Ok(total / windows as f64)
}

/// Train a GRU classifier on labelled patch sequences.
///
/// Sequences are shuffled each epoch with the seeded generator and walked
/// in mini-batches; within a batch, window w of every sequence contributes
/// to one averaged, clipped RMSProp update before window w+1 begins, so the
/// carried hidden states stay aligned with the parameters that produced
/// them. Returns the trained parameters and mean window loss per epoch.
pub fn train_gru(
    seqs: &[PatchSequence],
    n_classes: usize,
    cfg: &TrainingConfig,
) -> Result<(GruParams, Vec<f64>)> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(Error::Empty("no training sequences".into()));
    }
    let input = seqs[0].patches[0].len();
    for s in seqs {
        if s.is_empty() {
            return Err(Error::Empty("a training sequence is empty".into()));
        }
        if s.label >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {} classes",
                s.label, n_classes
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut p = GruParams::init(cfg.hidden, input, n_classes, cfg.init_std, cfg.use_biases, &mut rng);
    let mut opt = RmsProp::new(&p, cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for epoch in 0..cfg.epochs {
        // Fisher–Yates with the session generator keeps runs reproducible.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut carried: Vec<Array1<f64>> =
                batch.iter().map(|_| Array1::zeros(cfg.hidden)).collect();
            let max_windows =
                batch.iter().map(|&i| seqs[i].len().div_ceil(cfg.tau)).max().unwrap_or(0);
            for w in 0..max_windows {
                let mut acc = Grads::zeros_like(&p);
                let mut contributing = 0usize;
                for (slot, &si) in batch.iter().enumerate() {
                    let seq = &seqs[si];
                    let start = w * cfg.tau;
                    if start >= seq.len() {
                        continue;
                    }
                    let end = (start + cfg.tau).min(seq.len());
                    let (g, loss, h_end) =
                        window_gradients(&p, &carried[slot], &seq.patches[start..end], seq.label)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
                    }
                    acc.add_assign(&g);
                    carried[slot] = h_end;
                    contributing += 1;
                    loss_sum += loss;
                    loss_count += 1;
                }
                if contributing == 0 {
                    continue;
                }
                acc.scale(1.0 / contributing as f64);
                if !p.use_biases {
                    acc.zero_biases();
                }
                clip_global_norm(&mut acc, cfg.clip_norm);
                opt.apply(&mut p, &acc);
            }
        }
        epoch_losses.push(loss_sum / loss_count.max(1) as f64);
    }
    Ok((p, epoch_losses))
}

#[derive(Serialize, Deserialize)]
struct MatrixDto {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixDto {
    fn from(a: &Array2<f64>) -> Self {
        MatrixDto { rows: a.nrows(), cols: a.ncols(), data: a.iter().copied().collect() }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::ShapeMismatch(format!("bad matrix in model file: {e}")))
    }
}

/// On-disk model: versioned JSON with explicit shapes.
#[derive(Serialize, Deserialize)]
pub struct GruModelFile {
    pub version: u32,
    pub hidden_size: usize,
    pub input_size: usize,
    pub classes: Vec<String>,
    pub patch: PatchConfig,
    pub use_biases: bool,
    u_r: MatrixDto,
    w_r: MatrixDto,
    u_z: MatrixDto,
    w_z: MatrixDto,
    u: MatrixDto,
    w: MatrixDto,
    u_s: MatrixDto,
    b_r: Vec<f64>,
    b_z: Vec<f64>,
    b_h: Vec<f64>,
    b_s: Vec<f64>,
}

pub const GRU_MODEL_VERSION: u32 = 1;

/// Serialize a trained model (with its class names and patch settings).
pub fn save_gru_model(
    path: &Path,
    p: &GruParams,
    classes: &[String],
    patch: PatchConfig,
) -> Result<()> {
    let file = GruModelFile {
        version: GRU_MODEL_VERSION,
        hidden_size: p.hidden_size(),
        input_size: p.input_size(),
        classes: classes.to_vec(),
        patch,
        use_biases: p.use_biases,
        u_r: MatrixDto::from(&p.u_r),
        w_r: MatrixDto::from(&p.w_r),
        u_z: MatrixDto::from(&p.u_z),
        w_z: MatrixDto::from(&p.w_z),
        u: MatrixDto::from(&p.u),
        w: MatrixDto::from(&p.w),
        u_s: MatrixDto::from(&p.u_s),
        b_r: p.b_r.to_vec(),
        b_z: p.b_z.to_vec(),
        b_h: p.b_h.to_vec(),
        b_s: p.b_s.to_vec(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a model saved by [`save_gru_model`].
pub fn load_gru_model(path: &Path) -> Result<(GruParams, Vec<String>, PatchConfig)> {
    let text = std::fs::read_to_string(path)?;
    let file: GruModelFile = serde_json::from_str(&text)?;
    if file.version != GRU_MODEL_VERSION {
        return Err(Error::Config(format!(
            "unsupported model version {} (expected {GRU_MODEL_VERSION})",
            file.version
        )));
    }
    let p = GruParams {
        u_r: file.u_r.to_array()?,
        w_r: file.w_r.to_array()?,
        u_z: file.u_z.to_array()?,
        w_z: file.w_z.to_array()?,
        u: file.u.to_array()?,
        w: file.w.to_array()?,
        u_s: file.u_s.to_array()?,
        b_r: Array1::from(file.b_r),
        b_z: Array1::from(file.b_z),
        b_h: Array1::from(file.b_h),
        b_s: Array1::from(file.b_s),
        use_biases: file.use_biases,
    };
    if p.u_r.nrows() != file.hidden_size || p.w_r.ncols() != file.input_size {
        return Err(Error::ShapeMismatch("model file shapes are inconsistent".into()));
    }
    Ok((p, file.classes, file.patch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn random_params(hidden: usize, input: usize, classes: usize, seed: u64) -> GruParams {
        GruParams::init(hidden, input, classes, 0.6, false, &mut rng(seed))
    }

    fn random_seq(t: usize, input: usize, label: usize, seed: u64) -> PatchSequence {
        let mut r = rng(seed);
        PatchSequence {
            patches: (0..t)
                .map(|_| (0..input).map(|_| r.random_range(-0.9..0.9)).collect())
                .collect(),
            drawing_id: "test".into(),
            stroke_id: 0,
            direction: Direction::Forward,
            label,
        }
    }

    #[test]
    fn zero_weights_halve_the_hidden_state() {
        let p = GruParams::zeros(4, 3, 2);
        let h = Array1::from(vec![1.0, -2.0, 0.5, 4.0]);
        let h2 = gru_step(&p, &h, &[0.3, -0.1, 0.9]).unwrap();
        for i in 0..4 {
            assert!((h2[i] - 0.5 * h[i]).abs() < 1e-15);
        }
        let h0 = Array1::zeros(4);
        let h1 = gru_step(&p, &h0, &[0.3, -0.1, 0.9]).unwrap();
        assert!(h1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_matches_scalar_loop_oracle() {
        let p = random_params(4, 5, 2, 7);
        let h_prev = Array1::from(vec![0.2, -0.4, 0.9, -0.1]);
        let x = [0.5, -0.5, 0.25, 0.8, -0.3];
        let got = gru_step(&p, &h_prev, &x).unwrap();

        // Independent scalar re-derivation, no ndarray ops.
        let n = 4;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let matvec = |m: &Array2<f64>, v: &dyn Fn(usize) -> f64, cols: usize| -> Vec<f64> {
            (0..n)
                .map(|i| (0..cols).map(|j| m[[i, j]] * v(j)).sum::<f64>())
                .collect()
        };
        let rh = matvec(&p.u_r, &|j| h_prev[j], n);
        let rx = matvec(&p.w_r, &|j| x[j], 5);
        let r: Vec<f64> = (0..n).map(|i| sig(rh[i] + rx[i])).collect();
        let zh = matvec(&p.u_z, &|j| h_prev[j], n);
        let zx = matvec(&p.w_z, &|j| x[j], 5);
        let z: Vec<f64> = (0..n).map(|i| sig(zh[i] + zx[i])).collect();
        let uh = matvec(&p.u, &|j| r[j] * h_prev[j], n);
        let wx = matvec(&p.w, &|j| x[j], 5);
        let hh: Vec<f64> = (0..n).map(|i| (uh[i] + wx[i]).tanh()).collect();
        for i in 0..n {
            let expect = z[i] * hh[i] + (1.0 - z[i]) * h_prev[i];
            assert!((got[i] - expect).abs() < 1e-12, "dim {i}");
        }
    }

    #[test]
    fn zero_weights_give_uniform_posterior() {
        let p = GruParams::zeros(6, 4, 3);
        let seq = random_seq(5, 4, 0, 3);
        let y = forward_classify(&p, &seq).unwrap();
        for v in y.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn posteriors_are_valid_distributions() {
        for seed in 0..10 {
            let p = random_params(5, 4, 3, seed);
            let seq = random_seq(7, 4, 1, seed + 100);
            let y = forward_classify(&p, &seq).unwrap();
            assert!((y.sum() - 1.0).abs() < 1e-9);
            assert!(y.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn hidden_features_match_the_classification_recurrence() {
        for seed in 0..20 {
            let p = random_params(6, 4, 2, seed);
            let seq = random_seq(9, 4, 0, seed + 50);
            let h = hidden_features(&p, &seq).unwrap();
            assert_eq!(h.len(), 6);
            // Re-run the recurrence manually.
            let mut hh = Array1::zeros(6);
            for x in &seq.patches {
                hh = gru_step(&p, &hh, x).unwrap();
            }
            for i in 0..6 {
                assert!((h[i] - hh[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn window_gradients_match_central_finite_differences() {
        let hidden = 3;
        let input = 4;
        let classes = 2;
        let tau = 3;
        let p = random_params(hidden, input, classes, 42);
        let seq = random_seq(7, input, 1, 43);
        // Check the second window (carried h ≠ 0) as well as the first.
        let mut h0 = Array1::zeros(hidden);
        for w_start in [0usize, tau] {
            let window = &seq.patches[w_start..(w_start + tau).min(seq.len())];
            let (g, _, h_end) = window_gradients(&p, &h0, window, seq.label).unwrap();
            let fd_loss = |pp: &GruParams| -> f64 {
                let (_, loss, _) = window_gradients(pp, &h0, window, seq.label).unwrap();
                loss
            };
            let eps = 1e-5;
            let check = |get: &dyn Fn(&GruParams) -> &Array2<f64>,
                             getm: &dyn Fn(&mut GruParams) -> &mut Array2<f64>,
                             ga: &Array2<f64>,
                             name: &str| {
                let (r, c) = (get(&p).nrows(), get(&p).ncols());
                for i in 0..r {
                    for j in 0..c {
                        let mut pp = p.clone();
                        getm(&mut pp)[[i, j]] += eps;
                        let up = fd_loss(&pp);
                        getm(&mut pp)[[i, j]] -= 2.0 * eps;
                        let down = fd_loss(&pp);
                        let fd = (up - down) / (2.0 * eps);
                        let a = ga[[i, j]];
                        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                        assert!(rel < 1e-4, "{name}[{i},{j}]: analytic {a} vs fd {fd}");
                    }
                }
            };
            check(&|p| &p.u_r, &|p| &mut p.u_r, &g.u_r, "u_r");
            check(&|p| &p.w_r, &|p| &mut p.w_r, &g.w_r, "w_r");
            check(&|p| &p.u_z, &|p| &mut p.u_z, &g.u_z, "u_z");
            check(&|p| &p.w_z, &|p| &mut p.w_z, &g.w_z, "w_z");
            check(&|p| &p.u, &|p| &mut p.u, &g.u, "u");
            check(&|p| &p.w, &|p| &mut p.w, &g.w, "w");
            check(&|p| &p.u_s, &|p| &mut p.u_s, &g.u_s, "u_s");
            h0 = h_end;
        }
    }

    #[test]
    fn clipping_scales_to_the_exact_norm_and_keeps_direction() {
        let p = GruParams::zeros(3, 2, 2);
        let mut g = Grads::zeros_like(&p);
        // Construct a gradient with global norm exactly 50.
        g.u_r[[0, 0]] = 30.0;
        g.w[[1, 1]] = 40.0;
        assert!((g.global_norm() - 50.0).abs() < 1e-12);
        let before = clip_global_norm(&mut g, 5.0);
        assert!((before - 50.0).abs() < 1e-12);
        assert!((g.global_norm() - 5.0).abs() < 1e-9);
        // Direction preserved: components keep their 3:4 ratio.
        assert!((g.u_r[[0, 0]] / g.w[[1, 1]] - 0.75).abs() < 1e-12);
        // Already-small gradients pass through untouched.
        let mut small = Grads::zeros_like(&p);
        small.u[[0, 1]] = 0.25;
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.u[[0, 1]], 0.25);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = random_params(4, 3, 2, 9);
        let snapshot = p.clone();
        let cfg = TrainingConfig::default();
        let mut opt = RmsProp::new(&p, &cfg);
        let g = Grads::zeros_like(&p);
        opt.apply(&mut p, &g);
        assert_eq!(p.u_r, snapshot.u_r);
        assert_eq!(p.w, snapshot.w);
        assert_eq!(p.u_s, snapshot.u_s);
    }

    #[test]
    fn tiny_net_overfits_separable_sequences() {
        // Two classes with opposite constant inputs.
        let mut seqs = Vec::new();
        for i in 0..8 {
            let sign = if i % 2 == 0 { 0.5 } else { -0.5 };
            seqs.push(PatchSequence {
                patches: vec![vec![sign; 4]; 6],
                drawing_id: format!("d{i}"),
                stroke_id: i,
                direction: Direction::Forward,
                label: (i % 2),
            });
        }
        let cfg = TrainingConfig {
            hidden: 8,
            epochs: 60,
            batch_size: 4,
            lr: 0.01,
            init_std: 0.5,
            tau: 3,
            seed: 5,
            ..TrainingConfig::default()
        };
        let (p, losses) = train_gru(&seqs, 2, &cfg).unwrap();
        assert!(losses[losses.len() - 1] < losses[0], "loss should drop");
        let correct = seqs
            .iter()
            .filter(|s| {
                let y = forward_classify(&p, s).unwrap();
                let pred = if y[0] > y[1] { 0 } else { 1 };
                pred == s.label
            })
            .count();
        assert!(correct as f64 / seqs.len() as f64 > 0.95, "train accuracy {correct}/8");
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let seqs: Vec<PatchSequence> =
            (0..6).map(|i| random_seq(8, 4, i % 2, 1000 + i as u64)).collect();
        let cfg = TrainingConfig {
            hidden: 5,
            epochs: 3,
            batch_size: 2,
            tau: 4,
            seed: 77,
            ..TrainingConfig::default()
        };
        let (p1, l1) = train_gru(&seqs, 2, &cfg).unwrap();
        let (p2, l2) = train_gru(&seqs, 2, &cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(p1.u_r, p2.u_r);
        assert_eq!(p1.u_s, p2.u_s);
    }

    #[test]
    fn model_file_roundtrips_and_rejects_bad_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let p = random_params(4, 6, 3, 11);
        let classes = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        save_gru_model(&path, &p, &classes, PatchConfig::Adaptive(3)).unwrap();
        let (q, cls, patch) = load_gru_model(&path).unwrap();
        assert_eq!(cls, classes);
        assert_eq!(patch, PatchConfig::Adaptive(3));
        assert_eq!(p.u_r, q.u_r);
        assert_eq!(p.u_s, q.u_s);

        // Corrupt the version field.
        let text = std::fs::read_to_string(&path).unwrap();
        let hacked = text.replace("\"version\":1", "\"version\":99");
        std::fs::write(&path, hacked).unwrap();
        assert!(load_gru_model(&path).is_err());
    }

    // ---- patch sampling ----

    fn flat_image(w: usize, h: usize, gray: u8) -> DrawingImage {
        DrawingImage::new("img", Grid::filled(w, h, gray), 40.0).unwrap()
    }

    fn line_stroke(len: usize) -> Stroke {
        Stroke {
            id: 0,
            source_id: "img".into(),
            skeleton: (0..len as i32).map(|x| Pixel::new(x, 10)).collect(),
            closed: false,
            boundary: Vec::new(),
            ribs_mm: vec![0.25; len],
            owned: Vec::new(),
        }
    }

    #[test]
    fn uniform_image_gives_constant_patches() {
        let img = flat_image(320, 21, 200);
        let stroke = line_stroke(300);
        let (fwd, rev) = sample_patch_sequence(&stroke, &img, PatchConfig::Fixed, 0).unwrap();
        assert_eq!(fwd.len(), 60, "300 px at stride 5");
        assert_eq!(fwd.patches[0].len(), PATCH_DIM);
        let first = &fwd.patches[0];
        let expect = gray_to_unit(200);
        for patch in &fwd.patches {
            assert_eq!(patch, first);
        }
        assert!((first[0] - expect).abs() < 1e-15);
        assert!(first.iter().all(|&v| v > -1.0 && v < 1.0));
        // Reverse is the forward list reversed.
        assert_eq!(rev.patches.first(), fwd.patches.last());
        assert_eq!(rev.patches.last(), fwd.patches.first());
        assert_eq!(rev.direction, Direction::Reverse);
    }

    #[test]
    fn border_patches_pad_with_background_gray() {
        // Dark strip on light paper; stroke starts at the very corner.
        let mut pixels = Grid::filled(30, 30, 230u8);
        for x in 0..30 {
            pixels.set(Pixel::new(x, 0), 10);
        }
        let img = DrawingImage::new("img", pixels, 40.0).unwrap();
        let stroke = Stroke {
            id: 0,
            source_id: "img".into(),
            skeleton: (0..30).map(|x| Pixel::new(x, 0)).collect(),
            closed: false,
            boundary: Vec::new(),
            ribs_mm: vec![0.25; 30],
            owned: Vec::new(),
        };
        let (fwd, _) = sample_patch_sequence(&stroke, &img, PatchConfig::Fixed, 0).unwrap();
        // The first patch extends past the top/left border: those entries
        // must equal the background (median) gray, which is 230.
        let pad = gray_to_unit(230);
        assert!((fwd.patches[0][0] - pad).abs() < 1e-15, "corner pixel should be padding");
    }

    #[test]
    fn adaptive_radius_median_oracle() {
        let mk = |mean_rib_mm: f64| Stroke {
            id: 0,
            source_id: String::new(),
            skeleton: vec![Pixel::new(0, 0)],
            closed: false,
            boundary: Vec::new(),
            ribs_mm: vec![mean_rib_mm],
            owned: Vec::new(),
        };
        // mm_per_px = 1 so rib mm == rib px.
        let strokes = vec![mk(0.8), mk(1.0), mk(1.4)];
        assert_eq!(adaptive_radius(&strokes, 1.0), 1, "median of {{0.8, 1.0, 1.4}} rounds to 1");
        assert_eq!(adaptive_radius(&[], 1.0), FIXED_RADIUS);
    }

    #[test]
    fn adaptive_radius_five_matches_fixed_mode() {
        let mut pixels = Grid::filled(64, 21, 220u8);
        for x in 2..62 {
            for y in 8..13 {
                pixels.set(Pixel::new(x, y), 30);
            }
        }
        let img = DrawingImage::new("img", pixels, 40.0).unwrap();
        let stroke = line_stroke(60);
        let (fixed, _) = sample_patch_sequence(&stroke, &img, PatchConfig::Fixed, 0).unwrap();
        let (adaptive, _) =
            sample_patch_sequence(&stroke, &img, PatchConfig::Adaptive(5), 0).unwrap();
        assert_eq!(fixed.patches, adaptive.patches);
    }

    #[test]
    fn empty_stroke_is_rejected() {
        let img = flat_image(10, 10, 128);
        let stroke = Stroke {
            id: 0,
            source_id: "img".into(),
            skeleton: Vec::new(),
            closed: false,
            boundary: Vec::new(),
            ribs_mm: Vec::new(),
            owned: Vec::new(),
        };
        assert!(sample_patch_sequence(&stroke, &img, PatchConfig::Fixed, 0).is_err());
    }
}
