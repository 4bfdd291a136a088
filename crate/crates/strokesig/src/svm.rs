//! Kernel SVM stroke classification with calibrated posteriors.
//!
//! Binary soft-margin SVMs are trained with a sequential-minimal-optimization
//! solver over an RBF or polynomial kernel, on internally standardized
//! feature columns (the hand-crafted blocks mix millimetre scales with
//! unit-free ratios, so standardization is not optional). Decision values
//! are mapped to posteriors by Platt scaling fitted on a held-out slice of
//! the training data. Two multiclass arrangements are provided: one-vs-all
//! heads with exactly balanced negative pools, and an error-correcting
//! output code built from every pairwise binary model (vote over pairwise
//! winners, ties broken by summed posteriors).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Rbf,
    Polynomial,
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "poly" | "polynomial" => Ok(KernelKind::Polynomial),
            other => Err(Error::Config(format!("unknown kernel '{other}' (rbf|poly)"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Rbf => write!(f, "rbf"),
            KernelKind::Polynomial => write!(f, "poly"),
        }
    }
}

/// Kernel and regularization settings. `gamma = None` resolves to 1/dim at
/// training time.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: Option<f64>,
    pub degree: u32,
    pub coef0: f64,
    pub c: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { kind: KernelKind::Rbf, gamma: None, degree: 3, coef0: 1.0, c: 1.0 }
    }
}

impl KernelSpec {
    pub fn rbf() -> Self {
        KernelSpec::default()
    }

    pub fn polynomial() -> Self {
        KernelSpec { kind: KernelKind::Polynomial, ..KernelSpec::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config("kernel spec: C must be positive".into()));
        }
        if self.degree < 1 {
            return Err(Error::Config("kernel spec: degree must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Config("kernel spec: gamma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Fill in the default gamma for a known feature dimension.
    fn resolved(self, dim: usize) -> KernelSpec {
        KernelSpec { gamma: Some(self.gamma.unwrap_or(1.0 / dim.max(1) as f64)), ..self }
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let g = self.gamma.expect("gamma resolved at training");
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-g * d2).exp()
            }
            KernelKind::Polynomial => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot + self.coef0).powi(self.degree as i32)
            }
        }
    }
}

/// Per-column standardization statistics (population std; constant columns
/// keep std 1 so they pass through unchanged). Standardized values are
/// rounded to single precision: affine rescalings of a column then map to
/// bit-identical kernels, so the iterative solver cannot diverge on
/// last-ulp input noise and predictions are exactly invariant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &[Vec<f64>]) -> Result<Scaler> {
        if x.is_empty() {
            return Err(Error::Empty("cannot fit a scaler on zero samples".into()));
        }
        let dim = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            if row.len() != dim {
                return Err(Error::ShapeMismatch("ragged feature matrix".into()));
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 { 1.0 } else { sd }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature dim {} does not match scaler dim {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| ((v - m) / s) as f32 as f64)
            .collect())
    }
}

/// A trained binary kernel SVM with Platt calibration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmModel {
    pub spec: KernelSpec,
    pub scaler: Scaler,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// αᵢ·yᵢ per support vector; |coef| ≤ C.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    /// Platt sigmoid: P(positive | f) = 1 / (1 + exp(A·f + B)).
    pub platt_a: f64,
    pub platt_b: f64,
    /// Largest KKT violation of the final dual solution.
    pub kkt_residual: f64,
}

const SMO_TOL: f64 = 1e-3;
const SMO_MAX_SWEEPS: usize = 1000;

struct SmoSolution {
    alpha: Vec<f64>,
    b: f64,
    kkt_residual: f64,
    /// Kernel expansion Σⱼ αⱼyⱼK(i,j) per training point (without bias).
    f_cache: Vec<f64>,
}

fn kernel_matrix(xs: &[Vec<f64>], spec: &KernelSpec) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(&xs[i], &xs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Sequential minimal optimization of the soft-margin dual. The second
/// operand is chosen by the largest |E₁−E₂| over non-bound points, with
/// seeded random-start sweeps as fallbacks, so runs are deterministic.
fn solve_smo(k: &[f64], y: &[f64], c: f64, tol: f64) -> SmoSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut b = 0.0;
    let mut fc = vec![0.0; n]; // Σ αⱼyⱼK(i,j)
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let eps = 1e-12;

    let non_bound = |a: f64| a > eps && a < c - eps;

    // take_step borrows everything mutably; implemented as a closure-free fn.
    fn take_step(
        i1: usize,
        i2: usize,
        k: &[f64],
        y: &[f64],
        c: f64,
        alpha: &mut [f64],
        b: &mut f64,
        fc: &mut [f64],
    ) -> bool {
        if i1 == i2 {
            return false;
        }
        let n = y.len();
        let (a1, a2) = (alpha[i1], alpha[i2]);
        let (y1, y2) = (y[i1], y[i2]);
        let e1 = fc[i1] + *b - y1;
        let e2 = fc[i2] + *b - y2;
        let s = y1 * y2;
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), (c + a2 - a1).min(c))
        } else {
            ((a1 + a2 - c).max(0.0), (a1 + a2).min(c))
        };
        if hi - lo < 1e-12 {
            return false;
        }
        let (k11, k12, k22) = (k[i1 * n + i1], k[i1 * n + i2], k[i2 * n + i2]);
        let eta = k11 + k22 - 2.0 * k12;
        if eta <= 0.0 {
            // Degenerate direction (e.g. duplicate points): skip the pair.
            return false;
        }
        let mut a2_new = a2 + y2 * (e1 - e2) / eta;
        a2_new = a2_new.clamp(lo, hi);
        if (a2_new - a2).abs() < 1e-12 * (a2_new + a2 + 1e-12) {
            return false;
        }
        let a1_new = (a1 + s * (a2 - a2_new)).clamp(0.0, c);
        let d1 = (a1_new - a1) * y1;
        let d2 = (a2_new - a2) * y2;
        let b1 = *b - e1 - d1 * k11 - d2 * k12;
        let b2 = *b - e2 - d1 * k12 - d2 * k22;
        let eps = 1e-12;
        *b = if a1_new > eps && a1_new < c - eps {
            b1
        } else if a2_new > eps && a2_new < c - eps {
            b2
        } else {
            (b1 + b2) / 2.0
        };
        for j in 0..n {
            fc[j] += d1 * k[i1 * n + j] + d2 * k[i2 * n + j];
        }
        alpha[i1] = a1_new;
        alpha[i2] = a2_new;
        true
    }

    let examine = |i2: usize,
                       alpha: &mut Vec<f64>,
                       b: &mut f64,
                       fc: &mut Vec<f64>,
                       rng: &mut ChaCha20Rng|
     -> bool {
        let y2 = y[i2];
        let a2 = alpha[i2];
        let e2 = fc[i2] + *b - y2;
        let r2 = e2 * y2;
        if !((r2 < -tol && a2 < c - eps) || (r2 > tol && a2 > eps)) {
            return false;
        }
        // Heuristic: maximize |E1 − E2| over non-bound points.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if j != i2 && non_bound(alpha[j]) {
                let gap = (fc[j] + *b - y[j] - e2).abs();
                if best.map(|(_, g)| gap > g).unwrap_or(true) {
                    best = Some((j, gap));
                }
            }
        }
        if let Some((i1, _)) = best {
            if take_step(i1, i2, k, y, c, alpha, b, fc) {
                return true;
            }
        }
        // Fallback sweeps from a seeded random start.
        let start = rng.random_range(0..n);
        for off in 0..n {
            let j = (start + off) % n;
            if non_bound(alpha[j]) && take_step(j, i2, k, y, c, alpha, b, fc) {
                return true;
            }
        }
        let start = rng.random_range(0..n);
        for off in 0..n {
            let j = (start + off) % n;
            if take_step(j, i2, k, y, c, alpha, b, fc) {
                return true;
            }
        }
        false
    };

    let residual = |alpha: &[f64], b: f64, fc: &[f64]| -> f64 {
        let mut kkt = 0.0f64;
        for i in 0..n {
            let margin = y[i] * (fc[i] + b);
            let viol = if alpha[i] <= eps {
                (1.0 - margin).max(0.0)
            } else if alpha[i] >= c - eps {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            kkt = kkt.max(viol);
        }
        kkt
    };

    let mut sweeps = 0usize;
    let mut kkt = f64::INFINITY;
    // Sweep to local convergence, then re-derive the bias from the exact
    // KKT equalities of the non-bound support vectors. The bias shift can
    // nudge a point back over the tolerance, so repeat until the residual
    // measured with the final bias settles (or the sweep budget runs out).
    'outer: for _round in 0..20 {
        let mut examine_all = true;
        while sweeps < SMO_MAX_SWEEPS {
            sweeps += 1;
            let mut changed = 0usize;
            for i in 0..n {
                if examine_all || non_bound(alpha[i]) {
                    if examine(i, &mut alpha, &mut b, &mut fc, &mut rng) {
                        changed += 1;
                    }
                }
            }
            if examine_all {
                if changed == 0 {
                    break;
                }
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }
        let nb: Vec<usize> = (0..n).filter(|&i| non_bound(alpha[i])).collect();
        if !nb.is_empty() {
            b = nb.iter().map(|&i| y[i] - fc[i]).sum::<f64>() / nb.len() as f64;
        }
        kkt = residual(&alpha, b, &fc);
        if kkt <= tol || sweeps >= SMO_MAX_SWEEPS {
            break 'outer;
        }
    }
    SmoSolution { alpha, b, kkt_residual: kkt, f_cache: fc }
}

/// Platt sigmoid fit: robust Newton iteration on smoothed targets.
fn fit_platt(decision: &[f64], positive: &[bool]) -> (f64, f64) {
    let n1 = positive.iter().filter(|&&p| p).count() as f64;
    let n0 = positive.len() as f64 - n1;
    let hi = (n1 + 1.0) / (n1 + 2.0);
    let lo = 1.0 / (n0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        decision
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let fapb = f * a + b;
                if fapb >= 0.0 {
                    ti * fapb + (1.0 + (-fapb).exp()).ln()
                } else {
                    (ti - 1.0) * fapb + (1.0 + fapb.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n0 + 1.0) / (n1 + 1.0)).ln();
    let mut fval = objective(a, b);
    let sigma = 1e-12;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21) = (sigma, sigma, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &ti) in decision.iter().zip(&t) {
            let fapb = f * a + b;
            let (p, q) = if fapb >= 0.0 {
                let e = (-fapb).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = fapb.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

fn sigmoid_predict(f: f64, a: f64, b: f64) -> f64 {
    let fapb = f * a + b;
    if fapb >= 0.0 {
        let e = (-fapb).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + fapb.exp())
    }
}

/// Deterministic stratified 80/20 split: within each class, every fifth
/// sample goes to the calibration slice.
fn calibration_split(y: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut cal = Vec::new();
    let mut seen = [0usize; 2];
    for (i, &label) in y.iter().enumerate() {
        let k = label as usize;
        seen[k] += 1;
        if seen[k] % 5 == 0 {
            cal.push(i);
        } else {
            train.push(i);
        }
    }
    (train, cal)
}

/// Train a binary kernel SVM with Platt-calibrated posteriors.
///
/// Columns are standardized internally; the Platt sigmoid is fitted on the
/// decision values of a held-out stratified 20% slice (falling back to
/// training values when a class is too small to spare any), after which the
/// dual is re-solved on the full set.
pub fn train_svm(x: &[Vec<f64>], y: &[bool], spec: KernelSpec) -> Result<SvmModel> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples vs {} labels",
            x.len(),
            y.len()
        )));
    }
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::InvalidInput("training data contains a single class".into()));
    }
    let scaler = Scaler::fit(x)?;
    let xs: Vec<Vec<f64>> = x.iter().map(|r| scaler.apply(r)).collect::<Result<_>>()?;
    let spec = spec.resolved(xs[0].len());
    let yv: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    // Calibration pass on the held-out slice.
    let (tr_idx, cal_idx) = calibration_split(y);
    let cal_ok = !cal_idx.is_empty()
        && tr_idx.iter().any(|&i| y[i])
        && tr_idx.iter().any(|&i| !y[i]);
    let (platt_a, platt_b) = if cal_ok {
        let xt: Vec<Vec<f64>> = tr_idx.iter().map(|&i| xs[i].clone()).collect();
        let yt: Vec<f64> = tr_idx.iter().map(|&i| yv[i]).collect();
        let k = kernel_matrix(&xt, &spec);
        let sol = solve_smo(&k, &yt, spec.c, SMO_TOL);
        let decisions: Vec<f64> = cal_idx
            .iter()
            .map(|&i| {
                let mut f = sol.b;
                for (j, &a) in sol.alpha.iter().enumerate() {
                    if a > 0.0 {
                        f += a * yt[j] * spec.eval(&xt[j], &xs[i]);
                    }
                }
                f
            })
            .collect();
        let labels: Vec<bool> = cal_idx.iter().map(|&i| y[i]).collect();
        fit_platt(&decisions, &labels)
    } else {
        (0.0, 0.0) // replaced below from training decision values
    };

    // Final solve on every sample.
    let k = kernel_matrix(&xs, &spec);
    let sol = solve_smo(&k, &yv, spec.c, SMO_TOL);
    let (platt_a, platt_b) = if cal_ok {
        (platt_a, platt_b)
    } else {
        let decisions: Vec<f64> = (0..xs.len()).map(|i| sol.f_cache[i] + sol.b).collect();
        fit_platt(&decisions, y)
    };

    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 1e-12 {
            support_vectors.push(xs[i].clone());
            coefficients.push(a * yv[i]);
        }
    }
    Ok(SvmModel {
        spec,
        scaler,
        support_vectors,
        coefficients,
        bias: sol.b,
        platt_a,
        platt_b,
        kkt_residual: sol.kkt_residual,
    })
}

impl SvmModel {
    /// Raw kernel decision value (positive side ⇒ positive class).
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let xs = self.scaler.apply(x)?;
        let mut f = self.bias;
        for (sv, &c) in self.support_vectors.iter().zip(&self.coefficients) {
            f += c * self.spec.eval(sv, &xs);
        }
        Ok(f)
    }

    /// Platt posterior for the positive class, in (0,1); the complement is
    /// the negative-class posterior.
    pub fn predict_posterior(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid_predict(self.decision(x)?, self.platt_a, self.platt_b))
    }

    /// Hard label by decision sign.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision(x)? >= 0.0)
    }
}

/// Balanced index sets for a one-vs-all head: all of the target's samples
/// as positives, and an equal-sized negative pool drawn evenly from the
/// other classes (seeded subsampling; positives are downsampled only when
/// the other classes cannot fill the pool).
pub(crate) fn one_vs_all_indices(
    y: &[usize],
    target: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut per_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &c) in y.iter().enumerate() {
        per_class.entry(c).or_default().push(i);
    }
    let mut positives = per_class.remove(&target).ok_or_else(|| {
        Error::InvalidInput(format!("target class {target} has no samples"))
    })?;
    if per_class.is_empty() {
        return Err(Error::Empty("no negative classes available".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffle = |v: &mut Vec<usize>| {
        for i in (1..v.len()).rev() {
            let j = rng.random_range(0..=i);
            v.swap(i, j);
        }
    };

    let n_pos = positives.len();
    let k = per_class.len();
    let mut pools: Vec<(usize, Vec<usize>)> = per_class.into_iter().collect();
    for (_, pool) in &mut pools {
        shuffle(pool);
    }
    // Even quotas, remainders to the lowest class ids, then refill from
    // whatever capacity is left when a class runs short.
    let mut want: Vec<usize> = (0..k)
        .map(|i| n_pos / k + usize::from(i < n_pos % k))
        .collect();
    loop {
        let mut short = 0usize;
        for (w, (_, pool)) in want.iter_mut().zip(&pools) {
            if *w > pool.len() {
                short += *w - pool.len();
                *w = pool.len();
            }
        }
        if short == 0 {
            break;
        }
        let mut placed = false;
        for (w, (_, pool)) in want.iter_mut().zip(&pools) {
            while short > 0 && *w < pool.len() {
                *w += 1;
                short -= 1;
                placed = true;
            }
        }
        if !placed {
            break;
        }
    }
    let mut negatives: Vec<usize> = Vec::new();
    for ((_, pool), &w) in pools.iter().zip(&want) {
        negatives.extend_from_slice(&pool[..w]);
    }
    if negatives.is_empty() {
        return Err(Error::Empty("no negative samples after balancing".into()));
    }
    // Exact balance: if the negative pool could not match the positives,
    // downsample the positives too.
    if negatives.len() < n_pos {
        shuffle(&mut positives);
        positives.truncate(negatives.len());
    }
    positives.sort_unstable();
    negatives.sort_unstable();
    Ok((positives, negatives))
}

/// Train a one-vs-all binary head: positive = `target`, negatives drawn
/// evenly from every other class so the training set is exactly balanced.
pub fn train_one_vs_all(
    x: &[Vec<f64>],
    y: &[usize],
    target: usize,
    spec: KernelSpec,
    seed: u64,
) -> Result<SvmModel> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples vs {} labels",
            x.len(),
            y.len()
        )));
    }
    let (pos, neg) = one_vs_all_indices(y, target, seed)?;
    let mut data = Vec::with_capacity(pos.len() + neg.len());
    let mut labels = Vec::with_capacity(pos.len() + neg.len());
    for &i in &pos {
        data.push(x[i].clone());
        labels.push(true);
    }
    for &i in &neg {
        data.push(x[i].clone());
        labels.push(false);
    }
    train_svm(&data, &labels, spec)
}

/// Pairwise binary model inside an ECOC arrangement; positive = `pos`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EcocPair {
    pub pos: usize,
    pub neg: usize,
    pub model: SvmModel,
}

/// Error-correcting output code: one binary SVM per class pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EcocModel {
    pub n_classes: usize,
    pub pairs: Vec<EcocPair>,
}

/// Train the all-pairs ECOC arrangement. Within each pair the larger class
/// is downsampled to the smaller (seeded) so the pair is balanced.
pub fn train_ecoc(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    spec: KernelSpec,
    seed: u64,
) -> Result<EcocModel> {
    if n_classes < 2 {
        return Err(Error::InvalidInput("ECOC needs at least 2 classes".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::InvalidInput(format!("label {c} out of range")));
        }
        per_class[c].push(i);
    }
    for (c, members) in per_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Empty(format!("class {c} has no samples")));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for a in 0..n_classes {
        for b in (a + 1)..n_classes {
            let mut ia = per_class[a].clone();
            let mut ib = per_class[b].clone();
            let m = ia.len().min(ib.len());
            for v in [&mut ia, &mut ib] {
                for i in (1..v.len()).rev() {
                    let j = rng.random_range(0..=i);
                    v.swap(i, j);
                }
                v.truncate(m);
                v.sort_unstable();
            }
            let mut data = Vec::with_capacity(2 * m);
            let mut labels = Vec::with_capacity(2 * m);
            for &i in &ia {
                data.push(x[i].clone());
                labels.push(true);
            }
            for &i in &ib {
                data.push(x[i].clone());
                labels.push(false);
            }
            let model = train_svm(&data, &labels, spec)?;
            pairs.push(EcocPair { pos: a, neg: b, model });
        }
    }
    Ok(EcocModel { n_classes, pairs })
}

impl EcocModel {
    /// Summed pairwise posteriors per class (not normalized).
    pub fn class_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scores = vec![0.0; self.n_classes];
        for pair in &self.pairs {
            let p = pair.model.predict_posterior(x)?;
            scores[pair.pos] += p;
            scores[pair.neg] += 1.0 - p;
        }
        Ok(scores)
    }

    /// Predicted class: vote over pairwise winners, ties broken by summed
    /// posteriors, then by lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let mut votes = vec![0usize; self.n_classes];
        for pair in &self.pairs {
            if pair.model.predict(x)? {
                votes[pair.pos] += 1;
            } else {
                votes[pair.neg] += 1;
            }
        }
        let top = *votes.iter().max().unwrap();
        let tied: Vec<usize> = (0..self.n_classes).filter(|&c| votes[c] == top).collect();
        if tied.len() == 1 {
            return Ok(tied[0]);
        }
        let scores = self.class_scores(x)?;
        Ok(tied
            .into_iter()
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
            .unwrap())
    }
}

/// Multiclass arrangement selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    #[default]
    OneVsAll,
    Ecoc,
}

impl FromStr for Arrangement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "one_vs_all" | "ova" => Ok(Arrangement::OneVsAll),
            "ecoc" => Ok(Arrangement::Ecoc),
            other => Err(Error::Config(format!(
                "unknown arrangement '{other}' (one_vs_all|ecoc)"
            ))),
        }
    }
}

impl fmt::Display for Arrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arrangement::OneVsAll => write!(f, "one_vs_all"),
            Arrangement::Ecoc => write!(f, "ecoc"),
        }
    }
}

/// A full multiclass classifier in either arrangement.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "arrangement")]
pub enum MulticlassModel {
    OneVsAll { heads: Vec<SvmModel> },
    Ecoc { model: EcocModel },
}

/// Train a multiclass stroke classifier (one head per class, or all pairs).
pub fn train_multiclass(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    spec: KernelSpec,
    arrangement: Arrangement,
    seed: u64,
) -> Result<MulticlassModel> {
    match arrangement {
        Arrangement::OneVsAll => {
            let heads = (0..n_classes)
                .map(|c| train_one_vs_all(x, y, c, spec, seed.wrapping_add(c as u64)))
                .collect::<Result<Vec<_>>>()?;
            Ok(MulticlassModel::OneVsAll { heads })
        }
        Arrangement::Ecoc => {
            Ok(MulticlassModel::Ecoc { model: train_ecoc(x, y, n_classes, spec, seed)? })
        }
    }
}

impl MulticlassModel {
    pub fn n_classes(&self) -> usize {
        match self {
            MulticlassModel::OneVsAll { heads } => heads.len(),
            MulticlassModel::Ecoc { model } => model.n_classes,
        }
    }

    /// Normalized per-class posterior distribution (sums to 1).
    pub fn class_posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scores = match self {
            MulticlassModel::OneVsAll { heads } => heads
                .iter()
                .map(|h| h.predict_posterior(x))
                .collect::<Result<Vec<_>>>()?,
            MulticlassModel::Ecoc { model } => model.class_scores(x)?,
        };
        let sum: f64 = scores.iter().sum();
        if sum <= 0.0 {
            let u = 1.0 / scores.len() as f64;
            scores.iter_mut().for_each(|s| *s = u);
        } else {
            scores.iter_mut().for_each(|s| *s /= sum);
        }
        Ok(scores)
    }

    /// Predicted class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        match self {
            MulticlassModel::OneVsAll { heads } => {
                let mut best = 0;
                let mut best_p = f64::NEG_INFINITY;
                for (c, h) in heads.iter().enumerate() {
                    let p = h.predict_posterior(x)?;
                    if p > best_p {
                        best = c;
                        best_p = p;
                    }
                }
                Ok(best)
            }
            MulticlassModel::Ecoc { model } => model.predict(x),
        }
    }
}

/// Concatenate the hand-crafted block with the learned hidden block.
/// Standardization happens inside training, so raw scales may differ.
pub fn combine_features(handcrafted: &[f64], gru_hidden: &[f64]) -> Result<Vec<f64>> {
    if handcrafted.is_empty() || gru_hidden.is_empty() {
        return Err(Error::Empty("both feature blocks must be present".into()));
    }
    if handcrafted.iter().chain(gru_hidden).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in feature blocks".into()));
    }
    let mut out = Vec::with_capacity(handcrafted.len() + gru_hidden.len());
    out.extend_from_slice(handcrafted);
    out.extend_from_slice(gru_hidden);
    Ok(out)
}

pub const BUNDLE_VERSION: u32 = 1;

/// On-disk classifier bundle: versioned JSON with the feature schema it was
/// trained against, so stale feature files are rejected at load time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierBundle {
    pub version: u32,
    pub classes: Vec<String>,
    pub feature_set: String,
    pub feature_schema: String,
    pub model: MulticlassModel,
}

/// Serialize a classifier bundle to JSON.
pub fn save_bundle(path: &Path, bundle: &ClassifierBundle) -> Result<()> {
    let json = serde_json::to_string(bundle)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a bundle saved by [`save_bundle`], rejecting unknown versions.
pub fn load_bundle(path: &Path) -> Result<ClassifierBundle> {
    let text = std::fs::read_to_string(path)?;
    let bundle: ClassifierBundle = serde_json::from_str(&text)?;
    if bundle.version != BUNDLE_VERSION {
        return Err(Error::Config(format!(
            "unsupported bundle version {} (expected {BUNDLE_VERSION})",
            bundle.version
        )));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Two Gaussian blobs separated along x.
    fn blobs(n_per: usize, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut r = rng(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n_per {
            let pos = i % 2 == 0;
            let cx = if pos { gap / 2.0 } else { -gap / 2.0 };
            x.push(vec![cx + noise.sample(&mut r), noise.sample(&mut r)]);
            y.push(pos);
        }
        (x, y)
    }

    fn xor_data(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut r = rng(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let centers = [(1.0, 1.0, true), (-1.0, -1.0, true), (1.0, -1.0, false), (-1.0, 1.0, false)];
        for i in 0..4 * n_per {
            let (cx, cy, label) = centers[i % 4];
            x.push(vec![cx + noise.sample(&mut r), cy + noise.sample(&mut r)]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_exceed_95_percent_test_accuracy() {
        let (xtr, ytr) = blobs(100, 6.0, 1);
        let (xte, yte) = blobs(50, 6.0, 2);
        let model = train_svm(&xtr, &ytr, KernelSpec::rbf()).unwrap();
        let correct = xte
            .iter()
            .zip(&yte)
            .filter(|(x, &y)| model.predict(x).unwrap() == y)
            .count();
        assert!(correct as f64 / yte.len() as f64 > 0.95, "{correct}/100");
        assert!(model.kkt_residual <= 1e-3, "KKT residual {}", model.kkt_residual);
        // Duplicate of a training point predicts the same label.
        assert_eq!(model.predict(&xtr[0]).unwrap(), model.predict(&xtr[0].clone()).unwrap());
    }

    #[test]
    fn xor_needs_the_rbf_kernel() {
        let (x, y) = xor_data(50, 3);
        let spec = KernelSpec { gamma: Some(1.0), ..KernelSpec::rbf() };
        let model = train_svm(&x, &y, spec).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| model.predict(xi).unwrap() == yi)
            .count();
        assert!(correct as f64 / y.len() as f64 > 0.9, "{correct}/200");
        assert!(model.kkt_residual <= 1e-3);
    }

    #[test]
    fn polynomial_kernel_separates_blobs() {
        let (xtr, ytr) = blobs(80, 6.0, 4);
        let model = train_svm(&xtr, &ytr, KernelSpec::polynomial()).unwrap();
        let correct = xtr
            .iter()
            .zip(&ytr)
            .filter(|(x, &y)| model.predict(x).unwrap() == y)
            .count();
        assert!(correct as f64 / ytr.len() as f64 > 0.95);
    }

    #[test]
    fn posteriors_are_calibrated_and_monotone() {
        let (x, y) = blobs(100, 6.0, 5);
        let model = train_svm(&x, &y, KernelSpec::rbf()).unwrap();
        // Monotone in the decision value.
        let mut pts: Vec<(f64, f64)> = x
            .iter()
            .map(|xi| {
                (model.decision(xi).unwrap(), model.predict_posterior(xi).unwrap())
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pts.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12, "posterior must be monotone in decision value");
        }
        // Deep inside the positive blob the posterior is confident.
        let deep = model.predict_posterior(&[4.0, 0.0]).unwrap();
        assert!(deep > 0.9, "deep positive posterior {deep}");
        // Near the boundary it is uncertain.
        let mid = model.predict_posterior(&[0.0, 0.0]).unwrap();
        assert!((mid - 0.5).abs() < 0.2, "boundary posterior {mid}");
        // Posteriors live strictly inside (0,1).
        for (_, p) in &pts {
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    #[test]
    fn single_class_input_is_rejected() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(train_svm(&x, &[true, true], KernelSpec::rbf()).is_err());
        assert!(train_svm(&x, &[false, false], KernelSpec::rbf()).is_err());
    }

    #[test]
    fn dual_coefficients_stay_within_the_box() {
        let (x, y) = xor_data(30, 6);
        let model = train_svm(&x, &y, KernelSpec::rbf()).unwrap();
        for &c in &model.coefficients {
            assert!(c.abs() <= model.spec.c + 1e-9, "|alpha y| = {} > C", c.abs());
        }
        assert!(!model.support_vectors.is_empty());
    }

    #[test]
    fn standardization_makes_predictions_affine_invariant() {
        let (x, y) = blobs(60, 6.0, 7);
        // Rescale column 1 by 1000 and shift by −40.
        let x2: Vec<Vec<f64>> =
            x.iter().map(|r| vec![r[0], r[1] * 1000.0 - 40.0]).collect();
        let m1 = train_svm(&x, &y, KernelSpec::rbf()).unwrap();
        let m2 = train_svm(&x2, &y, KernelSpec::rbf()).unwrap();
        for (a, b) in x.iter().zip(&x2) {
            let p1 = m1.predict_posterior(a).unwrap();
            let p2 = m2.predict_posterior(b).unwrap();
            assert!((p1 - p2).abs() < 1e-6, "{p1} vs {p2}");
        }
    }

    /// Three Gaussian blobs on a triangle.
    fn three_blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let centers = [(0.0, 3.0), (-3.0, -2.0), (3.0, -2.0)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..3 * n_per {
            let c = i % 3;
            x.push(vec![
                centers[c].0 + noise.sample(&mut r),
                centers[c].1 + noise.sample(&mut r),
            ]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn one_vs_all_pool_is_exactly_balanced() {
        // 30 of class 0, 40 of class 1, 50 of class 2.
        let mut y = Vec::new();
        y.extend(std::iter::repeat_n(0usize, 30));
        y.extend(std::iter::repeat_n(1usize, 40));
        y.extend(std::iter::repeat_n(2usize, 50));
        let (pos, neg) = one_vs_all_indices(&y, 0, 9).unwrap();
        assert_eq!(pos.len(), 30);
        assert_eq!(neg.len(), 30, "negatives match positives exactly");
        let from1 = neg.iter().filter(|&&i| y[i] == 1).count();
        let from2 = neg.iter().filter(|&&i| y[i] == 2).count();
        assert_eq!(from1, 15, "even share per negative class");
        assert_eq!(from2, 15);

        // A short negative class shifts its deficit to the others.
        let mut y2 = vec![0usize; 20];
        y2.extend(std::iter::repeat_n(1usize, 4));
        y2.extend(std::iter::repeat_n(2usize, 40));
        let (pos2, neg2) = one_vs_all_indices(&y2, 0, 9).unwrap();
        assert_eq!(pos2.len(), neg2.len());
        assert_eq!(neg2.iter().filter(|&&i| y2[i] == 1).count(), 4);
        assert_eq!(neg2.iter().filter(|&&i| y2[i] == 2).count(), 16);
    }

    #[test]
    fn one_vs_all_beats_chance_on_synthetic_classes() {
        let (xtr, ytr) = three_blobs(40, 10);
        let (xte, yte) = three_blobs(20, 11);
        let model = train_one_vs_all(&xtr, &ytr, 0, KernelSpec::rbf(), 1).unwrap();
        let correct = xte
            .iter()
            .zip(&yte)
            .filter(|(x, &y)| model.predict(x).unwrap() == (y == 0))
            .count();
        assert!(correct as f64 / yte.len() as f64 > 0.9, "{correct}/60");
    }

    #[test]
    fn one_vs_all_requires_the_target_class() {
        let (x, y) = three_blobs(10, 12);
        assert!(train_one_vs_all(&x, &y, 7, KernelSpec::rbf(), 0).is_err());
    }

    #[test]
    fn ecoc_trains_one_model_per_pair() {
        let (x, y) = three_blobs(20, 13);
        let m3 = train_ecoc(&x, &y, 3, KernelSpec::rbf(), 0).unwrap();
        assert_eq!(m3.pairs.len(), 3);
        // C(5,2) = 10 for five classes.
        let mut x5 = x.clone();
        let mut y5 = y.clone();
        let mut r = rng(14);
        let noise = Normal::new(0.0, 0.5).unwrap();
        for c in 3..5usize {
            for _ in 0..20 {
                x5.push(vec![
                    8.0 * c as f64 + noise.sample(&mut r),
                    noise.sample(&mut r),
                ]);
                y5.push(c);
            }
        }
        let m5 = train_ecoc(&x5, &y5, 5, KernelSpec::rbf(), 0).unwrap();
        assert_eq!(m5.pairs.len(), 10);
    }

    #[test]
    fn ecoc_with_two_classes_matches_the_binary_model() {
        let (x, yb) = blobs(40, 6.0, 15);
        let y: Vec<usize> = yb.iter().map(|&b| if b { 0 } else { 1 }).collect();
        let ecoc = train_ecoc(&x, &y, 2, KernelSpec::rbf(), 0).unwrap();
        // The classes are already balanced, so the single pair trains on the
        // full set, exactly like the plain binary model (positive = class 0).
        let binary = train_svm(&x, &yb, KernelSpec::rbf()).unwrap();
        for xi in &x {
            let pair_says = ecoc.predict(xi).unwrap();
            let binary_says = if binary.predict(xi).unwrap() { 0 } else { 1 };
            assert_eq!(pair_says, binary_says);
        }
    }

    #[test]
    fn ecoc_separates_three_synthetic_classes() {
        let (xtr, ytr) = three_blobs(40, 16);
        let (xte, yte) = three_blobs(20, 17);
        let model = train_ecoc(&xtr, &ytr, 3, KernelSpec::rbf(), 0).unwrap();
        let correct = xte
            .iter()
            .zip(&yte)
            .filter(|(x, &y)| model.predict(x).unwrap() == y)
            .count();
        assert!(correct as f64 / yte.len() as f64 > 0.9, "{correct}/60");
        // Posterior scores normalize to a distribution.
        let mm = MulticlassModel::Ecoc { model };
        let p = mm.class_posteriors(&xte[0]).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ecoc_rejects_an_empty_class() {
        let (x, y) = three_blobs(10, 18);
        assert!(train_ecoc(&x, &y, 4, KernelSpec::rbf(), 0).is_err());
    }

    #[test]
    fn combined_features_concatenate_and_validate() {
        let hand = vec![1.0; 107];
        let hidden = vec![0.5; 64];
        let combined = combine_features(&hand, &hidden).unwrap();
        assert_eq!(combined.len(), 171);
        assert!(combine_features(&[], &hidden).is_err());
        assert!(combine_features(&hand, &[]).is_err());
        let bad = vec![f64::NAN; 64];
        assert!(combine_features(&hand, &bad).is_err());
        // A zero hidden block is still valid (constant columns pass through
        // standardization with std 1).
        let zeros = vec![0.0; 64];
        assert!(combine_features(&hand, &zeros).is_ok());
    }

    #[test]
    fn bundle_roundtrips_and_rejects_bad_versions() {
        let (x, y) = three_blobs(20, 19);
        let model =
            train_multiclass(&x, &y, 3, KernelSpec::rbf(), Arrangement::OneVsAll, 0).unwrap();
        let bundle = ClassifierBundle {
            version: BUNDLE_VERSION,
            classes: vec!["a".into(), "b".into(), "c".into()],
            feature_set: "handcrafted".into(),
            feature_schema: "deadbeefdeadbeef".into(),
            model,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        save_bundle(&path, &bundle).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded.classes, bundle.classes);
        for xi in x.iter().take(5) {
            let a = bundle.model.class_posteriors(xi).unwrap();
            let b = loaded.model.class_posteriors(xi).unwrap();
            assert_eq!(a, b, "posteriors must survive the roundtrip bit-for-bit");
        }
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"version\":1", "\"version\":9")).unwrap();
        assert!(load_bundle(&path).is_err());
    }

    #[test]
    fn multiclass_one_vs_all_predicts_by_max_posterior() {
        let (xtr, ytr) = three_blobs(40, 20);
        let model =
            train_multiclass(&xtr, &ytr, 3, KernelSpec::rbf(), Arrangement::OneVsAll, 2).unwrap();
        let (xte, yte) = three_blobs(15, 21);
        let correct = xte
            .iter()
            .zip(&yte)
            .filter(|(x, &y)| model.predict(x).unwrap() == y)
            .count();
        assert!(correct as f64 / yte.len() as f64 > 0.9, "{correct}/45");
        let p = model.class_posteriors(&xte[0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
