//! Synthetic corpus generation and the evaluation harness.
//!
//! Real attributed drawings with stroke-level ground truth are scarce, so the
//! harness manufactures its own: a [`SyntheticArtistProfile`] is a small
//! generative model of one hand (turning rate, tremor, width, taper, tone),
//! and [`synthesize_drawing`] renders its strokes with anti-aliased capsules
//! while recording which stroke owns every ink pixel. That owner grid is the
//! ground truth against which [`segmentation_agreement`] scores the stroke
//! extractor, and the profiles are separable enough for classification
//! experiments end to end.
//!
//! The rest of the module is the experiment plumbing: image-level
//! cross-validation folds that never split one drawing across train and test
//! ([`split_folds`], [`leakage_check`]), per-class downsampling so accuracy
//! is read off balanced sets ([`balance_strokes`]), a [`RunConfig`] loaded
//! from TOML or JSON, and [`evaluate_run`], which trains a classifier per
//! fold and reports stroke-level accuracy, drawing-level accuracy for every
//! aggregation strategy, and imitation rejection rates.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    fuse_stroke_posteriors, AggregationStrategy, DrawingVerdict, StrategyKind, StrokeVerdict,
};
use crate::error::{Error, Result};
use crate::features::FeatureBlock;
use crate::geometry::{dist_to_segment, wrap_angle, Point};
use crate::grid::{Grid, Pixel};
use crate::gru::{
    adaptive_radius, sample_patch_sequence, stroke_hidden, train_gru, GruParams, PatchConfig,
    PatchSequence, TrainingConfig,
};
use crate::pipeline::{compute_drawing_features, load_entry, process_drawing, ManifestEntry};
use crate::raster::DrawingImage;
use crate::segment::{SegmentationConfig, Stroke};
use crate::svm::{
    combine_features, train_multiclass, train_one_vs_all, Arrangement, KernelKind, KernelSpec,
    MulticlassModel, SvmModel,
};

/// Distance between consecutive pen positions when walking a stroke, in mm.
const WALK_STEP_MM: f64 = 0.25;

/// Coverage above which a pixel counts as ink owned by some stroke. Half
/// coverage matches what a mid-gray binarization threshold keeps, so the
/// owner grid and the binarized ink agree along anti-aliased edges.
const OWNER_COVERAGE: f64 = 0.5;

// ---------------------------------------------------------------------------
// Synthetic artists
// ---------------------------------------------------------------------------

/// Relative pen width at the start, middle, and end of a stroke.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TaperProfile {
    pub start: f64,
    pub middle: f64,
    pub end: f64,
}

impl TaperProfile {
    /// Piecewise-linear width multiplier at arc-length fraction `u in [0,1]`.
    pub fn value(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if u < 0.5 {
            self.start + (self.middle - self.start) * (u * 2.0)
        } else {
            self.middle + (self.end - self.middle) * ((u - 0.5) * 2.0)
        }
    }
}

/// A generative model of one drawing hand.
///
/// Strokes are random walks: the heading drifts at `turn_rate_mean` rad/mm
/// (sign chosen per stroke) with white noise of `turn_rate_std`, and every
/// vertex is jittered perpendicular to the path by `tremor_mm`. Width along
/// the stroke is `base_width_mm` shaped by `taper`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticArtistProfile {
    pub name: String,
    /// Magnitude of the per-stroke heading drift, rad/mm.
    pub turn_rate_mean: f64,
    /// White noise on the turning rate, rad/mm.
    pub turn_rate_std: f64,
    /// Perpendicular jitter applied to each vertex, mm.
    pub tremor_mm: f64,
    /// Pen width before tapering, mm.
    pub base_width_mm: f64,
    pub taper: TaperProfile,
    /// Ink gray level (0 = black).
    pub ink_tone: u8,
    pub strokes_min: usize,
    pub strokes_max: usize,
    /// Stroke arc-length range, mm.
    pub stroke_len_mm: (f64, f64),
}

impl SyntheticArtistProfile {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if !(self.turn_rate_mean >= 0.0) || !(self.turn_rate_std >= 0.0) {
            return fail(format!("{}: turning rates must be >= 0", self.name));
        }
        if !(self.tremor_mm >= 0.0) {
            return fail(format!("{}: tremor must be >= 0", self.name));
        }
        if !(self.base_width_mm > 0.0) {
            return fail(format!("{}: base width must be > 0", self.name));
        }
        for (label, v) in
            [("start", self.taper.start), ("middle", self.taper.middle), ("end", self.taper.end)]
        {
            if !(v > 0.0 && v <= 2.0) {
                return fail(format!("{}: taper {label} must be in (0, 2]", self.name));
            }
        }
        if self.strokes_min == 0 || self.strokes_min > self.strokes_max {
            return fail(format!("{}: stroke count range is empty", self.name));
        }
        let (lo, hi) = self.stroke_len_mm;
        if !(lo > 0.0 && hi >= lo) {
            return fail(format!("{}: stroke length range is empty", self.name));
        }
        Ok(())
    }
}

/// Three hands with distinct signatures: broad smooth arcs, a fine tremulous
/// line, and tight curls.
pub fn preset_profiles() -> Vec<SyntheticArtistProfile> {
    vec![
        SyntheticArtistProfile {
            name: "broad-arc".into(),
            turn_rate_mean: 0.06,
            turn_rate_std: 0.015,
            tremor_mm: 0.0,
            base_width_mm: 0.85,
            taper: TaperProfile { start: 0.65, middle: 1.0, end: 0.45 },
            ink_tone: 60,
            strokes_min: 4,
            strokes_max: 7,
            stroke_len_mm: (25.0, 55.0),
        },
        SyntheticArtistProfile {
            name: "nervous-wire".into(),
            turn_rate_mean: 0.015,
            turn_rate_std: 0.12,
            tremor_mm: 0.11,
            base_width_mm: 0.4,
            taper: TaperProfile { start: 1.0, middle: 1.0, end: 1.0 },
            ink_tone: 25,
            strokes_min: 5,
            strokes_max: 8,
            stroke_len_mm: (18.0, 40.0),
        },
        SyntheticArtistProfile {
            name: "tight-curl".into(),
            turn_rate_mean: 0.28,
            turn_rate_std: 0.04,
            tremor_mm: 0.03,
            base_width_mm: 0.6,
            taper: TaperProfile { start: 0.85, middle: 1.0, end: 0.85 },
            ink_tone: 45,
            strokes_min: 4,
            strokes_max: 6,
            stroke_len_mm: (20.0, 42.0),
        },
    ]
}

/// An imitator copies the large-scale geometry of `shape_of` (composition,
/// stroke count, curvature, even the medium's tone) but betrays their own
/// hand in the micro-dynamics: tremor, pen width, and taper stay theirs.
pub fn imitation_profile(
    shape_of: &SyntheticArtistProfile,
    dynamics_of: &SyntheticArtistProfile,
) -> SyntheticArtistProfile {
    SyntheticArtistProfile {
        name: format!("{}-after-{}", dynamics_of.name, shape_of.name),
        turn_rate_mean: shape_of.turn_rate_mean,
        turn_rate_std: shape_of.turn_rate_std,
        tremor_mm: dynamics_of.tremor_mm,
        base_width_mm: dynamics_of.base_width_mm,
        taper: dynamics_of.taper,
        ink_tone: shape_of.ink_tone,
        strokes_min: shape_of.strokes_min,
        strokes_max: shape_of.strokes_max,
        stroke_len_mm: shape_of.stroke_len_mm,
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Output raster dimensions and paper tone.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub px_per_cm: f64,
    /// Background gray level (255 = white).
    pub paper_tone: u8,
}

impl Default for CanvasSpec {
    fn default() -> Self {
        CanvasSpec { width_px: 480, height_px: 360, px_per_cm: 40.0, paper_tone: 250 }
    }
}

impl CanvasSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width_px < 32 || self.height_px < 32 {
            return Err(Error::InvalidInput("canvas must be at least 32x32 px".into()));
        }
        if !(self.px_per_cm > 0.0) || !self.px_per_cm.is_finite() {
            return Err(Error::InvalidInput(format!(
                "px_per_cm must be positive and finite, got {}",
                self.px_per_cm
            )));
        }
        Ok(())
    }

    fn size_mm(&self) -> (f64, f64) {
        let mm_per_px = 10.0 / self.px_per_cm;
        (self.width_px as f64 * mm_per_px, self.height_px as f64 * mm_per_px)
    }
}

/// A rendered drawing plus its per-pixel ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticDrawing {
    pub image: DrawingImage,
    /// Stroke index owning each pixel, or -1 for paper. A pixel is owned by
    /// the stroke covering it most (ties to the earlier stroke), provided
    /// coverage exceeds one half.
    pub owner: Grid<i32>,
    /// Pen centerlines in mm, one polyline per stroke.
    pub paths_mm: Vec<Vec<Point>>,
    /// Pen width at each polyline vertex, mm.
    pub widths_mm: Vec<Vec<f64>>,
}

impl SyntheticDrawing {
    /// Number of distinct pixel owners (strokes that won at least one pixel).
    pub fn owner_count(&self) -> usize {
        let mut seen = HashSet::new();
        for (_, &v) in self.owner.iter_cells() {
            if v >= 0 {
                seen.insert(v);
            }
        }
        seen.len()
    }
}

/// One random-walk stroke: centerline vertices (mm) and per-vertex widths.
fn walk_stroke(
    profile: &SyntheticArtistProfile,
    canvas_mm: (f64, f64),
    rng: &mut ChaCha20Rng,
) -> (Vec<Point>, Vec<f64>) {
    let (w_mm, h_mm) = canvas_mm;
    let margin = 0.08 * w_mm.min(h_mm);
    let center = Point::new(w_mm / 2.0, h_mm / 2.0);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");

    let (lo, hi) = profile.stroke_len_mm;
    let len = rng.random_range(lo..=hi);
    let steps = ((len / WALK_STEP_MM).ceil() as usize).max(4);
    let drift_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let drift = drift_sign * profile.turn_rate_mean;

    let mut pos = Point::new(
        rng.random_range(margin..w_mm - margin),
        rng.random_range(margin..h_mm - margin),
    );
    let mut heading = rng.random_range(0.0..TAU);

    let mut points = Vec::with_capacity(steps + 1);
    let mut widths = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let u = i as f64 / steps as f64;
        let jitter = profile.tremor_mm * gauss.sample(rng);
        let perp = Point::new(-heading.sin(), heading.cos());
        points.push(pos.add(perp.scale(jitter)));
        widths.push(profile.base_width_mm * profile.taper.value(u));

        // Steer back toward the center whenever the pen leaves the safe box,
        // then apply the hand's drift and noise.
        let outside = pos.x < margin
            || pos.x > w_mm - margin
            || pos.y < margin
            || pos.y > h_mm - margin;
        if outside {
            let target = (center.y - pos.y).atan2(center.x - pos.x);
            heading += wrap_angle(target - heading).clamp(-0.35, 0.35);
        }
        heading += (drift + profile.turn_rate_std * gauss.sample(rng)) * WALK_STEP_MM;
        pos = pos.add(Point::new(heading.cos(), heading.sin()).scale(WALK_STEP_MM));
    }
    (points, widths)
}

/// Rasterize capsule strokes onto paper, darkest ink winning, and record the
/// per-pixel owner. Coverage of a pixel by a capsule falls linearly from 1 to
/// 0 as the pixel center crosses the capsule boundary.
fn render_strokes(
    paths_mm: &[Vec<Point>],
    widths_mm: &[Vec<f64>],
    tones: &[u8],
    canvas: &CanvasSpec,
) -> (Grid<u8>, Grid<i32>) {
    let (w, h) = (canvas.width_px, canvas.height_px);
    let ppmm = canvas.px_per_cm / 10.0;
    let paper = canvas.paper_tone as f64;

    let mut img = Grid::filled(w, h, canvas.paper_tone);
    let mut owner = Grid::filled(w, h, -1i32);
    let mut best = vec![0.0f64; w * h];
    let mut cover = vec![0.0f64; w * h];
    let mut touched: Vec<usize> = Vec::new();

    for (sid, (path, wid)) in paths_mm.iter().zip(widths_mm).enumerate() {
        touched.clear();
        for i in 0..path.len().saturating_sub(1) {
            let a = path[i].scale(ppmm);
            let b = path[i + 1].scale(ppmm);
            let ra = (wid[i] * 0.5 * ppmm).max(0.0);
            let rb = (wid[i + 1] * 0.5 * ppmm).max(0.0);
            let pad = ra.max(rb) + 1.0;
            let x0 = (a.x.min(b.x) - pad).floor().max(0.0) as usize;
            let x1 = (a.x.max(b.x) + pad).ceil().min((w - 1) as f64) as usize;
            let y0 = (a.y.min(b.y) - pad).floor().max(0.0) as usize;
            let y1 = (a.y.max(b.y) + pad).ceil().min((h - 1) as f64) as usize;
            if x0 > x1 || y0 > y1 {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    // Pixel centers sit at integer coordinates.
                    let q = Point::new(x as f64, y as f64);
                    let (d, t) = dist_to_segment(q, a, b);
                    let r = ra + (rb - ra) * t;
                    let c = (0.5 + (r - d)).clamp(0.0, 1.0);
                    if c > 0.0 {
                        let idx = y * w + x;
                        if cover[idx] == 0.0 {
                            touched.push(idx);
                        }
                        cover[idx] = cover[idx].max(c);
                    }
                }
            }
        }
        let tone = tones[sid] as f64;
        for &idx in &touched {
            let c = cover[idx];
            cover[idx] = 0.0;
            let (x, y) = (idx % w, idx / w);
            let shade = (paper - (paper - tone) * c).round().clamp(0.0, 255.0) as u8;
            let cell = img.get_mut(x, y);
            *cell = (*cell).min(shade);
            if c > OWNER_COVERAGE && c > best[idx] {
                best[idx] = c;
                owner.set(Pixel::new(x as i32, y as i32), sid as i32);
            }
        }
    }
    (img, owner)
}

/// Generate one drawing in an artist's hand. Deterministic in `seed`.
pub fn synthesize_drawing(
    profile: &SyntheticArtistProfile,
    canvas: &CanvasSpec,
    id: &str,
    seed: u64,
) -> Result<SyntheticDrawing> {
    profile.validate()?;
    canvas.validate()?;
    if profile.ink_tone.saturating_add(50) > canvas.paper_tone {
        return Err(Error::InvalidInput(format!(
            "{}: ink tone {} too close to paper tone {}",
            profile.name, profile.ink_tone, canvas.paper_tone
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = rng.random_range(profile.strokes_min..=profile.strokes_max);
    let canvas_mm = canvas.size_mm();

    let mut paths = Vec::with_capacity(n);
    let mut widths = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, w) = walk_stroke(profile, canvas_mm, &mut rng);
        paths.push(p);
        widths.push(w);
    }
    let tones = vec![profile.ink_tone; n];
    let (pixels, owner) = render_strokes(&paths, &widths, &tones, canvas);

    let mut image = DrawingImage::new(id, pixels, canvas.px_per_cm)?;
    image.artist_label = Some(profile.name.clone());
    Ok(SyntheticDrawing { image, owner, paths_mm: paths, widths_mm: widths })
}

// ---------------------------------------------------------------------------
// Crossing networks
// ---------------------------------------------------------------------------

/// Clip the line `anchor + t*dir` to an axis-aligned box, returning the `t`
/// interval inside it.
fn clip_line_to_box(
    anchor: Point,
    dir: Point,
    min: Point,
    max: Point,
) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (a, d, lo, hi) in [(anchor.x, dir.x, min.x, max.x), (anchor.y, dir.y, min.y, max.y)] {
        if d.abs() < 1e-12 {
            if a < lo || a > hi {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo - a) / d, (hi - a) / d);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 < t1).then_some((t0, t1))
}

/// Straight polyline from `anchor + t0*dir` to `anchor + t1*dir`, one vertex
/// every quarter millimeter.
fn line_points(anchor: Point, dir: Point, t0: f64, t1: f64) -> Vec<Point> {
    let len = t1 - t0;
    let steps = ((len / WALK_STEP_MM).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let t = t0 + len * (i as f64 / steps as f64);
            anchor.add(dir.scale(t))
        })
        .collect()
}

/// Generate a network of straight strokes that cross at wide angles.
///
/// The first stroke is a chord near the center; each later stroke either
/// passes through an interior point of an earlier one (an X crossing) or
/// starts on one (a T junction). Directions are drawn from shuffled
/// multiples of 45 degrees with a little jitter, so any two strokes meet at
/// 30 degrees or more. Ground truth comes back in the owner grid.
pub fn synthesize_crossing_network(
    n_strokes: usize,
    canvas: &CanvasSpec,
    id: &str,
    seed: u64,
) -> Result<SyntheticDrawing> {
    if !(2..=4).contains(&n_strokes) {
        return Err(Error::InvalidInput(format!(
            "crossing networks use 2..=4 strokes, got {n_strokes}"
        )));
    }
    canvas.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (w_mm, h_mm) = canvas.size_mm();
    let margin = 0.12 * w_mm.min(h_mm);
    let (box_min, box_max) =
        (Point::new(margin, margin), Point::new(w_mm - margin, h_mm - margin));

    let mut base_deg = [0.0f64, 90.0, 45.0, 135.0];
    base_deg.shuffle(&mut rng);
    let dirs: Vec<Point> = (0..n_strokes)
        .map(|i| {
            let deg = base_deg[i] + rng.random_range(-7.0..7.0);
            let rad = deg.to_radians();
            Point::new(rad.cos(), rad.sin())
        })
        .collect();

    let mut paths: Vec<Vec<Point>> = Vec::with_capacity(n_strokes);
    let mut widths: Vec<Vec<f64>> = Vec::with_capacity(n_strokes);
    let mut tones: Vec<u8> = Vec::with_capacity(n_strokes);

    for k in 0..n_strokes {
        let path = 'place: {
            for _attempt in 0..16 {
                let anchor = if k == 0 {
                    Point::new(
                        w_mm * rng.random_range(0.35..0.65),
                        h_mm * rng.random_range(0.35..0.65),
                    )
                } else {
                    // An interior vertex of an earlier stroke.
                    let host = &paths[rng.random_range(0..k)];
                    host[rng.random_range(host.len() / 4..3 * host.len() / 4)]
                };
                let Some((t0, t1)) = clip_line_to_box(anchor, dirs[k], box_min, box_max) else {
                    continue;
                };
                // Pull the endpoints in a little so lengths vary.
                let (mut lo, mut hi) = (t0 * rng.random_range(0.7..0.95), t1 * rng.random_range(0.7..0.95));
                if k > 0 && rng.random_bool(0.5) {
                    // T junction: keep only one side so the stroke ends on
                    // its host. X crossing otherwise.
                    if rng.random_bool(0.5) {
                        lo = 0.0;
                    } else {
                        hi = 0.0;
                    }
                }
                if hi - lo >= 8.0 {
                    break 'place line_points(anchor, dirs[k], lo, hi);
                }
            }
            return Err(Error::NoConvergence(
                "could not place a crossing stroke inside the canvas".into(),
            ));
        };
        let width = rng.random_range(0.8..1.2);
        widths.push(vec![width; path.len()]);
        tones.push(rng.random_range(30..56));
        paths.push(path);
    }

    let (pixels, owner) = render_strokes(&paths, &widths, &tones, canvas);
    let image = DrawingImage::new(id, pixels, canvas.px_per_cm)?;
    Ok(SyntheticDrawing { image, owner, paths_mm: paths, widths_mm: widths })
}

// ---------------------------------------------------------------------------
// Agreement scoring
// ---------------------------------------------------------------------------

/// Per-pixel agreement between a ground-truth owner grid and an extracted
/// stroke set, in `[0, 1]`.
///
/// Every ground-truth ink pixel is assigned a predicted stroke by flooding
/// outward from the skeleton pixels each stroke owns (the skeleton is a
/// partition, the ink is not). Ground-truth and predicted strokes are then
/// matched one-to-one, largest overlap first, and the score is the fraction
/// of ink pixels whose matched labels agree — so both oversegmentation and
/// undersegmentation cost pixels.
pub fn segmentation_agreement(owner: &Grid<i32>, strokes: &[Stroke]) -> Result<f64> {
    let (w, h) = (owner.width(), owner.height());
    let total: u64 = owner.raw().iter().filter(|&&v| v >= 0).count() as u64;
    if total == 0 {
        return Err(Error::Empty("owner grid has no ink pixels".into()));
    }
    if strokes.is_empty() {
        return Ok(0.0);
    }

    // Seed the flood with each stroke's skeleton pixels.
    let mut pred: Vec<i32> = vec![-1; w * h];
    let mut queue: VecDeque<Pixel> = VecDeque::new();
    for s in strokes {
        for &p in &s.owned {
            if owner.contains(p) && *owner.at(p).expect("in bounds") >= 0 {
                let idx = p.y as usize * w + p.x as usize;
                if pred[idx] < 0 {
                    pred[idx] = s.id as i32;
                    queue.push_back(p);
                }
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        let label = pred[p.y as usize * w + p.x as usize];
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let q = Pixel::new(p.x + dx, p.y + dy);
                if !owner.contains(q) || *owner.at(q).expect("in bounds") < 0 {
                    continue;
                }
                let idx = q.y as usize * w + q.x as usize;
                if pred[idx] < 0 {
                    pred[idx] = label;
                    queue.push_back(q);
                }
            }
        }
    }

    // Contingency table, then greedy one-to-one matching by overlap.
    let mut counts: HashMap<(i32, i32), u64> = HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let gt = *owner.get(x, y);
            if gt >= 0 && pred[idx] >= 0 {
                *counts.entry((gt, pred[idx])).or_insert(0) += 1;
            }
        }
    }
    let mut pairs: Vec<((i32, i32), u64)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut used_gt = HashSet::new();
    let mut used_pred = HashSet::new();
    let mut matched = 0u64;
    for ((gt, pr), c) in pairs {
        if !used_gt.contains(&gt) && !used_pred.contains(&pr) {
            used_gt.insert(gt);
            used_pred.insert(pr);
            matched += c;
        }
    }
    Ok(matched as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Folds and balancing
// ---------------------------------------------------------------------------

/// One cross-validation fold: disjoint train and test drawing ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified image-level folds: each artist's drawings are shuffled and
/// dealt round-robin, so every stroke of a drawing lands on one side only
/// and class balance carries into every fold.
pub fn split_folds(
    drawings: &[(String, String)],
    n_folds: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if n_folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {n_folds}")));
    }
    if drawings.len() < n_folds {
        return Err(Error::InvalidInput(format!(
            "{} drawings cannot fill {n_folds} folds",
            drawings.len()
        )));
    }
    let mut seen = HashSet::new();
    for (id, _) in drawings {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate drawing id '{id}'")));
        }
    }

    let mut by_artist: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, artist) in drawings {
        by_artist.entry(artist.as_str()).or_default().push(id.as_str());
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut test_sets: Vec<Vec<String>> = vec![Vec::new(); n_folds];
    for (artist, mut ids) in by_artist {
        if ids.len() < n_folds {
            log::warn!(
                "artist '{artist}' has only {} drawings for {n_folds} folds; \
                 some test folds will not see this artist",
                ids.len()
            );
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            test_sets[i % n_folds].push(id.to_string());
        }
    }

    let all: Vec<&String> = drawings.iter().map(|(id, _)| id).collect();
    let mut folds = Vec::with_capacity(n_folds);
    for (f, mut test) in test_sets.into_iter().enumerate() {
        test.sort();
        let test_set: HashSet<&str> = test.iter().map(String::as_str).collect();
        let mut train: Vec<String> =
            all.iter().filter(|id| !test_set.contains(id.as_str())).map(|s| s.to_string()).collect();
        train.sort();
        folds.push(FoldSplit { fold: f + 1, train, test });
    }
    Ok(folds)
}

/// Verify that no drawing leaks between train and test anywhere: within each
/// fold the sides are disjoint and exhaustive, and across folds each drawing
/// is tested exactly once.
pub fn leakage_check(folds: &[FoldSplit], all_ids: &[String]) -> Result<()> {
    let corpus: HashSet<&str> = all_ids.iter().map(String::as_str).collect();
    let mut tested: HashMap<&str, usize> = HashMap::new();
    for fold in folds {
        let train: HashSet<&str> = fold.train.iter().map(String::as_str).collect();
        for id in &fold.test {
            if train.contains(id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "fold {}: drawing '{id}' appears in both train and test",
                    fold.fold
                )));
            }
            *tested.entry(id.as_str()).or_insert(0) += 1;
        }
        for id in fold.train.iter().chain(&fold.test) {
            if !corpus.contains(id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "fold {}: drawing '{id}' is not in the corpus",
                    fold.fold
                )));
            }
        }
        if train.len() + fold.test.len() != corpus.len() {
            return Err(Error::InvalidInput(format!(
                "fold {}: train and test cover {} of {} drawings",
                fold.fold,
                train.len() + fold.test.len(),
                corpus.len()
            )));
        }
    }
    for id in &corpus {
        match tested.get(id) {
            Some(1) => {}
            Some(n) => {
                return Err(Error::InvalidInput(format!(
                    "drawing '{id}' is tested in {n} folds"
                )))
            }
            None => {
                return Err(Error::InvalidInput(format!("drawing '{id}' is never tested")))
            }
        }
    }
    Ok(())
}

/// Downsample so every class keeps exactly as many samples as the rarest
/// one. Returns selected indices into `labels`, sorted ascending.
pub fn balance_strokes(labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if n_classes == 0 {
        return Err(Error::InvalidInput("need at least one class".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        per_class[l].push(i);
    }
    for (c, members) in per_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Empty(format!("class {c} has no strokes to balance")));
        }
    }
    let quota = per_class.iter().map(Vec::len).min().expect("nonempty");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(quota * n_classes);
    for mut members in per_class {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..quota]);
    }
    picked.sort_unstable();
    Ok(picked)
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Which per-stroke representation feeds the classifier.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// The 107 hand-crafted shape numbers.
    #[default]
    Handcrafted,
    /// Hidden state of the recurrent patch model.
    Gru,
    /// Both, concatenated.
    Combined,
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "handcrafted" => Ok(FeatureSet::Handcrafted),
            "gru" => Ok(FeatureSet::Gru),
            "combined" => Ok(FeatureSet::Combined),
            other => Err(Error::Config(format!(
                "unknown feature set '{other}' (handcrafted|gru|combined)"
            ))),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::Handcrafted => write!(f, "handcrafted"),
            FeatureSet::Gru => write!(f, "gru"),
            FeatureSet::Combined => write!(f, "combined"),
        }
    }
}

/// Recurrent-model settings for a run. Smaller than the library defaults so
/// five folds finish in minutes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruSection {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Scale patch size to each drawing's median stroke width.
    #[serde(default)]
    pub adaptive_patches: bool,
}

fn default_hidden() -> usize {
    32
}
fn default_epochs() -> usize {
    6
}
fn default_batch_size() -> usize {
    32
}
fn default_tau() -> usize {
    30
}
fn default_lr() -> f64 {
    0.001
}

impl Default for GruSection {
    fn default() -> Self {
        GruSection {
            hidden: default_hidden(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            tau: default_tau(),
            lr: default_lr(),
            adaptive_patches: false,
        }
    }
}

fn default_degree() -> u32 {
    3
}
fn default_coef0() -> f64 {
    1.0
}
fn default_c() -> f64 {
    1.0
}
fn default_k_certain() -> f64 {
    0.85
}
fn default_gamma_exponent() -> f64 {
    2.0
}
fn default_folds() -> usize {
    5
}
fn default_min_stroke_len() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}

/// Everything one evaluation run needs, loadable from TOML or JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus manifest (CSV). Relative image paths resolve against it.
    pub manifest: PathBuf,
    #[serde(default)]
    pub feature_set: FeatureSet,
    #[serde(default)]
    pub kernel: KernelKind,
    /// Kernel bandwidth; defaults to 1/dimension.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_coef0")]
    pub coef0: f64,
    /// Soft-margin penalty.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub arrangement: Arrangement,
    /// Certainty threshold for k-certain voting.
    #[serde(default = "default_k_certain")]
    pub k_certain: f64,
    /// Certainty power for certainty-weighted voting.
    #[serde(default = "default_gamma_exponent")]
    pub gamma_exponent: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_stroke_len")]
    pub min_stroke_len_mm: f64,
    /// Junction influence radius override for segmentation, px.
    #[serde(default)]
    pub sigma_px: Option<f64>,
    #[serde(default)]
    pub gru: GruSection,
    /// Re-run the classifier on nested subsets of the hand-crafted blocks.
    #[serde(default)]
    pub ablation: bool,
    /// Score imitation rejection when the manifest contains fakes.
    #[serde(default = "default_true")]
    pub fake_detection: bool,
}

impl RunConfig {
    /// Minimal config pointing at a manifest, everything else default.
    pub fn for_manifest(manifest: impl Into<PathBuf>) -> Self {
        RunConfig {
            manifest: manifest.into(),
            feature_set: FeatureSet::default(),
            kernel: KernelKind::default(),
            gamma: None,
            degree: default_degree(),
            coef0: default_coef0(),
            c: default_c(),
            arrangement: Arrangement::default(),
            k_certain: default_k_certain(),
            gamma_exponent: default_gamma_exponent(),
            folds: default_folds(),
            seed: 0,
            min_stroke_len_mm: default_min_stroke_len(),
            sigma_px: None,
            gru: GruSection::default(),
            ablation: false,
            fake_detection: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.k_certain > 0.0 && self.k_certain < 1.0) {
            return bad(format!("k_certain must be in (0,1), got {}", self.k_certain));
        }
        if !(self.gamma_exponent > 0.0) {
            return bad(format!("gamma_exponent must be > 0, got {}", self.gamma_exponent));
        }
        if !(self.c > 0.0) {
            return bad(format!("c must be > 0, got {}", self.c));
        }
        if self.degree == 0 {
            return bad("degree must be at least 1".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return bad(format!("gamma must be positive and finite, got {g}"));
            }
        }
        if !(self.min_stroke_len_mm >= 0.0) {
            return bad(format!("min_stroke_len_mm must be >= 0, got {}", self.min_stroke_len_mm));
        }
        if self.gru.hidden == 0 {
            return bad("gru.hidden must be at least 1".into());
        }
        if self.gru.epochs == 0 {
            return bad("gru.epochs must be at least 1".into());
        }
        if self.gru.batch_size == 0 {
            return bad("gru.batch_size must be at least 1".into());
        }
        if self.gru.tau == 0 {
            return bad("gru.tau must be at least 1".into());
        }
        if !(self.gru.lr > 0.0) {
            return bad(format!("gru.lr must be > 0, got {}", self.gru.lr));
        }
        Ok(())
    }

    fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            kind: self.kernel,
            gamma: self.gamma,
            degree: self.degree,
            coef0: self.coef0,
            c: self.c,
        }
    }

    /// The segmentation knobs this run uses.
    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            sigma_px: self.sigma_px,
            min_stroke_len_mm: self.min_stroke_len_mm,
        }
    }
}

/// Load a [`RunConfig`] from a `.toml` or `.json` file and validate it.
/// Parse errors surface as configuration errors naming the offending key.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let text = std::fs::read_to_string(path)?;
    let mut cfg: RunConfig = match ext.as_str() {
        "toml" => toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        "json" => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        other => {
            return Err(Error::Config(format!(
                "unsupported config extension '{other}' (expected .toml or .json)"
            )))
        }
    };
    // A relative manifest is relative to the config file, not the process cwd.
    if cfg.manifest.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.manifest = dir.join(&cfg.manifest);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Per-fold accuracies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train_strokes: usize,
    pub n_test_strokes: usize,
    /// Accuracy on the balanced training strokes.
    pub stroke_train_accuracy: f64,
    /// Accuracy on the balanced held-out strokes.
    pub stroke_test_accuracy: f64,
    /// Drawing-level accuracy per aggregation strategy.
    pub drawing_accuracy: BTreeMap<String, f64>,
}

/// One drawing-level decision, kept for replay and audit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerdictRow {
    pub fold: usize,
    pub drawing_id: String,
    pub truth: String,
    pub strategy: String,
    pub winner: String,
    pub n_strokes: usize,
    pub scores: Vec<f64>,
}

/// Imitation rejection rates, per aggregation strategy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FakeReport {
    /// Artists the fakes claim to be.
    pub targets: Vec<String>,
    pub n_fake_drawings: usize,
    /// Fraction of fakes rejected (verdict "not the claimed artist").
    pub rejection_rate: BTreeMap<String, f64>,
    /// Fraction of the targets' genuine drawings accepted.
    pub genuine_accept_rate: BTreeMap<String, f64>,
}

/// Stroke accuracy for one nested subset of hand-crafted blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub blocks: String,
    pub stroke_test_mean: f64,
    pub stroke_test_std: f64,
}

/// Everything [`evaluate_run`] measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub classes: Vec<String>,
    pub feature_set: String,
    pub kernel: String,
    pub arrangement: String,
    pub n_drawings: usize,
    pub n_strokes: usize,
    pub folds: Vec<FoldResult>,
    pub stroke_train_mean: f64,
    pub stroke_train_std: f64,
    pub stroke_test_mean: f64,
    pub stroke_test_std: f64,
    /// Mean drawing-level accuracy over folds, per strategy.
    pub drawing_accuracy: BTreeMap<String, f64>,
    pub verdicts: Vec<VerdictRow>,
    pub fake: Option<FakeReport>,
    pub ablation: Vec<AblationRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Write the full report as JSON.
pub fn write_report_json(path: &Path, report: &RunReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Write the headline numbers as a flat CSV (`section,name,fold,value`).
pub fn write_report_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["section", "name", "fold", "value"])?;
    for f in &report.folds {
        let fold = f.fold.to_string();
        w.write_record(["stroke", "train_accuracy", &fold, &f.stroke_train_accuracy.to_string()])?;
        w.write_record(["stroke", "test_accuracy", &fold, &f.stroke_test_accuracy.to_string()])?;
        for (strategy, acc) in &f.drawing_accuracy {
            w.write_record(["drawing", strategy, &fold, &acc.to_string()])?;
        }
    }
    w.write_record(["summary", "stroke_train_mean", "", &report.stroke_train_mean.to_string()])?;
    w.write_record(["summary", "stroke_train_std", "", &report.stroke_train_std.to_string()])?;
    w.write_record(["summary", "stroke_test_mean", "", &report.stroke_test_mean.to_string()])?;
    w.write_record(["summary", "stroke_test_std", "", &report.stroke_test_std.to_string()])?;
    for (strategy, acc) in &report.drawing_accuracy {
        w.write_record(["summary", &format!("drawing_{strategy}_mean"), "", &acc.to_string()])?;
    }
    if let Some(fake) = &report.fake {
        for (strategy, rate) in &fake.rejection_rate {
            w.write_record(["fake", &format!("rejection_{strategy}"), "", &rate.to_string()])?;
        }
        for (strategy, rate) in &fake.genuine_accept_rate {
            w.write_record(["fake", &format!("genuine_accept_{strategy}"), "", &rate.to_string()])?;
        }
    }
    for row in &report.ablation {
        w.write_record(["ablation", &row.blocks, "", &row.stroke_test_mean.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the per-drawing verdict log as CSV. Scores are `|`-joined so the
/// row stays one record regardless of class count.
pub fn write_verdicts_csv(path: &Path, verdicts: &[VerdictRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fold", "drawing_id", "truth", "strategy", "winner", "n_strokes", "scores"])?;
    for v in verdicts {
        let scores =
            v.scores.iter().map(f64::to_string).collect::<Vec<_>>().join("|");
        w.write_record([
            &v.fold.to_string(),
            &v.drawing_id,
            &v.truth,
            &v.strategy,
            &v.winner,
            &v.n_strokes.to_string(),
            &scores,
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// The harness
// ---------------------------------------------------------------------------

/// One ingested drawing with everything later stages need.
struct DrawingRecord {
    entry: ManifestEntry,
    image: DrawingImage,
    strokes: Vec<Stroke>,
    /// Hand-crafted features, keyed by stroke id.
    feats: Vec<(usize, Vec<f64>)>,
    /// Stroke id -> index into `strokes`.
    stroke_pos: HashMap<usize, usize>,
    /// Class index; `None` for fakes.
    class: Option<usize>,
}

/// One classifiable stroke: indices into the record table.
#[derive(Clone, Copy)]
struct StrokeRef {
    record: usize,
    /// Index into the record's `feats`.
    feat: usize,
    class: usize,
}

/// Hidden-state features for every stroke, one map per fold (the recurrent
/// model is retrained per fold, so the representation changes with it).
type HiddenMap = HashMap<(usize, usize), Vec<f64>>;

fn short_block_name(b: FeatureBlock) -> &'static str {
    match b {
        FeatureBlock::FourierDescriptors => "fd",
        FeatureBlock::ReconstructionProfile => "rep",
        FeatureBlock::Curvature => "curv",
        FeatureBlock::Thickness => "thick",
        FeatureBlock::LengthRatio => "len",
    }
}

/// Ingest every manifest row once: load, segment, and featurize each
/// drawing, and derive the sorted class list from the genuine artists.
fn ingest_corpus(cfg: &RunConfig) -> Result<(Vec<DrawingRecord>, Vec<String>)> {
    let entries = crate::pipeline::read_manifest(&cfg.manifest)?;
    let seg_cfg = cfg.segmentation();

    let mut records: Vec<DrawingRecord> = Vec::with_capacity(entries.len());
    let mut classes: Vec<String> = entries
        .iter()
        .filter(|e| !e.is_fake)
        .map(|e| e.artist.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    classes.sort();
    if classes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two artists to classify, found {}",
            classes.len()
        )));
    }
    let class_of = |artist: &str| classes.iter().position(|c| c == artist);
    for entry in entries {
        let image = load_entry(&entry)?;
        let strokes = process_drawing(&image, &seg_cfg)?;
        let feats = compute_drawing_features(&image, &strokes);
        let stroke_pos: HashMap<usize, usize> =
            strokes.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let class = if entry.is_fake {
            match class_of(&entry.artist) {
                Some(_) => None,
                None => {
                    return Err(Error::Config(format!(
                        "fake drawing '{}' claims unknown artist '{}'",
                        entry.id, entry.artist
                    )))
                }
            }
        } else {
            class_of(&entry.artist)
        };
        records.push(DrawingRecord { entry, image, strokes, feats, stroke_pos, class });
    }
    Ok((records, classes))
}

/// Run the full experiment a config describes: ingest the manifest, split
/// image-level folds, train a classifier per fold (with a fresh recurrent
/// model when the feature set needs one), and score strokes, drawings, and
/// imitation rejection.
pub fn evaluate_run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let (records, classes) = ingest_corpus(cfg)?;
    let class_of = |artist: &str| classes.iter().position(|c| c == artist);
    let n_classes = classes.len();

    // Folds over genuine drawings only; fakes never train anything.
    let genuine: Vec<(String, String)> = records
        .iter()
        .filter(|r| !r.entry.is_fake)
        .map(|r| (r.entry.id.clone(), r.entry.artist.clone()))
        .collect();
    let genuine_ids: Vec<String> = genuine.iter().map(|(id, _)| id.clone()).collect();
    let folds = split_folds(&genuine, cfg.folds, cfg.seed)?;
    leakage_check(&folds, &genuine_ids)?;

    let table: Vec<StrokeRef> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.entry.is_fake)
        .flat_map(|(ri, r)| {
            let class = r.class.expect("genuine drawings are classed");
            (0..r.feats.len()).map(move |fi| StrokeRef { record: ri, feat: fi, class })
        })
        .collect();
    if table.is_empty() {
        return Err(Error::Empty("no classifiable strokes in the corpus".into()));
    }

    let spec = cfg.kernel_spec();
    let strategies: Vec<AggregationStrategy> = StrategyKind::ALL
        .iter()
        .map(|&kind| AggregationStrategy {
            kind,
            k: cfg.k_certain,
            gamma_exponent: cfg.gamma_exponent,
        })
        .collect();

    let mut fold_results: Vec<FoldResult> = Vec::with_capacity(folds.len());
    let mut verdicts: Vec<VerdictRow> = Vec::new();
    let mut fold_hidden: Vec<Option<HiddenMap>> = Vec::with_capacity(folds.len());
    let mut fold_heads: Vec<HashMap<usize, SvmModel>> = Vec::with_capacity(folds.len());
    let mut ablation_acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();

    let fake_targets: BTreeSet<usize> = if cfg.fake_detection {
        records
            .iter()
            .filter(|r| r.entry.is_fake)
            .filter_map(|r| class_of(&r.entry.artist))
            .collect()
    } else {
        BTreeSet::new()
    };

    for split in &folds {
        let fold_seed = cfg.seed.wrapping_add(101 * split.fold as u64);
        let test_set: HashSet<&str> = split.test.iter().map(String::as_str).collect();
        let in_test = |r: &DrawingRecord| test_set.contains(r.entry.id.as_str());

        let train_pool: Vec<usize> = (0..table.len())
            .filter(|&i| !in_test(&records[table[i].record]) && !records[table[i].record].entry.is_fake)
            .collect();
        let test_pool: Vec<usize> =
            (0..table.len()).filter(|&i| in_test(&records[table[i].record])).collect();
        if train_pool.is_empty() || test_pool.is_empty() {
            return Err(Error::Empty(format!(
                "fold {} has an empty train or test stroke pool",
                split.fold
            )));
        }

        let train_labels: Vec<usize> = train_pool.iter().map(|&i| table[i].class).collect();
        let test_labels: Vec<usize> = test_pool.iter().map(|&i| table[i].class).collect();
        let bal_train: Vec<usize> = balance_strokes(&train_labels, n_classes, fold_seed)?
            .into_iter()
            .map(|i| train_pool[i])
            .collect();
        let bal_test: Vec<usize> = balance_strokes(&test_labels, n_classes, fold_seed ^ 1)?
            .into_iter()
            .map(|i| test_pool[i])
            .collect();

        // A fresh recurrent model per fold when the feature set needs one,
        // trained only on this fold's balanced training strokes.
        let hidden: Option<HiddenMap> = if cfg.feature_set == FeatureSet::Handcrafted {
            None
        } else {
            let patch_cfg = |r: &DrawingRecord| {
                if cfg.gru.adaptive_patches {
                    PatchConfig::Adaptive(adaptive_radius(&r.strokes, r.image.mm_per_px()))
                } else {
                    PatchConfig::Fixed
                }
            };
            let mut seqs: Vec<PatchSequence> = Vec::with_capacity(bal_train.len() * 2);
            for &i in &bal_train {
                let sref = table[i];
                let r = &records[sref.record];
                let stroke = &r.strokes[r.stroke_pos[&r.feats[sref.feat].0]];
                let (fwd, rev) =
                    sample_patch_sequence(stroke, &r.image, patch_cfg(r), sref.class)?;
                seqs.push(fwd);
                seqs.push(rev);
            }
            let tcfg = TrainingConfig {
                tau: cfg.gru.tau,
                lr: cfg.gru.lr,
                epochs: cfg.gru.epochs,
                batch_size: cfg.gru.batch_size,
                hidden: cfg.gru.hidden,
                seed: fold_seed,
                ..TrainingConfig::default()
            };
            let (params, _losses) = train_gru(&seqs, n_classes, &tcfg)?;
            // Hidden features for every stroke in the corpus, fakes included:
            // the fake phase fuses per-fold scores, so it needs per-fold
            // representations.
            let mut map: HiddenMap = HashMap::new();
            for (ri, r) in records.iter().enumerate() {
                let pcfg = patch_cfg(r);
                for &(sid, _) in &r.feats {
                    let stroke = &r.strokes[r.stroke_pos[&sid]];
                    let (fwd, rev) = sample_patch_sequence(stroke, &r.image, pcfg, 0)?;
                    map.insert((ri, sid), stroke_hidden(&params, &fwd, &rev)?.to_vec());
                }
            }
            Some(map)
        };

        let x_of = |i: usize| -> Result<Vec<f64>> {
            let sref = table[i];
            assemble_features(cfg.feature_set, &records, hidden.as_ref(), sref.record, sref.feat)
        };

        let train_x: Vec<Vec<f64>> =
            bal_train.iter().map(|&i| x_of(i)).collect::<Result<_>>()?;
        let train_y: Vec<usize> = bal_train.iter().map(|&i| table[i].class).collect();
        let model = train_multiclass(&train_x, &train_y, n_classes, spec, cfg.arrangement, fold_seed)?;

        let accuracy = |pool: &[usize]| -> Result<f64> {
            let mut hits = 0usize;
            for &i in pool {
                if model.predict(&x_of(i)?)? == table[i].class {
                    hits += 1;
                }
            }
            Ok(hits as f64 / pool.len() as f64)
        };
        let stroke_train_accuracy = accuracy(&bal_train)?;
        let stroke_test_accuracy = accuracy(&bal_test)?;

        // Drawing-level verdicts over all strokes of each test drawing.
        let mut per_strategy_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (ri, r) in records.iter().enumerate() {
            if r.entry.is_fake || !in_test(r) {
                continue;
            }
            let mut stroke_verdicts = Vec::with_capacity(r.feats.len());
            for (fi, (sid, _)) in r.feats.iter().enumerate() {
                let x = assemble_features(cfg.feature_set, &records, hidden.as_ref(), ri, fi)?;
                let posterior = model.class_posteriors(&x)?;
                stroke_verdicts.push(StrokeVerdict::new(*sid, posterior)?);
            }
            if stroke_verdicts.is_empty() {
                log::warn!(
                    "drawing {} has no classifiable strokes; skipping its verdict",
                    r.entry.id
                );
                continue;
            }
            for strat in &strategies {
                let dv = strat.aggregate(&r.entry.id, &stroke_verdicts, None)?;
                let correct = classes[dv.winner] == r.entry.artist;
                let slot = per_strategy_hits.entry(strat.kind.to_string()).or_insert((0, 0));
                slot.0 += correct as usize;
                slot.1 += 1;
                verdicts.push(VerdictRow {
                    fold: split.fold,
                    drawing_id: r.entry.id.clone(),
                    truth: r.entry.artist.clone(),
                    strategy: strat.kind.to_string(),
                    winner: classes[dv.winner].clone(),
                    n_strokes: dv.n_strokes_counted,
                    scores: dv.scores.clone(),
                });
            }
        }
        let drawing_accuracy: BTreeMap<String, f64> = per_strategy_hits
            .into_iter()
            .map(|(k, (hits, n))| (k, hits as f64 / n as f64))
            .collect();

        // Binary heads for the imitation test, one per claimed artist.
        let mut heads = HashMap::new();
        for &target in &fake_targets {
            let head = train_one_vs_all(
                &train_x,
                &train_y,
                target,
                spec,
                fold_seed.wrapping_add(7000 + target as u64),
            )?;
            heads.insert(target, head);
        }

        // Ablation: same balanced strokes, nested subsets of the
        // hand-crafted blocks.
        if cfg.ablation {
            for upto in 1..=FeatureBlock::ALL.len() {
                let cols: Vec<std::ops::Range<usize>> =
                    FeatureBlock::ALL[..upto].iter().map(|b| b.range()).collect();
                let project = |i: usize| -> Vec<f64> {
                    let sref = table[i];
                    let full = &records[sref.record].feats[sref.feat].1;
                    cols.iter().flat_map(|r| full[r.clone()].iter().copied()).collect()
                };
                let ax: Vec<Vec<f64>> = bal_train.iter().map(|&i| project(i)).collect();
                let amodel =
                    train_multiclass(&ax, &train_y, n_classes, spec, cfg.arrangement, fold_seed)?;
                let mut hits = 0usize;
                for &i in &bal_test {
                    if amodel.predict(&project(i))? == table[i].class {
                        hits += 1;
                    }
                }
                ablation_acc.entry(upto).or_default().push(hits as f64 / bal_test.len() as f64);
            }
        }

        fold_results.push(FoldResult {
            fold: split.fold,
            n_train_strokes: bal_train.len(),
            n_test_strokes: bal_test.len(),
            stroke_train_accuracy,
            stroke_test_accuracy,
            drawing_accuracy,
        });
        fold_hidden.push(hidden);
        fold_heads.push(heads);
    }

    // Imitation rejection: fuse each stroke's per-fold binary posteriors
    // into one verdict per drawing (class 0 = the claimed artist).
    let fake = if !fake_targets.is_empty() && records.iter().any(|r| r.entry.is_fake) {
        Some(score_fakes(
            cfg,
            &records,
            &classes,
            &fake_targets,
            &fold_heads,
            &fold_hidden,
            &strategies,
        )?)
    } else {
        None
    };

    let train_accs: Vec<f64> = fold_results.iter().map(|f| f.stroke_train_accuracy).collect();
    let test_accs: Vec<f64> = fold_results.iter().map(|f| f.stroke_test_accuracy).collect();
    let (stroke_train_mean, stroke_train_std) = mean_std(&train_accs);
    let (stroke_test_mean, stroke_test_std) = mean_std(&test_accs);

    let mut drawing_accuracy: BTreeMap<String, f64> = BTreeMap::new();
    for strat in StrategyKind::ALL {
        let accs: Vec<f64> = fold_results
            .iter()
            .filter_map(|f| f.drawing_accuracy.get(&strat.to_string()).copied())
            .collect();
        if !accs.is_empty() {
            drawing_accuracy.insert(strat.to_string(), mean_std(&accs).0);
        }
    }

    let ablation: Vec<AblationRow> = ablation_acc
        .into_iter()
        .map(|(upto, accs)| {
            let (mean, std) = mean_std(&accs);
            let blocks = FeatureBlock::ALL[..upto]
                .iter()
                .map(|&b| short_block_name(b))
                .collect::<Vec<_>>()
                .join("+");
            AblationRow { blocks, stroke_test_mean: mean, stroke_test_std: std }
        })
        .collect();

    Ok(RunReport {
        classes,
        feature_set: cfg.feature_set.to_string(),
        kernel: cfg.kernel.to_string(),
        arrangement: cfg.arrangement.to_string(),
        n_drawings: records.len(),
        n_strokes: records.iter().map(|r| r.strokes.len()).sum(),
        folds: fold_results,
        stroke_train_mean,
        stroke_train_std,
        stroke_test_mean,
        stroke_test_std,
        drawing_accuracy,
        verdicts,
        fake,
        ablation,
    })
}

/// Assemble the classifier input for one stroke under a feature set.
fn assemble_features(
    feature_set: FeatureSet,
    records: &[DrawingRecord],
    hidden: Option<&HiddenMap>,
    record: usize,
    feat: usize,
) -> Result<Vec<f64>> {
    let r = &records[record];
    let (sid, hand) = &r.feats[feat];
    match feature_set {
        FeatureSet::Handcrafted => Ok(hand.clone()),
        FeatureSet::Gru => {
            let map = hidden.ok_or_else(|| {
                Error::InvalidInput("recurrent features requested but none were trained".into())
            })?;
            Ok(map[&(record, *sid)].clone())
        }
        FeatureSet::Combined => {
            let map = hidden.ok_or_else(|| {
                Error::InvalidInput("recurrent features requested but none were trained".into())
            })?;
            combine_features(hand, &map[&(record, *sid)])
        }
    }
}

/// Score imitation rejection: every fake stroke is scored by each fold's
/// binary head for the claimed artist, the per-fold posteriors are fused,
/// and the drawing verdict falls to the negative class on ties.
#[allow(clippy::too_many_arguments)]
fn score_fakes(
    cfg: &RunConfig,
    records: &[DrawingRecord],
    classes: &[String],
    fake_targets: &BTreeSet<usize>,
    fold_heads: &[HashMap<usize, SvmModel>],
    fold_hidden: &[Option<HiddenMap>],
    strategies: &[AggregationStrategy],
) -> Result<FakeReport> {
    let verdict_for = |ri: usize, target: usize| -> Result<Option<BTreeMap<String, bool>>> {
        let r = &records[ri];
        let mut stroke_verdicts = Vec::with_capacity(r.feats.len());
        for (fi, (sid, _)) in r.feats.iter().enumerate() {
            let mut per_fold: Vec<Vec<f64>> = Vec::with_capacity(fold_heads.len());
            for (f, heads) in fold_heads.iter().enumerate() {
                let x = assemble_features(
                    cfg.feature_set,
                    records,
                    fold_hidden[f].as_ref(),
                    ri,
                    fi,
                )?;
                let p = heads[&target].predict_posterior(&x)?;
                per_fold.push(vec![p, 1.0 - p]);
            }
            let fused = fuse_stroke_posteriors(&per_fold)?;
            stroke_verdicts.push(StrokeVerdict::new(*sid, fused)?);
        }
        if stroke_verdicts.is_empty() {
            log::warn!("drawing {} has no classifiable strokes for the fake test", r.entry.id);
            return Ok(None);
        }
        let mut out = BTreeMap::new();
        for strat in strategies {
            let dv = strat.aggregate(&r.entry.id, &stroke_verdicts, Some(1))?;
            out.insert(strat.kind.to_string(), dv.winner == 1);
        }
        Ok(Some(out))
    };

    let mut rejected: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut accepted: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut n_fake_drawings = 0usize;
    for (ri, r) in records.iter().enumerate() {
        let Some(target) = classes.iter().position(|c| c == &r.entry.artist) else {
            continue;
        };
        if !fake_targets.contains(&target) {
            continue;
        }
        let Some(by_strategy) = verdict_for(ri, target)? else {
            continue;
        };
        if r.entry.is_fake {
            n_fake_drawings += 1;
        }
        for (strategy, is_rejected) in by_strategy {
            if r.entry.is_fake {
                let slot = rejected.entry(strategy).or_insert((0, 0));
                slot.0 += is_rejected as usize;
                slot.1 += 1;
            } else {
                let slot = accepted.entry(strategy).or_insert((0, 0));
                slot.0 += !is_rejected as usize;
                slot.1 += 1;
            }
        }
    }

    let rate = |m: BTreeMap<String, (usize, usize)>| {
        m.into_iter().map(|(k, (hits, n))| (k, hits as f64 / n.max(1) as f64)).collect()
    };
    Ok(FakeReport {
        targets: fake_targets.iter().map(|&t| classes[t].clone()).collect(),
        n_fake_drawings,
        rejection_rate: rate(rejected),
        genuine_accept_rate: rate(accepted),
    })
}

// ---------------------------------------------------------------------------
// Deployable model bundles
// ---------------------------------------------------------------------------

pub const MODEL_BUNDLE_VERSION: u32 = 1;

/// A trained classifier with everything needed to score new drawings the
/// same way the training run scored its own: the class list, the feature
/// recipe, the segmentation knobs, and the model weights.
#[derive(Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    /// Artist names; classifier outputs index into this list.
    pub classes: Vec<String>,
    pub feature_set: FeatureSet,
    pub sigma_px: Option<f64>,
    pub min_stroke_len_mm: f64,
    pub adaptive_patches: bool,
    pub k_certain: f64,
    pub gamma_exponent: f64,
    pub svm: MulticlassModel,
    /// Present whenever the feature set includes learned features.
    pub gru: Option<GruParams>,
}

/// Serialize a bundle to JSON.
pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::write(path, serde_json::to_string(bundle)?)?;
    Ok(())
}

/// Load a bundle saved by [`save_bundle`], rejecting unknown versions.
pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path)?;
    let bundle: ModelBundle = serde_json::from_str(&text)?;
    if bundle.version != MODEL_BUNDLE_VERSION {
        return Err(Error::Config(format!(
            "unsupported model bundle version {} (expected {MODEL_BUNDLE_VERSION})",
            bundle.version
        )));
    }
    Ok(bundle)
}

/// Train one deployable bundle on every genuine drawing in the manifest (no
/// folds, balanced strokes). Returns the bundle plus the training-time
/// verdicts — one row per genuine drawing and strategy, produced by the very
/// same scoring path [`classify_drawing`] uses, so a later classify run on a
/// training image reproduces its logged row exactly.
pub fn train_bundle(cfg: &RunConfig) -> Result<(ModelBundle, Vec<VerdictRow>)> {
    cfg.validate()?;
    let (records, classes) = ingest_corpus(cfg)?;
    let n_classes = classes.len();

    let table: Vec<StrokeRef> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.entry.is_fake)
        .flat_map(|(ri, r)| {
            let class = r.class.expect("genuine drawings are classed");
            (0..r.feats.len()).map(move |fi| StrokeRef { record: ri, feat: fi, class })
        })
        .collect();
    if table.is_empty() {
        return Err(Error::Empty("no classifiable strokes in the corpus".into()));
    }
    let labels: Vec<usize> = table.iter().map(|s| s.class).collect();
    let bal: Vec<usize> = balance_strokes(&labels, n_classes, cfg.seed)?;

    // Hidden features only for the balanced training strokes; classify
    // recomputes them per drawing from the stored weights.
    let (gru, hidden): (Option<GruParams>, Option<HiddenMap>) =
        if cfg.feature_set == FeatureSet::Handcrafted {
            (None, None)
        } else {
            let patch_cfg = |r: &DrawingRecord| {
                if cfg.gru.adaptive_patches {
                    PatchConfig::Adaptive(adaptive_radius(&r.strokes, r.image.mm_per_px()))
                } else {
                    PatchConfig::Fixed
                }
            };
            let mut seqs: Vec<PatchSequence> = Vec::with_capacity(bal.len() * 2);
            for &i in &bal {
                let sref = table[i];
                let r = &records[sref.record];
                let stroke = &r.strokes[r.stroke_pos[&r.feats[sref.feat].0]];
                let (fwd, rev) =
                    sample_patch_sequence(stroke, &r.image, patch_cfg(r), sref.class)?;
                seqs.push(fwd);
                seqs.push(rev);
            }
            let tcfg = TrainingConfig {
                tau: cfg.gru.tau,
                lr: cfg.gru.lr,
                epochs: cfg.gru.epochs,
                batch_size: cfg.gru.batch_size,
                hidden: cfg.gru.hidden,
                seed: cfg.seed,
                ..TrainingConfig::default()
            };
            let (params, _losses) = train_gru(&seqs, n_classes, &tcfg)?;
            let mut map: HiddenMap = HashMap::new();
            for &i in &bal {
                let sref = table[i];
                let r = &records[sref.record];
                let sid = r.feats[sref.feat].0;
                let stroke = &r.strokes[r.stroke_pos[&sid]];
                let (fwd, rev) = sample_patch_sequence(stroke, &r.image, patch_cfg(r), 0)?;
                map.insert((sref.record, sid), stroke_hidden(&params, &fwd, &rev)?.to_vec());
            }
            (Some(params), Some(map))
        };

    let train_x: Vec<Vec<f64>> = bal
        .iter()
        .map(|&i| {
            let sref = table[i];
            assemble_features(cfg.feature_set, &records, hidden.as_ref(), sref.record, sref.feat)
        })
        .collect::<Result<_>>()?;
    let train_y: Vec<usize> = bal.iter().map(|&i| table[i].class).collect();
    let svm =
        train_multiclass(&train_x, &train_y, n_classes, cfg.kernel_spec(), cfg.arrangement, cfg.seed)?;

    let bundle = ModelBundle {
        version: MODEL_BUNDLE_VERSION,
        classes,
        feature_set: cfg.feature_set,
        sigma_px: cfg.sigma_px,
        min_stroke_len_mm: cfg.min_stroke_len_mm,
        adaptive_patches: cfg.gru.adaptive_patches,
        k_certain: cfg.k_certain,
        gamma_exponent: cfg.gamma_exponent,
        svm,
        gru,
    };

    let mut rows = Vec::new();
    for r in records.iter().filter(|r| !r.entry.is_fake) {
        match classify_drawing(&bundle, &r.image) {
            Ok(scores) => {
                for dv in scores.verdicts {
                    rows.push(VerdictRow {
                        fold: 0,
                        drawing_id: r.entry.id.clone(),
                        truth: r.entry.artist.clone(),
                        strategy: dv.strategy.to_string(),
                        winner: bundle.classes[dv.winner].clone(),
                        n_strokes: dv.n_strokes_counted,
                        scores: dv.scores,
                    });
                }
            }
            Err(Error::Empty(_)) => {
                log::warn!("drawing {} has no classifiable strokes; no verdict", r.entry.id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((bundle, rows))
}

/// Per-drawing scores from a trained bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DrawingScores {
    pub drawing_id: String,
    /// Segmented strokes (classifiable ones may be fewer).
    pub n_strokes: usize,
    /// Per-stroke class posteriors.
    pub strokes: Vec<StrokeVerdict>,
    /// One verdict per aggregation strategy.
    pub verdicts: Vec<DrawingVerdict>,
}

/// Segment and score one drawing with a trained bundle: per-stroke
/// posteriors plus a drawing verdict under every aggregation strategy.
/// Deterministic in (bundle, image). Errors with [`Error::Empty`] when no
/// stroke survives segmentation and feature extraction.
pub fn classify_drawing(bundle: &ModelBundle, image: &DrawingImage) -> Result<DrawingScores> {
    let seg = SegmentationConfig {
        sigma_px: bundle.sigma_px,
        min_stroke_len_mm: bundle.min_stroke_len_mm,
    };
    let strokes = process_drawing(image, &seg)?;
    let feats = compute_drawing_features(image, &strokes);
    let stroke_pos: HashMap<usize, usize> =
        strokes.iter().enumerate().map(|(i, s)| (s.id, i)).collect();

    let mut stroke_verdicts = Vec::with_capacity(feats.len());
    for (sid, hand) in &feats {
        let x = match bundle.feature_set {
            FeatureSet::Handcrafted => hand.clone(),
            FeatureSet::Gru | FeatureSet::Combined => {
                let params = bundle.gru.as_ref().ok_or_else(|| {
                    Error::Config(
                        "model bundle lacks recurrent weights for its feature set".into(),
                    )
                })?;
                let pcfg = if bundle.adaptive_patches {
                    PatchConfig::Adaptive(adaptive_radius(&strokes, image.mm_per_px()))
                } else {
                    PatchConfig::Fixed
                };
                let stroke = &strokes[stroke_pos[sid]];
                let (fwd, rev) = sample_patch_sequence(stroke, image, pcfg, 0)?;
                let h = stroke_hidden(params, &fwd, &rev)?.to_vec();
                if bundle.feature_set == FeatureSet::Gru {
                    h
                } else {
                    combine_features(hand, &h)?
                }
            }
        };
        let posterior = bundle.svm.class_posteriors(&x)?;
        stroke_verdicts.push(StrokeVerdict::new(*sid, posterior)?);
    }
    if stroke_verdicts.is_empty() {
        return Err(Error::Empty(format!(
            "drawing {} has no classifiable strokes",
            image.id
        )));
    }
    let verdicts = StrategyKind::ALL
        .iter()
        .map(|&kind| {
            AggregationStrategy {
                kind,
                k: bundle.k_certain,
                gamma_exponent: bundle.gamma_exponent,
            }
            .aggregate(&image.id, &stroke_verdicts, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DrawingScores {
        drawing_id: image.id.clone(),
        n_strokes: strokes.len(),
        strokes: stroke_verdicts,
        verdicts,
    })
}
