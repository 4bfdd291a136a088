//! Hand-crafted stroke descriptors.
//!
//! Every stroke is summarized by a 107-dimensional vector built from five
//! blocks, concatenated in a fixed order:
//!
//! | block            | dims | what it captures                               |
//! |------------------|------|------------------------------------------------|
//! | `fd`             | 40   | boundary shape: Fourier descriptor magnitudes  |
//! | `rep`            | 20   | shape complexity: reconstruction error profile |
//! | `curv1` + `curv2`| 32   | skeleton dynamics: curvature histograms        |
//! | `thick`          | 14   | pressure/tool: thickness statistics            |
//! | `len_ratio`      | 1    | elongation: arclength over bounding diagonal   |
//!
//! All blocks are invariant to translation and rotation; the contour blocks
//! are scale-normalized, and the metric blocks work in millimetres so that
//! resolution changes cancel out.

use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    polyline_length, resample_closed, signed_area, smooth_polyline, wrap_angle, Point,
};
use crate::segment::Stroke;

/// Total dimensionality of the assembled vector.
pub const FEATURE_DIM: usize = 107;
/// Closed contours are resampled to this many equal-arclength points.
pub const CONTOUR_SAMPLES: usize = 256;
/// Harmonics ±1..±MAX_HARMONIC contribute descriptor magnitudes.
pub const MAX_HARMONIC: usize = 20;
/// Bin count of each curvature histogram.
pub const CURV_BINS: usize = 16;
/// First-derivative histogram support, rad/mm.
pub const CURV1_RANGE: (f64, f64) = (-2.0, 2.0);
/// Second-derivative histogram support, rad/mm².
pub const CURV2_RANGE: (f64, f64) = (-4.0, 4.0);
/// Bin count of the thickness histogram.
pub const THICK_BINS: usize = 12;
/// Thickness histogram support, mm.
pub const THICK_RANGE: (f64, f64) = (0.0, 3.0);

/// The five feature blocks, in vector order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FeatureBlock {
    FourierDescriptors,
    ReconstructionProfile,
    Curvature,
    Thickness,
    LengthRatio,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 5] = [
        FeatureBlock::FourierDescriptors,
        FeatureBlock::ReconstructionProfile,
        FeatureBlock::Curvature,
        FeatureBlock::Thickness,
        FeatureBlock::LengthRatio,
    ];

    /// Column range of this block inside the assembled vector.
    pub fn range(self) -> Range<usize> {
        match self {
            FeatureBlock::FourierDescriptors => 0..40,
            FeatureBlock::ReconstructionProfile => 40..60,
            FeatureBlock::Curvature => 60..92,
            FeatureBlock::Thickness => 92..106,
            FeatureBlock::LengthRatio => 106..107,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct Cx {
    re: f64,
    im: f64,
}

impl Cx {
    const ZERO: Cx = Cx { re: 0.0, im: 0.0 };

    fn new(re: f64, im: f64) -> Self {
        Cx { re, im }
    }

    fn add(self, o: Cx) -> Cx {
        Cx::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Cx) -> Cx {
        Cx::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Cx) -> Cx {
        Cx::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    fn scale(self, s: f64) -> Cx {
        Cx::new(self.re * s, self.im * s)
    }

    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    fn expi(theta: f64) -> Cx {
        Cx::new(theta.cos(), theta.sin())
    }
}

/// Forward DFT, c_f = (1/N) Σ_k z_k e^{−2πi f k / N}.
fn dft(signal: &[Cx]) -> Vec<Cx> {
    let n = signal.len();
    let mut out = vec![Cx::ZERO; n];
    for (f, slot) in out.iter_mut().enumerate() {
        let mut acc = Cx::ZERO;
        for (k, z) in signal.iter().enumerate() {
            let w = Cx::expi(-2.0 * std::f64::consts::PI * (f * k) as f64 / n as f64);
            acc = acc.add(z.mul(w));
        }
        *slot = acc.scale(1.0 / n as f64);
    }
    out
}

/// Resample a closed contour, orient it so the +1 harmonic carries the bulk
/// of the energy (positive shoelace area for z = x + iy), and return its
/// Fourier coefficients.
fn contour_spectrum(boundary: &[Point]) -> Result<Vec<Cx>> {
    let mut pts = resample_closed(boundary, CONTOUR_SAMPLES)?;
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    let signal: Vec<Cx> = pts.iter().map(|p| Cx::new(p.x, p.y)).collect();
    Ok(dft(&signal))
}

/// Fourier descriptors: magnitudes of harmonics +1, −1, +2, −2, …, ±20 of
/// the resampled boundary, normalized by the first harmonic. Dropping the
/// DC term removes translation; taking magnitudes removes rotation and
/// start point; the normalization removes scale.
pub fn fourier_descriptors(boundary: &[Point]) -> Result<Vec<f64>> {
    let spec = contour_spectrum(boundary)?;
    descriptors_from_spectrum(&spec)
}

fn descriptors_from_spectrum(spec: &[Cx]) -> Result<Vec<f64>> {
    let n = spec.len();
    let scale = spec[1].abs();
    if scale <= 1e-12 {
        return Err(Error::Degenerate("contour has a vanishing first harmonic".into()));
    }
    let mut out = Vec::with_capacity(2 * MAX_HARMONIC);
    for m in 1..=MAX_HARMONIC {
        out.push(spec[m].abs() / scale);
        out.push(spec[n - m].abs() / scale);
    }
    Ok(out)
}

/// Reconstruction error profile: for k = 1..=20, rebuild the contour from
/// harmonics ±1..±k (plus DC) and record the quadratic-mean pointwise error
/// divided by the stroke's mean width in pixels. The profile never
/// increases with k (adding harmonics only removes residual energy); simple
/// ovals converge immediately, wiggly outlines keep the tail high.
pub fn reconstruction_profile(boundary: &[Point], mean_width_px: f64) -> Result<Vec<f64>> {
    if !(mean_width_px > 0.0) {
        return Err(Error::InvalidInput("mean width must be positive".into()));
    }
    let mut pts = resample_closed(boundary, CONTOUR_SAMPLES)?;
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    let signal: Vec<Cx> = pts.iter().map(|p| Cx::new(p.x, p.y)).collect();
    let spec = dft(&signal);
    let n = signal.len();

    // Running partial reconstruction: start from DC, add one ± pair per k.
    let mut recon = vec![spec[0]; n];
    let mut profile = Vec::with_capacity(MAX_HARMONIC);
    for m in 1..=MAX_HARMONIC {
        for (k, r) in recon.iter_mut().enumerate() {
            let w = 2.0 * std::f64::consts::PI * (m * k) as f64 / n as f64;
            let add = spec[m].mul(Cx::expi(w)).add(spec[n - m].mul(Cx::expi(-w)));
            *r = r.add(add);
        }
        let err = (signal
            .iter()
            .zip(&recon)
            .map(|(z, r)| {
                let d = z.sub(*r);
                d.re * d.re + d.im * d.im
            })
            .sum::<f64>()
            / n as f64)
            .sqrt();
        profile.push(err / mean_width_px);
    }
    Ok(profile)
}

fn histogram(samples: &[f64], range: (f64, f64), bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    if samples.is_empty() {
        return hist;
    }
    let span = range.1 - range.0;
    for &v in samples {
        let c = v.clamp(range.0, range.1);
        let idx = (((c - range.0) / span) * bins as f64) as usize;
        hist[idx.min(bins - 1)] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    for h in &mut hist {
        *h /= total;
    }
    hist
}

/// Curvature histograms of a skeleton path: 16 normalized bins of dθ/ds
/// over ±2 rad/mm and 16 of d²θ/ds² over ±4 rad/mm², sampled along the
/// 5-point-smoothed polyline. Values outside the support clamp into the
/// edge bins. Paths with fewer than 5 points are rejected.
pub fn curvature_histograms(path: &[Point], mm_per_px: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if path.len() < 5 {
        return Err(Error::Degenerate(format!(
            "curvature needs at least 5 path points, got {}",
            path.len()
        )));
    }
    if !(mm_per_px > 0.0) {
        return Err(Error::InvalidInput("mm_per_px must be positive".into()));
    }
    let sm = smooth_polyline(path, 5);

    // Tangent angle per segment, with the segment's midpoint arclength (mm).
    let mut theta = Vec::new();
    let mut s_mid = Vec::new();
    let mut s = 0.0;
    for w in sm.windows(2) {
        let d = w[1].sub(w[0]);
        let len = d.norm() * mm_per_px;
        if len == 0.0 {
            continue;
        }
        theta.push(d.y.atan2(d.x));
        s_mid.push(s + len / 2.0);
        s += len;
    }
    if theta.len() < 3 {
        return Err(Error::Degenerate("path collapses under smoothing".into()));
    }

    let mut dtheta = Vec::new();
    let mut s_d = Vec::new();
    for i in 0..theta.len() - 1 {
        let ds = s_mid[i + 1] - s_mid[i];
        if ds <= 0.0 {
            continue;
        }
        dtheta.push(wrap_angle(theta[i + 1] - theta[i]) / ds);
        s_d.push((s_mid[i + 1] + s_mid[i]) / 2.0);
    }
    let mut ddtheta = Vec::new();
    for i in 0..dtheta.len().saturating_sub(1) {
        let ds = s_d[i + 1] - s_d[i];
        if ds <= 0.0 {
            continue;
        }
        ddtheta.push((dtheta[i + 1] - dtheta[i]) / ds);
    }
    if dtheta.is_empty() || ddtheta.is_empty() {
        return Err(Error::Degenerate("too few curvature samples".into()));
    }
    Ok((
        histogram(&dtheta, CURV1_RANGE, CURV_BINS),
        histogram(&ddtheta, CURV2_RANGE, CURV_BINS),
    ))
}

/// Thickness block: mean and standard deviation of the stroke width (twice
/// the rib length) in mm, followed by a 12-bin normalized histogram of the
/// width samples over [0, 3] mm.
pub fn thickness_features(ribs_mm: &[f64]) -> Result<Vec<f64>> {
    if ribs_mm.is_empty() {
        return Err(Error::Empty("thickness needs at least one rib sample".into()));
    }
    let widths: Vec<f64> = ribs_mm.iter().map(|r| 2.0 * r).collect();
    let n = widths.len() as f64;
    let mean = widths.iter().sum::<f64>() / n;
    let var = widths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    let mut out = vec![mean, var.sqrt()];
    out.extend(histogram(&widths, THICK_RANGE, THICK_BINS));
    Ok(out)
}

/// Arclength divided by the bounding-box diagonal: 1 for a straight stroke,
/// growing with wiggliness; 0 for a degenerate (single-point) stroke.
pub fn length_ratio(path: &[Point], closed: bool) -> f64 {
    if path.len() < 2 {
        return 0.0;
    }
    let mut len = polyline_length(path);
    if closed && path.len() > 2 {
        len += path[path.len() - 1].dist(path[0]);
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in path {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let diag = (max_x - min_x).hypot(max_y - min_y);
    if diag <= 0.0 {
        return 0.0;
    }
    len / diag
}

/// Assemble the full 107-dimensional vector for one stroke.
pub fn stroke_features(stroke: &Stroke, mm_per_px: f64) -> Result<Vec<f64>> {
    let boundary = stroke.boundary_points();
    let path = stroke.skeleton_points();
    let fd = fourier_descriptors(&boundary)?;
    let mean_width_px = 2.0 * stroke.mean_rib_mm() / mm_per_px;
    let rep = reconstruction_profile(&boundary, mean_width_px)?;
    let (c1, c2) = curvature_histograms(&path, mm_per_px)?;
    let th = thickness_features(&stroke.ribs_mm)?;
    let mut v = Vec::with_capacity(FEATURE_DIM);
    v.extend(fd);
    v.extend(rep);
    v.extend(c1);
    v.extend(c2);
    v.extend(th);
    v.push(length_ratio(&path, stroke.closed));
    debug_assert_eq!(v.len(), FEATURE_DIM);
    Ok(v)
}

/// Column names of the assembled vector, in order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_DIM);
    for m in 1..=MAX_HARMONIC {
        names.push(format!("fd_p{m:02}"));
        names.push(format!("fd_n{m:02}"));
    }
    for k in 1..=MAX_HARMONIC {
        names.push(format!("rep_{k:02}"));
    }
    for b in 0..CURV_BINS {
        names.push(format!("curv1_{b:02}"));
    }
    for b in 0..CURV_BINS {
        names.push(format!("curv2_{b:02}"));
    }
    names.push("thick_mean".into());
    names.push("thick_std".into());
    for b in 0..THICK_BINS {
        names.push(format!("thick_h{b:02}"));
    }
    names.push("len_ratio".into());
    debug_assert_eq!(names.len(), FEATURE_DIM);
    names
}

/// FNV-1a hash of the column schema; stored in model bundles so a model is
/// never applied to differently-laid-out vectors.
pub fn schema_hash() -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for name in feature_names() {
        for b in name.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= b'\n' as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// One exported feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub drawing_id: String,
    pub stroke_id: usize,
    pub artist: String,
    pub is_fake: bool,
    pub values: Vec<f64>,
}

/// Write feature rows as CSV with named columns, keyed by
/// (drawing_id, stroke_id).
pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    let mut header = vec![
        "drawing_id".to_string(),
        "stroke_id".to_string(),
        "artist".to_string(),
        "is_fake".to_string(),
    ];
    header.extend(feature_names());
    writeln!(buf, "{}", header.join(","))?;
    for row in rows {
        if row.values.len() != FEATURE_DIM {
            return Err(Error::ShapeMismatch(format!(
                "feature row for {}:{} has {} values, expected {FEATURE_DIM}",
                row.drawing_id,
                row.stroke_id,
                row.values.len()
            )));
        }
        write!(buf, "{},{},{},{}", row.drawing_id, row.stroke_id, row.artist, row.is_fake)?;
        for v in &row.values {
            write!(buf, ",{v}")?;
        }
        writeln!(buf)?;
    }
    buf.flush()?;
    Ok(())
}

/// Read back a feature CSV written by [`write_features_csv`].
pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected: Vec<String> = feature_names();
    let file_cols: Vec<&str> = headers.iter().skip(4).collect();
    if file_cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::ShapeMismatch(
            "feature CSV columns do not match the current schema".into(),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values: Vec<f64> = rec
            .iter()
            .skip(4)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("bad feature value: {e}")))?;
        rows.push(FeatureRow {
            drawing_id: rec[0].to_string(),
            stroke_id: rec[1]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad stroke id: {e}")))?,
            artist: rec[2].to_string(),
            is_fake: rec[3]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad is_fake flag: {e}")))?,
            values,
        });
    }
    Ok(rows)
}
