//! Raster ingest and the binary preprocessing chain.
//!
//! A drawing enters the pipeline as a grayscale [`DrawingImage`] with a
//! mandatory physical scale (pixels per centimeter). [`binarize`] separates
//! ink from paper with Otsu's histogram split, picking the minority class as
//! ink so both dark-on-light and light-on-dark scans work. [`skeletonize`]
//! thins the ink mask to unit width (Zhang–Suen) and pairs it with an exact
//! Euclidean distance transform, whose value at a skeleton pixel is the local
//! stroke half-width ("rib") in pixels.

use std::path::Path;
use std::str::FromStr;

use image::imageops::FilterType;
use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{connected_components, Grid, Pixel};

/// Drawing technique vocabulary carried through manifests. Purely metadata:
/// no algorithm branches on it, but reports group by it.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    PenInk,
    Etching,
    Pencil,
    Drypoint,
    Lithograph,
    Crayon,
    Charcoal,
    #[default]
    Unknown,
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pen_ink" => Ok(Technique::PenInk),
            "etching" => Ok(Technique::Etching),
            "pencil" => Ok(Technique::Pencil),
            "drypoint" => Ok(Technique::Drypoint),
            "lithograph" => Ok(Technique::Lithograph),
            "crayon" => Ok(Technique::Crayon),
            "charcoal" => Ok(Technique::Charcoal),
            "" | "unknown" => Ok(Technique::Unknown),
            other => Err(Error::InvalidInput(format!("unknown technique '{other}'"))),
        }
    }
}

impl std::fmt::Display for Technique {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Technique::PenInk => "pen_ink",
            Technique::Etching => "etching",
            Technique::Pencil => "pencil",
            Technique::Drypoint => "drypoint",
            Technique::Lithograph => "lithograph",
            Technique::Crayon => "crayon",
            Technique::Charcoal => "charcoal",
            Technique::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

/// A grayscale drawing plus the metadata every later stage needs.
#[derive(Clone, Debug)]
pub struct DrawingImage {
    pub id: String,
    pub pixels: Grid<u8>,
    /// Physical scan resolution; all metric features divide through this.
    pub px_per_cm: f64,
    pub artist_label: Option<String>,
    pub technique: Technique,
    pub is_fake: bool,
}

impl DrawingImage {
    pub fn new(id: impl Into<String>, pixels: Grid<u8>, px_per_cm: f64) -> Result<Self> {
        if !(px_per_cm > 0.0) || !px_per_cm.is_finite() {
            return Err(Error::InvalidInput(format!(
                "px_per_cm must be positive and finite, got {px_per_cm}"
            )));
        }
        if pixels.is_empty() {
            return Err(Error::Empty("drawing has no pixels".into()));
        }
        Ok(DrawingImage {
            id: id.into(),
            pixels,
            px_per_cm,
            artist_label: None,
            technique: Technique::Unknown,
            is_fake: false,
        })
    }

    /// Millimeters spanned by one pixel.
    pub fn mm_per_px(&self) -> f64 {
        10.0 / self.px_per_cm
    }

    /// Bilinear rescale by `factor`, co-scaling `px_per_cm` so physical
    /// measurements are preserved.
    pub fn resampled(&self, factor: f64) -> Result<DrawingImage> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidInput(format!("scale factor must be positive, got {factor}")));
        }
        let w = ((self.pixels.width() as f64 * factor).round() as u32).max(1);
        let h = ((self.pixels.height() as f64 * factor).round() as u32).max(1);
        let img = GrayImage::from_raw(
            self.pixels.width() as u32,
            self.pixels.height() as u32,
            self.pixels.raw().to_vec(),
        )
        .expect("grid dimensions are consistent");
        let resized = image::imageops::resize(&img, w, h, FilterType::Triangle);
        let grid = Grid::from_vec(w as usize, h as usize, resized.into_raw());
        Ok(DrawingImage {
            id: self.id.clone(),
            pixels: grid,
            px_per_cm: self.px_per_cm * factor,
            artist_label: self.artist_label.clone(),
            technique: self.technique,
            is_fake: self.is_fake,
        })
    }
}

/// Metadata for [`load_drawing`], usually parsed from a manifest row.
#[derive(Clone, Debug, Default)]
pub struct DrawingMeta {
    pub id: Option<String>,
    pub artist_label: Option<String>,
    pub technique: Technique,
    pub is_fake: bool,
}

/// Decode an image file to grayscale and attach its physical scale.
pub fn load_drawing(path: &Path, px_per_cm: f64, meta: DrawingMeta) -> Result<DrawingImage> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = Grid::from_vec(w, h, img.into_raw());
    let id = meta
        .id
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let mut drawing = DrawingImage::new(id, grid, px_per_cm)?;
    drawing.artist_label = meta.artist_label;
    drawing.technique = meta.technique;
    drawing.is_fake = meta.is_fake;
    Ok(drawing)
}

/// Binary ink mask: `true` cells are ink.
#[derive(Clone, Debug)]
pub struct BinaryMask {
    pub bits: Grid<bool>,
}

impl BinaryMask {
    pub fn ink_count(&self) -> usize {
        self.bits.count_true()
    }
}

/// Otsu's threshold over a 256-bin histogram: the split maximizing
/// between-class variance. Returns `None` when every split is flat (single
/// gray tone), plus the maximal variance achieved.
fn otsu_threshold(hist: &[u64; 256]) -> Option<(u8, f64)> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(g, &c)| g as f64 * c as f64).sum();
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    let mut best = (0u8, 0.0f64);
    for t in 0..256usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best.1 {
            best = (t as u8, var);
        }
    }
    if best.1 > 0.0 {
        Some(best)
    } else {
        None
    }
}

/// Split ink from paper. The gray histogram is thresholded with Otsu's
/// criterion; the smaller of the two classes becomes ink, so inverted scans
/// need no special casing. A single-tone image has no usable split and is an
/// error.
pub fn binarize(drawing: &DrawingImage) -> Result<BinaryMask> {
    let mut hist = [0u64; 256];
    for &g in drawing.pixels.raw() {
        hist[g as usize] += 1;
    }
    let (t, _) = otsu_threshold(&hist).ok_or(Error::NoBimodalSeparation)?;
    let dark: u64 = hist[..=t as usize].iter().sum();
    let light: u64 = hist[t as usize + 1..].iter().sum();
    // Ink is the minority class; on an exact tie, the darker class.
    let ink_is_dark = dark <= light;
    let bits = Grid::from_vec(
        drawing.pixels.width(),
        drawing.pixels.height(),
        drawing
            .pixels
            .raw()
            .iter()
            .map(|&g| if ink_is_dark { g <= t } else { g > t })
            .collect(),
    );
    Ok(BinaryMask { bits })
}

/// Thinned mask plus half-width field.
///
/// `dt` holds, for every ink pixel, the Euclidean distance from its center
/// to the nearest background pixel center minus 0.5 (so a bar exactly 5 px
/// wide reads 2.5 at its centerline), and 0.0 on background. The original
/// mask is therefore recoverable as `dt > 0`.
#[derive(Clone, Debug)]
pub struct SkeletonField {
    /// Unit-width skeleton pixels, sorted row-major.
    pub skeleton: Vec<Pixel>,
    /// Half-width field; positive exactly on the ink mask.
    pub dt: Grid<f64>,
}

impl SkeletonField {
    /// Skeleton as a boolean grid (same dimensions as `dt`).
    pub fn skeleton_mask(&self) -> Grid<bool> {
        let mut g = Grid::filled(self.dt.width(), self.dt.height(), false);
        for &p in &self.skeleton {
            g.set(p, true);
        }
        g
    }

    /// Ink mask recovered from the distance field.
    pub fn ink_mask(&self) -> Grid<bool> {
        Grid::from_vec(
            self.dt.width(),
            self.dt.height(),
            self.dt.raw().iter().map(|&d| d > 0.0).collect(),
        )
    }

    /// Half-width at a pixel, in pixels.
    pub fn rib_px(&self, p: Pixel) -> f64 {
        self.dt.at(p).copied().unwrap_or(0.0)
    }
}

/// Stand-in for "no background seed here". Large but finite so parabola
/// intersections stay NaN-free; any real squared distance in an image is
/// far below this.
const DT_UNSEEDED: f64 = 1e20;

/// 1-D squared-distance transform (lower-envelope-of-parabolas method).
fn dt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Exact Euclidean distance (in pixels) from every `true` cell to the
/// nearest `false` cell. Cells outside the image count as background, so a
/// stroke hugging the border still gets a finite width. `false` cells map
/// to 0.
pub fn euclidean_distance_to_background(mask: &Grid<bool>) -> Grid<f64> {
    let (w, h) = (mask.width(), mask.height());
    // Pad with a one-pixel background ring so the image border acts as
    // background, then crop after the transform.
    let (pw, ph) = (w + 2, h + 2);
    let mut f = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if *mask.get(x, y) {
                f[(y + 1) * pw + (x + 1)] = DT_UNSEEDED;
            }
        }
    }
    // Columns.
    let mut col_in = vec![0.0f64; ph];
    let mut col_out = vec![0.0f64; ph];
    for x in 0..pw {
        for y in 0..ph {
            col_in[y] = f[y * pw + x];
        }
        dt_1d(&col_in, &mut col_out);
        for y in 0..ph {
            f[y * pw + x] = col_out[y];
        }
    }
    // Rows.
    let mut row_out = vec![0.0f64; pw];
    for y in 0..ph {
        let row_in: Vec<f64> = f[y * pw..(y + 1) * pw].to_vec();
        dt_1d(&row_in, &mut row_out);
        f[y * pw..(y + 1) * pw].copy_from_slice(&row_out);
    }
    let mut out = Grid::filled(w, h, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            out.raw_mut()[y * w + x] = f[(y + 1) * pw + (x + 1)].sqrt();
        }
    }
    out
}

/// One Zhang–Suen subpass decision for pixel `p`. `phase` 0 uses the
/// (east/south)-biased boundary conditions, phase 1 the (west/north) ones.
fn zhang_suen_deletable(bits: &Grid<bool>, p: Pixel, phase: u8) -> bool {
    // Neighborhood in the traditional p2..p9 clockwise order from north.
    let n = p.neighbors8();
    let v: Vec<bool> = n.iter().map(|q| bits.is_set(q.x, q.y)).collect();
    let b: u32 = v.iter().map(|&x| x as u32).sum();
    if !(2..=6).contains(&b) {
        return false;
    }
    // Transitions false->true walking p2,p3,...,p9,p2.
    let mut a = 0;
    for i in 0..8 {
        if !v[i] && v[(i + 1) % 8] {
            a += 1;
        }
    }
    if a != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (v[0], v[2], v[4], v[6]);
    if phase == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Zhang–Suen iterative thinning. Mostly unit width, but the parallel
/// passes can leave two-pixel-wide diagonal bands on thick oblique lines;
/// [`prune_to_unit_width`] finishes the job.
fn zhang_suen(mask: &Grid<bool>) -> Grid<bool> {
    let mut bits = mask.clone();
    let mut alive: Vec<Pixel> = bits.true_pixels();
    loop {
        let mut changed = false;
        for phase in 0..2u8 {
            let doomed: Vec<Pixel> = alive
                .iter()
                .copied()
                .filter(|&p| zhang_suen_deletable(&bits, p, phase))
                .collect();
            if !doomed.is_empty() {
                changed = true;
                for p in &doomed {
                    bits.set(*p, false);
                }
                alive.retain(|p| bits.is_set(p.x, p.y));
            }
        }
        if !changed {
            break;
        }
    }
    bits
}

/// True when deleting `p` neither splits ink nor shortens a tip: it has at
/// least two set neighbors and they all stay 8-connected to each other
/// through the ring (one Yokoi component).
fn is_excess(bits: &Grid<bool>, p: Pixel) -> bool {
    let n = p.neighbors8();
    let v: Vec<bool> = n.iter().map(|q| bits.is_set(q.x, q.y)).collect();
    let set: u32 = v.iter().map(|&x| x as u32).sum();
    if set < 2 {
        return false;
    }
    // Yokoi connectivity number for 8-connected foreground: walk the four
    // edge neighbors; each one that is background and not the start of a
    // background run through the following corner counts a component.
    let bg = |i: usize| !v[i % 8] as u32;
    let comps: u32 = (0..8).step_by(2).map(|k| bg(k) - bg(k) * bg(k + 1) * bg(k + 2)).sum();
    comps == 1
}

/// Sequential cleanup for the bands Zhang–Suen leaves behind. Redundant
/// pixels are deleted one at a time — shallowest ink first so the medial
/// ridge survives — until every remaining pixel is either an endpoint, a
/// chain link, or a genuine junction. Connectivity is preserved exactly.
fn prune_to_unit_width(bits: &mut Grid<bool>, dt: &Grid<f64>) {
    loop {
        let mut doomed: Vec<Pixel> =
            bits.true_pixels().into_iter().filter(|&p| is_excess(bits, p)).collect();
        if doomed.is_empty() {
            break;
        }
        doomed.sort_by(|a, b| {
            let da = dt.at(*a).copied().unwrap_or(0.0);
            let db = dt.at(*b).copied().unwrap_or(0.0);
            da.partial_cmp(&db).expect("distance field is finite").then(a.cmp(b))
        });
        let mut changed = false;
        for p in doomed {
            // Earlier deletions in this pass may have made `p` load-bearing.
            if is_excess(bits, p) {
                bits.set(p, false);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Thin an ink mask to a unit-width skeleton and attach the half-width
/// field.
///
/// Thinning never splits an 8-connected blob, but it can erase tiny blobs
/// entirely (for example an isolated 2×2 square); each such component is
/// resurrected as its single widest pixel so the skeleton keeps exactly one
/// piece per ink blob. Errors when the mask holds no ink.
pub fn skeletonize(mask: &BinaryMask) -> Result<SkeletonField> {
    if mask.ink_count() == 0 {
        return Err(Error::Empty("ink mask is empty".into()));
    }
    let dist = euclidean_distance_to_background(&mask.bits);
    let mut dt = Grid::filled(mask.bits.width(), mask.bits.height(), 0.0f64);
    for (i, &d) in dist.raw().iter().enumerate() {
        if d > 0.0 {
            dt.raw_mut()[i] = d - 0.5;
        }
    }
    let mut thin = zhang_suen(&mask.bits);
    prune_to_unit_width(&mut thin, &dt);
    // Preserve one skeleton pixel per original component.
    for comp in connected_components(&mask.bits) {
        let has_skeleton = comp.iter().any(|&p| thin.is_set(p.x, p.y));
        if !has_skeleton {
            // Widest pixel of the erased blob; ties resolved by pixel order
            // (comp is sorted).
            let best = comp
                .iter()
                .copied()
                .max_by(|a, b| {
                    let da = dt.at(*a).copied().unwrap_or(0.0);
                    let db = dt.at(*b).copied().unwrap_or(0.0);
                    da.partial_cmp(&db).unwrap().then(b.cmp(a))
                })
                .expect("component is non-empty");
            thin.set(best, true);
        }
    }
    let skeleton = thin.true_pixels();
    Ok(SkeletonField { skeleton, dt })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_image(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> DrawingImage {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        DrawingImage::new("test", Grid::from_vec(w, h, data), 40.0).unwrap()
    }

    fn mask_from(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        let mut g = Grid::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                if f(x, y) {
                    g.set(Pixel::new(x as i32, y as i32), true);
                }
            }
        }
        BinaryMask { bits: g }
    }

    /// Brute-force Otsu oracle computed directly from pixel values.
    fn otsu_oracle(pixels: &[u8]) -> u8 {
        let n = pixels.len() as f64;
        let mut best_t = 0u8;
        let mut best_var = -1.0;
        for t in 0..=255u8 {
            let lows: Vec<f64> = pixels.iter().filter(|&&g| g <= t).map(|&g| g as f64).collect();
            let highs: Vec<f64> = pixels.iter().filter(|&&g| g > t).map(|&g| g as f64).collect();
            if lows.is_empty() || highs.is_empty() {
                continue;
            }
            let w0 = lows.len() as f64 / n;
            let w1 = highs.len() as f64 / n;
            let mu0 = lows.iter().sum::<f64>() / lows.len() as f64;
            let mu1 = highs.iter().sum::<f64>() / highs.len() as f64;
            let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
            if var > best_var {
                best_var = var;
                best_t = t;
            }
        }
        best_t
    }

    #[test]
    fn otsu_matches_brute_force_oracle_on_bimodal_mixtures() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for trial in 0..20 {
            let dark_mu = rng.random_range(20..90);
            let light_mu = rng.random_range(150..235);
            let pixels: Vec<u8> = (0..4000)
                .map(|i| {
                    let mu = if i % 5 == 0 { dark_mu } else { light_mu };
                    let jitter: i32 = rng.random_range(-18..=18);
                    (mu as i32 + jitter).clamp(0, 255) as u8
                })
                .collect();
            let mut hist = [0u64; 256];
            for &g in &pixels {
                hist[g as usize] += 1;
            }
            let (t, _) = otsu_threshold(&hist).expect("bimodal input must split");
            let oracle = otsu_oracle(&pixels);
            assert!(
                (t as i32 - oracle as i32).abs() <= 1,
                "trial {trial}: impl {t} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn binarize_picks_minority_class_for_both_polarities() {
        // Dark ink on light paper.
        let dark_on_light = gray_image(40, 40, |x, y| if x == 20 && y < 30 { 10 } else { 240 });
        let m = binarize(&dark_on_light).unwrap();
        assert_eq!(m.ink_count(), 30);
        assert!(m.bits.is_set(20, 5));
        // Same geometry, inverted scan.
        let light_on_dark = gray_image(40, 40, |x, y| if x == 20 && y < 30 { 240 } else { 10 });
        let m = binarize(&light_on_dark).unwrap();
        assert_eq!(m.ink_count(), 30);
        assert!(m.bits.is_set(20, 5));
    }

    #[test]
    fn binarize_rejects_single_tone_image() {
        let flat = gray_image(16, 16, |_, _| 128);
        assert!(matches!(binarize(&flat), Err(Error::NoBimodalSeparation)));
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let (w, h) = (23usize, 17usize);
        let mut mask = Grid::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                if rng.random_range(0..100) < 60 {
                    mask.set(Pixel::new(x as i32, y as i32), true);
                }
            }
        }
        let dt = euclidean_distance_to_background(&mask);
        for y in 0..h as i32 {
            for x in 0..w as i32 {
                let expect = if !mask.is_set(x, y) {
                    0.0
                } else {
                    // Nearest false cell, counting the border ring outside
                    // the image as background.
                    let mut best = f64::INFINITY;
                    for yy in -1..=h as i32 {
                        for xx in -1..=w as i32 {
                            let bg = xx < 0 || yy < 0 || xx >= w as i32 || yy >= h as i32
                                || !mask.is_set(xx, yy);
                            if bg {
                                let d = (((x - xx) * (x - xx) + (y - yy) * (y - yy)) as f64).sqrt();
                                best = best.min(d);
                            }
                        }
                    }
                    best
                };
                let got = *dt.get(x as usize, y as usize);
                assert!((got - expect).abs() < 1e-9, "({x},{y}): got {got}, expect {expect}");
            }
        }
    }

    #[test]
    fn half_width_of_five_pixel_bar_is_two_and_a_half() {
        // Horizontal bar 5 px tall in a comfortable margin.
        let m = mask_from(40, 15, |x, y| (5..=9).contains(&y) && (3..37).contains(&x));
        let field = skeletonize(&m).unwrap();
        // All skeleton pixels away from the bar ends sit on the center row.
        let center: Vec<&Pixel> =
            field.skeleton.iter().filter(|p| (10..30).contains(&p.x)).collect();
        assert!(!center.is_empty());
        for p in center {
            assert_eq!(p.y, 7, "skeleton strayed off the centerline at {p:?}");
            let rib = field.rib_px(*p);
            assert!((rib - 2.5).abs() < 1e-9, "rib {rib} != 2.5");
        }
    }

    #[test]
    fn skeleton_of_plus_sign_has_four_limbs() {
        // Two 3-px bars crossing at the center.
        let m = mask_from(41, 41, |x, y| {
            let v = (19..=21).contains(&x) && (5..=35).contains(&y);
            let hbar = (19..=21).contains(&y) && (5..=35).contains(&x);
            v || hbar
        });
        let field = skeletonize(&m).unwrap();
        let sk = field.skeleton_mask();
        // Degree-1 pixels = limb tips. A clean plus-sign skeleton has 4.
        let tips: Vec<Pixel> = field
            .skeleton
            .iter()
            .copied()
            .filter(|p| p.neighbors8().iter().filter(|q| sk.is_set(q.x, q.y)).count() == 1)
            .collect();
        assert_eq!(tips.len(), 4, "tips: {tips:?}");
        // Skeleton stays within the ink.
        for p in &field.skeleton {
            assert!(m.bits.is_set(p.x, p.y));
        }
    }

    #[test]
    fn thinning_preserves_component_count() {
        // A mix of shapes: a 2x2 blob that plain thinning erases, a dot,
        // and a line.
        let m = mask_from(30, 20, |x, y| {
            let blob = (2..=3).contains(&x) && (2..=3).contains(&y);
            let dot = x == 25 && y == 3;
            let line = y == 12 && (4..26).contains(&x);
            blob || dot || line
        });
        let before = connected_components(&m.bits).len();
        let field = skeletonize(&m).unwrap();
        let after = connected_components(&field.skeleton_mask()).len();
        assert_eq!(before, 3);
        assert_eq!(after, before, "thinning changed the component count");
    }

    #[test]
    fn oblique_band_thins_to_a_simple_path() {
        use crate::geometry::{dist_to_segment, Point};
        // A thick line at slope -0.8, an angle where the parallel passes
        // alone leave a two-pixel-wide staircase whose pixels all read as
        // junctions. The cleanup must reduce it to one degree-<=2 path.
        let a = Point::new(88.0, 12.0);
        let b = Point::new(12.0, 73.0);
        let m = mask_from(100, 85, |x, y| {
            let p = Point::new(x as f64, y as f64);
            dist_to_segment(p, a, b).0 <= 2.12
        });
        let field = skeletonize(&m).unwrap();
        let sk = field.skeleton_mask();
        let mut tips = 0;
        for p in &field.skeleton {
            let deg = p.neighbors8().iter().filter(|q| sk.is_set(q.x, q.y)).count();
            assert!(deg <= 2, "junction-degree pixel {p:?} on a single line");
            if deg == 1 {
                tips += 1;
            }
        }
        assert_eq!(tips, 2, "a lone line skeleton has exactly two tips");
        assert_eq!(connected_components(&sk).len(), 1);
    }

    #[test]
    fn ink_mask_recoverable_from_distance_field() {
        let m = mask_from(25, 25, |x, y| (x as i32 - 12).pow(2) + (y as i32 - 12).pow(2) <= 36);
        let field = skeletonize(&m).unwrap();
        assert_eq!(field.ink_mask().raw(), m.bits.raw());
    }

    #[test]
    fn resampling_co_scales_resolution() {
        let img = gray_image(50, 40, |x, _| if x < 25 { 0 } else { 255 });
        let up = img.resampled(2.0).unwrap();
        assert_eq!(up.pixels.width(), 100);
        assert_eq!(up.pixels.height(), 80);
        assert!((up.px_per_cm - 80.0).abs() < 1e-12);
        assert!((up.mm_per_px() - img.mm_per_px() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn drawing_rejects_bad_scale() {
        let g = Grid::filled(4, 4, 0u8);
        assert!(DrawingImage::new("x", g.clone(), 0.0).is_err());
        assert!(DrawingImage::new("x", g, -3.0).is_err());
    }

    #[test]
    fn technique_tokens_round_trip() {
        for token in
            ["pen_ink", "etching", "pencil", "drypoint", "lithograph", "crayon", "charcoal", "unknown"]
        {
            let t: Technique = token.parse().unwrap();
            assert_eq!(t.to_string(), token);
        }
        assert!("ballpoint".parse::<Technique>().is_err());
    }
}
