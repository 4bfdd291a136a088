//! End-to-end orchestration: corpus manifests, per-drawing processing, and
//! artifact files (stroke JSON, segmentation overlays, feature tables).
//!
//! A corpus is a CSV manifest naming one image per row with its artist
//! label and resolution. Processing a drawing runs binarization, thinning,
//! and stroke extraction; the resulting strokes serialize to a versioned
//! JSON file and render to a color overlay for visual inspection.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{stroke_features, FeatureRow};
use crate::grid::Pixel;
use crate::raster::{binarize, skeletonize, DrawingImage, Technique};
use crate::segment::{segment_strokes, SegmentationConfig, Stroke};

/// One corpus row: an image on disk with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub artist: String,
    pub px_per_cm: f64,
    pub technique: Technique,
    pub is_fake: bool,
}

/// Read a corpus manifest (CSV: id,path,artist,px_per_cm,technique,is_fake).
/// Relative image paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("manifest is missing column '{name}'")))
    };
    let (ci, cp, ca, cr, ct, cf) = (
        col("id")?,
        col("path")?,
        col("artist")?,
        col("px_per_cm")?,
        col("technique")?,
        col("is_fake")?,
    );
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let raw_path = PathBuf::from(&record[cp]);
        let resolved =
            if raw_path.is_absolute() { raw_path } else { base.join(raw_path) };
        let px_per_cm: f64 = record[cr].parse().map_err(|_| {
            Error::Config(format!("manifest px_per_cm '{}' is not a number", &record[cr]))
        })?;
        entries.push(ManifestEntry {
            id: record[ci].to_string(),
            path: resolved,
            artist: record[ca].to_string(),
            px_per_cm,
            technique: record[ct].parse().unwrap_or_default(),
            is_fake: matches!(&record[cf], "true" | "1" | "yes"),
        });
    }
    if entries.is_empty() {
        return Err(Error::Empty(format!("manifest {} has no rows", path.display())));
    }
    Ok(entries)
}

/// Write a corpus manifest. Paths are written as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["id", "path", "artist", "px_per_cm", "technique", "is_fake"])?;
    for e in entries {
        wtr.write_record([
            e.id.as_str(),
            &e.path.to_string_lossy(),
            e.artist.as_str(),
            &format!("{}", e.px_per_cm),
            &e.technique.to_string(),
            if e.is_fake { "true" } else { "false" },
        ])?;
    }
    wtr.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// Load the image behind a manifest entry.
pub fn load_entry(entry: &ManifestEntry) -> Result<DrawingImage> {
    crate::raster::load_drawing(
        &entry.path,
        entry.px_per_cm,
        crate::raster::DrawingMeta {
            id: Some(entry.id.clone()),
            artist_label: Some(entry.artist.clone()),
            technique: entry.technique,
            is_fake: entry.is_fake,
        },
    )
}

/// Segment a drawing into strokes: binarize, thin, split at junctions.
/// A blank page (no tonal separation) yields an empty stroke list rather
/// than an error.
pub fn process_drawing(image: &DrawingImage, cfg: &SegmentationConfig) -> Result<Vec<Stroke>> {
    let mask = match binarize(image) {
        Ok(m) => m,
        Err(Error::NoBimodalSeparation) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    if mask.ink_count() == 0 {
        return Ok(Vec::new());
    }
    let field = skeletonize(&mask)?;
    let mut strokes = segment_strokes(&field, cfg, image.px_per_cm);
    for s in &mut strokes {
        s.source_id = image.id.clone();
    }
    Ok(strokes)
}

/// Load a segmentation-only config file (TOML or JSON by extension); every
/// field is optional and defaults apply.
pub fn load_segmentation_config(path: &Path) -> Result<SegmentationConfig> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let text = std::fs::read_to_string(path)?;
    match ext.as_str() {
        "toml" => toml::from_str(&text).map_err(|e| Error::Config(e.to_string())),
        "json" => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string())),
        other => Err(Error::Config(format!(
            "unsupported config extension '{other}' (expected .toml or .json)"
        ))),
    }
}

/// Compute the hand-crafted feature vector for every stroke, skipping
/// degenerate ones (dots and near-zero contours) with a log note.
pub fn compute_drawing_features(
    image: &DrawingImage,
    strokes: &[Stroke],
) -> Vec<(usize, Vec<f64>)> {
    let mm_per_px = image.mm_per_px();
    strokes
        .iter()
        .filter_map(|s| match stroke_features(s, mm_per_px) {
            Ok(v) => Some((s.id, v)),
            Err(e) => {
                log::warn!("drawing {}: stroke {} skipped: {e}", image.id, s.id);
                None
            }
        })
        .collect()
}

/// Feature rows for one drawing, tagged with its manifest labels.
pub fn feature_rows_for(
    image: &DrawingImage,
    strokes: &[Stroke],
) -> Vec<FeatureRow> {
    compute_drawing_features(image, strokes)
        .into_iter()
        .map(|(stroke_id, values)| FeatureRow {
            drawing_id: image.id.clone(),
            stroke_id,
            artist: image.artist_label.clone().unwrap_or_default(),
            is_fake: image.is_fake,
            values,
        })
        .collect()
}

pub const STROKE_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StrokeDto {
    id: usize,
    closed: bool,
    skeleton: Vec<[i32; 2]>,
    boundary: Vec<[i32; 2]>,
    ribs_mm: Vec<f64>,
}

/// Versioned JSON holding a drawing's segmented strokes.
#[derive(Serialize, Deserialize)]
pub struct StrokeFile {
    pub version: u32,
    pub drawing_id: String,
    pub px_per_cm: f64,
    strokes: Vec<StrokeDto>,
}

/// Serialize segmented strokes to JSON.
pub fn save_strokes(path: &Path, image: &DrawingImage, strokes: &[Stroke]) -> Result<()> {
    let file = StrokeFile {
        version: STROKE_FILE_VERSION,
        drawing_id: image.id.clone(),
        px_per_cm: image.px_per_cm,
        strokes: strokes
            .iter()
            .map(|s| StrokeDto {
                id: s.id,
                closed: s.closed,
                skeleton: s.skeleton.iter().map(|p| [p.x, p.y]).collect(),
                boundary: s.boundary.iter().map(|p| [p.x, p.y]).collect(),
                ribs_mm: s.ribs_mm.clone(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load strokes saved by [`save_strokes`]. The `owned` pixel sets are not
/// persisted; loaded strokes carry their skeleton, boundary, and ribs.
pub fn load_strokes(path: &Path) -> Result<(String, f64, Vec<Stroke>)> {
    let text = std::fs::read_to_string(path)?;
    let file: StrokeFile = serde_json::from_str(&text)?;
    if file.version != STROKE_FILE_VERSION {
        return Err(Error::Config(format!(
            "unsupported stroke file version {} (expected {STROKE_FILE_VERSION})",
            file.version
        )));
    }
    let strokes = file
        .strokes
        .into_iter()
        .map(|d| Stroke {
            id: d.id,
            source_id: file.drawing_id.clone(),
            skeleton: d.skeleton.iter().map(|&[x, y]| Pixel::new(x, y)).collect(),
            closed: d.closed,
            boundary: d.boundary.iter().map(|&[x, y]| Pixel::new(x, y)).collect(),
            ribs_mm: d.ribs_mm,
            owned: Vec::new(),
        })
        .collect();
    Ok((file.drawing_id, file.px_per_cm, strokes))
}

/// Distinct overlay color for stroke `i`: hues stepped by the golden angle
/// at full saturation, so neighboring ids never share a hue.
fn stroke_color(i: usize) -> [u8; 3] {
    let hue = (i as f64 * 137.507_764) % 360.0;
    let h = hue / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 220.0) as u8, (g * 220.0) as u8, (b * 220.0) as u8]
}

/// Render a segmentation overlay PNG: the grayscale drawing with each
/// stroke's claimed ink pixels tinted a distinct color.
pub fn write_overlay(path: &Path, image: &DrawingImage, strokes: &[Stroke]) -> Result<()> {
    let (w, h) = (image.pixels.width(), image.pixels.height());
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for (p, &g) in image.pixels.iter_cells() {
        rgb.put_pixel(p.x as u32, p.y as u32, image::Rgb([g, g, g]));
    }
    for stroke in strokes {
        let color = stroke_color(stroke.id);
        for &p in &stroke.owned {
            rgb.put_pixel(p.x as u32, p.y as u32, image::Rgb(color));
        }
    }
    rgb.save(path)?;
    Ok(())
}

/// Write a grayscale drawing to PNG.
pub fn write_image_png(path: &Path, image: &DrawingImage) -> Result<()> {
    let (w, h) = (image.pixels.width(), image.pixels.height());
    let mut gray = image::GrayImage::new(w as u32, h as u32);
    for (p, &g) in image.pixels.iter_cells() {
        gray.put_pixel(p.x as u32, p.y as u32, image::Luma([g]));
    }
    gray.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn two_bar_image() -> DrawingImage {
        let mut pixels = Grid::filled(60, 40, 245u8);
        for x in 5..55 {
            for y in 8..11 {
                pixels.set(Pixel::new(x, y), 20);
            }
            for y in 28..31 {
                pixels.set(Pixel::new(x, y), 20);
            }
        }
        DrawingImage::new("bars", pixels, 40.0).unwrap()
    }

    #[test]
    fn manifest_roundtrip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("corpus.csv");
        let entries = vec![
            ManifestEntry {
                id: "d1".into(),
                path: "images/d1.png".into(),
                artist: "alice".into(),
                px_per_cm: 40.0,
                technique: Technique::PenInk,
                is_fake: false,
            },
            ManifestEntry {
                id: "d2".into(),
                path: "images/d2.png".into(),
                artist: "bob".into(),
                px_per_cm: 40.0,
                technique: Technique::Unknown,
                is_fake: true,
            },
        ];
        write_manifest(&manifest, &entries).unwrap();
        let loaded = read_manifest(&manifest).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].id, "d1");
        assert_eq!(loaded[0].path, dir.path().join("images/d1.png"));
        assert_eq!(loaded[0].technique, Technique::PenInk);
        assert!(loaded[1].is_fake);
        assert_eq!(loaded[1].artist, "bob");
    }

    #[test]
    fn manifest_missing_column_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("bad.csv");
        std::fs::write(&manifest, "id,path\n1,x.png\n").unwrap();
        match read_manifest(&manifest) {
            Err(Error::Config(msg)) => assert!(msg.contains("artist")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn two_bars_segment_into_two_strokes() {
        let image = two_bar_image();
        let strokes = process_drawing(&image, &SegmentationConfig::default()).unwrap();
        assert_eq!(strokes.len(), 2);
        let rows = feature_rows_for(&image, &strokes);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].values.len(), crate::features::FEATURE_DIM);
    }

    #[test]
    fn blank_image_yields_no_strokes() {
        let image =
            DrawingImage::new("blank", Grid::filled(30, 30, 255u8), 40.0).unwrap();
        let strokes = process_drawing(&image, &SegmentationConfig::default()).unwrap();
        assert!(strokes.is_empty());
    }

    #[test]
    fn stroke_file_roundtrips() {
        let image = two_bar_image();
        let strokes = process_drawing(&image, &SegmentationConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("strokes.json");
        save_strokes(&path, &image, &strokes).unwrap();
        let (id, ppcm, loaded) = load_strokes(&path).unwrap();
        assert_eq!(id, "bars");
        assert_eq!(ppcm, 40.0);
        assert_eq!(loaded.len(), strokes.len());
        for (a, b) in loaded.iter().zip(&strokes) {
            assert_eq!(a.skeleton, b.skeleton);
            assert_eq!(a.boundary, b.boundary);
            assert_eq!(a.ribs_mm, b.ribs_mm);
            assert_eq!(a.closed, b.closed);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"version\":1", "\"version\":3")).unwrap();
        assert!(load_strokes(&path).is_err());
    }

    #[test]
    fn overlay_png_has_image_dimensions_and_distinct_colors() {
        let image = two_bar_image();
        let strokes = process_drawing(&image, &SegmentationConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.png");
        write_overlay(&path, &image, &strokes).unwrap();
        let loaded = image::open(&path).unwrap().into_rgb8();
        assert_eq!(loaded.width(), 60);
        assert_eq!(loaded.height(), 40);
        // The two strokes must be painted in different colors.
        let c0 = stroke_color(0);
        let c1 = stroke_color(1);
        assert_ne!(c0, c1);
        let p0 = strokes[0].owned[0];
        let p1 = strokes[1].owned[0];
        assert_ne!(
            loaded.get_pixel(p0.x as u32, p0.y as u32),
            loaded.get_pixel(p1.x as u32, p1.y as u32)
        );
    }

    #[test]
    fn image_png_roundtrips_grayscale() {
        let image = two_bar_image();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drawing.png");
        write_image_png(&path, &image).unwrap();
        let loaded = image::open(&path).unwrap().into_luma8();
        assert_eq!(loaded.get_pixel(5, 8).0[0], 20);
        assert_eq!(loaded.get_pixel(0, 0).0[0], 245);
    }
}
