//! Command-line frontend for the attribution pipeline.
//!
//! Six subcommands cover the workflow end to end: `segment` turns one image
//! into strokes, `features` tabulates per-stroke descriptors for a corpus,
//! `train` fits a classifier and saves a model bundle, `classify` scores
//! drawings with a saved bundle, `evaluate` runs the cross-validated
//! experiment, and `synth` renders a synthetic corpus with known ground
//! truth. Every command is deterministic given its inputs, config, and seed.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strokesig::aggregate::StrategyKind;
use strokesig::eval::{
    classify_drawing, evaluate_run, imitation_profile, load_bundle, load_run_config,
    preset_profiles, save_bundle, synthesize_drawing, train_bundle, write_report_csv,
    write_report_json, write_verdicts_csv, CanvasSpec, FeatureSet, RunConfig,
    SyntheticArtistProfile, VerdictRow,
};
use strokesig::features::write_features_csv;
use strokesig::pipeline::{
    feature_rows_for, load_entry, load_segmentation_config, process_drawing, read_manifest,
    save_strokes, write_image_png, write_manifest, write_overlay, ManifestEntry,
};
use strokesig::raster::{load_drawing, DrawingImage, DrawingMeta, Technique};
use strokesig::segment::SegmentationConfig;
use strokesig::svm::KernelKind;
use strokesig::{Error, Result};

#[derive(Parser)]
#[command(name = "strokesig", version, about = "Stroke-level attribution of line drawings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one drawing into strokes (JSON file + colored overlay PNG).
    Segment {
        /// Input image (PNG, JPEG, or TIFF; converted to grayscale).
        #[arg(long)]
        image: PathBuf,
        /// Scan resolution in pixels per centimeter.
        #[arg(long)]
        px_per_cm: f64,
        /// Segmentation config (TOML/JSON; a full run config also works).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for <id>.strokes.json and <id>.overlay.png.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Tabulate hand-crafted stroke features for a whole corpus.
    Features {
        /// Corpus manifest (CSV: id,path,artist,px_per_cm,technique,is_fake).
        #[arg(long)]
        manifest: PathBuf,
        /// Segmentation config (TOML/JSON; a full run config also works).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on every genuine drawing and save a model bundle.
    Train {
        /// Run config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's manifest path.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the feature set: handcrafted, gru, or combined.
        #[arg(long)]
        feature_set: Option<FeatureSet>,
        /// Override the kernel: rbf or poly.
        #[arg(long)]
        kernel: Option<KernelKind>,
        /// Output directory for model.json and the training verdict log.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score drawings with a trained model bundle.
    Classify {
        /// Model bundle from `train` (model.json).
        #[arg(long)]
        model: PathBuf,
        /// Single image to classify (needs --px-per-cm).
        #[arg(long, conflicts_with = "manifest", requires = "px_per_cm")]
        image: Option<PathBuf>,
        /// Scan resolution of --image, pixels per centimeter.
        #[arg(long, requires = "image")]
        px_per_cm: Option<f64>,
        /// Manifest of drawings to classify.
        #[arg(long, required_unless_present = "image")]
        manifest: Option<PathBuf>,
        /// Report only this aggregation strategy.
        #[arg(long)]
        strategy: Option<StrategyKind>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross-validated evaluation and write reports.
    Evaluate {
        /// Run config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's manifest path.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the feature set: handcrafted, gru, or combined.
        #[arg(long)]
        feature_set: Option<FeatureSet>,
        /// Override the kernel: rbf or poly.
        #[arg(long)]
        kernel: Option<KernelKind>,
        /// Output directory for report.json, report.csv, and verdicts.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Render a synthetic corpus (images + manifest) with known hands.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated preset profile names (default: every preset).
        #[arg(long, value_delimiter = ',')]
        profiles: Vec<String>,
        /// Genuine drawings per artist.
        #[arg(long, default_value_t = 30)]
        per_artist: usize,
        /// Base seed; each drawing derives its own from it.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Canvas resolution override (physical size stays the same).
        #[arg(long)]
        px_per_cm: Option<f64>,
        /// Imitation drawings per ordered profile pair, labeled as the
        /// claimed artist and marked fake.
        #[arg(long, default_value_t = 0)]
        imitations: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Segment { image, px_per_cm, config, out } => {
            cmd_segment(&image, px_per_cm, config.as_deref(), &out)
        }
        Command::Features { manifest, config, out } => {
            cmd_features(&manifest, config.as_deref(), &out)
        }
        Command::Train { config, manifest, seed, feature_set, kernel, out } => {
            let mut cfg = load_run_config(&config)?;
            apply_overrides(&mut cfg, manifest, seed, feature_set, kernel);
            cmd_train(&cfg, &out)
        }
        Command::Classify { model, image, px_per_cm, manifest, strategy, out } => {
            cmd_classify(&model, image, px_per_cm, manifest, strategy, out)
        }
        Command::Evaluate { config, manifest, seed, feature_set, kernel, out } => {
            let mut cfg = load_run_config(&config)?;
            apply_overrides(&mut cfg, manifest, seed, feature_set, kernel);
            cmd_evaluate(&cfg, &out)
        }
        Command::Synth { out, profiles, per_artist, seed, px_per_cm, imitations } => {
            cmd_synth(&out, &profiles, per_artist, seed, px_per_cm, imitations)
        }
    }
}

fn apply_overrides(
    cfg: &mut RunConfig,
    manifest: Option<PathBuf>,
    seed: Option<u64>,
    feature_set: Option<FeatureSet>,
    kernel: Option<KernelKind>,
) {
    if let Some(m) = manifest {
        cfg.manifest = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(f) = feature_set {
        cfg.feature_set = f;
    }
    if let Some(k) = kernel {
        cfg.kernel = k;
    }
}

/// Accept either a segmentation-only config or a full run config (whose
/// segmentation knobs are then used). No file means defaults.
fn segmentation_from(config: Option<&Path>) -> Result<SegmentationConfig> {
    let Some(path) = config else {
        return Ok(SegmentationConfig::default());
    };
    match load_segmentation_config(path) {
        Ok(seg) => Ok(seg),
        Err(seg_err @ Error::Config(_)) => {
            load_run_config(path).map(|c| c.segmentation()).map_err(|_| seg_err)
        }
        Err(e) => Err(e),
    }
}

fn cmd_segment(image: &Path, px_per_cm: f64, config: Option<&Path>, out: &Path) -> Result<()> {
    let seg = segmentation_from(config)?;
    let drawing = load_drawing(image, px_per_cm, DrawingMeta::default())?;
    let strokes = process_drawing(&drawing, &seg)?;
    std::fs::create_dir_all(out)?;
    let stroke_path = out.join(format!("{}.strokes.json", drawing.id));
    let overlay_path = out.join(format!("{}.overlay.png", drawing.id));
    save_strokes(&stroke_path, &drawing, &strokes)?;
    write_overlay(&overlay_path, &drawing, &strokes)?;
    println!("{} strokes -> {}", strokes.len(), stroke_path.display());
    println!("overlay -> {}", overlay_path.display());
    Ok(())
}

fn cmd_features(manifest: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let seg = segmentation_from(config)?;
    let entries = read_manifest(manifest)?;
    let mut rows = Vec::new();
    for entry in &entries {
        let image = load_entry(entry)?;
        let strokes = process_drawing(&image, &seg)?;
        rows.extend(feature_rows_for(&image, &strokes));
    }
    write_features_csv(out, &rows)?;
    println!("{} stroke rows from {} drawings -> {}", rows.len(), entries.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (bundle, rows) = train_bundle(cfg)?;
    std::fs::create_dir_all(out)?;
    let model_path = out.join("model.json");
    save_bundle(&model_path, &bundle)?;
    std::fs::write(out.join("train_verdicts.json"), serde_json::to_string_pretty(&rows)?)?;
    write_verdicts_csv(&out.join("train_verdicts.csv"), &rows)?;

    println!("classes: {}", bundle.classes.join(", "));
    for kind in StrategyKind::ALL {
        let name = kind.to_string();
        let of_kind: Vec<&VerdictRow> = rows.iter().filter(|r| r.strategy == name).collect();
        if of_kind.is_empty() {
            continue;
        }
        let hits = of_kind.iter().filter(|r| r.winner == r.truth).count();
        println!(
            "training accuracy [{name}]: {:.1}% ({hits}/{})",
            100.0 * hits as f64 / of_kind.len() as f64,
            of_kind.len()
        );
    }
    println!("model -> {}", model_path.display());
    Ok(())
}

fn cmd_classify(
    model: &Path,
    image: Option<PathBuf>,
    px_per_cm: Option<f64>,
    manifest: Option<PathBuf>,
    strategy: Option<StrategyKind>,
    out: Option<PathBuf>,
) -> Result<()> {
    let bundle = load_bundle(model)?;
    let images: Vec<DrawingImage> = match (image, manifest) {
        (Some(img), _) => {
            let ppc = px_per_cm.expect("flag parser enforces --px-per-cm with --image");
            vec![load_drawing(&img, ppc, DrawingMeta::default())?]
        }
        (None, Some(man)) => {
            read_manifest(&man)?.iter().map(load_entry).collect::<Result<_>>()?
        }
        (None, None) => unreachable!("flag parser requires --image or --manifest"),
    };

    let mut drawings = Vec::new();
    for drawing in &images {
        match classify_drawing(&bundle, drawing) {
            Ok(mut scores) => {
                if let Some(kind) = strategy {
                    scores.verdicts.retain(|v| v.strategy == kind);
                }
                let verdicts: Vec<serde_json::Value> = scores
                    .verdicts
                    .iter()
                    .map(|v| {
                        serde_json::json!({
                            "strategy": v.strategy.to_string(),
                            "winner": bundle.classes[v.winner],
                            "scores": v.scores,
                            "n_strokes_counted": v.n_strokes_counted,
                        })
                    })
                    .collect();
                drawings.push(serde_json::json!({
                    "drawing_id": scores.drawing_id,
                    "n_strokes": scores.n_strokes,
                    "strokes": scores.strokes,
                    "verdicts": verdicts,
                }));
            }
            Err(Error::Empty(msg)) => {
                log::warn!("{msg}; reporting no verdicts for it");
                drawings.push(serde_json::json!({
                    "drawing_id": drawing.id,
                    "n_strokes": 0,
                    "strokes": [],
                    "verdicts": [],
                }));
            }
            Err(e) => return Err(e),
        }
    }
    let report = serde_json::json!({ "classes": bundle.classes, "drawings": drawings });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(&path, &text)?;
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = evaluate_run(cfg)?;
    std::fs::create_dir_all(out)?;
    write_report_json(&out.join("report.json"), &report)?;
    write_report_csv(&out.join("report.csv"), &report)?;
    write_verdicts_csv(&out.join("verdicts.csv"), &report.verdicts)?;

    println!(
        "{} drawings, {} strokes, {} classes [{} features, {} kernel, {} folds]",
        report.n_drawings,
        report.n_strokes,
        report.classes.len(),
        report.feature_set,
        report.kernel,
        report.folds.len()
    );
    println!(
        "stroke accuracy (balanced test): {:.2}% +/- {:.2}",
        100.0 * report.stroke_test_mean,
        100.0 * report.stroke_test_std
    );
    for (name, acc) in &report.drawing_accuracy {
        println!("drawing accuracy [{name}]: {:.2}%", 100.0 * acc);
    }
    if let Some(fake) = &report.fake {
        for (target, rate) in &fake.rejection_rate {
            println!(
                "imitation rejection [{target}]: {:.1}% of {} fakes",
                100.0 * rate,
                fake.n_fake_drawings
            );
        }
    }
    for row in &report.ablation {
        println!("ablation [{}]: stroke {:.2}%", row.blocks, 100.0 * row.stroke_test_mean);
    }
    println!("reports -> {}", out.display());
    Ok(())
}

fn cmd_synth(
    out: &Path,
    profiles: &[String],
    per_artist: usize,
    seed: u64,
    px_per_cm: Option<f64>,
    imitations: usize,
) -> Result<()> {
    let presets = preset_profiles();
    let chosen: Vec<SyntheticArtistProfile> = if profiles.is_empty() {
        presets.clone()
    } else {
        profiles
            .iter()
            .map(|name| {
                presets.iter().find(|p| &p.name == name).cloned().ok_or_else(|| {
                    let known: Vec<&str> = presets.iter().map(|p| p.name.as_str()).collect();
                    Error::Config(format!(
                        "unknown profile '{name}' (available: {})",
                        known.join(", ")
                    ))
                })
            })
            .collect::<Result<_>>()?
    };
    {
        let mut seen = std::collections::HashSet::new();
        for p in &chosen {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("profile '{}' listed twice", p.name)));
            }
        }
    }

    let mut canvas = CanvasSpec::default();
    if let Some(ppc) = px_per_cm {
        if !(ppc > 0.0) || !ppc.is_finite() {
            return Err(Error::Config(format!("px_per_cm must be positive, got {ppc}")));
        }
        let scale = ppc / canvas.px_per_cm;
        canvas.width_px = ((canvas.width_px as f64 * scale).round() as usize).max(1);
        canvas.height_px = ((canvas.height_px as f64 * scale).round() as usize).max(1);
        canvas.px_per_cm = ppc;
    }

    std::fs::create_dir_all(out)?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (pi, profile) in chosen.iter().enumerate() {
        for k in 0..per_artist {
            let id = format!("{}-{k:03}", profile.name);
            let d = synthesize_drawing(profile, &canvas, &id, seed + 1_000 * pi as u64 + k as u64)?;
            write_image_png(&out.join(format!("{id}.png")), &d.image)?;
            entries.push(ManifestEntry {
                id: id.clone(),
                path: PathBuf::from(format!("{id}.png")),
                artist: profile.name.clone(),
                px_per_cm: canvas.px_per_cm,
                technique: Technique::Unknown,
                is_fake: false,
            });
        }
    }
    let n_genuine = entries.len();

    let mut pair_idx = 0u64;
    for shape in &chosen {
        for dynamics in &chosen {
            if shape.name == dynamics.name {
                continue;
            }
            let fake = imitation_profile(shape, dynamics);
            for k in 0..imitations {
                let id = format!("{}-{k:03}", fake.name);
                let d = synthesize_drawing(
                    &fake,
                    &canvas,
                    &id,
                    seed + 50_000 + 1_000 * pair_idx + k as u64,
                )?;
                write_image_png(&out.join(format!("{id}.png")), &d.image)?;
                entries.push(ManifestEntry {
                    id: id.clone(),
                    path: PathBuf::from(format!("{id}.png")),
                    artist: shape.name.clone(),
                    px_per_cm: canvas.px_per_cm,
                    technique: Technique::Unknown,
                    is_fake: true,
                });
            }
            pair_idx += 1;
        }
    }

    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    println!(
        "{} drawings ({} genuine, {} imitation) -> {}",
        entries.len(),
        n_genuine,
        entries.len() - n_genuine,
        out.display()
    );
    println!("manifest -> {}", manifest.display());
    Ok(())
}
