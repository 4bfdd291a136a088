//! Stroke-level attribution of line drawings.
//!
//! The library decomposes a scanned drawing into individual pen strokes and
//! asks, for every stroke, "whose hand drew this?". It covers the full
//! pipeline:
//!
//! 1. [`raster`] — grayscale ingest, binarization, thinning, and the exact
//!    Euclidean distance transform that records stroke half-widths.
//! 2. [`segment`] — a skeleton graph over endpoints and junctions, and a
//!    minimum bending-energy search that extracts one natural stroke at a
//!    time, repairing X and T crossings as it goes.
//! 3. [`features`] — 107 hand-crafted shape numbers per stroke: elliptic
//!    Fourier magnitudes, a reconstruction-error profile, curvature
//!    histograms, a thickness profile, and a length ratio.
//! 4. [`gru`] — a small gated recurrent network, trained from scratch with
//!    truncated backpropagation through time on sequences of grayscale
//!    patches sampled along each stroke.
//! 5. [`svm`] — kernel support vector machines trained by sequential minimal
//!    optimization, with Platt-scaled posteriors, one-vs-all arrangements,
//!    and a pairwise output-code arrangement for multiclass work.
//! 6. [`aggregate`] — turning per-stroke posteriors into one verdict per
//!    drawing, including a rejection rule for suspected imitations.
//! 7. [`eval`] — a synthetic corpus generator with per-pixel ground truth,
//!    leakage-free image-level folds, balanced sampling, and the evaluation
//!    harness that produces accuracy reports.
//! 8. [`pipeline`] — glue that runs a drawing (or a whole manifest) through
//!    segmentation, features, and patch sampling, plus the on-disk formats
//!    shared with the command-line tool.
//!
//! Every random decision flows from an explicit `u64` seed, so any result in
//! this crate can be reproduced bit-for-bit.

pub mod aggregate;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod grid;
pub mod gru;
pub mod pipeline;
pub mod raster;
pub mod segment;
pub mod svm;

#[cfg(doctest)]
mod book;

pub use error::{Error, Result};
pub use grid::{Grid, Pixel};
