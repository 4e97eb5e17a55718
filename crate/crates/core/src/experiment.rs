//! The channel × tiling ablation.
//!
//! Trains one linear model per input mode on the training split, then maps
//! every validation scene with overlapping and with naive tiling. Overall
//! accuracy is pooled over all validation pixels; boundary accuracy is
//! measured in a band around the seams of the naive tiling, where a model
//! without context overlap sees truncated neighbourhoods.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{train_linear, LinearBackend, LinearModel, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::evaluate::{boundary_confusion, confusion, overall_accuracy, ConfusionMatrix};
use crate::pipeline::{infer_map, InferOptions, StackSource};
use crate::spectral::{build_channel_stack, Mode};
use crate::synth::{Corpus, Split};
use crate::tiling::{plan_tiles, TileSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub train: TrainConfig,
    /// Overlapping inference spec; its tile size also sets the naive spec.
    pub overlap: TileSpec,
    pub workers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let train = TrainConfig::desk_scale();
        AblationConfig {
            overlap: train.tile,
            train,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tiling {
    Overlap,
    NoOverlap,
}

impl std::fmt::Display for Tiling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tiling::Overlap => "overlap",
            Tiling::NoOverlap => "no-overlap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub tiling: Tiling,
    pub overall_accuracy: f64,
    pub boundary_accuracy: f64,
    pub pixels: u64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub train_logs: Vec<TrainLog>,
    /// Width of the seam band used for boundary accuracy.
    pub band: usize,
    pub validation_scenes: Vec<String>,
    pub seconds: f64,
}

impl AblationResult {
    pub fn row(&self, mode: Mode, tiling: Tiling) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.tiling == tiling)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("mode  tiling      OA       boundary OA  pixels\n");
        for r in &self.rows {
            writeln!(
                out,
                "{:<5} {:<11} {:>7.4}  {:>11.4}  {}",
                r.mode.to_string(),
                r.tiling.to_string(),
                r.overall_accuracy,
                r.boundary_accuracy,
                r.pixels
            )
            .unwrap();
        }
        out
    }
}

/// Validation-split accuracy of `model` under one tiling.
pub fn evaluate_model(
    corpus: &Corpus,
    model: Arc<LinearModel>,
    mode: Mode,
    spec: TileSpec,
    seam_tile: usize,
    band: usize,
    workers: usize,
) -> Result<(ConfusionMatrix, ConfusionMatrix)> {
    let k = corpus.manifest.class_scheme.len();
    let backend = LinearBackend::new(model);
    let mut whole = ConfusionMatrix::new(k);
    let mut seams = ConfusionMatrix::new(k);
    for (_, entry) in corpus.manifest.scenes_in(Split::Validation) {
        let (grid, truth) = corpus.load_scene(entry)?;
        let stack = build_channel_stack(&grid, mode, corpus.manifest.stats_for(entry)?)?;
        let source = StackSource::new(stack, grid.geotransform());
        let (pred, _) = infer_map(
            &source,
            &backend,
            spec,
            InferOptions {
                workers,
                progress: false,
            },
        )?;
        whole.merge(&confusion(&pred, &truth, k)?)?;
        let naive = plan_tiles(
            truth.width(),
            truth.height(),
            TileSpec::no_overlap(seam_tile)?,
        )?;
        seams.merge(&boundary_confusion(&pred, &truth, &naive, band, k)?)?;
    }
    Ok((whole, seams))
}

/// Runs the 2×2 ablation on `corpus`.
pub fn run_ablation(corpus: &Corpus, cfg: &AblationConfig) -> Result<AblationResult> {
    let started = Instant::now();
    let validation: Vec<String> = corpus
        .manifest
        .scenes_in(Split::Validation)
        .map(|(_, e)| e.image.clone())
        .collect();
    if validation.is_empty() {
        return Err(Error::Config("corpus has no validation scenes".into()));
    }
    let tile = cfg.overlap.tile();
    let naive = TileSpec::no_overlap(tile)?;
    let band = cfg.overlap.pad().max(1);

    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for mode in [Mode::Lu3, Mode::Lu6] {
        let (model, log) = train_linear(corpus, mode, &cfg.train)?;
        let model = Arc::new(model);
        logs.push(log);
        for (tiling, spec) in [(Tiling::Overlap, cfg.overlap), (Tiling::NoOverlap, naive)] {
            let (whole, seams) =
                evaluate_model(corpus, model.clone(), mode, spec, tile, band, cfg.workers)?;
            rows.push(AblationRow {
                mode,
                tiling,
                overall_accuracy: overall_accuracy(&whole)?,
                boundary_accuracy: overall_accuracy(&seams)?,
                pixels: whole.total(),
                confusion: whole,
            });
        }
    }
    Ok(AblationResult {
        rows,
        train_logs: logs,
        band,
        validation_scenes: validation,
        seconds: started.elapsed().as_secs_f64(),
    })
}
