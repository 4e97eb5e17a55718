//! Command-line driver: `landmap synth | slice | train | infer | eval | ablation`.
//!
//! Each subcommand resolves an [`ExperimentConfig`] (file, then flag
//! overrides) and writes a JSON summary that embeds the resolved config.

mod config;

use std::ffi::OsString;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use landmap::backend::{
    make_external_backend, make_oracle_backend, train_linear, Backend, ExternalOptions,
    LinearBackend, LinearModel,
};
use landmap::classes::{export_class_png, read_class_map, ClassScheme};
use landmap::evaluate::{boundary_confusion, confusion_streamed, overall_accuracy, report};
use landmap::experiment::{run_ablation, AblationConfig};
use landmap::pipeline::{ChannelSource, InferenceJob, RasterSource};
use landmap::raster::{write_raster, RasterGrid, Samples};
use landmap::spectral::Mode;
use landmap::synth::{generate_corpus, Corpus, MANIFEST_FILE};
use landmap::tiling::{plan_tiles, TileSpec};
use landmap::{Error, ErrorKind};

pub use config::{BackendChoice, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "landmap",
    version,
    about = "Overlap-tiled land-use mapping of large rasters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config (JSON); flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Dump the tile plan of an image, optionally with every padded tile.
    Slice {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        spec: SpecFlags,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        /// Also write each padded tile as an .rstr file.
        #[arg(long)]
        tiles: bool,
    },
    /// Train a linear model on a corpus' training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map an image tile by tile.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Use ground truth as the classifier.
        #[arg(long, conflicts_with_all = ["model", "backend_cmd"])]
        oracle: Option<PathBuf>,
        /// Child process speaking the tile protocol, as one shell-style string.
        #[arg(long, conflicts_with = "model")]
        backend_cmd: Option<String>,
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        no_overlap: bool,
        #[command(flatten)]
        spec: SpecFlags,
        /// Take normalization statistics from this corpus manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_png: bool,
        #[arg(long)]
        progress: bool,
    },
    /// Compare a predicted map against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        band: Option<usize>,
        /// Tile size whose naive seams define the boundary band.
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// LU3/LU6 x overlap/no-overlap comparison on a corpus.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct SpecFlags {
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    pad_mode: Option<String>,
}

impl SpecFlags {
    fn apply(&self, base: TileSpec) -> landmap::Result<TileSpec> {
        let pad_mode = match self.pad_mode.as_deref() {
            None => base.pad_mode(),
            Some(s) => serde_json::from_value(json!(s))
                .map_err(|_| Error::Config(format!("unknown pad mode {s:?}")))?,
        };
        let tile = self.tile.unwrap_or(base.tile());
        let stride = match (self.stride, self.tile) {
            (Some(s), _) => s,
            (None, Some(t)) => t / 2,
            (None, None) => base.stride(),
        };
        TileSpec::new(tile, stride, pad_mode)
    }
}

/// Runs one invocation and returns its exit code. Diagnostics go to stderr
/// as a single line.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("landmap: error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Io => EXIT_IO,
        ErrorKind::Backend => EXIT_BACKEND,
        ErrorKind::Validation => EXIT_VALIDATION,
    }
}

fn resolve(common: &Common) -> landmap::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> landmap::Result<()> {
    match command {
        Command::Synth {
            common,
            out,
            scenes,
            size,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(n) = scenes {
                cfg.scenes = n;
            }
            if let Some(s) = size {
                cfg.scene.width = s;
                cfg.scene.height = s;
            }
            cfg.validate()?;
            let manifest = generate_corpus(&cfg.scene, cfg.scenes, cfg.seed, &cfg.output_dir)?;
            let manifest_path = cfg.output_dir.join(MANIFEST_FILE);
            let summary = json!({
                "command": "synth",
                "manifest": manifest_path,
                "manifest_sha256": sha256_file(&manifest_path)?,
                "scenes": manifest.scenes.len(),
                "config": cfg,
            });
            emit(&summary, &cfg.output_dir.join("synth_summary.json"))
        }
        Command::Slice {
            common,
            image,
            spec,
            mode,
            out,
            tiles,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.tiling = spec.apply(cfg.tiling)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let source = RasterSource::open(&image, cfg.mode, None)?;
            let plan = plan_tiles(source.width(), source.height(), cfg.tiling)?;
            mkdir(&out)?;
            let dump = serde_json::to_string_pretty(&plan.describe())?;
            write_file(&out.join("plan.json"), dump.as_bytes())?;
            if tiles {
                for k in 0..plan.tile_count() {
                    let (row, col) = plan.row_col(k)?;
                    let stack = source.tile(plan.tile_window(k)?, cfg.tiling.pad_mode())?;
                    write_raster(
                        &stack_grid(&stack, &source)?,
                        out.join(format!("tile_r{row:03}_c{col:03}.rstr")),
                    )?;
                }
            }
            let summary = json!({
                "command": "slice",
                "image": image,
                "tiles": plan.tile_count(),
                "config": cfg,
            });
            emit(&summary, &out.join("slice_summary.json"))
        }
        Command::Train {
            common,
            manifest,
            mode,
            epochs,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let corpus = Corpus::open(&manifest)?;
            let (model, log) = train_linear(&corpus, cfg.mode, &cfg.train)?;
            model.save(&out)?;
            let summary = json!({
                "command": "train",
                "manifest": manifest,
                "model": out,
                "model_sha256": sha256_file(&out)?,
                "log": log,
                "config": cfg,
            });
            emit(&summary, &sibling(&out, "log.json"))
        }
        Command::Infer {
            common,
            image,
            model,
            mode,
            oracle,
            backend_cmd,
            pool,
            classes,
            no_overlap,
            spec,
            manifest,
            out,
            no_png,
            progress,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cfg.tiling = spec.apply(cfg.tiling)?;
            if no_overlap {
                cfg.tiling =
                    TileSpec::no_overlap(cfg.tiling.tile())?.with_pad_mode(cfg.tiling.pad_mode());
            }
            if let Some(m) = model {
                cfg.backend = BackendChoice::Linear { model: Some(m) };
            } else if let Some(t) = oracle {
                cfg.backend = BackendChoice::Oracle { truth: Some(t) };
            } else if let Some(cmd) = backend_cmd {
                let (pool0, timeout) = match &cfg.backend {
                    BackendChoice::External {
                        pool, timeout_s, ..
                    } => (*pool, *timeout_s),
                    _ => (1, 60.0),
                };
                cfg.backend = BackendChoice::External {
                    command: cmd.split_whitespace().map(String::from).collect(),
                    pool: pool0,
                    timeout_s: timeout,
                };
            }
            if let (Some(p), BackendChoice::External { pool, .. }) = (pool, &mut cfg.backend) {
                *pool = p;
            }
            cfg.validate()?;
            let k = classes.unwrap_or(ClassScheme::land_use().len());
            let backend = build_backend(&cfg, k)?;

            let norm_stats = match &manifest {
                Some(m) => Some(stats_from_manifest(m, &image)?),
                None => None,
            };
            let job = InferenceJob {
                image: image.clone(),
                mode: cfg.mode,
                spec: cfg.tiling,
                workers: cfg.workers,
                output: out.clone(),
                norm_stats,
            };
            let run = job.run(backend.as_ref(), progress)?;
            drop(backend);
            let mut png = None;
            if !no_png {
                let scheme = ClassScheme::land_use();
                let map = read_class_map(&out)?;
                if map.validate(scheme.len()).is_ok() {
                    let path = out.with_extension("png");
                    export_class_png(&map, &scheme, &path)?;
                    png = Some(path);
                }
            }
            let summary = json!({
                "command": "infer",
                "image": image,
                "output": out,
                "output_sha256": sha256_file(&out)?,
                "png": png,
                "run": run,
                "config": cfg,
            });
            emit(&summary, &sibling(&out, "summary.json"))
        }
        Command::Eval {
            common,
            pred,
            truth,
            band,
            tile,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(b) = band {
                cfg.band = b;
            }
            if let Some(t) = tile {
                cfg.tiling = TileSpec::new(t, t / 2, cfg.tiling.pad_mode())?;
            }
            let scheme = ClassScheme::land_use();
            let k = scheme.len();
            let cm = confusion_streamed(&pred, &truth, k, 256)?;
            let pred_map = read_class_map(&pred)?;
            let truth_map = read_class_map(&truth)?;
            let seams = plan_tiles(
                truth_map.width(),
                truth_map.height(),
                TileSpec::no_overlap(cfg.tiling.tile())?,
            )?;
            let boundary = boundary_confusion(&pred_map, &truth_map, &seams, cfg.band, k)?;
            let metadata = json!({
                "pred": pred,
                "truth": truth,
                "boundary_accuracy": overall_accuracy(&boundary).ok(),
                "boundary_pixels": boundary.total(),
                "config": cfg,
            });
            let r = report(&cm, &scheme, metadata, &out)?;
            println!(
                "{}",
                serde_json::to_string(&json!({
                    "command": "eval",
                    "overall_accuracy": r.overall_accuracy,
                    "report": out,
                }))?
            );
            Ok(())
        }
        Command::Ablation {
            common,
            manifest,
            out,
        } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            let corpus = Corpus::open(&manifest)?;
            let ab = AblationConfig {
                train: cfg.train.clone(),
                overlap: cfg.tiling,
                workers: cfg.workers,
            };
            let result = run_ablation(&corpus, &ab)?;
            print!("{}", result.table());
            let out = out.unwrap_or_else(|| corpus.dir.join("ablation.json"));
            let summary = json!({
                "command": "ablation",
                "manifest": manifest,
                "result": result,
                "config": cfg,
            });
            write_file(&out, serde_json::to_string_pretty(&summary)?.as_bytes())
        }
    }
}

fn build_backend(cfg: &ExperimentConfig, k: usize) -> landmap::Result<Box<dyn Backend>> {
    Ok(match &cfg.backend {
        BackendChoice::Linear { model } => {
            let path = model
                .as_ref()
                .ok_or_else(|| Error::Config("linear backend needs --model".into()))?;
            let model = LinearModel::load(path)?;
            if model.channel_names() != cfg.mode.channels() {
                return Err(Error::Config(format!(
                    "model was trained on {:?}, mode {} supplies {:?}",
                    model.channel_names(),
                    cfg.mode,
                    cfg.mode.channels()
                )));
            }
            Box::new(LinearBackend::new(Arc::new(model)))
        }
        BackendChoice::Oracle { truth } => {
            let path = truth
                .as_ref()
                .ok_or_else(|| Error::Config("oracle backend needs --oracle <truth map>".into()))?;
            Box::new(make_oracle_backend(Arc::new(read_class_map(path)?), k)?)
        }
        BackendChoice::External {
            command,
            pool,
            timeout_s,
        } => Box::new(make_external_backend(
            command,
            cfg.mode.channel_count(),
            ExternalOptions {
                tile: cfg.tiling.tile(),
                num_classes: k,
                timeout: Duration::from_secs_f64(*timeout_s),
                pool_size: *pool,
                record_transcript: false,
            },
        )?),
    })
}

fn stats_from_manifest(
    manifest: &Path,
    image: &Path,
) -> landmap::Result<landmap::spectral::NormStats> {
    let corpus = Corpus::open(manifest)?;
    let name = image
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let entry = corpus
        .manifest
        .scenes
        .iter()
        .find(|e| e.image == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "{} is not a scene of {}",
                image.display(),
                manifest.display()
            ))
        })?;
    Ok(corpus.manifest.stats_for(entry)?.clone())
}

fn stack_grid(
    stack: &landmap::spectral::ChannelStack,
    source: &RasterSource,
) -> landmap::Result<RasterGrid> {
    let mut data = Vec::with_capacity(stack.width() * stack.height() * stack.channel_count());
    for p in stack.planes() {
        data.extend_from_slice(p);
    }
    RasterGrid::new(
        stack.width() as u64,
        stack.height() as u64,
        stack.names().iter().map(|c| c.name().to_string()).collect(),
        None,
        source.geotransform(),
        Samples::F32(data),
    )
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn mkdir(dir: &Path) -> landmap::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> landmap::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Prints the summary on stdout and archives it next to the outputs.
fn emit(summary: &serde_json::Value, path: &Path) -> landmap::Result<()> {
    println!("{}", serde_json::to_string(summary)?);
    write_file(path, serde_json::to_string_pretty(summary)?.as_bytes())
}

pub fn sha256_file(path: &Path) -> landmap::Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
