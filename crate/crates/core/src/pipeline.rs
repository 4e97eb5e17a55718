//! Tiled inference and center-crop stitching.
//!
//! Workers claim tile indices from a shared counter, read only the source
//! footprint of their tile, classify it and crop the center window. A single
//! writer owns the output and applies center windows as they arrive, so
//! peak memory depends on the worker count and tile size, not on the image.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{predict_tile, Backend, TileContext};
use crate::classes::{class_map_header, ClassMap, IGNORE};
use crate::error::{Error, Result};
use crate::raster::{GeoTransform, RasterReader, RasterWriter, Samples, Window};
use crate::spectral::{
    build_channel_stack, compute_norm_stats_streaming, is_scene_grid, stack_from_channel_grid,
    ChannelStack, Mode, NormStats,
};
use crate::synth::{NORM_HIGH_PCT, NORM_LOW_PCT};
use crate::tiling::{
    extract_stack_window, plan_tiles, source_footprint, PadMode, TilePlan, TileSpec,
};

/// Anything that can produce padded channel-stack tiles of one image.
pub trait ChannelSource: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn geotransform(&self) -> GeoTransform;
    fn channel_count(&self) -> usize;
    /// Channel stack for `window` (source coordinates, may extend past the
    /// extent), padded with `mode`.
    fn tile(&self, window: Window, mode: PadMode) -> Result<ChannelStack>;
}

/// A channel stack already in memory.
pub struct StackSource {
    stack: ChannelStack,
    geotransform: GeoTransform,
}

impl StackSource {
    pub fn new(stack: ChannelStack, geotransform: GeoTransform) -> Self {
        StackSource {
            stack,
            geotransform,
        }
    }
}

impl ChannelSource for StackSource {
    fn width(&self) -> usize {
        self.stack.width()
    }
    fn height(&self) -> usize {
        self.stack.height()
    }
    fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }
    fn channel_count(&self) -> usize {
        self.stack.channel_count()
    }
    fn tile(&self, window: Window, mode: PadMode) -> Result<ChannelStack> {
        let region = Window::new(0, 0, self.stack.width(), self.stack.height());
        extract_stack_window(&self.stack, region, region.w, region.h, window, mode)
    }
}

/// Reads tiles straight from an `.rstr` file.
///
/// Raw `B,G,R,NIR` scenes are normalized with the given statistics (or
/// statistics computed in one streaming pass); grids that already carry
/// classifier channels are used as stored.
pub struct RasterSource {
    reader: RasterReader,
    mode: Mode,
    stats: Option<NormStats>,
}

impl RasterSource {
    pub fn open(path: impl AsRef<Path>, mode: Mode, stats: Option<NormStats>) -> Result<Self> {
        let reader = RasterReader::open(path)?;
        let stats = if is_scene_grid(&reader.header().band_names) {
            match stats {
                Some(s) => Some(s),
                None => Some(compute_norm_stats_streaming(
                    &reader,
                    NORM_LOW_PCT,
                    NORM_HIGH_PCT,
                )?),
            }
        } else {
            None
        };
        Ok(RasterSource {
            reader,
            mode,
            stats,
        })
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    fn stack(&self, region: Window) -> Result<ChannelStack> {
        let grid = self.reader.read_window(region)?;
        match &self.stats {
            Some(stats) => build_channel_stack(&grid, self.mode, stats),
            None => stack_from_channel_grid(&grid, self.mode),
        }
    }
}

impl ChannelSource for RasterSource {
    fn width(&self) -> usize {
        self.reader.header().width as usize
    }
    fn height(&self) -> usize {
        self.reader.header().height as usize
    }
    fn geotransform(&self) -> GeoTransform {
        self.reader.header().geotransform
    }
    fn channel_count(&self) -> usize {
        self.mode.channel_count()
    }
    fn tile(&self, window: Window, mode: PadMode) -> Result<ChannelStack> {
        let (w, h) = (self.width(), self.height());
        match source_footprint(window, w, h, mode) {
            Some(region) => {
                let stack = self.stack(region)?;
                extract_stack_window(&stack, region, w, h, window, mode)
            }
            None => {
                // nothing but zero fill: shape a template from one pixel
                let one = self.stack(Window::new(0, 0, 1, 1))?;
                let n = window.area();
                let planes = vec![vec![0.0; n]; one.channel_count()];
                one.with_planes(window.w, window.h, planes, Some(vec![false; n]))
            }
        }
    }
}

/// Receives center windows from the stitcher.
pub trait CenterSink {
    fn put(&mut self, window: Window, labels: &[u8]) -> Result<()>;
}

/// Collects the stitched map in memory.
pub struct MapSink {
    map: ClassMap,
}

impl MapSink {
    pub fn new(width: usize, height: usize, geotransform: GeoTransform) -> Self {
        MapSink {
            map: ClassMap::filled(width, height, geotransform, IGNORE),
        }
    }

    pub fn into_map(self) -> ClassMap {
        self.map
    }
}

impl CenterSink for MapSink {
    fn put(&mut self, window: Window, labels: &[u8]) -> Result<()> {
        let width = self.map.width();
        if !window.fits_within(width as u64, self.map.height() as u64)
            || labels.len() != window.area()
        {
            return Err(Error::ShapeMismatch(format!(
                "center window {window} does not fit the map"
            )));
        }
        let out = self.map.labels_mut();
        for (r, row) in labels.chunks_exact(window.w).enumerate() {
            let start = (window.y0 as usize + r) * width + window.x0 as usize;
            out[start..start + window.w].copy_from_slice(row);
        }
        Ok(())
    }
}

/// Writes center windows into a preallocated class-map file.
pub struct FileSink {
    writer: RasterWriter,
}

impl FileSink {
    pub fn create(
        path: impl AsRef<Path>,
        width: usize,
        height: usize,
        geotransform: GeoTransform,
    ) -> Result<Self> {
        let writer = RasterWriter::create(path, class_map_header(width, height, geotransform))?;
        Ok(FileSink { writer })
    }

    pub fn finish(self) -> Result<()> {
        self.writer.finish()
    }
}

impl CenterSink for FileSink {
    fn put(&mut self, window: Window, labels: &[u8]) -> Result<()> {
        self.writer
            .write_window(window, &Samples::U8(labels.to_vec()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferOptions {
    pub workers: usize,
    /// Print one progress line per finished tile on standard error.
    #[serde(default)]
    pub progress: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            workers: 1,
            progress: false,
        }
    }
}

/// Machine-readable outcome of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tiles: usize,
    pub seconds: f64,
    pub px_per_s: f64,
    pub width: usize,
    pub height: usize,
    pub workers: usize,
    /// Process resident-set high-water mark, where the OS reports it.
    pub peak_rss_bytes: Option<u64>,
}

/// Center crop of a full tile's labels, as `(center window, labels)`.
fn crop_center(plan: &TilePlan, k: usize, labels: &[u8]) -> Result<(Window, Vec<u8>)> {
    let tile = plan.tile_window(k)?;
    let center = plan.center_window(k)?;
    if labels.len() != tile.area() {
        let (row, col) = plan.row_col(k)?;
        return Err(Error::ShapeMismatch(format!(
            "tile ({row},{col}) has {} labels, expected {}",
            labels.len(),
            tile.area()
        )));
    }
    let (dx, dy) = (
        (center.x0 - tile.x0) as usize,
        (center.y0 - tile.y0) as usize,
    );
    let mut out = Vec::with_capacity(center.area());
    for r in 0..center.h {
        let start = (dy + r) * tile.w + dx;
        out.extend_from_slice(&labels[start..start + center.w]);
    }
    Ok((center, out))
}

/// Applies center windows, enforcing one prediction per tile.
struct Stitcher<'a> {
    plan: &'a TilePlan,
    seen: Vec<bool>,
    done: usize,
}

impl<'a> Stitcher<'a> {
    fn new(plan: &'a TilePlan) -> Self {
        Stitcher {
            plan,
            seen: vec![false; plan.tile_count()],
            done: 0,
        }
    }

    fn accept(
        &mut self,
        k: usize,
        center: Window,
        labels: &[u8],
        sink: &mut dyn CenterSink,
    ) -> Result<()> {
        let (row, col) = self.plan.row_col(k)?;
        if std::mem::replace(&mut self.seen[k], true) {
            return Err(Error::DuplicateTile { row, col });
        }
        sink.put(center, labels)?;
        self.done += 1;
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        match self.seen.iter().position(|s| !s) {
            Some(k) => {
                let (row, col) = self.plan.row_col(k)?;
                Err(Error::MissingTile { row, col })
            }
            None => Ok(()),
        }
    }
}

/// Assembles a map from full-tile predictions given in any order.
pub fn stitch<I>(predictions: I, plan: &TilePlan, geotransform: GeoTransform) -> Result<ClassMap>
where
    I: IntoIterator<Item = (usize, Vec<u8>)>,
{
    let mut sink = MapSink::new(plan.width, plan.height, geotransform);
    let mut stitcher = Stitcher::new(plan);
    for (k, labels) in predictions {
        if k >= plan.tile_count() {
            return Err(Error::TileIndex {
                index: k,
                count: plan.tile_count(),
            });
        }
        let (center, crop) = crop_center(plan, k, &labels)?;
        stitcher.accept(k, center, &crop, &mut sink)?;
    }
    stitcher.finish()?;
    Ok(sink.into_map())
}

/// Runs every tile of `plan` through `backend` and hands center windows to
/// `sink`. Output does not depend on worker count or completion order.
pub fn run_tiles(
    source: &dyn ChannelSource,
    backend: &dyn Backend,
    plan: &TilePlan,
    opts: InferOptions,
    sink: &mut dyn CenterSink,
) -> Result<RunSummary> {
    if opts.workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    if (source.width(), source.height()) != (plan.width, plan.height) {
        return Err(Error::ShapeMismatch(format!(
            "source {}x{} does not match plan {}x{}",
            source.width(),
            source.height(),
            plan.width,
            plan.height
        )));
    }
    let started = Instant::now();
    let total = plan.tile_count();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mode = plan.spec.pad_mode();
    let (tx, rx) = mpsc::sync_channel::<Result<(usize, Window, Vec<u8>)>>(2 * opts.workers);

    let work = |k: usize| -> Result<(usize, Window, Vec<u8>)> {
        let ctx = TileContext::from_plan(plan, k)?;
        let tile = source.tile(ctx.tile_window, mode)?;
        let mut labels = predict_tile(backend, &tile, &ctx)?;
        if let Some(valid) = tile.valid() {
            for (l, &ok) in labels.iter_mut().zip(valid) {
                if !ok {
                    *l = IGNORE;
                }
            }
        }
        let (center, crop) = crop_center(plan, k, &labels)?;
        Ok((k, center, crop))
    };

    let mut stitcher = Stitcher::new(plan);
    let outcome = std::thread::scope(|scope| -> Result<()> {
        for _ in 0..opts.workers.min(total) {
            let tx = tx.clone();
            let (next, abort, work) = (&next, &abort, &work);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= total {
                    break;
                }
                let result = work(k);
                let failed = result.is_err();
                if tx.send(result).is_err() || failed {
                    break;
                }
            });
        }
        drop(tx);

        let mut stderr = std::io::stderr();
        let mut failure = None;
        for result in rx.iter() {
            let applied = result.and_then(|(k, center, crop)| {
                stitcher.accept(k, center, &crop, sink)?;
                if opts.progress {
                    let (row, col) = plan.row_col(k)?;
                    let _ = writeln!(stderr, "tile {row}/{col} done ({}/{total})", stitcher.done);
                }
                Ok(())
            });
            if let Err(e) = applied {
                abort.store(true, Ordering::Relaxed);
                failure = Some(e);
                break;
            }
        }
        // dropping the receiver releases workers blocked on send
        drop(rx);
        failure.map_or(Ok(()), Err)
    });
    outcome?;
    stitcher.finish()?;

    let seconds = started.elapsed().as_secs_f64();
    let px = (plan.width * plan.height) as f64;
    Ok(RunSummary {
        tiles: total,
        seconds,
        px_per_s: if seconds > 0.0 {
            px / seconds
        } else {
            f64::INFINITY
        },
        width: plan.width,
        height: plan.height,
        workers: opts.workers,
        peak_rss_bytes: peak_rss_bytes(),
    })
}

/// Tiled inference into an in-memory map.
pub fn infer_map(
    source: &dyn ChannelSource,
    backend: &dyn Backend,
    spec: TileSpec,
    opts: InferOptions,
) -> Result<(ClassMap, RunSummary)> {
    let plan = plan_tiles(source.width(), source.height(), spec)?;
    let mut sink = MapSink::new(plan.width, plan.height, source.geotransform());
    let summary = run_tiles(source, backend, &plan, opts, &mut sink)?;
    Ok((sink.into_map(), summary))
}

/// Tiled inference written window by window to a class-map file; the map
/// never exists in memory as a whole.
pub fn infer_to_file(
    source: &dyn ChannelSource,
    backend: &dyn Backend,
    spec: TileSpec,
    opts: InferOptions,
    output: impl AsRef<Path>,
) -> Result<RunSummary> {
    let plan = plan_tiles(source.width(), source.height(), spec)?;
    let mut sink = FileSink::create(output, plan.width, plan.height, source.geotransform())?;
    let summary = run_tiles(source, backend, &plan, opts, &mut sink)?;
    sink.finish()?;
    Ok(summary)
}

/// Everything needed to run inference on one image file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceJob {
    pub image: PathBuf,
    pub mode: Mode,
    pub spec: TileSpec,
    pub workers: usize,
    pub output: PathBuf,
    /// Normalization for raw scenes; computed from the image when absent.
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

impl InferenceJob {
    pub fn run(&self, backend: &dyn Backend, progress: bool) -> Result<RunSummary> {
        let source = RasterSource::open(&self.image, self.mode, self.norm_stats.clone())?;
        infer_to_file(
            &source,
            backend,
            self.spec,
            InferOptions {
                workers: self.workers,
                progress,
            },
            &self.output,
        )
    }
}

/// Resident-set high-water mark of this process (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
