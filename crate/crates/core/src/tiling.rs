//! Overlapped tile geometry with padded borders.
//!
//! Tile `(i, j)` covers `[j*S - P, j*S - P + T)` horizontally in source
//! coordinates (and likewise vertically). Its center window
//! `[j*S, (j+1)*S)`, clipped to the source extent, is the only part written
//! back when stitching; the center windows of all tiles partition the
//! source exactly.

use serde::{Deserialize, Serialize};

use crate::classes::ClassMap;
use crate::error::{Error, Result};
use crate::raster::Window;
use crate::spectral::ChannelStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Mirror,
    Zero,
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTileSpec", into = "RawTileSpec")]
pub struct TileSpec {
    tile: usize,
    stride: usize,
    pad: usize,
    pad_mode: PadMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTileSpec {
    tile: usize,
    stride: usize,
    #[serde(default)]
    pad: Option<usize>,
    #[serde(default = "default_pad_mode")]
    pad_mode: PadMode,
}

fn default_pad_mode() -> PadMode {
    PadMode::Mirror
}

impl TryFrom<RawTileSpec> for TileSpec {
    type Error = Error;
    fn try_from(raw: RawTileSpec) -> Result<Self> {
        let spec = TileSpec::new(raw.tile, raw.stride, raw.pad_mode)?;
        if let Some(pad) = raw.pad {
            if pad != spec.pad {
                return Err(Error::InvalidTileSpec(format!(
                    "pad {pad} != (tile - stride) / 2 = {}",
                    spec.pad
                )));
            }
        }
        Ok(spec)
    }
}

impl From<TileSpec> for RawTileSpec {
    fn from(s: TileSpec) -> Self {
        RawTileSpec {
            tile: s.tile,
            stride: s.stride,
            pad: Some(s.pad),
            pad_mode: s.pad_mode,
        }
    }
}

impl Default for TileSpec {
    /// 640 px tiles at a 320 px stride: 50% overlap, 160 px mirrored pad.
    fn default() -> Self {
        TileSpec::new(640, 320, PadMode::Mirror).unwrap()
    }
}

impl TileSpec {
    pub fn new(tile: usize, stride: usize, pad_mode: PadMode) -> Result<Self> {
        if tile == 0 || stride == 0 {
            return Err(Error::InvalidTileSpec(
                "tile and stride must be positive".into(),
            ));
        }
        if stride > tile {
            return Err(Error::InvalidTileSpec(format!(
                "stride {stride} exceeds tile {tile}"
            )));
        }
        if (tile - stride) % 2 != 0 {
            return Err(Error::InvalidTileSpec(format!(
                "tile - stride = {} must be even",
                tile - stride
            )));
        }
        Ok(TileSpec {
            tile,
            stride,
            pad: (tile - stride) / 2,
            pad_mode,
        })
    }

    /// Abutting tiles with no overlap and no padding.
    pub fn no_overlap(tile: usize) -> Result<Self> {
        TileSpec::new(tile, tile, PadMode::Mirror)
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn pad_mode(&self) -> PadMode {
        self.pad_mode
    }

    pub fn with_pad_mode(mut self, pad_mode: PadMode) -> Self {
        self.pad_mode = pad_mode;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub spec: TileSpec,
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub padded_w: usize,
    pub padded_h: usize,
}

pub fn plan_tiles(width: usize, height: usize, spec: TileSpec) -> Result<TilePlan> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidTileSpec(format!(
            "empty source {width}x{height}"
        )));
    }
    let s = spec.stride;
    let tiles_x = width.div_ceil(s);
    let tiles_y = height.div_ceil(s);
    Ok(TilePlan {
        spec,
        width,
        height,
        tiles_x,
        tiles_y,
        padded_w: tiles_x * s + (spec.tile - s),
        padded_h: tiles_y * s + (spec.tile - s),
    })
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    fn check(&self, k: usize) -> Result<()> {
        if k >= self.tile_count() {
            return Err(Error::TileIndex {
                index: k,
                count: self.tile_count(),
            });
        }
        Ok(())
    }

    /// `(row, col)` of tile `k` (row-major).
    pub fn row_col(&self, k: usize) -> Result<(usize, usize)> {
        self.check(k)?;
        Ok((k / self.tiles_x, k % self.tiles_x))
    }

    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        (row < self.tiles_y && col < self.tiles_x).then_some(row * self.tiles_x + col)
    }

    /// Full T×T footprint of tile `k` in source coordinates (may extend
    /// past the extent on any side).
    pub fn tile_window(&self, k: usize) -> Result<Window> {
        let (i, j) = self.row_col(k)?;
        let s = self.spec.stride as i64;
        let p = self.spec.pad as i64;
        Ok(Window::new(
            j as i64 * s - p,
            i as i64 * s - p,
            self.spec.tile,
            self.spec.tile,
        ))
    }

    /// Same footprint in padded-canvas coordinates (origin at the padded corner).
    pub fn padded_window(&self, k: usize) -> Result<Window> {
        let w = self.tile_window(k)?;
        let p = self.spec.pad as i64;
        Ok(Window::new(w.x0 + p, w.y0 + p, w.w, w.h))
    }

    /// Center window of tile `k` in source coordinates, clipped to the extent.
    /// Inside the tile it starts at offset `(P, P)`.
    pub fn center_window(&self, k: usize) -> Result<Window> {
        let (i, j) = self.row_col(k)?;
        let s = self.spec.stride;
        let x0 = j * s;
        let y0 = i * s;
        Ok(Window::new(
            x0 as i64,
            y0 as i64,
            (x0 + s).min(self.width) - x0,
            (y0 + s).min(self.height) - y0,
        ))
    }

    /// Interior seam coordinates between center windows, per axis.
    pub fn seams(&self) -> (Vec<usize>, Vec<usize>) {
        let s = self.spec.stride;
        (
            (1..self.tiles_x).map(|j| j * s).collect(),
            (1..self.tiles_y).map(|i| i * s).collect(),
        )
    }

    pub fn describe(&self) -> PlanDump {
        PlanDump {
            plan: *self,
            tiles: (0..self.tile_count())
                .map(|k| {
                    let (row, col) = self.row_col(k).unwrap();
                    TileDump {
                        index: k,
                        row,
                        col,
                        tile_window: self.tile_window(k).unwrap(),
                        center_window: self.center_window(k).unwrap(),
                    }
                })
                .collect(),
        }
    }
}

/// JSON view of a plan for debugging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDump {
    pub plan: TilePlan,
    pub tiles: Vec<TileDump>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileDump {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub tile_window: Window,
    pub center_window: Window,
}

/// Maps a possibly out-of-extent coordinate to a source index, or `None`
/// when the sample is zero-filled.
///
/// Mirror mode reflects about the edge (`-1 -> 0`, `-2 -> 1`,
/// `n -> n-1`, `n+1 -> n-2`); anything a single reflection cannot reach
/// falls back to the nearest edge sample.
#[inline]
pub fn source_index(x: i64, n: usize, mode: PadMode) -> Option<usize> {
    let n_i = n as i64;
    if (0..n_i).contains(&x) {
        return Some(x as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(x.clamp(0, n_i - 1) as usize),
        PadMode::Mirror => {
            let r = if x < 0 { -x - 1 } else { 2 * n_i - 1 - x };
            Some(r.clamp(0, n_i - 1) as usize)
        }
    }
}

/// Bounding box (in source coordinates) of every sample `window` reads
/// under `mode`. `None` if the window reads nothing but zero fill.
pub fn source_footprint(
    window: Window,
    width: usize,
    height: usize,
    mode: PadMode,
) -> Option<Window> {
    let span = |start: i64, len: usize, n: usize| {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for x in start..start + len as i64 {
            if let Some(s) = source_index(x, n, mode) {
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        (lo != usize::MAX).then_some((lo, hi))
    };
    let (x0, x1) = span(window.x0, window.w, width)?;
    let (y0, y1) = span(window.y0, window.h, height)?;
    Some(Window::new(x0 as i64, y0 as i64, x1 - x0 + 1, y1 - y0 + 1))
}

/// Fills `window` (in full-image coordinates) from one plane.
///
/// `src` holds the region `src_region` of a `full_w`×`full_h` image; it must
/// cover [`source_footprint`] of the window.
#[allow(clippy::too_many_arguments)]
pub fn fill_window<T: Copy>(
    src: &[T],
    src_region: Window,
    full_w: usize,
    full_h: usize,
    window: Window,
    mode: PadMode,
    zero: T,
) -> Vec<T> {
    let xs: Vec<Option<usize>> = (window.x0..window.x1())
        .map(|x| source_index(x, full_w, mode).map(|s| s - src_region.x0 as usize))
        .collect();
    let mut out = Vec::with_capacity(window.area());
    for y in window.y0..window.y1() {
        match source_index(y, full_h, mode) {
            None => out.extend(std::iter::repeat(zero).take(window.w)),
            Some(sy) => {
                let row = &src[(sy - src_region.y0 as usize) * src_region.w..][..src_region.w];
                out.extend(xs.iter().map(|sx| sx.map_or(zero, |sx| row[sx])));
            }
        }
    }
    out
}

/// Tile `k` of a channel stack that spans the whole plan extent.
pub fn extract_stack_tile(
    source: &ChannelStack,
    plan: &TilePlan,
    k: usize,
) -> Result<ChannelStack> {
    check_source(plan, source.width(), source.height())?;
    let window = plan.tile_window(k)?;
    let region = Window::new(0, 0, source.width(), source.height());
    extract_stack_window(
        source,
        region,
        plan.width,
        plan.height,
        window,
        plan.spec.pad_mode,
    )
}

/// Cuts `window` out of a stack that holds `region` of a larger image.
pub fn extract_stack_window(
    source: &ChannelStack,
    region: Window,
    full_w: usize,
    full_h: usize,
    window: Window,
    mode: PadMode,
) -> Result<ChannelStack> {
    let planes = source
        .planes()
        .iter()
        .map(|p| fill_window(p, region, full_w, full_h, window, mode, 0.0f32))
        .collect();
    let valid = source
        .valid()
        .map(|v| fill_window(v, region, full_w, full_h, window, mode, false));
    source.with_planes(window.w, window.h, planes, valid)
}

/// Tile `k` of a label map; zero-mode padding fills with IGNORE.
pub fn extract_label_tile(source: &ClassMap, plan: &TilePlan, k: usize) -> Result<ClassMap> {
    check_source(plan, source.width(), source.height())?;
    let window = plan.tile_window(k)?;
    Ok(extract_label_window(source, window, plan.spec.pad_mode))
}

pub fn extract_label_window(source: &ClassMap, window: Window, mode: PadMode) -> ClassMap {
    let region = Window::new(0, 0, source.width(), source.height());
    let labels = fill_window(
        source.labels(),
        region,
        source.width(),
        source.height(),
        window,
        mode,
        crate::classes::IGNORE,
    );
    ClassMap::new(
        window.w,
        window.h,
        source.geotransform().translate(window.x0, window.y0),
        labels,
    )
    .expect("window is non-empty")
}

fn check_source(plan: &TilePlan, w: usize, h: usize) -> Result<()> {
    if (w, h) != (plan.width, plan.height) {
        return Err(Error::ShapeMismatch(format!(
            "source {w}x{h} does not match plan {}x{}",
            plan.width, plan.height
        )));
    }
    Ok(())
}

/// Fraction of non-IGNORE labels in a tile; a keep-tile predicate for
/// training corpora compares this against a threshold.
pub fn labeled_fraction(labels: &ClassMap) -> f64 {
    let n = labels.labels().len();
    let labeled = labels
        .labels()
        .iter()
        .filter(|&&l| l != crate::classes::IGNORE)
        .count();
    labeled as f64 / n as f64
}
