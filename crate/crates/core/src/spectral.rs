//! Normalized-difference indices and classifier input stacks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DType, RasterGrid, RasterReader, Samples, Window};

pub const DEFAULT_EPS: f64 = 1e-12;

/// Raw band names expected on a scene raster, in storage order.
pub const SCENE_BANDS: [&str; 4] = ["B", "G", "R", "NIR"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    B,
    G,
    R,
    #[serde(rename = "NIR")]
    Nir,
    #[serde(rename = "NDVI")]
    Ndvi,
    #[serde(rename = "NDWI")]
    Ndwi,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::B => "B",
            Channel::G => "G",
            Channel::R => "R",
            Channel::Nir => "NIR",
            Channel::Ndvi => "NDVI",
            Channel::Ndwi => "NDWI",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        [
            Channel::B,
            Channel::G,
            Channel::R,
            Channel::Nir,
            Channel::Ndvi,
            Channel::Ndwi,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

/// Which input layout a classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `[B, G, R]`
    Lu3,
    /// `[B, G, R, NIR, NDVI, NDWI]`
    Lu6,
}

impl Mode {
    pub fn channels(self) -> &'static [Channel] {
        match self {
            Mode::Lu3 => &[Channel::B, Channel::G, Channel::R],
            Mode::Lu6 => &[
                Channel::B,
                Channel::G,
                Channel::R,
                Channel::Nir,
                Channel::Ndvi,
                Channel::Ndwi,
            ],
        }
    }

    pub fn channel_count(self) -> usize {
        self.channels().len()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Lu3 => "lu3",
            Mode::Lu6 => "lu6",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lu3" => Ok(Mode::Lu3),
            "lu6" => Ok(Mode::Lu6),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected lu3 or lu6)"
            ))),
        }
    }
}

/// `(a - b) / (a + b)`, or 0 where `|a + b| <= eps`.
pub fn normalized_difference(a: &[f32], b: &[f32], eps: f64) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "planes of {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&a, &b)| nd_pixel(a, b, eps))
        .collect())
}

#[inline]
fn nd_pixel(a: f32, b: f32, eps: f64) -> f32 {
    let (a, b) = (a as f64, b as f64);
    let sum = a + b;
    if sum.abs() > eps {
        ((a - b) / sum) as f32
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub band: String,
    pub low: f32,
    pub high: f32,
}

/// Per-band percentile references used to scale raw bands into [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub low_pct: f64,
    pub high_pct: f64,
    pub bands: Vec<BandStats>,
}

impl NormStats {
    pub fn get(&self, band: &str) -> Option<&BandStats> {
        self.bands.iter().find(|b| b.band == band)
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bands {
            if !(b.high > b.low) || !b.low.is_finite() || !b.high.is_finite() {
                return Err(Error::Config(format!(
                    "band {} has low {} >= high {}",
                    b.band, b.low, b.high
                )));
            }
        }
        Ok(())
    }
}

/// Nearest-rank percentile of an ascending slice.
fn nearest_rank(sorted: &[f32], pct: f64) -> f32 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn widen(band: &str, low: f32, high: f32) -> BandStats {
    let high = if high > low { high } else { low + 1.0 };
    BandStats {
        band: band.to_string(),
        low,
        high,
    }
}

/// Nearest-rank `low_pct` / `high_pct` percentiles of every band's valid
/// samples. A degenerate band (low == high) is widened to `[low, low + 1]`.
pub fn compute_norm_stats(grid: &RasterGrid, low_pct: f64, high_pct: f64) -> Result<NormStats> {
    check_pcts(low_pct, high_pct)?;
    let mut bands = Vec::with_capacity(grid.bands());
    for (b, name) in grid.band_names().iter().enumerate() {
        let mut values: Vec<f32> = grid
            .band_f32(b)
            .into_iter()
            .filter(|v| !grid.is_nodata(*v) && !v.is_nan())
            .collect();
        if values.is_empty() {
            return Err(Error::AllNodata { band: name.clone() });
        }
        values.sort_unstable_by(f32::total_cmp);
        bands.push(widen(
            name,
            nearest_rank(&values, low_pct),
            nearest_rank(&values, high_pct),
        ));
    }
    Ok(NormStats {
        low_pct,
        high_pct,
        bands,
    })
}

/// Same result as [`compute_norm_stats`] on the whole file, reading one band
/// strip at a time. Integer dtypes go through an exact histogram; f32 bands
/// are collected one band at a time.
pub fn compute_norm_stats_streaming(
    reader: &RasterReader,
    low_pct: f64,
    high_pct: f64,
) -> Result<NormStats> {
    check_pcts(low_pct, high_pct)?;
    let h = reader.header();
    let nodata = h.nodata;
    let strip_rows = (1 << 20) / (h.width as usize * h.bands).max(1);
    let strip_rows = strip_rows.clamp(1, h.height as usize);

    let mut hist: Vec<Vec<u64>> = Vec::new();
    let mut floats: Vec<Vec<f32>> = Vec::new();
    match h.dtype {
        DType::U8 | DType::U16 => hist = vec![vec![0u64; 65536]; h.bands],
        DType::F32 => floats = vec![Vec::new(); h.bands],
    }
    let mut y = 0usize;
    while y < h.height as usize {
        let rows = strip_rows.min(h.height as usize - y);
        let strip = reader.read_window(Window::new(0, y as i64, h.width as usize, rows))?;
        let n = strip.band_len();
        for b in 0..h.bands {
            match strip.data() {
                Samples::U8(v) => {
                    for &s in &v[b * n..(b + 1) * n] {
                        hist[b][s as usize] += 1;
                    }
                }
                Samples::U16(v) => {
                    for &s in &v[b * n..(b + 1) * n] {
                        hist[b][s as usize] += 1;
                    }
                }
                Samples::F32(v) => floats[b].extend(
                    v[b * n..(b + 1) * n]
                        .iter()
                        .filter(|s| !s.is_nan() && nodata.map_or(true, |nd| **s != nd as f32)),
                ),
            }
        }
        y += rows;
    }

    let mut bands = Vec::with_capacity(h.bands);
    for (b, name) in h.band_names.iter().enumerate() {
        let (low, high) = if h.dtype == DType::F32 {
            let values = &mut floats[b];
            if values.is_empty() {
                return Err(Error::AllNodata { band: name.clone() });
            }
            values.sort_unstable_by(f32::total_cmp);
            (
                nearest_rank(values, low_pct),
                nearest_rank(values, high_pct),
            )
        } else {
            let counts = &mut hist[b];
            if let Some(nd) = nodata {
                counts[nd as usize] = 0;
            }
            let total: u64 = counts.iter().sum();
            if total == 0 {
                return Err(Error::AllNodata { band: name.clone() });
            }
            (
                hist_rank(counts, total, low_pct),
                hist_rank(counts, total, high_pct),
            )
        };
        bands.push(widen(name, low, high));
    }
    Ok(NormStats {
        low_pct,
        high_pct,
        bands,
    })
}

fn hist_rank(counts: &[u64], total: u64, pct: f64) -> f32 {
    let rank = (((pct / 100.0) * total as f64).ceil() as u64).clamp(1, total);
    let mut seen = 0;
    for (value, &c) in counts.iter().enumerate() {
        seen += c;
        if seen >= rank {
            return value as f32;
        }
    }
    unreachable!("rank within total")
}

fn check_pcts(low: f64, high: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low > high {
        return Err(Error::Config(format!("invalid percentiles {low}/{high}")));
    }
    Ok(())
}

/// Affine scaling applied to one channel: `(x - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub offset: f32,
    pub scale: f32,
}

impl ChannelNorm {
    pub const IDENTITY: ChannelNorm = ChannelNorm {
        offset: 0.0,
        scale: 1.0,
    };
}

/// Ordered float planes fed to a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    width: usize,
    height: usize,
    names: Vec<Channel>,
    planes: Vec<Vec<f32>>,
    norm: Vec<ChannelNorm>,
    /// `false` where any raw input was nodata. `None` means all valid.
    valid: Option<Vec<bool>>,
}

impl ChannelStack {
    pub fn new(
        width: usize,
        height: usize,
        names: Vec<Channel>,
        planes: Vec<Vec<f32>>,
        norm: Vec<ChannelNorm>,
        valid: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = width * height;
        if n == 0
            || names.len() != planes.len()
            || norm.len() != planes.len()
            || planes.iter().any(|p| p.len() != n)
            || valid.as_ref().map_or(false, |v| v.len() != n)
        {
            return Err(Error::ShapeMismatch(format!(
                "stack {width}x{height} with {} names, {} planes, {} norms",
                names.len(),
                planes.len(),
                norm.len()
            )));
        }
        Ok(ChannelStack {
            width,
            height,
            names,
            planes,
            norm,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel_count(&self) -> usize {
        self.planes.len()
    }

    pub fn names(&self) -> &[Channel] {
        &self.names
    }

    pub fn planes(&self) -> &[Vec<f32>] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.planes[c]
    }

    pub fn norm(&self) -> &[ChannelNorm] {
        &self.norm
    }

    pub fn valid(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn into_parts(self) -> (Vec<Vec<f32>>, Option<Vec<bool>>) {
        (self.planes, self.valid)
    }

    /// Same metadata, different pixels (used after tiling or transforms).
    pub fn with_planes(
        &self,
        width: usize,
        height: usize,
        planes: Vec<Vec<f32>>,
        valid: Option<Vec<bool>>,
    ) -> Result<Self> {
        ChannelStack::new(
            width,
            height,
            self.names.clone(),
            planes,
            self.norm.clone(),
            valid,
        )
    }
}

fn require_scene_bands(grid: &RasterGrid) -> Result<[usize; 4]> {
    if grid.bands() != 4 {
        return Err(Error::BandLayout(format!(
            "expected 4 bands {SCENE_BANDS:?}, got {:?}",
            grid.band_names()
        )));
    }
    let mut idx = [0; 4];
    for (slot, name) in idx.iter_mut().zip(SCENE_BANDS) {
        *slot = grid.band_index(name).ok_or_else(|| {
            Error::BandLayout(format!("missing band {name} in {:?}", grid.band_names()))
        })?;
    }
    Ok(idx)
}

/// Assembles the classifier stack from a raw `B,G,R,NIR` grid.
///
/// Indices are computed from the raw bands; the raw bands are then scaled
/// with `stats` and clamped to [0, 1]. Pixels where any raw band is nodata
/// are zeroed in every plane and cleared in the validity mask.
pub fn build_channel_stack(
    grid: &RasterGrid,
    mode: Mode,
    stats: &NormStats,
) -> Result<ChannelStack> {
    let idx = require_scene_bands(grid)?;
    stats.validate()?;
    let raw: Vec<Vec<f32>> = idx.iter().map(|&b| grid.band_f32(b)).collect();
    let n = grid.band_len();

    let mut valid = vec![true; n];
    let mut any_invalid = false;
    if grid.nodata().is_some() {
        for plane in &raw {
            for (v, &s) in valid.iter_mut().zip(plane) {
                if grid.is_nodata(s) {
                    *v = false;
                    any_invalid = true;
                }
            }
        }
    }

    let mut planes = Vec::with_capacity(mode.channel_count());
    let mut norm = Vec::with_capacity(mode.channel_count());
    for &ch in mode.channels() {
        let (plane, cn) = match ch {
            Channel::Ndvi => (
                normalized_difference(&raw[3], &raw[2], DEFAULT_EPS)?,
                ChannelNorm::IDENTITY,
            ),
            Channel::Ndwi => (
                normalized_difference(&raw[1], &raw[3], DEFAULT_EPS)?,
                ChannelNorm::IDENTITY,
            ),
            _ => {
                let i = SCENE_BANDS.iter().position(|b| *b == ch.name()).unwrap();
                let bs = stats
                    .get(ch.name())
                    .ok_or_else(|| Error::Config(format!("norm stats lack band {}", ch.name())))?;
                let cn = ChannelNorm {
                    offset: bs.low,
                    scale: 1.0 / (bs.high - bs.low),
                };
                let range = bs.high - bs.low;
                let plane = raw[i]
                    .iter()
                    .map(|&x| ((x - bs.low) / range).clamp(0.0, 1.0))
                    .collect();
                (plane, cn)
            }
        };
        planes.push(plane);
        norm.push(cn);
    }
    if any_invalid {
        for plane in &mut planes {
            for (p, &ok) in plane.iter_mut().zip(&valid) {
                if !ok {
                    *p = 0.0;
                }
            }
        }
    }
    ChannelStack::new(
        grid.width() as usize,
        grid.height() as usize,
        mode.channels().to_vec(),
        planes,
        norm,
        any_invalid.then_some(valid),
    )
}

/// Uses a grid that already holds classifier channels (named like
/// [`Channel`]), selecting the ones `mode` needs. No scaling is applied.
pub fn stack_from_channel_grid(grid: &RasterGrid, mode: Mode) -> Result<ChannelStack> {
    let mut planes = Vec::with_capacity(mode.channel_count());
    for ch in mode.channels() {
        let b = grid.band_index(ch.name()).ok_or_else(|| {
            Error::BandLayout(format!(
                "missing channel {} in {:?}",
                ch.name(),
                grid.band_names()
            ))
        })?;
        planes.push(grid.band_f32(b));
    }
    ChannelStack::new(
        grid.width() as usize,
        grid.height() as usize,
        mode.channels().to_vec(),
        planes,
        vec![ChannelNorm::IDENTITY; mode.channel_count()],
        None,
    )
}

/// True when the grid carries raw scene bands rather than prepared channels.
pub fn is_scene_grid(band_names: &[String]) -> bool {
    band_names.len() == 4
        && SCENE_BANDS
            .iter()
            .all(|b| band_names.iter().any(|n| n == b))
}
