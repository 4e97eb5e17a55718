//! Tile classifiers.
//!
//! A [`Backend`] turns one channel-stack tile into a label tile of the same
//! size. Built-in backends are stateless after construction; the external
//! backend serializes access to each child process internally.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classes::{ClassMap, IGNORE};
use crate::error::{Error, Result};
use crate::hash;
use crate::raster::Window;
use crate::spectral::ChannelStack;
use crate::tiling::{extract_label_window, PadMode, TilePlan};

pub mod augment;
pub mod external;
pub mod linear;
pub mod protocol;

pub use augment::{augment, Dihedral};
pub use external::{make_external_backend, ExternalBackend, ExternalOptions};
pub use linear::{train_linear, LinearBackend, LinearModel, TrainConfig, TrainLog};

/// Where a tile sits in its scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileContext {
    /// Tile index within the plan; also the wire-protocol request id.
    pub id: u64,
    pub row: usize,
    pub col: usize,
    /// Full tile footprint in source coordinates.
    pub tile_window: Window,
    /// Stitched region in source coordinates.
    pub center_window: Window,
    pub pad_mode: PadMode,
}

impl TileContext {
    pub fn from_plan(plan: &TilePlan, k: usize) -> Result<Self> {
        let (row, col) = plan.row_col(k)?;
        Ok(TileContext {
            id: k as u64,
            row,
            col,
            tile_window: plan.tile_window(k)?,
            center_window: plan.center_window(k)?,
            pad_mode: plan.spec.pad_mode(),
        })
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn num_classes(&self) -> usize;

    /// Channel count this backend accepts; `None` accepts any.
    fn expected_channels(&self) -> Option<usize>;

    /// Row-major labels, `tile.width() * tile.height()` long.
    fn predict(&self, tile: &ChannelStack, ctx: &TileContext) -> Result<Vec<u8>>;
}

/// Runs `backend` on one tile and checks its output against the contract.
pub fn predict_tile(
    backend: &dyn Backend,
    tile: &ChannelStack,
    ctx: &TileContext,
) -> Result<Vec<u8>> {
    if let Some(expected) = backend.expected_channels() {
        if expected != tile.channel_count() {
            return Err(Error::ChannelMismatch {
                expected,
                found: tile.channel_count(),
            });
        }
    }
    let labels = backend.predict(tile, ctx)?;
    let n = tile.width() * tile.height();
    if labels.len() != n {
        return Err(Error::Backend {
            tile: ctx.id,
            message: format!(
                "{} returned {} labels for {n} pixels",
                backend.name(),
                labels.len()
            ),
        });
    }
    let k = backend.num_classes();
    if let Some(bad) = labels.iter().find(|&&l| l != IGNORE && l as usize >= k) {
        return Err(Error::Backend {
            tile: ctx.id,
            message: format!(
                "{} returned label {bad} outside {k} classes",
                backend.name()
            ),
        });
    }
    Ok(labels)
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn expected_channels(&self) -> Option<usize> {
        (**self).expected_channels()
    }
    fn predict(&self, tile: &ChannelStack, ctx: &TileContext) -> Result<Vec<u8>> {
        (**self).predict(tile, ctx)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn expected_channels(&self) -> Option<usize> {
        (**self).expected_channels()
    }
    fn predict(&self, tile: &ChannelStack, ctx: &TileContext) -> Result<Vec<u8>> {
        (**self).predict(tile, ctx)
    }
}

/// Returns the ground truth under the tile footprint, padded the same way
/// as the imagery.
pub struct OracleBackend {
    truth: Arc<ClassMap>,
    k: usize,
}

pub fn make_oracle_backend(truth: Arc<ClassMap>, k: usize) -> Result<OracleBackend> {
    truth.validate(k)?;
    Ok(OracleBackend { truth, k })
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn num_classes(&self) -> usize {
        self.k
    }

    fn expected_channels(&self) -> Option<usize> {
        None
    }

    fn predict(&self, tile: &ChannelStack, ctx: &TileContext) -> Result<Vec<u8>> {
        let w = ctx.tile_window;
        let window = Window::new(w.x0, w.y0, tile.width(), tile.height());
        Ok(extract_label_window(&self.truth, window, ctx.pad_mode).into_labels())
    }
}

/// Wraps a backend and corrupts its output along tile borders, modelling
/// the accuracy loss near truncated context.
///
/// Within `band` pixels of any tile edge each label is, with probability
/// `flip_prob`, replaced by a class drawn uniformly from all `K` classes
/// (so it changes with probability `(K-1)/K`). Draws are keyed by
/// `(seed, tile id, x, y)` and never by thread or call order.
pub struct EdgeDegraded<B> {
    inner: B,
    band: usize,
    flip_prob: f64,
    seed: u64,
}

pub fn make_edge_degraded<B: Backend>(
    inner: B,
    band: usize,
    flip_prob: f64,
    seed: u64,
) -> Result<EdgeDegraded<B>> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::Config(format!(
            "flip probability {flip_prob} outside [0, 1]"
        )));
    }
    Ok(EdgeDegraded {
        inner,
        band,
        flip_prob,
        seed,
    })
}

impl<B: Backend> Backend for EdgeDegraded<B> {
    fn name(&self) -> &str {
        "edge-degraded"
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn expected_channels(&self) -> Option<usize> {
        self.inner.expected_channels()
    }

    fn predict(&self, tile: &ChannelStack, ctx: &TileContext) -> Result<Vec<u8>> {
        let (w, h) = (tile.width(), tile.height());
        if 2 * self.band > w.min(h) {
            return Err(Error::Config(format!(
                "degradation band {} exceeds half of the {w}x{h} tile",
                self.band
            )));
        }
        let mut labels = self.inner.predict(tile, ctx)?;
        if self.band == 0 || self.flip_prob == 0.0 {
            return Ok(labels);
        }
        let k = self.num_classes() as u64;
        for y in 0..h {
            let edge_row = y < self.band || y >= h - self.band;
            for x in 0..w {
                if !(edge_row || x < self.band || x >= w - self.band) {
                    continue;
                }
                let i = y * w + x;
                if labels[i] == IGNORE {
                    continue;
                }
                let hsh = hash::mix(&[self.seed, ctx.id, x as u64, y as u64]);
                if hash::unit(hsh) < self.flip_prob {
                    labels[i] = (hash::mix(&[hsh, 0xc1a55]) % k) as u8;
                }
            }
        }
        Ok(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use crate::spectral::{Channel, ChannelNorm};
    use crate::tiling::{extract_label_tile, plan_tiles, TileSpec};

    fn blank_tile(n: usize) -> ChannelStack {
        ChannelStack::new(
            n,
            n,
            vec![Channel::B],
            vec![vec![0.0; n * n]],
            vec![ChannelNorm::IDENTITY],
            None,
        )
        .unwrap()
    }

    fn truth(w: usize, h: usize, k: u8) -> Arc<ClassMap> {
        let labels = (0..w * h)
            .map(|i| ((i * 7 + i / w) % k as usize) as u8)
            .collect();
        Arc::new(ClassMap::new(w, h, GeoTransform::default(), labels).unwrap())
    }

    #[test]
    fn oracle_returns_padded_truth() {
        let t = truth(50, 30, 9);
        let plan = plan_tiles(50, 30, TileSpec::new(16, 8, PadMode::Mirror).unwrap()).unwrap();
        let oracle = make_oracle_backend(t.clone(), 9).unwrap();
        for k in 0..plan.tile_count() {
            let ctx = TileContext::from_plan(&plan, k).unwrap();
            let got = predict_tile(&oracle, &blank_tile(16), &ctx).unwrap();
            assert_eq!(got, extract_label_tile(&t, &plan, k).unwrap().into_labels());
        }
        assert!(make_oracle_backend(t, 3).is_err());
    }

    #[test]
    fn degrader_identity_cases() {
        let t = truth(40, 40, 9);
        let plan = plan_tiles(40, 40, TileSpec::new(20, 10, PadMode::Mirror).unwrap()).unwrap();
        let ctx = TileContext::from_plan(&plan, 5).unwrap();
        let base = predict_tile(
            &make_oracle_backend(t.clone(), 9).unwrap(),
            &blank_tile(20),
            &ctx,
        )
        .unwrap();
        for (band, p) in [(5, 0.0), (0, 1.0)] {
            let d =
                make_edge_degraded(make_oracle_backend(t.clone(), 9).unwrap(), band, p, 1).unwrap();
            assert_eq!(predict_tile(&d, &blank_tile(20), &ctx).unwrap(), base);
        }
        let d = make_edge_degraded(make_oracle_backend(t.clone(), 9).unwrap(), 11, 0.5, 1).unwrap();
        assert!(predict_tile(&d, &blank_tile(20), &ctx).is_err());
        assert!(make_edge_degraded(make_oracle_backend(t, 9).unwrap(), 1, 1.5, 1).is_err());
    }

    #[test]
    fn degrader_band_statistics() {
        // band 160 on T=640: band area fraction 1 - (320/640)^2 = 0.75
        let k = 9u8;
        let t = truth(640, 640, k);
        let plan = plan_tiles(640, 640, TileSpec::no_overlap(640).unwrap()).unwrap();
        let ctx = TileContext::from_plan(&plan, 0).unwrap();
        let tile = blank_tile(640);
        let base = predict_tile(&make_oracle_backend(t.clone(), 9).unwrap(), &tile, &ctx).unwrap();

        let d1 =
            make_edge_degraded(make_oracle_backend(t.clone(), 9).unwrap(), 160, 1.0, 3).unwrap();
        let out = predict_tile(&d1, &tile, &ctx).unwrap();
        let mut inner_diff = 0;
        let mut band_diff = 0u64;
        let mut band_n = 0u64;
        for y in 0..640 {
            for x in 0..640 {
                let i = y * 640 + x;
                let inner = (160..480).contains(&x) && (160..480).contains(&y);
                if inner {
                    inner_diff += (out[i] != base[i]) as u64;
                } else {
                    band_n += 1;
                    band_diff += (out[i] != base[i]) as u64;
                }
            }
        }
        assert_eq!(inner_diff, 0);
        let p = (k as f64 - 1.0) / k as f64;
        let sigma = (band_n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (band_diff as f64 - band_n as f64 * p).abs() < 3.0 * sigma,
            "{band_diff} of {band_n}"
        );

        // flip 0.5: 0.75 * 0.5 = 0.375 of all pixels are redrawn, (K-1)/K of those change
        let d = make_edge_degraded(make_oracle_backend(t, 9).unwrap(), 160, 0.5, 3).unwrap();
        let out = predict_tile(&d, &tile, &ctx).unwrap();
        let changed = out.iter().zip(&base).filter(|(a, b)| a != b).count() as f64;
        let n = (640 * 640) as f64;
        let q = 0.375 * p;
        assert!(
            (changed - n * q).abs() < 3.0 * (n * q * (1.0 - q)).sqrt(),
            "{}",
            changed / n
        );
        // deterministic per key
        assert_eq!(predict_tile(&d, &tile, &ctx).unwrap(), out);
    }
}
