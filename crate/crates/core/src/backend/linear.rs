//! Per-pixel softmax regression trained with Adam.
//!
//! Features for a pixel are its `C` channel values, the `C` channel means
//! over its 3×3 neighbourhood (clamped at the tile edge) and a bias term,
//! so the weight matrix is `K × (2C + 1)`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::Dihedral;
use super::{Backend, TileContext};
use crate::classes::{ClassMap, IGNORE};
use crate::error::{Error, Result};
use crate::hash;
use crate::spectral::{build_channel_stack, Channel, ChannelStack, Mode};
use crate::synth::{Corpus, Split};
use crate::tiling::{
    extract_label_tile, extract_stack_tile, labeled_fraction, plan_tiles, TileSpec,
};

pub const FEATURE_VERSION: u32 = 1;
const FEATURE_NAME: &str = "raw+box3";
const MODEL_FORMAT: &str = "landmap-linear";

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    classes: usize,
    channel_names: Vec<Channel>,
    weights: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format: String,
    feature_version: u32,
    features: String,
    classes: usize,
    channels: usize,
    channel_names: Vec<Channel>,
}

impl LinearModel {
    pub fn zeros(classes: usize, channel_names: Vec<Channel>) -> Self {
        let f = 2 * channel_names.len() + 1;
        LinearModel {
            classes,
            channel_names,
            weights: vec![0.0; classes * f],
        }
    }

    pub fn from_weights(
        classes: usize,
        channel_names: Vec<Channel>,
        weights: Vec<f32>,
    ) -> Result<Self> {
        let f = 2 * channel_names.len() + 1;
        if classes < 2 || weights.len() != classes * f {
            return Err(Error::Model(format!(
                "{} weights for {classes} classes x {f} features",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Model("non-finite weight".into()));
        }
        Ok(LinearModel {
            classes,
            channel_names,
            weights,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[Channel] {
        &self.channel_names
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.channels() + 1
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Class probabilities for each pixel, `K` per pixel.
    pub fn predict_proba(&self, tile: &ChannelStack) -> Vec<f64> {
        let feats = features(tile);
        let fd = self.feature_dim();
        let w: Vec<f64> = self.weights.iter().map(|&v| v as f64).collect();
        let mut out = Vec::with_capacity(feats.len() / (fd - 1) * self.classes);
        let mut logits = vec![0.0; self.classes];
        for px in feats.chunks_exact(fd - 1) {
            logits_into(&w, px, self.classes, &mut logits);
            softmax_in_place(&mut logits);
            out.extend_from_slice(&logits);
        }
        out
    }

    pub fn predict_labels(&self, tile: &ChannelStack) -> Vec<u8> {
        let feats = features(tile);
        let fd = self.feature_dim();
        let k = self.classes;
        let mut logits = vec![0f32; k];
        feats
            .chunks_exact(fd - 1)
            .map(|px| {
                for (c, l) in logits.iter_mut().enumerate() {
                    let row = &self.weights[c * fd..(c + 1) * fd];
                    *l = row[fd - 1]
                        + row[..fd - 1]
                            .iter()
                            .zip(px)
                            .map(|(a, b)| a * b)
                            .sum::<f32>();
                }
                argmax(&logits) as u8
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            feature_version: FEATURE_VERSION,
            features: FEATURE_NAME.into(),
            classes: self.classes,
            channels: self.channels(),
            channel_names: self.channel_names.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(4 + json.len() + 4 * self.weights.len());
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 4 {
            return Err(Error::Model("file too short".into()));
        }
        let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let json = bytes
            .get(4..4 + hlen)
            .ok_or_else(|| Error::Model("truncated header".into()))?;
        let header: ModelHeader =
            serde_json::from_slice(json).map_err(|e| Error::Model(e.to_string()))?;
        if header.format != MODEL_FORMAT || header.feature_version != FEATURE_VERSION {
            return Err(Error::Model(format!(
                "unsupported model {} v{}",
                header.format, header.feature_version
            )));
        }
        if header.channels != header.channel_names.len() {
            return Err(Error::Model("channel count disagrees with names".into()));
        }
        let payload = &bytes[4 + hlen..];
        let expected = header.classes * (2 * header.channels + 1) * 4;
        if payload.len() != expected {
            return Err(Error::Model(format!(
                "weight payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let weights = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        LinearModel::from_weights(header.classes, header.channel_names, weights)
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Pixel-major features without the bias: `[raw_0..raw_C, box_0..box_C]`.
pub fn features(tile: &ChannelStack) -> Vec<f32> {
    let (w, h, c) = (tile.width(), tile.height(), tile.channel_count());
    let stride = 2 * c;
    let mut out = vec![0f32; w * h * stride];
    let mut rows = vec![0f32; w * h];
    for (ch, plane) in tile.planes().iter().enumerate() {
        // horizontal 3-tap sum, edge-clamped
        for y in 0..h {
            let r = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                rows[y * w + x] = r[x.saturating_sub(1)] + r[x] + r[(x + 1).min(w - 1)];
            }
        }
        for y in 0..h {
            let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let i = y * w + x;
                let f = &mut out[i * stride..(i + 1) * stride];
                f[ch] = plane[i];
                f[c + ch] = (rows[up * w + x] + rows[i] + rows[down * w + x]) / 9.0;
            }
        }
    }
    out
}

#[inline]
fn logits_into(w: &[f64], px: &[f32], k: usize, logits: &mut [f64]) {
    let fd = px.len() + 1;
    for (c, l) in logits.iter_mut().enumerate().take(k) {
        let row = &w[c * fd..(c + 1) * fd];
        let mut acc = row[fd - 1];
        for (a, &b) in row[..fd - 1].iter().zip(px) {
            acc += a * b as f64;
        }
        *l = acc;
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Features and labels of one training tile.
#[derive(Debug, Clone)]
pub struct FeatureTile {
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
}

impl FeatureTile {
    pub fn new(tile: &ChannelStack, labels: &[u8]) -> Self {
        FeatureTile {
            features: features(tile),
            labels: labels.to_vec(),
        }
    }
}

/// Summed cross-entropy, labelled-pixel count and summed gradient for one tile.
struct Partial {
    ce: f64,
    count: u64,
    grad: Vec<f64>,
}

fn tile_partial(w: &[f64], k: usize, fd: usize, tile: &FeatureTile) -> Partial {
    let mut grad = vec![0.0; k * fd];
    let mut logits = vec![0.0; k];
    let mut ce = 0.0;
    let mut count = 0;
    for (px, &y) in tile.features.chunks_exact(fd - 1).zip(&tile.labels) {
        if y == IGNORE || y as usize >= k {
            continue;
        }
        logits_into(w, px, k, &mut logits);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
            s += *l;
        }
        ce += s.ln() - (logits[y as usize].ln());
        for (c, &e) in logits.iter().enumerate() {
            let d = e / s - if c == y as usize { 1.0 } else { 0.0 };
            let g = &mut grad[c * fd..(c + 1) * fd];
            for (gi, &f) in g[..fd - 1].iter_mut().zip(px) {
                *gi += d * f as f64;
            }
            g[fd - 1] += d;
        }
        count += 1;
    }
    Partial { ce, count, grad }
}

/// Mean pixel cross-entropy over `batch` plus `weight_decay/2 * |w|^2`, and
/// its gradient. IGNORE pixels are masked out.
pub fn loss_and_grad(
    weights: &[f64],
    classes: usize,
    batch: &[FeatureTile],
    weight_decay: f64,
) -> (f64, Vec<f64>) {
    let fd = weights.len() / classes;
    let partials: Vec<Partial> = parallel_map(batch, |t| tile_partial(weights, classes, fd, t));
    combine(weights, partials, weight_decay).0
}

fn combine(weights: &[f64], partials: Vec<Partial>, weight_decay: f64) -> ((f64, Vec<f64>), f64) {
    let mut grad = vec![0.0; weights.len()];
    let mut ce = 0.0;
    let mut count = 0u64;
    for p in partials {
        ce += p.ce;
        count += p.count;
        for (g, v) in grad.iter_mut().zip(&p.grad) {
            *g += v;
        }
    }
    let inv = if count > 0 { 1.0 / count as f64 } else { 0.0 };
    let mean_ce = ce * inv;
    let mut l2 = 0.0;
    for (g, &w) in grad.iter_mut().zip(weights) {
        *g = *g * inv + weight_decay * w;
        l2 += w * w;
    }
    ((mean_ce + 0.5 * weight_decay * l2, grad), mean_ce)
}

/// Order-preserving map over scoped threads; results do not depend on the
/// number of threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Adam first-moment decay (the "momentum" knob).
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Tiling used to cut training samples from scenes.
    pub tile: TileSpec,
    /// Tiles with a smaller share of labelled pixels are skipped.
    pub min_labeled_fraction: f64,
}

impl Default for TrainConfig {
    /// Adam at lr 1e-5, weight decay 5e-4, beta1 0.99, batch 12.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 5e-4,
            beta1: 0.99,
            beta2: 0.999,
            batch_size: 12,
            epochs: 10,
            seed: 0,
            augment: true,
            tile: TileSpec::default(),
            min_labeled_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    /// Overrides for the linear model on desk-sized corpora: a larger step
    /// (the 1e-5 default is tuned for deep networks) and 256 px tiles.
    pub fn desk_scale() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            tile: TileSpec::new(256, 128, crate::tiling::PadMode::Mirror).unwrap(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.epochs > 0;
        let betas = (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0;
        if !positive || !betas || !(0.0..=1.0).contains(&self.min_labeled_fraction) {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: Mode,
    /// Mean pixel cross-entropy over each epoch's batches.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Tiles drawn per scene image across all epochs.
    pub tiles_per_scene: BTreeMap<String, usize>,
    pub config: TrainConfig,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..w.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            w[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + 1e-8);
        }
    }
}

/// Trains on the manifest's training split only. Deterministic for a given
/// corpus and config.
pub fn train_linear(
    corpus: &Corpus,
    mode: Mode,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainLog)> {
    cfg.validate()?;
    let k = corpus.manifest.class_scheme.len();
    let mut scenes: Vec<(String, ChannelStack, ClassMap)> = Vec::new();
    for (_, entry) in corpus.manifest.scenes_in(Split::Train) {
        let (grid, labels) = corpus.load_scene(entry)?;
        let stack = build_channel_stack(&grid, mode, corpus.manifest.stats_for(entry)?)?;
        scenes.push((entry.image.clone(), stack, labels));
    }
    if scenes.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }

    let mut refs: Vec<(usize, usize)> = Vec::new();
    let mut plans = Vec::with_capacity(scenes.len());
    for (s, (_, stack, labels)) in scenes.iter().enumerate() {
        let plan = plan_tiles(stack.width(), stack.height(), cfg.tile)?;
        for t in 0..plan.tile_count() {
            if labeled_fraction(&extract_label_tile(labels, &plan, t)?) >= cfg.min_labeled_fraction
            {
                refs.push((s, t));
            }
        }
        plans.push(plan);
    }
    if refs.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }

    let mut model_w = vec![0.0f64; k * (2 * mode.channel_count() + 1)];
    let mut adam = Adam::new(model_w.len());
    let mut log = TrainLog {
        mode,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
        tiles_per_scene: BTreeMap::new(),
        config: cfg.clone(),
    };

    for epoch in 0..cfg.epochs {
        let mut order = refs.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(hash::mix(&[
            cfg.seed,
            epoch as u64,
        ])));
        let mut ce_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let load = |&(s, t): &(usize, usize)| -> Result<FeatureTile> {
                let (_, stack, labels) = &scenes[s];
                let img = extract_stack_tile(stack, &plans[s], t)?;
                let lbl = extract_label_tile(labels, &plans[s], t)?;
                let (img, lbl) = if cfg.augment {
                    let d = Dihedral::from_seed(hash::mix(&[
                        cfg.seed,
                        epoch as u64,
                        s as u64,
                        t as u64,
                    ]));
                    super::augment::augment_with(&img, &lbl, d)?
                } else {
                    (img, lbl)
                };
                Ok(FeatureTile::new(&img, lbl.labels()))
            };
            let partials: Vec<Result<Partial>> = parallel_map(batch, |r| {
                let tile = load(r)?;
                Ok(tile_partial(&model_w, k, model_w.len() / k, &tile))
            });
            let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
            let ((_, grad), mean_ce) = combine(&model_w, partials, cfg.weight_decay);
            if !mean_ce.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut model_w, &grad, cfg);
            ce_sum += mean_ce;
            batches += 1;
            log.steps += 1;
            for &(s, _) in batch {
                *log.tiles_per_scene.entry(scenes[s].0.clone()).or_default() += 1;
            }
        }
        let loss = ce_sum / batches as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.epoch_losses.push(loss);
    }

    let weights = model_w.iter().map(|&w| w as f32).collect();
    let model = LinearModel::from_weights(k, mode.channels().to_vec(), weights)?;
    Ok((model, log))
}

/// Backend wrapping a trained [`LinearModel`].
#[derive(Clone)]
pub struct LinearBackend {
    model: Arc<LinearModel>,
}

impl LinearBackend {
    pub fn new(model: Arc<LinearModel>) -> Self {
        LinearBackend { model }
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }
}

impl Backend for LinearBackend {
    fn name(&self) -> &str {
        "linear"
    }

    fn num_classes(&self) -> usize {
        self.model.classes()
    }

    fn expected_channels(&self) -> Option<usize> {
        Some(self.model.channels())
    }

    fn predict(&self, tile: &ChannelStack, _ctx: &TileContext) -> Result<Vec<u8>> {
        Ok(self.model.predict_labels(tile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ChannelNorm;
    use rand::Rng;

    fn random_tile(rng: &mut ChaCha8Rng, n: usize, c: usize, k: u8) -> FeatureTile {
        let planes = (0..c)
            .map(|_| (0..n * n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let names = Mode::Lu6.channels()[..c].to_vec();
        let stack =
            ChannelStack::new(n, n, names, planes, vec![ChannelNorm::IDENTITY; c], None).unwrap();
        let labels: Vec<u8> = (0..n * n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    IGNORE
                } else {
                    rng.gen_range(0..k)
                }
            })
            .collect();
        FeatureTile::new(&stack, &labels)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, c) = (4usize, 3usize);
        let batch: Vec<_> = (0..2)
            .map(|_| random_tile(&mut rng, 6, c, k as u8))
            .collect();
        let w: Vec<f64> = (0..k * (2 * c + 1))
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let (_, grad) = loss_and_grad(&w, k, &batch, 5e-4);
        let h = 1e-6;
        for _ in 0..20 {
            let i = rng.gen_range(0..w.len());
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let numeric = (loss_and_grad(&wp, k, &batch, 5e-4).0
                - loss_and_grad(&wm, k, &batch, 5e-4).0)
                / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "coord {i}: analytic {} numeric {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = 6;
        let planes = (0..c)
            .map(|_| (0..64).map(|_| rng.gen_range(0.0f32..1.0)).collect())
            .collect();
        let stack = ChannelStack::new(
            8,
            8,
            Mode::Lu6.channels().to_vec(),
            planes,
            vec![ChannelNorm::IDENTITY; c],
            None,
        )
        .unwrap();
        let weights = (0..9 * 13).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        let model = LinearModel::from_weights(9, Mode::Lu6.channels().to_vec(), weights).unwrap();
        let p = model.predict_proba(&stack);
        let labels = model.predict_labels(&stack);
        for (px, &l) in p.chunks(9).zip(&labels) {
            assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let best = px
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > px[b] { i } else { b });
            assert_eq!(best, l as usize);
        }
    }

    #[test]
    fn box_features_on_constant_plane() {
        let stack = ChannelStack::new(
            3,
            2,
            vec![Channel::B],
            vec![vec![2.0; 6]],
            vec![ChannelNorm::IDENTITY],
            None,
        )
        .unwrap();
        let f = features(&stack);
        assert!(f.chunks(2).all(|p| p == [2.0, 2.0]));
        let ramp = ChannelStack::new(
            3,
            1,
            vec![Channel::B],
            vec![vec![0.0, 3.0, 6.0]],
            vec![ChannelNorm::IDENTITY],
            None,
        )
        .unwrap();
        let f = features(&ramp);
        // clamped neighbourhoods: (0+0+3)/3, (0+3+6)/3, (3+6+6)/3
        assert_eq!(f, vec![0.0, 1.0, 3.0, 3.0, 6.0, 5.0]);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = LinearModel::from_weights(
            3,
            vec![Channel::B, Channel::G],
            (0..15).map(|i| i as f32 * 0.25 - 1.0).collect(),
        )
        .unwrap();
        m.save(&p).unwrap();
        assert_eq!(LinearModel::load(&p).unwrap(), m);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(LinearModel::load(&p), Err(Error::Model(_))));
    }

    #[test]
    fn config_defaults_and_validation() {
        let d = TrainConfig::default();
        assert_eq!(
            (
                d.learning_rate,
                d.weight_decay,
                d.beta1,
                d.beta2,
                d.batch_size
            ),
            (1e-5, 5e-4, 0.99, 0.999, 12)
        );
        assert_eq!(TrainConfig::desk_scale().learning_rate, 1e-2);
        assert!(TrainConfig {
            beta1: 1.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"momentum":0.9}"#).is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs":3}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.learning_rate, 1e-5);
    }
}
