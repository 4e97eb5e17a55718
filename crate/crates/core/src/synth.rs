//! Seeded synthetic scenes with aligned ground truth.
//!
//! The default spectral models are built around three confusions that a
//! `B,G,R`-only classifier cannot resolve:
//!
//! * building shadows (labelled residential) share water's `B,G,R` mean but
//!   reflect far more NIR;
//! * grass and forest share `B,G,R` and differ only in NIR, hence in NDVI;
//! * bare land and residential share the same bright, noisy `B,G,R` texture
//!   and differ in NIR.
//!
//! Roads are 3–7 px lines running edge to edge, so they cross tile seams.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classes::{read_class_map, write_class_map, ClassMap, ClassScheme};
use crate::error::{Error, Result};
use crate::raster::{read_raster, write_raster, GeoTransform, RasterGrid, Samples};
use crate::spectral::{compute_norm_stats, NormStats, SCENE_BANDS};

pub const CULTIVATED: u8 = 0;
pub const GARDEN: u8 = 1;
pub const FOREST: u8 = 2;
pub const GRASS: u8 = 3;
pub const WATER: u8 = 4;
pub const RESIDENTIAL: u8 = 5;
pub const ROAD: u8 = 6;
pub const BARE: u8 = 7;
pub const AGRICULTURAL: u8 = 8;

const SENSOR_MAX: f32 = 65535.0;

/// Mean `(B, G, R, NIR)` and white-noise sigma of one surface material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub mean: [f32; 4],
    pub sigma: f32,
}

const fn model(b: f32, g: f32, r: f32, nir: f32, sigma: f32) -> SpectralModel {
    SpectralModel {
        mean: [b, g, r, nir],
        sigma,
    }
}

/// Default per-class models, indexed by class id.
pub fn default_class_models() -> Vec<SpectralModel> {
    vec![
        model(520.0, 780.0, 640.0, 2400.0, 90.0),     // cultivated
        model(470.0, 720.0, 560.0, 1900.0, 90.0),     // garden
        model(380.0, 610.0, 430.0, 3100.0, 80.0),     // forest
        model(380.0, 610.0, 430.0, 1300.0, 80.0),     // grass
        model(620.0, 700.0, 480.0, 180.0, 60.0),      // water
        model(1350.0, 1420.0, 1500.0, 1550.0, 320.0), // residential
        model(1000.0, 1050.0, 1080.0, 1150.0, 90.0),  // road
        model(1350.0, 1420.0, 1500.0, 2350.0, 320.0), // bare
        model(1900.0, 2000.0, 2050.0, 2150.0, 120.0), // agricultural facilities
    ]
}

/// Building shadow: water's `B,G,R`, much brighter NIR.
pub fn default_shadow_model() -> SpectralModel {
    model(620.0, 700.0, 480.0, 1100.0, 60.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeMix {
    pub rectangles: usize,
    pub blobs: usize,
    pub roads: usize,
    /// Residential blocks; each holds several building-with-shadow motifs.
    pub buildings: usize,
}

impl Default for ShapeMix {
    fn default() -> Self {
        ShapeMix {
            rectangles: 14,
            blobs: 10,
            roads: 3,
            buildings: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_class_models")]
    pub class_models: Vec<SpectralModel>,
    #[serde(default = "default_shadow_model")]
    pub shadow: SpectralModel,
    #[serde(default)]
    pub shapes: ShapeMix,
    /// Ground sample distance in meters.
    #[serde(default = "default_gsd")]
    pub pixel_size: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_gsd() -> f64 {
    2.0
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 384,
            height: 384,
            class_models: default_class_models(),
            shadow: default_shadow_model(),
            shapes: ShapeMix::default(),
            pixel_size: default_gsd(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidScene("empty scene".into()));
        }
        if self.class_models.len() < 2 || self.class_models.len() > 255 {
            return Err(Error::InvalidScene(format!(
                "need 2..=255 class models, got {}",
                self.class_models.len()
            )));
        }
        if self.class_models.len() <= AGRICULTURAL as usize {
            return Err(Error::InvalidScene(
                "shape painter needs the nine land-use class models".into(),
            ));
        }
        for m in self
            .class_models
            .iter()
            .chain(std::iter::once(&self.shadow))
        {
            if !(m.sigma >= 0.0 && m.sigma.is_finite())
                || m.mean.iter().any(|v| !(0.0..=SENSOR_MAX).contains(v))
            {
                return Err(Error::InvalidScene(format!("invalid spectral model {m:?}")));
            }
        }
        if !(self.pixel_size > 0.0) {
            return Err(Error::InvalidScene("pixel size must be positive".into()));
        }
        Ok(())
    }
}

/// Material painted at a pixel: a class model, or the shadow model.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Material {
    Class(u8),
    Shadow,
}

struct Canvas {
    width: usize,
    height: usize,
    material: Vec<Material>,
    label: Vec<u8>,
}

impl Canvas {
    fn paint(&mut self, x: i64, y: i64, material: Material, label: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = y as usize * self.width + x as usize;
            self.material[i] = material;
            self.label[i] = label;
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, material: Material, label: u8) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.paint(x, y, material, label);
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, class: u8) {
        let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
        let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.paint(x, y, Material::Class(class), class);
                }
            }
        }
    }

    /// Thick segment from `a` to `b`.
    fn line(&mut self, a: (f64, f64), b: (f64, f64), width: f64, class: u8) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return;
        }
        let half = width / 2.0;
        let x0 = (a.0.min(b.0) - half).floor() as i64;
        let x1 = (a.0.max(b.0) + half).ceil() as i64;
        let y0 = (a.1.min(b.1) - half).floor() as i64;
        let y1 = (a.1.max(b.1) + half).ceil() as i64;
        for y in y0.max(0)..=y1.min(self.height as i64 - 1) {
            for x in x0.max(0)..=x1.min(self.width as i64 - 1) {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if qx * qx + qy * qy <= half * half {
                    self.paint(x, y, Material::Class(class), class);
                }
            }
        }
    }
}

fn edge_point(rng: &mut ChaCha8Rng, w: f64, h: f64, side: u32) -> (f64, f64) {
    match side % 4 {
        0 => (rng.gen_range(0.0..w), 0.0),
        1 => (w, rng.gen_range(0.0..h)),
        2 => (rng.gen_range(0.0..w), h),
        _ => (0.0, rng.gen_range(0.0..h)),
    }
}

fn paint_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Canvas {
    let (w, h) = (spec.width, spec.height);
    let mut c = Canvas {
        width: w,
        height: h,
        material: vec![Material::Class(FOREST); w * h],
        label: vec![FOREST; w * h],
    };
    // size unit: shapes scale with the scene's shorter side
    let unit = (w.min(h) as f64 / 384.0).max(0.05);
    let (wf, hf) = (w as f64, h as f64);

    for _ in 0..spec.shapes.blobs {
        let class = [FOREST, GRASS, WATER, GRASS, WATER, CULTIVATED][rng.gen_range(0..6)];
        let (cx, cy) = (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf));
        for _ in 0..rng.gen_range(3..6) {
            let r = rng.gen_range(12.0..40.0) * unit;
            let ox = rng.gen_range(-30.0..30.0) * unit;
            let oy = rng.gen_range(-30.0..30.0) * unit;
            c.disc(cx + ox, cy + oy, r, class);
        }
    }

    for _ in 0..spec.shapes.rectangles {
        let class = [
            CULTIVATED,
            GARDEN,
            GRASS,
            BARE,
            AGRICULTURAL,
            BARE,
            CULTIVATED,
        ][rng.gen_range(0..7)];
        let rw = (rng.gen_range(20.0..90.0) * unit).ceil() as i64;
        let rh = (rng.gen_range(20.0..90.0) * unit).ceil() as i64;
        let x0 = rng.gen_range(-(rw / 2)..w as i64);
        let y0 = rng.gen_range(-(rh / 2)..h as i64);
        c.rect(x0, y0, rw, rh, Material::Class(class), class);
    }

    for _ in 0..spec.shapes.buildings {
        let bw = (rng.gen_range(50.0..110.0) * unit).ceil() as i64;
        let bh = (rng.gen_range(50.0..110.0) * unit).ceil() as i64;
        let x0 = rng.gen_range(-(bw / 2)..w as i64);
        let y0 = rng.gen_range(-(bh / 2)..h as i64);
        c.rect(x0, y0, bw, bh, Material::Class(RESIDENTIAL), RESIDENTIAL);
        let motifs = rng.gen_range(4..9);
        for _ in 0..motifs {
            let sw = (rng.gen_range(6.0..16.0) * unit).ceil().max(2.0) as i64;
            let sh = (rng.gen_range(6.0..16.0) * unit).ceil().max(2.0) as i64;
            let sx = x0 + rng.gen_range(0..bw.max(1));
            let sy = y0 + rng.gen_range(0..bh.max(1));
            let len = (rng.gen_range(6.0..14.0) * unit).ceil().max(2.0) as i64;
            // shadow cast to the south-east of the building footprint
            c.rect(
                sx + sw,
                sy + len / 2,
                len,
                sh,
                Material::Shadow,
                RESIDENTIAL,
            );
            c.rect(
                sx + len / 2,
                sy + sh,
                sw,
                len,
                Material::Shadow,
                RESIDENTIAL,
            );
            c.rect(sx, sy, sw, sh, Material::Class(RESIDENTIAL), RESIDENTIAL);
        }
    }

    for _ in 0..spec.shapes.roads {
        let side = rng.gen_range(0..4u32);
        let a = edge_point(rng, wf, hf, side);
        let other = side + rng.gen_range(1..4u32);
        let b = edge_point(rng, wf, hf, other);
        let width = rng.gen_range(3..=7) as f64;
        c.line(a, b, width, ROAD);
    }
    c
}

/// Paints one scene and draws its pixels. Deterministic for a given spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<(RasterGrid, ClassMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let canvas = paint_layout(spec, &mut rng);
    let n = spec.width * spec.height;
    let mut data = vec![0u16; 4 * n];
    for (i, m) in canvas.material.iter().enumerate() {
        let model = match *m {
            Material::Class(c) => &spec.class_models[c as usize],
            Material::Shadow => &spec.shadow,
        };
        for b in 0..4 {
            let z: f32 = rng.sample(StandardNormal);
            data[b * n + i] = (model.mean[b] + model.sigma * z)
                .round()
                .clamp(0.0, SENSOR_MAX) as u16;
        }
    }
    let gt = GeoTransform::new(
        0.0,
        spec.height as f64 * spec.pixel_size,
        spec.pixel_size,
        spec.pixel_size,
    );
    let grid = RasterGrid::new(
        spec.width as u64,
        spec.height as u64,
        SCENE_BANDS.iter().map(|s| s.to_string()).collect(),
        None,
        gt,
        Samples::U16(data),
    )?;
    let labels = ClassMap::new(spec.width, spec.height, gt, canvas.label)?;
    Ok((grid, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub image: String,
    pub labels: String,
    pub split: Split,
    pub seed: u64,
    /// Pixel count per class id (IGNORE excluded).
    pub class_histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub scenes: Vec<SceneEntry>,
    /// Per-scene normalization, keyed by image file name.
    pub norm_stats: BTreeMap<String, NormStats>,
    pub class_scheme: ClassScheme,
    pub seed: u64,
    pub scene_spec: SceneSpec,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const NORM_LOW_PCT: f64 = 2.0;
pub const NORM_HIGH_PCT: f64 = 98.0;
pub const VALIDATION_FRACTION: f64 = 0.05;

/// Number of validation scenes for a corpus of `n`: `ceil(5% of n)`.
pub fn validation_count(n: usize) -> usize {
    // integer form of ceil(n * 0.05), immune to float rounding
    n.div_ceil(20)
}

/// Per-scene seed: independent of generation order.
pub fn scene_seed(corpus_seed: u64, index: usize) -> u64 {
    crate::hash::mix(&[corpus_seed, 0x5ce7e, index as u64])
}

/// Writes `n_scenes` scenes plus labels to `dir` and returns the manifest
/// (also saved as `dir/manifest.json`). Whole scenes are assigned to the
/// validation split, never individual tiles.
pub fn generate_corpus(
    template: &SceneSpec,
    n_scenes: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<CorpusManifest> {
    if n_scenes < 2 {
        return Err(Error::InvalidScene(format!(
            "corpus needs at least 2 scenes, got {n_scenes}"
        )));
    }
    template.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut order: Vec<usize> = (0..n_scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::hash::mix(&[seed, 0x5b117]));
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut is_val = vec![false; n_scenes];
    for &i in &order[..validation_count(n_scenes)] {
        is_val[i] = true;
    }

    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(n_scenes);
    let results: Vec<Result<(SceneEntry, NormStats)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let is_val = &is_val;
                s.spawn(move || {
                    (w..n_scenes)
                        .step_by(workers)
                        .map(|i| {
                            let spec = SceneSpec {
                                seed: scene_seed(seed, i),
                                ..template.clone()
                            };
                            write_scene(&spec, i, is_val[i], dir)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut per_worker: Vec<std::vec::IntoIter<_>> = handles
            .into_iter()
            .map(|h| h.join().expect("scene worker panicked").into_iter())
            .collect();
        (0..n_scenes)
            .map(|i| per_worker[i % workers].next().unwrap())
            .collect()
    });

    let mut scenes = Vec::with_capacity(n_scenes);
    let mut norm_stats = BTreeMap::new();
    for r in results {
        let (entry, stats) = r?;
        norm_stats.insert(entry.image.clone(), stats);
        scenes.push(entry);
    }
    let manifest = CorpusManifest {
        scenes,
        norm_stats,
        class_scheme: ClassScheme::land_use(),
        seed,
        scene_spec: template.clone(),
    };
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn write_scene(
    spec: &SceneSpec,
    index: usize,
    validation: bool,
    dir: &Path,
) -> Result<(SceneEntry, NormStats)> {
    let (grid, labels) = generate_scene(spec)?;
    let image = format!("scene_{index:03}.rstr");
    let label_file = format!("scene_{index:03}_labels.rstr");
    write_raster(&grid, dir.join(&image))?;
    write_class_map(&labels, dir.join(&label_file))?;
    let stats = compute_norm_stats(&grid, NORM_LOW_PCT, NORM_HIGH_PCT)?;
    let k = spec.class_models.len();
    let hist = labels.histogram();
    Ok((
        SceneEntry {
            image,
            labels: label_file,
            split: if validation {
                Split::Validation
            } else {
                Split::Train
            },
            seed: spec.seed,
            class_histogram: hist[..k].to_vec(),
        },
        stats,
    ))
}

impl CorpusManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn scenes_in(&self, split: Split) -> impl Iterator<Item = (usize, &SceneEntry)> {
        self.scenes
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.split == split)
    }

    pub fn stats_for(&self, entry: &SceneEntry) -> Result<&NormStats> {
        self.norm_stats
            .get(&entry.image)
            .ok_or_else(|| Error::Config(format!("manifest lacks norm stats for {}", entry.image)))
    }
}

/// Resolves manifest-relative file names.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest = CorpusManifest::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Corpus { dir, manifest })
    }

    pub fn image_path(&self, entry: &SceneEntry) -> PathBuf {
        self.dir.join(&entry.image)
    }

    pub fn labels_path(&self, entry: &SceneEntry) -> PathBuf {
        self.dir.join(&entry.labels)
    }

    pub fn load_scene(&self, entry: &SceneEntry) -> Result<(RasterGrid, ClassMap)> {
        Ok((
            read_raster(self.image_path(entry))?,
            read_class_map(self.labels_path(entry))?,
        ))
    }
}
