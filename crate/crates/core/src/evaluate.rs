//! Confusion matrices and accuracy metrics.
//!
//! Pixels where either the truth or the prediction is [`IGNORE`] are left
//! out of every count.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::{ClassMap, ClassScheme, IGNORE};
use crate::error::{Error, Result};
use crate::raster::{RasterReader, Samples, Window};
use crate::tiling::TilePlan;

/// `counts[t * k + p]` pixels of truth class `t` were predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {k} classes",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Adds pixel pairs; labels outside the scheme are an error.
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predicted vs {} truth pixels",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.k;
        for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
            if p == IGNORE || t == IGNORE {
                continue;
            }
            if p as usize >= k || t as usize >= k {
                return Err(Error::InvalidLabel {
                    label: if t as usize >= k { t } else { p },
                    x: i,
                    y: 0,
                    k,
                });
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Elementwise sum; order of merging never changes the result.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::ShapeMismatch(format!(
                "merging {}-class into {}-class matrix",
                other.k, self.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Recall per truth class; `None` for classes absent from the truth.
    pub fn producer_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|t| {
                let row: u64 = (0..self.k).map(|p| self.get(t, p)).sum();
                (row > 0).then(|| self.get(t, t) as f64 / row as f64)
            })
            .collect()
    }

    /// Precision per predicted class; `None` for classes never predicted.
    pub fn user_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|p| {
                let col: u64 = (0..self.k).map(|t| self.get(t, p)).sum();
                (col > 0).then(|| self.get(p, p) as f64 / col as f64)
            })
            .collect()
    }
}

pub fn confusion(pred: &ClassMap, truth: &ClassMap, k: usize) -> Result<ConfusionMatrix> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(pred.labels(), truth.labels())
        .map_err(|e| locate(e, truth.width()))?;
    Ok(cm)
}

fn locate(e: Error, width: usize) -> Error {
    match e {
        Error::InvalidLabel { label, x, k, .. } => Error::InvalidLabel {
            label,
            x: x % width,
            y: x / width,
            k,
        },
        other => other,
    }
}

/// Accumulates over two class-map files a strip of rows at a time.
pub fn confusion_streamed(
    pred_path: impl AsRef<Path>,
    truth_path: impl AsRef<Path>,
    k: usize,
    strip_rows: usize,
) -> Result<ConfusionMatrix> {
    let pred = RasterReader::open(pred_path)?;
    let truth = RasterReader::open(truth_path)?;
    let (ph, th) = (pred.header(), truth.header());
    if (ph.width, ph.height) != (th.width, th.height) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            ph.width, ph.height, th.width, th.height
        )));
    }
    let (w, h) = (th.width as usize, th.height as usize);
    let strip_rows = strip_rows.max(1);
    let mut cm = ConfusionMatrix::new(k);
    let mut y = 0;
    while y < h {
        let rows = strip_rows.min(h - y);
        let window = Window::new(0, y as i64, w, rows);
        let p = single_u8_band(pred.read_window(window)?.into_data())?;
        let t = single_u8_band(truth.read_window(window)?.into_data())?;
        let mut part = ConfusionMatrix::new(k);
        part.accumulate(&p, &t).map_err(|e| match locate(e, w) {
            Error::InvalidLabel { label, x, y: dy, k } => Error::InvalidLabel {
                label,
                x,
                y: y + dy,
                k,
            },
            other => other,
        })?;
        cm.merge(&part)?;
        y += rows;
    }
    Ok(cm)
}

fn single_u8_band(samples: Samples) -> Result<Vec<u8>> {
    match samples {
        Samples::U8(v) => Ok(v),
        other => Err(Error::BandLayout(format!(
            "class map must be u8, found {:?}",
            other.dtype()
        ))),
    }
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix("no labelled pixels to compare".into()));
    }
    Ok(cm.correct() as f64 / total as f64)
}

/// True for pixels within `band` of an interior seam between center windows.
pub fn boundary_mask(plan: &TilePlan, band: usize) -> Vec<bool> {
    let (sx, sy) = plan.seams();
    let near = |v: usize, seams: &[usize]| seams.iter().any(|&s| v + band >= s && v < s + band);
    let cols: Vec<bool> = (0..plan.width).map(|x| near(x, &sx)).collect();
    let mut mask = Vec::with_capacity(plan.width * plan.height);
    for y in 0..plan.height {
        let row_near = near(y, &sy);
        mask.extend(cols.iter().map(|&c| c || row_near));
    }
    mask
}

/// Overall accuracy restricted to the seam band of `plan`.
pub fn boundary_accuracy(
    pred: &ClassMap,
    truth: &ClassMap,
    plan: &TilePlan,
    band: usize,
    k: usize,
) -> Result<f64> {
    let cm = boundary_confusion(pred, truth, plan, band, k)?;
    overall_accuracy(&cm)
        .map_err(|_| Error::EmptyMatrix("no labelled pixels in the seam band".into()))
}

/// Confusion matrix over the seam band of `plan` only.
pub fn boundary_confusion(
    pred: &ClassMap,
    truth: &ClassMap,
    plan: &TilePlan,
    band: usize,
    k: usize,
) -> Result<ConfusionMatrix> {
    if band == 0 {
        return Err(Error::Config(
            "boundary band must be at least 1 pixel".into(),
        ));
    }
    if (pred.width(), pred.height()) != (plan.width, plan.height)
        || (truth.width(), truth.height()) != (plan.width, plan.height)
    {
        return Err(Error::ShapeMismatch(
            "maps do not match the tile plan".into(),
        ));
    }
    let mask = boundary_mask(plan, band);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMatrix("plan has no interior seams".into()));
    }
    let keep = |labels: &[u8]| -> Vec<u8> {
        labels
            .iter()
            .zip(&mask)
            .map(|(&l, &m)| if m { l } else { IGNORE })
            .collect()
    };
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(&keep(pred.labels()), &keep(truth.labels()))
        .map_err(|e| locate(e, plan.width))?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub class_names: Vec<String>,
    /// Row-major `truth x prediction` counts.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    pub overall_accuracy: Option<f64>,
    pub producer_accuracy: Vec<Option<f64>>,
    pub user_accuracy: Vec<Option<f64>>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Report {
    pub fn new(
        cm: &ConfusionMatrix,
        scheme: &ClassScheme,
        metadata: serde_json::Value,
    ) -> Result<Self> {
        if scheme.len() != cm.classes() {
            return Err(Error::ShapeMismatch(format!(
                "{}-class scheme for a {}-class matrix",
                scheme.len(),
                cm.classes()
            )));
        }
        Ok(Report {
            class_names: scheme.names(),
            counts: cm
                .counts()
                .chunks(cm.classes())
                .map(<[u64]>::to_vec)
                .collect(),
            total: cm.total(),
            overall_accuracy: overall_accuracy(cm).ok(),
            producer_accuracy: cm.producer_accuracy(),
            user_accuracy: cm.user_accuracy(),
            metadata,
        })
    }

    pub fn matrix(&self) -> Result<ConfusionMatrix> {
        let k = self.class_names.len();
        if self.counts.len() != k || self.counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("report counts are not square".into()));
        }
        ConfusionMatrix::from_counts(k, self.counts.concat())
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut out = String::from("truth\\pred");
        for n in &self.class_names {
            write!(out, ",{n}").unwrap();
        }
        out.push_str(",producer_accuracy\n");
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&self.class_names[i]);
            for c in row {
                write!(out, ",{c}").unwrap();
            }
            writeln!(out, ",{}", fmt(self.producer_accuracy[i])).unwrap();
        }
        out.push_str("user_accuracy");
        for u in &self.user_accuracy {
            write!(out, ",{}", fmt(*u)).unwrap();
        }
        writeln!(out, ",{}", fmt(self.overall_accuracy)).unwrap();
        out
    }
}

/// Writes `<path>` as JSON and a `.csv` twin next to it.
pub fn report(
    cm: &ConfusionMatrix,
    scheme: &ClassScheme,
    metadata: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<Report> {
    let path = path.as_ref();
    let r = Report::new(cm, scheme, metadata)?;
    let json = serde_json::to_string_pretty(&r)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, r.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(r)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{write_class_map, ClassDef};
    use crate::raster::GeoTransform;
    use crate::tiling::{plan_tiles, PadMode, TileSpec};
    use rand::{Rng, SeedableRng};

    fn map(w: usize, h: usize, labels: Vec<u8>) -> ClassMap {
        ClassMap::new(w, h, GeoTransform::default(), labels).unwrap()
    }

    fn two_class() -> ClassScheme {
        ClassScheme::new(vec![
            ClassDef {
                id: 0,
                name: "a".into(),
                color: [0, 0, 0],
            },
            ClassDef {
                id: 1,
                name: "b".into(),
                color: [255, 255, 255],
            },
        ])
        .unwrap()
    }

    #[test]
    fn four_pixel_case() {
        let cm = confusion(
            &map(4, 1, vec![0, 1, 1, 1]),
            &map(4, 1, vec![0, 0, 1, 1]),
            2,
        )
        .unwrap();
        assert_eq!(cm.counts(), &[1, 1, 0, 2]);
        assert_eq!(overall_accuracy(&cm).unwrap(), 0.75);
        assert_eq!(cm.producer_accuracy(), vec![Some(0.5), Some(1.0)]);
        assert_eq!(cm.user_accuracy(), vec![Some(1.0), Some(2.0 / 3.0)]);
    }

    #[test]
    fn identity_and_ignore() {
        let t = map(3, 2, vec![0, 1, 2, 2, 1, 0]);
        let cm = confusion(&t, &t, 3).unwrap();
        assert_eq!(overall_accuracy(&cm).unwrap(), 1.0);
        assert!(cm.producer_accuracy().iter().all(|&a| a == Some(1.0)));
        let empty = map(3, 2, vec![IGNORE; 6]);
        let cm = confusion(&t, &empty, 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(overall_accuracy(&cm).is_err());
        // IGNORE in the prediction is skipped, not counted wrong
        let p = map(3, 2, vec![IGNORE, 1, 2, 2, 1, 1]);
        let cm = confusion(&p, &t, 3).unwrap();
        assert_eq!((cm.total(), cm.correct()), (5, 4));
        assert!(confusion(&map(2, 1, vec![0, 0]), &t, 3).is_err());
        assert!(confusion(&map(3, 2, vec![5; 6]), &t, 3).is_err());
    }

    #[test]
    fn random_prediction_near_chance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let k = 9;
        let t: Vec<u8> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let cm = confusion(&map(n, 1, p), &map(n, 1, t), k as usize).unwrap();
        let q = 1.0 / k as f64;
        let sigma = (q * (1.0 - q) / n as f64).sqrt();
        assert!((overall_accuracy(&cm).unwrap() - q).abs() < 3.0 * sigma);
    }

    #[test]
    fn permuting_classes_permutes_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let t: Vec<u8> = (0..500).map(|_| rng.gen_range(0..4)).collect();
        let p: Vec<u8> = (0..500).map(|_| rng.gen_range(0..4)).collect();
        let perm = [2u8, 0, 3, 1];
        let a = confusion(&map(500, 1, p.clone()), &map(500, 1, t.clone()), 4).unwrap();
        let pm = |v: &[u8]| v.iter().map(|&l| perm[l as usize]).collect::<Vec<_>>();
        let b = confusion(&map(500, 1, pm(&p)), &map(500, 1, pm(&t)), 4).unwrap();
        for ti in 0..4 {
            for pi in 0..4 {
                assert_eq!(a.get(ti, pi), b.get(perm[ti] as usize, perm[pi] as usize));
            }
        }
        assert_eq!(overall_accuracy(&a).unwrap(), overall_accuracy(&b).unwrap());
    }

    #[test]
    fn streamed_equals_whole() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let (w, h) = (37, 53);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<u8> {
            (0..w * h)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        IGNORE
                    } else {
                        rng.gen_range(0..5)
                    }
                })
                .collect()
        };
        let p = map(w, h, draw(&mut rng));
        let t = map(w, h, draw(&mut rng));
        write_class_map(&p, dir.path().join("p.rstr")).unwrap();
        write_class_map(&t, dir.path().join("t.rstr")).unwrap();
        let whole = confusion(&p, &t, 5).unwrap();
        for strip in [1, 7, 53, 1000] {
            let s = confusion_streamed(
                dir.path().join("p.rstr"),
                dir.path().join("t.rstr"),
                5,
                strip,
            )
            .unwrap();
            assert_eq!(s, whole);
        }
    }

    #[test]
    fn boundary_band() {
        let plan = plan_tiles(40, 20, TileSpec::new(10, 10, PadMode::Mirror).unwrap()).unwrap();
        let mask = boundary_mask(&plan, 2);
        // seams at x = 10, 20, 30 and y = 10
        assert!(mask[5 * 40 + 8] && mask[5 * 40 + 11] && !mask[5 * 40 + 12] && !mask[5 * 40 + 7]);
        assert!(mask[9 * 40 + 5] && !mask[7 * 40 + 5]);
        let t = map(40, 20, vec![1; 800]);
        assert_eq!(boundary_accuracy(&t, &t, &plan, 2, 2).unwrap(), 1.0);
        let mut p = t.clone();
        p.set(11, 5, 0);
        p.set(5, 5, 0);
        let n = mask.iter().filter(|&&m| m).count() as f64;
        assert!((boundary_accuracy(&p, &t, &plan, 2, 2).unwrap() - (n - 1.0) / n).abs() < 1e-12);
        let single = plan_tiles(10, 10, TileSpec::new(10, 10, PadMode::Mirror).unwrap()).unwrap();
        let t = map(10, 10, vec![0; 100]);
        assert!(boundary_accuracy(&t, &t, &single, 2, 2).is_err());
        assert!(boundary_accuracy(&t, &t, &single, 0, 2).is_err());
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cm = ConfusionMatrix::from_counts(2, vec![1, 1, 0, 2]).unwrap();
        let path = dir.path().join("report.json");
        let r = report(&cm, &two_class(), serde_json::json!({"run": "x"}), &path).unwrap();
        assert_eq!(r.producer_accuracy[0], Some(0.5));
        let back = read_report(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.matrix().unwrap(), cm);
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(
            csv,
            "truth\\pred,a,b,producer_accuracy\na,1,1,0.500000\nb,0,2,1.000000\nuser_accuracy,1.000000,0.666667,0.750000\n"
        );
        let json = std::fs::read_to_string(&path).unwrap();
        let keys = [
            "class_names",
            "counts",
            "total",
            "overall_accuracy",
            "producer_accuracy",
            "user_accuracy",
        ];
        let pos: Vec<usize> = keys
            .iter()
            .map(|k| json.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn diagonal_report_all_ones() {
        let cm = ConfusionMatrix::from_counts(2, vec![4, 0, 0, 9]).unwrap();
        let r = Report::new(&cm, &two_class(), serde_json::Value::Null).unwrap();
        assert!(r
            .producer_accuracy
            .iter()
            .chain(&r.user_accuracy)
            .all(|&a| a == Some(1.0)));
    }
}
