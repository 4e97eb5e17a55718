//! Class schemes, label maps and PNG rendering.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    read_raster, write_raster, DType, GeoTransform, RasterGrid, RasterHeader, Samples, Window,
};

/// Label value excluded from training and evaluation.
pub const IGNORE: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassDef>", into = "Vec<ClassDef>")]
pub struct ClassScheme {
    classes: Vec<ClassDef>,
}

impl ClassScheme {
    pub fn new(classes: Vec<ClassDef>) -> Result<Self> {
        if classes.len() < 2 || classes.len() > IGNORE as usize {
            return Err(Error::Config(format!(
                "class scheme needs 2..=255 classes, got {}",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Config(format!(
                    "class ids must be contiguous from 0; position {i} has id {}",
                    c.id
                )));
            }
            if classes[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate class name {:?}", c.name)));
            }
        }
        Ok(ClassScheme { classes })
    }

    /// Nine land-use classes: cultivated land, garden land, forest land,
    /// grass land, water body, residential area, road, bare land,
    /// agricultural facilities.
    pub fn land_use() -> Self {
        const DEFAULT: [(&str, [u8; 3]); 9] = [
            ("cultivated land", [230, 200, 90]),
            ("garden land", [170, 210, 80]),
            ("forest land", [20, 110, 40]),
            ("grass land", [140, 230, 140]),
            ("water body", [30, 90, 220]),
            ("residential area", [220, 40, 40]),
            ("road", [120, 120, 120]),
            ("bare land", [200, 170, 140]),
            ("agricultural facilities", [240, 240, 240]),
        ];
        ClassScheme {
            classes: DEFAULT
                .iter()
                .enumerate()
                .map(|(i, (name, color))| ClassDef {
                    id: i as u8,
                    name: (*name).to_string(),
                    color: *color,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn color(&self, label: u8) -> Option<[u8; 3]> {
        self.classes.get(label as usize).map(|c| c.color)
    }
}

impl TryFrom<Vec<ClassDef>> for ClassScheme {
    type Error = Error;
    fn try_from(v: Vec<ClassDef>) -> Result<Self> {
        ClassScheme::new(v)
    }
}

impl From<ClassScheme> for Vec<ClassDef> {
    fn from(s: ClassScheme) -> Self {
        s.classes
    }
}

impl Default for ClassScheme {
    fn default() -> Self {
        ClassScheme::land_use()
    }
}

/// Single-band u8 label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    width: usize,
    height: usize,
    geotransform: GeoTransform,
    labels: Vec<u8>,
}

impl ClassMap {
    pub fn new(
        width: usize,
        height: usize,
        geotransform: GeoTransform,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "{} labels for a {width}x{height} class map",
                labels.len()
            )));
        }
        Ok(ClassMap {
            width,
            height,
            geotransform,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, geotransform: GeoTransform, label: u8) -> Self {
        ClassMap::new(width, height, geotransform, vec![label; width * height])
            .expect("non-empty shape")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    /// Checks every non-IGNORE label is below `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l != IGNORE && l as usize >= k)
        {
            None => Ok(()),
            Some(i) => Err(Error::InvalidLabel {
                label: self.labels[i],
                x: i % self.width,
                y: i / self.width,
                k,
            }),
        }
    }

    pub fn crop(&self, window: Window) -> Result<ClassMap> {
        if !window.fits_within(self.width as u64, self.height as u64) {
            return Err(Error::OutOfBounds {
                window: window.to_string(),
                width: self.width as u64,
                height: self.height as u64,
            });
        }
        let (x0, y0) = (window.x0 as usize, window.y0 as usize);
        let labels = (y0..y0 + window.h)
            .flat_map(|y| &self.labels[y * self.width + x0..y * self.width + x0 + window.w])
            .copied()
            .collect();
        ClassMap::new(
            window.w,
            window.h,
            self.geotransform.translate(window.x0, window.y0),
            labels,
        )
    }

    /// Per-class pixel counts (index 255 holds IGNORE).
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn raster_header(&self) -> RasterHeader {
        class_map_header(self.width, self.height, self.geotransform)
    }

    pub fn to_grid(&self) -> RasterGrid {
        RasterGrid::new(
            self.width as u64,
            self.height as u64,
            vec!["class".into()],
            Some(IGNORE as f64),
            self.geotransform,
            Samples::U8(self.labels.clone()),
        )
        .expect("class map shape is valid")
    }

    pub fn from_grid(grid: RasterGrid) -> Result<Self> {
        if grid.bands() != 1 || grid.dtype() != DType::U8 {
            return Err(Error::BandLayout(format!(
                "class map must be one u8 band, got {} {:?} bands",
                grid.bands(),
                grid.dtype()
            )));
        }
        let (w, h, gt) = (
            grid.width() as usize,
            grid.height() as usize,
            grid.geotransform(),
        );
        match grid.into_data() {
            Samples::U8(labels) => ClassMap::new(w, h, gt, labels),
            _ => unreachable!("dtype checked above"),
        }
    }
}

pub fn class_map_header(width: usize, height: usize, geotransform: GeoTransform) -> RasterHeader {
    RasterHeader {
        width: width as u64,
        height: height as u64,
        bands: 1,
        dtype: DType::U8,
        nodata: Some(IGNORE as f64),
        geotransform,
        band_names: vec!["class".into()],
    }
}

pub fn write_class_map(map: &ClassMap, path: impl AsRef<Path>) -> Result<()> {
    write_raster(&map.to_grid(), path)
}

pub fn read_class_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    ClassMap::from_grid(read_raster(path)?)
}

/// Renders `map` as 8-bit RGB; IGNORE pixels are black.
pub fn export_class_png(
    map: &ClassMap,
    scheme: &ClassScheme,
    path: impl AsRef<Path>,
) -> Result<()> {
    map.validate(scheme.len())?;
    let path = path.as_ref();
    let mut rgb = Vec::with_capacity(map.labels.len() * 3);
    for &l in &map.labels {
        rgb.extend_from_slice(&scheme.color(l).unwrap_or([0, 0, 0]));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), map.width as u32, map.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))
}
