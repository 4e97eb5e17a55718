//! Multi-band raster grids and the `.rstr` container.
//!
//! A `.rstr` file is laid out as
//!
//! ```text
//! "RSTR0001" | u32 LE header length | UTF-8 JSON header | payload
//! ```
//!
//! The header carries `{width, height, bands, dtype, nodata, geotransform,
//! band_names}` in that key order. The payload is band-sequential,
//! row-major, little-endian. Payload length is always checked against the
//! header, which is the only source of shape information.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RSTR0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::F32 => 4,
        }
    }
}

/// Sample storage, one variant per supported dtype.
#[derive(Debug, Clone)]
pub enum Samples {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl PartialEq for Samples {
    // f32 payloads compare by bit pattern so NaN-carrying grids round-trip equal.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Samples::U8(a), Samples::U8(b)) => a == b,
            (Samples::U16(a), Samples::U16(b)) => a == b,
            (Samples::F32(a), Samples::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

impl Samples {
    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::U8 => Samples::U8(vec![0; len]),
            DType::U16 => Samples::U16(vec![0; len]),
            DType::F32 => Samples::F32(vec![0.0; len]),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Samples::U8(_) => DType::U8,
            Samples::U16(_) => DType::U16,
            Samples::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get_f32(&self, i: usize) -> f32 {
        match self {
            Samples::U8(v) => v[i] as f32,
            Samples::U16(v) => v[i] as f32,
            Samples::F32(v) => v[i],
        }
    }

    /// Copies `range` out as f32.
    pub fn slice_f32(&self, range: std::ops::Range<usize>) -> Vec<f32> {
        match self {
            Samples::U8(v) => v[range].iter().map(|&x| x as f32).collect(),
            Samples::U16(v) => v[range].iter().map(|&x| x as f32).collect(),
            Samples::F32(v) => v[range].to_vec(),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Samples::U8(v) => v.clone(),
            Samples::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Samples::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::U8 => Samples::U8(bytes.to_vec()),
            DType::U16 => Samples::U16(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            DType::F32 => Samples::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

/// Affine georeferencing: `(origin_x, pixel_w, 0, origin_y, 0, -pixel_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Self {
        GeoTransform([origin_x, pixel_w, 0.0, origin_y, 0.0, -pixel_h])
    }

    pub fn pixel_w(&self) -> f64 {
        self.0[1]
    }

    pub fn pixel_h(&self) -> f64 {
        -self.0[5]
    }

    /// Transform for a sub-grid whose top-left pixel is `(dx, dy)` here.
    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        let mut t = self.0;
        t[0] += dx as f64 * t[1] + dy as f64 * t[2];
        t[3] += dx as f64 * t[4] + dy as f64 * t[5];
        GeoTransform(t)
    }

    fn validate(&self) -> Result<()> {
        if !(self.pixel_w() > 0.0 && self.pixel_h() > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "pixel size must be positive, got {}x{}",
                self.pixel_w(),
                self.pixel_h()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite geotransform".into()));
        }
        Ok(())
    }
}

impl Default for GeoTransform {
    fn default() -> Self {
        GeoTransform::new(0.0, 0.0, 1.0, 1.0)
    }
}

/// A rectangular pixel region. Offsets may be negative in padded space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn new(x0: i64, y0: i64, w: usize, h: usize) -> Self {
        debug_assert!(w > 0 && h > 0, "empty window");
        Window { x0, y0, w, h }
    }

    pub fn x1(&self) -> i64 {
        self.x0 + self.w as i64
    }

    pub fn y1(&self) -> i64 {
        self.y0 + self.h as i64
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    pub fn fits_within(&self, width: u64, height: u64) -> bool {
        self.w > 0
            && self.h > 0
            && self.x0 >= 0
            && self.y0 >= 0
            && self.x1() as u64 <= width
            && self.y1() as u64 <= height
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{})x[{},{})", self.x0, self.x1(), self.y0, self.y1())
    }
}

/// On-disk header; field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterHeader {
    pub width: u64,
    pub height: u64,
    pub bands: usize,
    pub dtype: DType,
    pub nodata: Option<f64>,
    pub geotransform: GeoTransform,
    pub band_names: Vec<String>,
}

impl RasterHeader {
    pub fn payload_len(&self) -> u64 {
        self.width * self.height * self.bands as u64 * self.dtype.size() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::InvalidHeader(format!(
                "empty shape {}x{}x{}",
                self.width, self.height, self.bands
            )));
        }
        if self.band_names.len() != self.bands {
            return Err(Error::InvalidHeader(format!(
                "{} band names for {} bands",
                self.band_names.len(),
                self.bands
            )));
        }
        if let Some(nd) = self.nodata {
            let ok = match self.dtype {
                DType::U8 => nd.fract() == 0.0 && (0.0..=255.0).contains(&nd),
                DType::U16 => nd.fract() == 0.0 && (0.0..=65535.0).contains(&nd),
                DType::F32 => nd.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidHeader(format!(
                    "nodata {nd} outside the {:?} domain",
                    self.dtype
                )));
            }
        }
        self.geotransform
            .validate()
            .map_err(|e| Error::InvalidHeader(e.to_string()))
    }
}

/// Multi-band grid held fully in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: u64,
    height: u64,
    nodata: Option<f64>,
    geotransform: GeoTransform,
    band_names: Vec<String>,
    data: Samples,
}

impl RasterGrid {
    pub fn new(
        width: u64,
        height: u64,
        band_names: Vec<String>,
        nodata: Option<f64>,
        geotransform: GeoTransform,
        data: Samples,
    ) -> Result<Self> {
        let header = RasterHeader {
            width,
            height,
            bands: band_names.len(),
            dtype: data.dtype(),
            nodata,
            geotransform,
            band_names,
        };
        Self::from_header(header, data)
    }

    fn from_header(header: RasterHeader, data: Samples) -> Result<Self> {
        header
            .validate()
            .map_err(|e| Error::InvalidGrid(e.to_string()))?;
        let expected = header.width * header.height * header.bands as u64;
        if data.len() as u64 != expected || data.dtype() != header.dtype {
            return Err(Error::InvalidGrid(format!(
                "data holds {} {:?} samples, shape needs {} {:?}",
                data.len(),
                data.dtype(),
                expected,
                header.dtype
            )));
        }
        Ok(RasterGrid {
            width: header.width,
            height: header.height,
            nodata: header.nodata,
            geotransform: header.geotransform,
            band_names: header.band_names,
            data,
        })
    }

    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            width: self.width,
            height: self.height,
            bands: self.bands(),
            dtype: self.dtype(),
            nodata: self.nodata,
            geotransform: self.geotransform,
            band_names: self.band_names.clone(),
        }
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.band_names.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn data(&self) -> &Samples {
        &self.data
    }

    pub fn into_data(self) -> Samples {
        self.data
    }

    pub fn band_len(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.band_names.iter().position(|n| n == name)
    }

    /// Band `b` converted to f32.
    pub fn band_f32(&self, b: usize) -> Vec<f32> {
        let n = self.band_len();
        self.data.slice_f32(b * n..(b + 1) * n)
    }

    pub fn sample(&self, band: usize, x: u64, y: u64) -> f32 {
        let i = band * self.band_len() + (y * self.width + x) as usize;
        self.data.get_f32(i)
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        self.nodata.map_or(false, |nd| v == nd as f32)
    }

    /// In-memory crop; the reference for windowed reads.
    pub fn crop(&self, window: Window) -> Result<RasterGrid> {
        if !window.fits_within(self.width, self.height) {
            return Err(out_of_bounds(window, self.width, self.height));
        }
        let n = self.band_len();
        let w = self.width as usize;
        let (x0, y0) = (window.x0 as usize, window.y0 as usize);
        let mut idx = Vec::with_capacity(window.area() * self.bands());
        for b in 0..self.bands() {
            for y in y0..y0 + window.h {
                let start = b * n + y * w + x0;
                idx.push(start..start + window.w);
            }
        }
        let data = match &self.data {
            Samples::U8(v) => Samples::U8(idx.into_iter().flat_map(|r| v[r].to_vec()).collect()),
            Samples::U16(v) => Samples::U16(idx.into_iter().flat_map(|r| v[r].to_vec()).collect()),
            Samples::F32(v) => Samples::F32(idx.into_iter().flat_map(|r| v[r].to_vec()).collect()),
        };
        RasterGrid::new(
            window.w as u64,
            window.h as u64,
            self.band_names.clone(),
            self.nodata,
            self.geotransform.translate(window.x0, window.y0),
            data,
        )
    }
}

fn out_of_bounds(window: Window, width: u64, height: u64) -> Error {
    Error::OutOfBounds {
        window: window.to_string(),
        width,
        height,
    }
}

fn encode_header(header: &RasterHeader) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::InvalidHeader("header longer than u32::MAX".into()))?;
    let mut out = Vec::with_capacity(12 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn write_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = encode_header(&grid.header())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&header).map_err(|e| Error::io(path, e))?;
    match grid.data() {
        Samples::U8(v) => out.write_all(v),
        Samples::U16(v) => v.chunks(8192).try_for_each(|c| {
            out.write_all(&c.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>())
        }),
        Samples::F32(v) => v.chunks(8192).try_for_each(|c| {
            out.write_all(&c.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>())
        }),
    }
    .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let reader = RasterReader::open(path)?;
    let header = reader.header().clone();
    reader.read_window(Window::new(
        0,
        0,
        header.width as usize,
        header.height as usize,
    ))
}

pub fn read_window(path: impl AsRef<Path>, window: Window) -> Result<RasterGrid> {
    RasterReader::open(path)?.read_window(window)
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(unix)]
fn write_all_at(file: &File, buf: &[u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::write_all_at(file, buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

#[cfg(windows)]
fn write_all_at(file: &File, mut buf: &[u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_write(buf, offset)?;
        buf = &buf[n..];
        offset += n as u64;
    }
    Ok(())
}

/// Positional reader over a `.rstr` file. Shareable across threads; every
/// read is an independent `pread`.
#[derive(Debug)]
pub struct RasterReader {
    path: PathBuf,
    file: File,
    header: RasterHeader,
    payload_offset: u64,
}

impl RasterReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();

        let mut prefix = [0u8; 12];
        let got = read_up_to(&mut file, &mut prefix).map_err(|e| Error::io(&path, e))?;
        if got < 8 || &prefix[..8] != MAGIC {
            return Err(Error::BadMagic {
                found: prefix[..got.min(8)].to_vec(),
            });
        }
        if got < 12 {
            return Err(Error::InvalidHeader("missing header length".into()));
        }
        let header_len = u32::from_le_bytes([prefix[8], prefix[9], prefix[10], prefix[11]]) as u64;
        if 12 + header_len > file_len {
            return Err(Error::InvalidHeader(format!(
                "header length {header_len} exceeds file size {file_len}"
            )));
        }
        let mut json = vec![0u8; header_len as usize];
        file.read_exact(&mut json)
            .map_err(|e| Error::io(&path, e))?;
        let header: RasterHeader =
            serde_json::from_slice(&json).map_err(|e| Error::InvalidHeader(e.to_string()))?;
        header.validate()?;

        let payload_offset = 12 + header_len;
        let expected = header.payload_len();
        let found = file_len - payload_offset;
        if found < expected {
            return Err(Error::Truncated { expected, found });
        }
        if found > expected {
            return Err(Error::SizeMismatch { expected, found });
        }
        Ok(RasterReader {
            path,
            file,
            header,
            payload_offset,
        })
    }

    pub fn header(&self) -> &RasterHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reads `window` (which must lie inside the extent). Memory use is
    /// proportional to the window, not the file.
    pub fn read_window(&self, window: Window) -> Result<RasterGrid> {
        let h = &self.header;
        if !window.fits_within(h.width, h.height) {
            return Err(out_of_bounds(window, h.width, h.height));
        }
        let size = h.dtype.size() as u64;
        let row_bytes = h.width * size;
        let band_bytes = row_bytes * h.height;
        let mut bytes = vec![0u8; window.area() * h.bands * size as usize];
        let chunk = window.w * size as usize;
        let full_rows = window.x0 == 0 && window.w as u64 == h.width;
        let mut cursor = 0;
        for b in 0..h.bands as u64 {
            let band_start = self.payload_offset + b * band_bytes;
            if full_rows {
                let n = chunk * window.h;
                let off = band_start + window.y0 as u64 * row_bytes;
                read_exact_at(&self.file, &mut bytes[cursor..cursor + n], off)
                    .map_err(|e| Error::io(&self.path, e))?;
                cursor += n;
                continue;
            }
            for y in window.y0 as u64..window.y1() as u64 {
                let off = band_start + y * row_bytes + window.x0 as u64 * size;
                read_exact_at(&self.file, &mut bytes[cursor..cursor + chunk], off)
                    .map_err(|e| Error::io(&self.path, e))?;
                cursor += chunk;
            }
        }
        RasterGrid::new(
            window.w as u64,
            window.h as u64,
            h.band_names.clone(),
            h.nodata,
            h.geotransform.translate(window.x0, window.y0),
            Samples::from_le_bytes(h.dtype, &bytes),
        )
    }
}

fn read_up_to(file: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match file.read(&mut buf[got..])? {
            0 => break,
            n => got += n,
        }
    }
    Ok(got)
}

/// Window-at-a-time writer. The file is created at full size up front, so
/// windows may be written in any order; unwritten regions read as zero.
#[derive(Debug)]
pub struct RasterWriter {
    path: PathBuf,
    file: File,
    header: RasterHeader,
    payload_offset: u64,
}

impl RasterWriter {
    pub fn create(path: impl AsRef<Path>, header: RasterHeader) -> Result<Self> {
        header.validate()?;
        let path = path.as_ref().to_path_buf();
        let prefix = encode_header(&header)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        write_all_at(&file, &prefix, 0).map_err(|e| Error::io(&path, e))?;
        let payload_offset = prefix.len() as u64;
        file.set_len(payload_offset + header.payload_len())
            .map_err(|e| Error::io(&path, e))?;
        Ok(RasterWriter {
            path,
            file,
            header,
            payload_offset,
        })
    }

    pub fn header(&self) -> &RasterHeader {
        &self.header
    }

    /// Writes a band-sequential block of `window.w * window.h * bands` samples.
    pub fn write_window(&self, window: Window, samples: &Samples) -> Result<()> {
        let h = &self.header;
        if !window.fits_within(h.width, h.height) {
            return Err(out_of_bounds(window, h.width, h.height));
        }
        if samples.dtype() != h.dtype || samples.len() != window.area() * h.bands {
            return Err(Error::ShapeMismatch(format!(
                "window {window} needs {} {:?} samples, got {} {:?}",
                window.area() * h.bands,
                h.dtype,
                samples.len(),
                samples.dtype()
            )));
        }
        let bytes = samples.to_le_bytes();
        let size = h.dtype.size() as u64;
        let row_bytes = h.width * size;
        let band_bytes = row_bytes * h.height;
        let chunk = window.w * size as usize;
        let mut cursor = 0;
        for b in 0..h.bands as u64 {
            for y in window.y0 as u64..window.y1() as u64 {
                let off =
                    self.payload_offset + b * band_bytes + y * row_bytes + window.x0 as u64 * size;
                write_all_at(&self.file, &bytes[cursor..cursor + chunk], off)
                    .map_err(|e| Error::io(&self.path, e))?;
                cursor += chunk;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        self.file.sync_all().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    fn grid(width: u64, height: u64, bands: usize, data: Samples) -> RasterGrid {
        let names = (0..bands).map(|b| format!("b{b}")).collect();
        RasterGrid::new(
            width,
            height,
            names,
            None,
            GeoTransform::new(500.0, 900.0, 2.0, 2.0),
            data,
        )
        .unwrap()
    }

    #[test]
    fn smallest_grid_layout() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("one.rstr");
        let g = grid(1, 1, 1, Samples::U8(vec![7]));
        write_raster(&g, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"RSTR0001");
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        assert_eq!(json["dtype"], "u8");
        assert_eq!(bytes.len(), 12 + hlen + 1);
        assert_eq!(*bytes.last().unwrap(), 0x07);
        // header keys appear in the documented order
        let text = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
        let keys = [
            "width",
            "height",
            "bands",
            "dtype",
            "nodata",
            "geotransform",
            "band_names",
        ];
        let pos: Vec<_> = keys
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn f32_payload_length() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("f.rstr");
        let g = grid(
            3,
            2,
            2,
            Samples::F32((0..12).map(|i| i as f32 * 0.5).collect()),
        );
        write_raster(&g, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 12 - hlen, 48);
        assert_eq!(read_raster(&p).unwrap(), g);
    }

    #[test]
    fn bad_magic() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.rstr");
        let g = grid(2, 2, 1, Samples::U8(vec![1, 2, 3, 4]));
        write_raster(&g, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[..8].copy_from_slice(b"XXXX0000");
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_raster(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.rstr");
        let g = grid(4, 3, 2, Samples::U16((0..24).collect()));
        write_raster(&g, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        match read_raster(&p) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 48);
                assert_eq!(found, 47);
            }
            other => panic!("expected truncation, got {other:?}"),
        }

        let mut longer = bytes.clone();
        longer.push(0);
        std::fs::write(&p, longer).unwrap();
        assert!(matches!(read_raster(&p), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn header_rejects_mismatched_band_names() {
        let err = RasterGrid::new(
            2,
            1,
            vec!["a".into()],
            None,
            GeoTransform::default(),
            Samples::U8(vec![0; 4]),
        );
        assert!(err.is_err());
        let bad_gt = RasterGrid::new(
            1,
            1,
            vec!["a".into()],
            None,
            GeoTransform::new(0.0, 0.0, -1.0, 1.0),
            Samples::U8(vec![0]),
        );
        assert!(bad_gt.is_err());
    }

    #[test]
    fn window_reads_match_full_read() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("w.rstr");
        let (w, h, bands) = (37u64, 23u64, 3usize);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u16> = (0..w * h * bands as u64).map(|_| rng.gen()).collect();
        let g = grid(w, h, bands, Samples::U16(data));
        write_raster(&g, &p).unwrap();

        let full = read_window(&p, Window::new(0, 0, w as usize, h as usize)).unwrap();
        assert_eq!(full, read_raster(&p).unwrap());

        let reader = RasterReader::open(&p).unwrap();
        for _ in 0..100 {
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let px = reader
                .read_window(Window::new(x as i64, y as i64, 1, 1))
                .unwrap();
            for b in 0..bands {
                assert_eq!(px.sample(b, 0, 0), g.sample(b, x, y));
            }
            assert_eq!(
                px.geotransform(),
                g.geotransform().translate(x as i64, y as i64)
            );
        }
        assert!(matches!(
            reader.read_window(Window::new(30, 0, 8, 1)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            reader.read_window(Window::new(-1, 0, 2, 1)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn writer_assembles_windows() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("out.rstr");
        let g = grid(5, 4, 2, Samples::F32((0..40).map(|i| i as f32).collect()));
        let writer = RasterWriter::create(&p, g.header()).unwrap();
        for (x0, w) in [(3i64, 2usize), (0, 3)] {
            for (y0, h) in [(0i64, 1usize), (1, 3)] {
                let wnd = Window::new(x0, y0, w, h);
                writer
                    .write_window(wnd, g.crop(wnd).unwrap().data())
                    .unwrap();
            }
        }
        writer.finish().unwrap();
        assert_eq!(read_raster(&p).unwrap(), g);
    }

    fn arb_grid() -> impl Strategy<Value = RasterGrid> {
        (1u64..9, 1u64..9, 1usize..4, 0u8..3)
            .prop_flat_map(|(w, h, b, dt)| {
                let n = (w * h) as usize * b;
                let data = match dt {
                    0 => proptest::collection::vec(any::<u8>(), n)
                        .prop_map(Samples::U8)
                        .boxed(),
                    1 => proptest::collection::vec(any::<u16>(), n)
                        .prop_map(Samples::U16)
                        .boxed(),
                    _ => proptest::collection::vec(any::<u32>(), n)
                        .prop_map(|v| Samples::F32(v.into_iter().map(f32::from_bits).collect()))
                        .boxed(),
                };
                (Just((w, h, b)), data, proptest::option::of(0u8..=255))
            })
            .prop_map(|((w, h, b), data, nd)| {
                let names = (0..b).map(|i| format!("band{i}")).collect();
                RasterGrid::new(
                    w,
                    h,
                    names,
                    nd.map(f64::from),
                    GeoTransform::new(1.5, -3.0, 0.5, 2.0),
                    data,
                )
                .unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_bit_exact(g in arb_grid()) {
            let dir = tempdir().unwrap();
            let p = dir.path().join("g.rstr");
            write_raster(&g, &p).unwrap();
            prop_assert_eq!(read_raster(&p).unwrap(), g);
        }

        #[test]
        fn window_equals_crop(g in arb_grid(), fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0) {
            let dir = tempdir().unwrap();
            let p = dir.path().join("g.rstr");
            write_raster(&g, &p).unwrap();
            let x0 = (fx * g.width() as f64) as u64;
            let y0 = (fy * g.height() as f64) as u64;
            let w = 1 + (fw * (g.width() - x0) as f64) as u64;
            let h = 1 + (fh * (g.height() - y0) as f64) as u64;
            let wnd = Window::new(x0 as i64, y0 as i64, w.min(g.width() - x0) as usize, h.min(g.height() - y0) as usize);
            prop_assert_eq!(read_window(&p, wnd).unwrap(), g.crop(wnd).unwrap());
        }
    }
}
