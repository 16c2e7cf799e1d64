//! Raster value types shared by every other module.
//!
//! [`Grid`] is a plain row-major buffer; [`ProbabilityMap`] and
//! [`BinaryMask`] wrap it with the invariants of model outputs and ground
//! truth respectively. Grayscale input images are represented as
//! `Grid<f64>` with intensities in `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes of the raw float raster format.
pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
const PMAP_HEADER_LEN: usize = 16;

/// Grayscale image, intensities in `[0, 1]`.
pub type GrayImage = Grid<f64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Format(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`, the order used throughout the dataset tables.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn flip(&self, axis: Axis) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(w, h, |row, col| match axis {
            Axis::Horizontal => self.get(row, w - 1 - col),
            Axis::Vertical => self.get(h - 1 - row, col),
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop ({top}, {left}, {height}x{width}) outside {}x{} raster",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(width, height, |row, col| {
            self.get(top + row, left + col)
        }))
    }

    pub fn pad(&self, top: usize, bottom: usize, left: usize, right: usize, fill: T) -> Self {
        let h = self.height + top + bottom;
        let w = self.width + left + right;
        let mut out = Self::filled(w, h, fill);
        for row in 0..self.height {
            let dst = (row + top) * w + left;
            out.data[dst..dst + self.width]
                .copy_from_slice(&self.data[row * self.width..(row + 1) * self.width]);
        }
        out
    }

    /// Nearest-neighbour resampling with pixel-centre alignment.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let rows: Vec<usize> = (0..height)
            .map(|r| nearest_source(r, self.height, height))
            .collect();
        let cols: Vec<usize> = (0..width)
            .map(|c| nearest_source(c, self.width, width))
            .collect();
        Self::from_fn(width, height, |r, c| self.get(rows[r], cols[c]))
    }
}

impl Grid<f64> {
    /// Bilinear resampling with pixel-centre alignment and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        let rows: Vec<(usize, usize, f64)> = (0..height)
            .map(|r| bilinear_source(r, self.height, height))
            .collect();
        let cols: Vec<(usize, usize, f64)> = (0..width)
            .map(|c| bilinear_source(c, self.width, width))
            .collect();
        Self::from_fn(width, height, |r, c| {
            let (r0, r1, fr) = rows[r];
            let (c0, c1, fc) = cols[c];
            let top = lerp(self.get(r0, c0), self.get(r0, c1), fc);
            let bottom = lerp(self.get(r1, c0), self.get(r1, c1), fc);
            lerp(top, bottom, fr)
        })
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn nearest_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (pos.floor() as usize).min(src_len - 1)
}

fn bilinear_source(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let pos = pos.clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Denominator of the integer encoding a probability map was decoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    None,
    Q255,
    Q65535,
}

impl Quantization {
    pub fn levels(self) -> Option<u32> {
        match self {
            Quantization::None => None,
            Quantization::Q255 => Some(255),
            Quantization::Q65535 => Some(65535),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Gray8,
    Gray16,
    Rawf32,
}

impl RasterFormat {
    /// Guesses the format from a file extension (`.pmap` is raw float,
    /// anything else is decoded as PNG and inspected).
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pmap" => Some(RasterFormat::Rawf32),
            _ => None,
        }
    }
}

/// Per-pixel vessel probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    grid: Grid<f64>,
    quantization: Quantization,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_grid(Grid::new(width, height, values)?)
    }

    pub fn from_grid(grid: Grid<f64>) -> Result<Self> {
        if let Some((i, v)) = grid
            .as_slice()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Format(format!(
                "probability {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            grid,
            quantization: Quantization::None,
        })
    }

    /// Builds a map from integer levels `k / denominator`.
    pub fn from_levels(width: usize, height: usize, levels: &[u16], q: Quantization) -> Result<Self> {
        let denom = q
            .levels()
            .ok_or_else(|| Error::invalid("from_levels needs a quantized encoding"))?;
        if let Some(&k) = levels.iter().find(|&&k| u32::from(k) > denom) {
            return Err(Error::Format(format!("level {k} exceeds {denom}")));
        }
        let values = levels
            .iter()
            .map(|&k| f64::from(k) / f64::from(denom))
            .collect();
        Ok(Self {
            grid: Grid::new(width, height, values)?,
            quantization: q,
        })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_grid(Grid::filled(width, height, value))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.grid.as_slice()
    }

    pub fn quantization(&self) -> Quantization {
        self.quantization
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn flip(&self, axis: Axis) -> Self {
        Self {
            grid: self.grid.flip(axis),
            quantization: self.quantization,
        }
    }

    /// Geometry-only transform that keeps every value on its lattice.
    pub(crate) fn with_grid_same_lattice(&self, grid: Grid<f64>) -> Self {
        Self {
            grid,
            quantization: self.quantization,
        }
    }

    /// Wraps values produced by arithmetic (interpolation); clamps float
    /// noise back into `[0, 1]`.
    pub(crate) fn from_interpolated(grid: Grid<f64>) -> Self {
        Self {
            grid: grid.map(|v| v.clamp(0.0, 1.0)),
            quantization: Quantization::None,
        }
    }

    /// Integer level of every pixel, when quantized.
    pub fn levels(&self) -> Option<Vec<u32>> {
        let denom = f64::from(self.quantization.levels()?);
        Some(
            self.values()
                .iter()
                .map(|&v| (v * denom).round() as u32)
                .collect(),
        )
    }
}

/// Binary raster: ground truth or thresholded prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Grid<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        Ok(Self {
            grid: Grid::new(width, height, values)?,
        })
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self { grid }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            grid: Grid::filled(width, height, value),
        }
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.grid
    }

    pub fn values(&self) -> &[bool] {
        self.grid.as_slice()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn count_ones(&self) -> usize {
        self.values().iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid.map(|b| !b),
        }
    }

    pub fn flip(&self, axis: Axis) -> Self {
        Self {
            grid: self.grid.flip(axis),
        }
    }

    pub fn to_probability(&self) -> ProbabilityMap {
        let levels: Vec<u16> = self.values().iter().map(|&b| if b { 255 } else { 0 }).collect();
        ProbabilityMap::from_levels(self.width(), self.height(), &levels, Quantization::Q255)
            .expect("mask dimensions are valid")
    }
}

/// Optional field-of-view restriction for metrics and losses.
#[derive(Debug, Clone, Copy, Default)]
pub enum EvalRegion<'a> {
    #[default]
    All,
    Mask(&'a BinaryMask),
}

impl<'a> EvalRegion<'a> {
    pub fn from_option(mask: Option<&'a BinaryMask>) -> Self {
        mask.map_or(EvalRegion::All, EvalRegion::Mask)
    }

    pub fn check(&self, dims: (usize, usize)) -> Result<()> {
        match self {
            EvalRegion::All => Ok(()),
            EvalRegion::Mask(m) => ensure_dims(dims, m.dims()),
        }
    }

    pub fn includes(&self, index: usize) -> bool {
        match self {
            EvalRegion::All => true,
            EvalRegion::Mask(m) => m.values()[index],
        }
    }
}

pub(crate) fn ensure_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Pixel is positive iff `p >= t`.
pub fn binarize(p: &ProbabilityMap, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("threshold {t} outside [0, 1]")));
    }
    Ok(BinaryMask {
        grid: p.grid.map(|v| v >= t),
    })
}

pub fn load_probability_map(bytes: &[u8], format: RasterFormat) -> Result<ProbabilityMap> {
    match format {
        RasterFormat::Rawf32 => decode_pmap(bytes),
        RasterFormat::Gray8 | RasterFormat::Gray16 => {
            let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
            match (format, img) {
                (RasterFormat::Gray8, DynamicImage::ImageLuma8(buf)) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    let levels: Vec<u16> = buf.into_raw().into_iter().map(u16::from).collect();
                    ProbabilityMap::from_levels(w, h, &levels, Quantization::Q255)
                }
                (RasterFormat::Gray16, DynamicImage::ImageLuma16(buf)) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    ProbabilityMap::from_levels(w, h, &buf.into_raw(), Quantization::Q65535)
                }
                (_, other) => Err(Error::Format(format!(
                    "expected single-channel {format:?} PNG, found {:?}",
                    other.color()
                ))),
            }
        }
    }
}

/// Decodes a PNG (8 or 16 bit gray) or PMAP file, dispatching on content.
pub fn load_probability_file(path: &Path) -> Result<ProbabilityMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PMAP_MAGIC) {
        return decode_pmap(&bytes);
    }
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)?;
    let format = match img {
        DynamicImage::ImageLuma16(_) => RasterFormat::Gray16,
        _ => RasterFormat::Gray8,
    };
    load_probability_map(&bytes, format)
}

pub fn save_probability_map(p: &ProbabilityMap, format: RasterFormat) -> Result<Vec<u8>> {
    let (w, h) = (p.width() as u32, p.height() as u32);
    match format {
        RasterFormat::Rawf32 => Ok(encode_pmap(p)),
        RasterFormat::Gray8 => {
            let raw: Vec<u8> = p.values().iter().map(|&v| (v * 255.0).round() as u8).collect();
            let buf = image::GrayImage::from_raw(w, h, raw).expect("buffer sized from map");
            encode_png(DynamicImage::ImageLuma8(buf))
        }
        RasterFormat::Gray16 => {
            let raw: Vec<u16> = p
                .values()
                .iter()
                .map(|&v| (v * 65535.0).round() as u16)
                .collect();
            let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, raw)
                .expect("buffer sized from map");
            encode_png(DynamicImage::ImageLuma16(buf))
        }
    }
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn decode_pmap(bytes: &[u8]) -> Result<ProbabilityMap> {
    if bytes.len() < PMAP_HEADER_LEN || &bytes[..4] != PMAP_MAGIC {
        return Err(Error::Format("missing PMAP header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (width, height) = (word(4) as usize, word(8) as usize);
    if word(12) != 0 {
        return Err(Error::Format("PMAP reserved bytes must be zero".into()));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("PMAP dimensions overflow".into()))?;
    let body = &bytes[PMAP_HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "PMAP body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    ProbabilityMap::new(width, height, values)
}

fn encode_pmap(p: &ProbabilityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(PMAP_HEADER_LEN + 4 * p.values().len());
    out.extend_from_slice(PMAP_MAGIC);
    out.extend_from_slice(&(p.width() as u32).to_le_bytes());
    out.extend_from_slice(&(p.height() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for &v in p.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Loads a ground-truth style file of any supported format; pixels above
/// mid-gray are positive.
pub fn load_mask_file(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    BinaryMask::new(w, h, luma.into_raw().into_iter().map(|v| v > 127).collect())
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.values().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer sized from mask");
    encode_png(DynamicImage::ImageLuma8(buf))
}

/// Loads a fundus image as a single intensity plane: the green channel for
/// colour inputs (highest vessel contrast), the luma plane otherwise.
pub fn load_gray_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    Ok(gray_from_dynamic(&img))
}

pub fn gray_from_dynamic(img: &DynamicImage) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb16();
        let data = rgb.pixels().map(|p| f64::from(p.0[1]) / 65535.0).collect();
        Grid::new(w, h, data).expect("decoded image is non-empty")
    } else {
        let luma = img.to_luma16();
        let data = luma.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect();
        Grid::new(w, h, data).expect("decoded image is non-empty")
    }
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer sized from image");
    encode_png(DynamicImage::ImageLuma8(buf))
}
