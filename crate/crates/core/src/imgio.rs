//! Image loading, preprocessing and PNG packaging.
//!
//! Everything outside this module works on normalized rasters: samples are
//! `f64` luminances in `[0, 1]`. Conversion to and from 8-bit storage happens
//! only here, with `round(v * 255)` (half away from zero) on the way out and
//! `s / 255` on the way in.

use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageReader};

use crate::blend::AlphaLayer;
use crate::error::{Error, Result};

/// Working size used when nothing else is configured.
pub const DEFAULT_SIZE: (usize, usize) = (150, 150);

/// BT.601 luma weights for R, G and B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Single-channel raster with samples in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Argument(format!(
                "grid of {width}x{height} needs {} samples, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_clamped(width, height, vec![0.0; width * height])
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self::from_clamped(width, height, vec![1.0; width * height])
    }

    /// Builds a grid from a per-pixel function of `(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    /// Clamps every sample into `[0, 1]`. NaN becomes 0.
    pub(crate) fn from_clamped(width: usize, height: usize, mut values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Multiplies every sample by `factor`, which must lie in `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(Error::Argument(format!(
                "scale factor {factor} outside [0, 1]"
            )));
        }
        Ok(self.map(|v| v * factor))
    }

    /// Snaps every sample to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        self.map(quantize)
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_clamped(
            self.width,
            self.height,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub(crate) fn ensure_same_dims(&self, other: &PixelGrid, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(what, self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Three co-dimensioned channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    r: PixelGrid,
    g: PixelGrid,
    b: PixelGrid,
}

impl RgbRaster {
    pub fn new(r: PixelGrid, g: PixelGrid, b: PixelGrid) -> Result<Self> {
        r.ensure_same_dims(&g, "rgb channels")?;
        r.ensure_same_dims(&b, "rgb channels")?;
        Ok(Self { r, g, b })
    }

    pub fn red(&self) -> &PixelGrid {
        &self.r
    }

    pub fn green(&self) -> &PixelGrid {
        &self.g
    }

    pub fn blue(&self) -> &PixelGrid {
        &self.b
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }

    /// True when all three channels are identical.
    pub fn is_gray(&self) -> bool {
        self.r == self.g && self.r == self.b
    }

    /// BT.601 luminance. Gray pixels map to their common value exactly.
    pub fn luminance(&self) -> PixelGrid {
        let (w, h) = self.dims();
        let values = self
            .r
            .values()
            .iter()
            .zip(self.g.values())
            .zip(self.b.values())
            .map(|((&r, &g), &b)| luma(r, g, b))
            .collect();
        PixelGrid::from_clamped(w, h, values)
    }

    pub fn quantized(&self) -> Self {
        Self {
            r: self.r.quantized(),
            g: self.g.quantized(),
            b: self.b.quantized(),
        }
    }
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    if r == g && g == b {
        return r;
    }
    LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
}

/// Maps a normalized sample to its 8-bit storage value.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `round(v * 255) / 255`.
pub fn quantize(v: f64) -> f64 {
    f64::from(to_u8(v)) / 255.0
}

pub fn gray_to_rgb(g: &PixelGrid) -> RgbRaster {
    RgbRaster {
        r: g.clone(),
        g: g.clone(),
        b: g.clone(),
    }
}

fn read_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

fn channels_from_rgba(width: usize, height: usize, raw: &[u8]) -> (RgbRaster, AlphaLayer) {
    let mut planes: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(width * height)).collect();
    for px in raw.chunks_exact(4) {
        for (plane, &s) in planes.iter_mut().zip(px) {
            plane.push(f64::from(s) / 255.0);
        }
    }
    let a = planes.pop().unwrap_or_default();
    let mut grids = planes
        .into_iter()
        .map(|p| PixelGrid::from_clamped(width, height, p));
    let (r, g, b) = (
        grids
            .next()
            .unwrap_or_else(|| PixelGrid::zeros(width, height)),
        grids
            .next()
            .unwrap_or_else(|| PixelGrid::zeros(width, height)),
        grids
            .next()
            .unwrap_or_else(|| PixelGrid::zeros(width, height)),
    );
    let alpha = AlphaLayer::from_grid(PixelGrid::from_clamped(width, height, a));
    (RgbRaster { r, g, b }, alpha)
}

/// Decodes any supported image at its native size.
///
/// The alpha layer is `None` when the file carries no alpha channel.
pub fn load_raster(path: impl AsRef<Path>) -> Result<(RgbRaster, Option<AlphaLayer>)> {
    let path = path.as_ref();
    let img = read_image(path)?;
    let has_alpha = img.color().has_alpha();
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let (rgb, alpha) = channels_from_rgba(w, h, rgba.as_raw());
    Ok((rgb, has_alpha.then_some(alpha)))
}

/// Reads an image, converts it to BT.601 luminance and resizes it bilinearly
/// to `size` (`(width, height)`).
pub fn load_grayscale(path: impl AsRef<Path>, size: (usize, usize)) -> Result<PixelGrid> {
    let path = path.as_ref();
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::Argument(format!(
            "target size {}x{} has a zero dimension",
            size.0, size.1
        )));
    }
    let img = read_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img
        .as_raw()
        .chunks_exact(3)
        .map(|px| {
            luma(
                f64::from(px[0]) / 255.0,
                f64::from(px[1]) / 255.0,
                f64::from(px[2]) / 255.0,
            )
        })
        .collect();
    let native = PixelGrid::from_clamped(w, h, values);
    Ok(resize_bilinear(&native, size))
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
/// Output samples are clamped to `[0, 1]`.
pub fn resize_bilinear(src: &PixelGrid, size: (usize, usize)) -> PixelGrid {
    let (sw, sh) = src.dims();
    let (dw, dh) = size;
    if (sw, sh) == (dw, dh) || src.is_empty() {
        return if src.is_empty() {
            PixelGrid::zeros(dw, dh)
        } else {
            src.clone()
        };
    }
    let axis = |dst: usize, src_len: usize, n: usize| -> (usize, usize, f64) {
        let pos =
            ((dst as f64 + 0.5) * src_len as f64 / n as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        for &(x0, x1, fx) in &cols {
            let top = src.get(x0, y0) * (1.0 - fx) + src.get(x1, y0) * fx;
            let bottom = src.get(x0, y1) * (1.0 - fx) + src.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    PixelGrid::from_clamped(dw, dh, out)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    data: &[u8],
    color: ExtendedColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PngEncoder::new(&mut out)
        .write_image(data, width as u32, height as u32, color)
        .map_err(|e| match e {
            ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })?;
    out.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit RGBA PNG (color type 6, no interlacing).
pub fn encode_attack_png(
    rgb: &RgbRaster,
    alpha: &AlphaLayer,
    path: impl AsRef<Path>,
) -> Result<()> {
    if rgb.dims() != alpha.dims() {
        return Err(Error::dims("rgb vs alpha", rgb.dims(), alpha.dims()));
    }
    let (w, h) = rgb.dims();
    let mut data = Vec::with_capacity(w * h * 4);
    for i in 0..w * h {
        data.extend_from_slice(&[
            to_u8(rgb.r.values[i]),
            to_u8(rgb.g.values[i]),
            to_u8(rgb.b.values[i]),
            to_u8(alpha.values()[i]),
        ]);
    }
    write_png(path.as_ref(), w, h, &data, ExtendedColorType::Rgba8)
}

/// Reads an RGBA PNG back into normalized rasters.
///
/// Files without an alpha channel are rejected: they are flattened images,
/// not attack images.
pub fn decode_attack_png(path: impl AsRef<Path>) -> Result<(RgbRaster, AlphaLayer)> {
    let path = path.as_ref();
    match load_raster(path)? {
        (rgb, Some(alpha)) => Ok((rgb, alpha)),
        (_, None) => Err(Error::format(path, "image has no alpha channel")),
    }
}

/// Writes an 8-bit grayscale PNG.
pub fn encode_gray_png(grid: &PixelGrid, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = grid.values().iter().map(|&v| to_u8(v)).collect();
    write_png(
        path.as_ref(),
        grid.width(),
        grid.height(),
        &data,
        ExtendedColorType::L8,
    )
}
