//! How different consumers see an attack image.
//!
//! A human viewer flattens the RGBA image over the page backdrop; most vision
//! pipelines simply drop the alpha channel and read RGB.

use std::path::PathBuf;

use crate::blend::AlphaLayer;
use crate::error::{Error, Result};
use crate::imgio::{gray_to_rgb, PixelGrid, RgbRaster};

/// Where an attack image came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub target: PathBuf,
    pub background: PathBuf,
    pub cfg_digest: String,
}

/// Grayscale RGBA composite: RGB holds the scaled hidden image, alpha the
/// optimized opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackImage {
    rgb: RgbRaster,
    alpha: AlphaLayer,
    pub provenance: Option<Provenance>,
}

impl AttackImage {
    pub fn new(rgb: RgbRaster, alpha: AlphaLayer) -> Result<Self> {
        if rgb.dims() != alpha.dims() {
            return Err(Error::dims("attack rgb vs alpha", rgb.dims(), alpha.dims()));
        }
        if !rgb.is_gray() {
            return Err(Error::Argument(
                "attack image channels must be equal".into(),
            ));
        }
        Ok(Self {
            rgb,
            alpha,
            provenance: None,
        })
    }

    pub fn from_gray(hidden: &PixelGrid, alpha: AlphaLayer) -> Result<Self> {
        Self::new(gray_to_rgb(hidden), alpha)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn rgb(&self) -> &RgbRaster {
        &self.rgb
    }

    pub fn alpha(&self) -> &AlphaLayer {
        &self.alpha
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// The hidden layer as a single channel.
    pub fn hidden(&self) -> &PixelGrid {
        self.rgb.red()
    }

    /// The same image after an 8-bit storage round trip.
    pub fn quantized(&self) -> Self {
        Self {
            rgb: self.rgb.quantized(),
            alpha: self.alpha.quantized(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Rendering behavior of a consumer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewerModel {
    /// Composite over a solid backdrop of the given luminance.
    Flatten { backdrop: f64 },
    /// Ignore alpha and read RGB.
    DropAlpha,
}

impl ViewerModel {
    pub const LIGHT: ViewerModel = ViewerModel::Flatten { backdrop: 1.0 };
    pub const DARK: ViewerModel = ViewerModel::Flatten { backdrop: 0.0 };

    pub fn flatten(backdrop: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&backdrop) {
            return Err(Error::Argument(format!(
                "backdrop {backdrop} outside [0, 1]"
            )));
        }
        Ok(ViewerModel::Flatten { backdrop })
    }
}

/// Straight-alpha compositing of a luminance grid over a solid backdrop.
pub(crate) fn flatten_over(alpha: &AlphaLayer, hidden: &PixelGrid, backdrop: f64) -> PixelGrid {
    let (w, h) = hidden.dims();
    let values = alpha
        .values()
        .iter()
        .zip(hidden.values())
        .map(|(&a, &b)| a * b + (1.0 - a) * backdrop)
        .collect();
    PixelGrid::from_clamped(w, h, values)
}

pub fn render(img: &AttackImage, viewer: ViewerModel) -> PixelGrid {
    match viewer {
        ViewerModel::Flatten { backdrop } => flatten_over(&img.alpha, img.hidden(), backdrop),
        ViewerModel::DropAlpha => img.rgb.luminance(),
    }
}

/// Light-theme flattening, what a person sees in a typical viewer.
pub fn human_view(img: &AttackImage) -> PixelGrid {
    render(img, ViewerModel::LIGHT)
}

/// Alpha-drop rendering, what an alpha-unaware model ingests.
pub fn machine_view(img: &AttackImage) -> PixelGrid {
    render(img, ViewerModel::DropAlpha)
}
