//! Scanner for images whose alpha channel hides a second picture.
//!
//! Two scores are computed: the variance of the alpha layer (an attack needs
//! spatially varying opacity) and the MSE between the light-theme composite
//! and the raw RGB luminance (how different the human and machine views are).

use std::fmt;
use std::path::Path;

use crate::blend::{mse_loss, AlphaLayer};
use crate::compositor::flatten_over;
use crate::error::Result;
use crate::imgio::{load_raster, RgbRaster};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanThresholds {
    pub alpha_variance: f64,
    pub view_divergence: f64,
}

impl Default for ScanThresholds {
    fn default() -> Self {
        Self {
            alpha_variance: 1e-3,
            view_divergence: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Clean,
    Suspicious,
    AttackLikely,
}

impl Verdict {
    /// Process exit status used by the CLI.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Clean => 0,
            Verdict::Suspicious => 1,
            Verdict::AttackLikely => 2,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Clean => "CLEAN",
            Verdict::Suspicious => "SUSPICIOUS",
            Verdict::AttackLikely => "ATTACK_LIKELY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanResult {
    pub has_alpha: bool,
    pub alpha_variance: f64,
    pub view_divergence_mse: f64,
    pub verdict: Verdict,
}

impl ScanResult {
    pub fn to_kv(&self) -> String {
        format!(
            "has_alpha={}\nalpha_variance={:?}\nview_divergence_mse={:?}\nverdict={}\n",
            self.has_alpha, self.alpha_variance, self.view_divergence_mse, self.verdict
        )
    }
}

/// Scores already-decoded rasters.
pub fn scan_raster(
    rgb: &RgbRaster,
    alpha: Option<&AlphaLayer>,
    thresholds: ScanThresholds,
) -> Result<ScanResult> {
    let Some(alpha) = alpha else {
        return Ok(ScanResult {
            has_alpha: false,
            alpha_variance: 0.0,
            view_divergence_mse: 0.0,
            verdict: Verdict::Clean,
        });
    };
    let machine = rgb.luminance();
    let human = flatten_over(alpha, &machine, 1.0);
    let alpha_variance = alpha.variance();
    let view_divergence_mse = mse_loss(&human, &machine)?;

    let exceeded = usize::from(alpha_variance > thresholds.alpha_variance)
        + usize::from(view_divergence_mse > thresholds.view_divergence);
    let verdict = match exceeded {
        0 => Verdict::Clean,
        1 => Verdict::Suspicious,
        _ => Verdict::AttackLikely,
    };
    Ok(ScanResult {
        has_alpha: true,
        alpha_variance,
        view_divergence_mse,
        verdict,
    })
}

pub fn scan(path: impl AsRef<Path>, thresholds: ScanThresholds) -> Result<ScanResult> {
    let (rgb, alpha) = load_raster(path)?;
    scan_raster(&rgb, alpha.as_ref(), thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{encode_attack_png, gray_to_rgb, PixelGrid};
    use image::{ImageBuffer, Rgb};
    use proptest::prelude::*;

    #[test]
    fn rgb_jpeg_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("photo.jpg");
        ImageBuffer::from_fn(16, 16, |x, y| Rgb([(x * 10) as u8, (y * 12) as u8, 40]))
            .save(&path)
            .unwrap();
        let r = scan(&path, ScanThresholds::default()).unwrap();
        assert!(!r.has_alpha);
        assert_eq!(r.verdict, Verdict::Clean);
        assert_eq!((r.alpha_variance, r.view_divergence_mse), (0.0, 0.0));
    }

    #[test]
    fn opaque_rgba_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("opaque.png");
        let hidden = PixelGrid::from_fn(8, 8, |x, y| (x * y) as f64 / 49.0).unwrap();
        encode_attack_png(&gray_to_rgb(&hidden), &AlphaLayer::ones(8, 8), &path).unwrap();
        let r = scan(&path, ScanThresholds::default()).unwrap();
        assert!(r.has_alpha);
        assert_eq!(r.alpha_variance, 0.0);
        assert_eq!(r.view_divergence_mse, 0.0);
        assert_eq!(r.verdict, Verdict::Clean);
    }

    #[test]
    fn verdict_counts_exceeded_scores() {
        let hidden = PixelGrid::filled(2, 1, 0.2).unwrap();
        let rgb = gray_to_rgb(&hidden);
        // uniform translucency: divergence only
        let uniform = AlphaLayer::filled(2, 1, 0.5).unwrap();
        let r = scan_raster(&rgb, Some(&uniform), ScanThresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Suspicious);
        let varied = AlphaLayer::new(2, 1, vec![0.1, 0.9]).unwrap();
        let r = scan_raster(&rgb, Some(&varied), ScanThresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::AttackLikely);
        assert_eq!(Verdict::AttackLikely.exit_code(), 2);
    }

    proptest! {
        #[test]
        fn raising_thresholds_never_escalates(
            samples in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40),
            base in (1e-6f64..0.1, 1e-6f64..0.1),
            bump in (0.0f64..0.2, 0.0f64..0.2),
        ) {
            let n = samples.len();
            let rgb = gray_to_rgb(&PixelGrid::new(n, 1, samples.iter().map(|s| s.0).collect()).unwrap());
            let alpha = AlphaLayer::new(n, 1, samples.iter().map(|s| s.1).collect()).unwrap();
            let low = ScanThresholds { alpha_variance: base.0, view_divergence: base.1 };
            let high = ScanThresholds { alpha_variance: base.0 + bump.0, view_divergence: base.1 + bump.1 };
            let v_low = scan_raster(&rgb, Some(&alpha), low).unwrap().verdict;
            let v_high = scan_raster(&rgb, Some(&alpha), high).unwrap().verdict;
            prop_assert!(v_high <= v_low);
        }

        #[test]
        fn opaque_is_clean_for_any_positive_thresholds(
            samples in proptest::collection::vec(0.0f64..=1.0, 1..40),
            t in (1e-12f64..1.0, 1e-12f64..1.0),
        ) {
            let n = samples.len();
            let rgb = gray_to_rgb(&PixelGrid::new(n, 1, samples).unwrap());
            let thresholds = ScanThresholds { alpha_variance: t.0, view_divergence: t.1 };
            let r = scan_raster(&rgb, Some(&AlphaLayer::ones(n, 1)), thresholds).unwrap();
            prop_assert_eq!(r.verdict, Verdict::Clean);
        }
    }
}
