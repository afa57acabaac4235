//! Attack quality scores.

use std::fmt::Write as _;

use crate::blend::{feasibility_report, mse_loss, BlendConfig};
use crate::compositor::{human_view, machine_view, render, AttackImage, ViewerModel};
use crate::error::Result;
use crate::imgio::PixelGrid;

/// Numeric proxies for "humans see the target, machines do not".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessThresholds {
    /// Largest acceptable MSE between the human view and the target.
    pub human_max_mse: f64,
    /// Smallest MSE between the machine view and the target that counts as hidden.
    pub machine_min_mse: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self {
            human_max_mse: 1e-3,
            machine_min_mse: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackReport {
    pub human_fidelity_mse: f64,
    pub human_fidelity_psnr: f64,
    pub machine_divergence_mse: f64,
    pub hidden_integrity_mse: f64,
    pub dark_exposure_mse: f64,
    pub feasibility_fraction: f64,
    pub success: bool,
}

impl AttackReport {
    /// `(key, value)` pairs in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("human_fidelity_mse", format_real(self.human_fidelity_mse)),
            ("human_fidelity_psnr", format_real(self.human_fidelity_psnr)),
            (
                "machine_divergence_mse",
                format_real(self.machine_divergence_mse),
            ),
            (
                "hidden_integrity_mse",
                format_real(self.hidden_integrity_mse),
            ),
            ("dark_exposure_mse", format_real(self.dark_exposure_mse)),
            (
                "feasibility_fraction",
                format_real(self.feasibility_fraction),
            ),
            ("success", self.success.to_string()),
        ]
    }

    /// One `key=value` line per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Shortest round-tripping decimal, with `inf` for the infinite PSNR sentinel.
pub fn format_real(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}

/// Peak signal-to-noise ratio in dB for unit dynamic range.
/// Zero error maps to `f64::INFINITY`.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Scores `img` against the target and the unscaled background it was
/// crafted from, with the default thresholds.
pub fn evaluate(
    img: &AttackImage,
    target: &PixelGrid,
    background: &PixelGrid,
    cfg: &BlendConfig,
) -> Result<AttackReport> {
    evaluate_with(img, target, background, cfg, SuccessThresholds::default())
}

pub fn evaluate_with(
    img: &AttackImage,
    target: &PixelGrid,
    background: &PixelGrid,
    cfg: &BlendConfig,
    thresholds: SuccessThresholds,
) -> Result<AttackReport> {
    target.ensure_same_dims(background, "report target vs background")?;
    img.hidden()
        .ensure_same_dims(target, "report attack vs target")?;
    let hidden = background.scaled(cfg.background_scale)?;

    let human = human_view(img);
    let machine = machine_view(img);
    let human_fidelity_mse = mse_loss(&human, target)?;
    let machine_divergence_mse = mse_loss(&machine, target)?;
    let feasibility = feasibility_report(target, &hidden)?;

    Ok(AttackReport {
        human_fidelity_mse,
        human_fidelity_psnr: psnr(human_fidelity_mse),
        machine_divergence_mse,
        hidden_integrity_mse: mse_loss(&machine, &hidden)?,
        dark_exposure_mse: mse_loss(&render(img, ViewerModel::DARK), target)?,
        feasibility_fraction: feasibility.fraction,
        success: human_fidelity_mse <= thresholds.human_max_mse
            && machine_divergence_mse >= thresholds.machine_min_mse,
    })
}
