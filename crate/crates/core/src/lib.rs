//! # alphaveil
//!
//! Transparency-attack images are RGBA PNGs that show one picture when a
//! viewer composites them over a white page and a different picture to any
//! pipeline that drops the alpha channel. This crate crafts them by
//! optimizing the alpha layer, scores them, batch-produces them for dataset
//! poisoning experiments, and scans for them.
//!
//! - [`imgio`]: loading, grayscale preprocessing and RGBA PNG packaging
//! - [`blend`]: the alpha optimizer and its closed-form check
//! - [`compositor`]: human (flattened) and machine (alpha-dropped) views
//! - [`metrics`]: fidelity, divergence and exposure scores
//! - [`poison`]: directory-level crafting with a persisted manifest
//! - [`detector`]: a scanner that flags likely attack images
//!
//! ```no_run
//! use alphaveil::{blend::BlendConfig, imgio, poison::craft};
//!
//! # fn main() -> alphaveil::Result<()> {
//! let cfg = BlendConfig::default();
//! let target = imgio::load_grayscale("cat.jpg", cfg.size)?;
//! let background = imgio::load_grayscale("tank.jpg", cfg.size)?;
//! let (attack, _trace) = craft(&target, &background, &cfg)?;
//! imgio::encode_attack_png(attack.rgb(), attack.alpha(), "cat_blended.png")?;
//! # Ok(())
//! # }
//! ```

pub mod blend;
pub mod compositor;
pub mod detector;
mod error;
pub mod imgio;
pub mod metrics;
pub mod poison;

pub use error::{Error, Result};
