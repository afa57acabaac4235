//! Alpha-layer optimization.
//!
//! The composite shown to a viewer on a white page is
//! `alpha * hidden + (1 - alpha) * white`, where `hidden` is the background
//! image scaled by [`BlendConfig::background_scale`]. [`optimize`] searches for
//! the alpha layer whose composite matches a target image under mean squared
//! error, using projected Adam steps that start from a fully opaque layer.
//! [`closed_form_alpha`] gives the exact per-pixel minimizer and is used to
//! check the iterative result.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgio::{PixelGrid, DEFAULT_SIZE};

/// Per-pixel opacity in `[0, 1]`; 1 is opaque.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaLayer(PixelGrid);

impl AlphaLayer {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        PixelGrid::new(width, height, values).map(Self)
    }

    pub fn from_grid(grid: PixelGrid) -> Self {
        Self(grid)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        PixelGrid::filled(width, height, value).map(Self)
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self(PixelGrid::ones(width, height))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self(PixelGrid::zeros(width, height))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn grid(&self) -> &PixelGrid {
        &self.0
    }

    pub fn into_grid(self) -> PixelGrid {
        self.0
    }

    pub fn quantized(&self) -> Self {
        Self(self.0.quantized())
    }

    /// Population variance of the opacity values.
    pub fn variance(&self) -> f64 {
        let n = self.values().len();
        if n == 0 {
            return 0.0;
        }
        let mean = self.values().iter().sum::<f64>() / n as f64;
        self.values()
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / n as f64
    }
}

/// Optimization and packaging parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendConfig {
    /// Working raster size, `(width, height)`.
    pub size: (usize, usize),
    pub steps: usize,
    pub learning_rate: f64,
    /// Factor applied to the background before it is stored in RGB.
    pub background_scale: f64,
    /// Loss is recorded whenever `step % log_interval == 0`.
    pub log_interval: usize,
    /// Appended to the target's file stem when naming outputs.
    pub filename_tag: String,
    pub rng_seed: u64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_SIZE,
            steps: 1000,
            learning_rate: 0.01,
            background_scale: 0.5,
            log_interval: 100,
            filename_tag: "_blended".to_string(),
            rng_seed: 0,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size.0 == 0 || self.size.1 == 0 {
            return Err(Error::Argument("size must be at least 1x1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Argument("steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.background_scale > 0.0 && self.background_scale <= 1.0) {
            return Err(Error::Argument(format!(
                "background scale must lie in (0, 1], got {}",
                self.background_scale
            )));
        }
        if self.log_interval == 0 {
            return Err(Error::Argument("log interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Stable text form used for hashing and manifests.
    pub fn canonical(&self) -> String {
        format!(
            "size={}x{};steps={};learning_rate={:?};background_scale={:?};log_interval={};filename_tag={};rng_seed={}",
            self.size.0,
            self.size.1,
            self.steps,
            self.learning_rate,
            self.background_scale,
            self.log_interval,
            self.filename_tag,
            self.rng_seed
        )
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gradient of the loss with respect to each alpha sample. Unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Argument(format!(
                "gradient of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Adam moment estimates threaded through [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(width: usize, height: usize) -> Self {
        Self::with_hyperparameters(width, height, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(
        width: usize,
        height: usize,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            m: vec![0.0; width * height],
            v: vec![0.0; width * height],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEntry {
    pub step: usize,
    pub loss: f64,
}

/// Losses sampled during [`optimize`], in increasing step order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    entries: Vec<LossEntry>,
}

impl LossTrace {
    pub fn entries(&self) -> &[LossEntry] {
        &self.entries
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }

    fn record(&mut self, step: usize, loss: f64) {
        debug_assert!(self.entries.last().is_none_or(|e| e.step < step));
        self.entries.push(LossEntry { step, loss });
    }
}

/// `alpha * hidden + (1 - alpha) * backdrop`, elementwise.
pub fn blend(alpha: &AlphaLayer, hidden: &PixelGrid, backdrop: &PixelGrid) -> Result<PixelGrid> {
    alpha
        .grid()
        .ensure_same_dims(hidden, "blend alpha vs background")?;
    hidden.ensure_same_dims(backdrop, "blend background vs backdrop")?;
    let values = alpha
        .values()
        .iter()
        .zip(hidden.values())
        .zip(backdrop.values())
        .map(|((&a, &b), &w)| a * b + (1.0 - a) * w)
        .collect();
    let (w, h) = hidden.dims();
    Ok(PixelGrid::from_clamped(w, h, values))
}

/// Mean squared error between two co-dimensioned grids.
pub fn mse_loss(a: &PixelGrid, b: &PixelGrid) -> Result<f64> {
    a.ensure_same_dims(b, "mse")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Exact gradient of `mse_loss(blend(alpha, hidden, white), target)` in alpha:
/// `(2 / N) * (blend_i - target_i) * (hidden_i - 1)`.
pub fn grad_alpha(alpha: &AlphaLayer, hidden: &PixelGrid, target: &PixelGrid) -> Result<Gradient> {
    alpha
        .grid()
        .ensure_same_dims(hidden, "gradient alpha vs background")?;
    hidden.ensure_same_dims(target, "gradient background vs target")?;
    let (w, h) = hidden.dims();
    let scale = 2.0 / (w * h).max(1) as f64;
    let values = alpha
        .values()
        .iter()
        .zip(hidden.values())
        .zip(target.values())
        .map(|((&a, &b), &t)| {
            let mixed = a * b + (1.0 - a);
            scale * (mixed - t) * (b - 1.0)
        })
        .collect();
    Ok(Gradient {
        width: w,
        height: h,
        values,
    })
}

/// One bias-corrected Adam update followed by projection onto `[0, 1]`.
pub fn adam_step(
    mut state: OptimizerState,
    alpha: AlphaLayer,
    grad: &Gradient,
    learning_rate: f64,
) -> Result<(OptimizerState, AlphaLayer)> {
    let dims = alpha.dims();
    if grad.dims() != dims {
        return Err(Error::dims("adam gradient vs alpha", grad.dims(), dims));
    }
    if state.m.len() != grad.values.len() || state.v.len() != grad.values.len() {
        return Err(Error::Argument(
            "optimizer state does not match alpha layer".into(),
        ));
    }
    if let Some(g) = grad.values.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient {g}")));
    }

    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let m_correction = 1.0 - state.beta1.powi(t);
    let v_correction = 1.0 - state.beta2.powi(t);

    let mut values = alpha.into_grid().into_values();
    for (((a, &g), m), v) in values
        .iter_mut()
        .zip(&grad.values)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / m_correction;
        let v_hat = *v / v_correction;
        *a -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    let alpha = AlphaLayer::from_grid(PixelGrid::from_clamped(dims.0, dims.1, values));
    Ok((state, alpha))
}

/// Runs the blend loop for `cfg.steps` iterations starting from an opaque
/// alpha layer.
///
/// `background` is the unscaled hidden image; it is multiplied by
/// `cfg.background_scale` before blending. The loss is recorded at every
/// multiple of `cfg.log_interval` (before that step's update) and once more
/// after the last update, under step number `cfg.steps`. Grids only need to
/// share dimensions; `cfg.size` is not enforced here.
pub fn optimize(
    target: &PixelGrid,
    background: &PixelGrid,
    cfg: &BlendConfig,
) -> Result<(AlphaLayer, LossTrace)> {
    cfg.validate()?;
    target.ensure_same_dims(background, "optimize target vs background")?;
    let hidden = background.scaled(cfg.background_scale)?;
    let (w, h) = target.dims();
    let white = PixelGrid::ones(w, h);

    let mut alpha = AlphaLayer::ones(w, h);
    let mut state = OptimizerState::new(w, h);
    let mut trace = LossTrace::default();

    for step in 0..cfg.steps {
        let blended = blend(&alpha, &hidden, &white)?;
        let loss = checked_loss(&blended, target, step)?;
        if step % cfg.log_interval == 0 {
            log::debug!("step={step} loss={loss:e}");
            trace.record(step, loss);
        }
        let grad = grad_alpha(&alpha, &hidden, target)?;
        (state, alpha) = adam_step(state, alpha, &grad, cfg.learning_rate)?;
    }

    let blended = blend(&alpha, &hidden, &white)?;
    let loss = checked_loss(&blended, target, cfg.steps)?;
    log::debug!("step={} loss={loss:e}", cfg.steps);
    trace.record(cfg.steps, loss);
    Ok((alpha, trace))
}

fn checked_loss(blended: &PixelGrid, target: &PixelGrid, step: usize) -> Result<f64> {
    let loss = mse_loss(blended, target)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
    }
    Ok(loss)
}

fn ensure_translucent(hidden: &PixelGrid) -> Result<()> {
    if let Some(b) = hidden.values().iter().find(|&&b| b >= 1.0) {
        return Err(Error::Domain(format!(
            "scaled background sample {b} is not below 1; alpha has no effect there"
        )));
    }
    Ok(())
}

/// Per-pixel constrained minimizer `clamp((1 - T) / (1 - B'), 0, 1)`.
pub fn closed_form_alpha(target: &PixelGrid, hidden: &PixelGrid) -> Result<AlphaLayer> {
    target.ensure_same_dims(hidden, "closed form target vs background")?;
    ensure_translucent(hidden)?;
    let (w, h) = target.dims();
    let values = target
        .values()
        .iter()
        .zip(hidden.values())
        .map(|(&t, &b)| ((1.0 - t) / (1.0 - b)).clamp(0.0, 1.0))
        .collect();
    Ok(AlphaLayer::from_grid(PixelGrid::from_clamped(w, h, values)))
}

/// How well a target can be reproduced over a given hidden image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    /// Share of pixels with `T >= B'`, where an exact alpha exists.
    pub fraction: f64,
    /// Loss of the closed-form optimum.
    pub residual_mse: f64,
}

pub fn feasibility_report(target: &PixelGrid, hidden: &PixelGrid) -> Result<Feasibility> {
    let alpha = closed_form_alpha(target, hidden)?;
    let feasible = target
        .values()
        .iter()
        .zip(hidden.values())
        .filter(|(t, b)| t >= b)
        .count();
    let (w, h) = target.dims();
    let blended = blend(&alpha, hidden, &PixelGrid::ones(w, h))?;
    Ok(Feasibility {
        fraction: if target.is_empty() {
            1.0
        } else {
            feasible as f64 / target.len() as f64
        },
        residual_mse: mse_loss(&blended, target)?,
    })
}
