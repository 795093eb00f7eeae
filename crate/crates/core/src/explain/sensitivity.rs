//! Gradient-based relevance: squared or signed input gradients, and the
//! iterative gradient-ascent input modification ("deep dream").

use std::str::FromStr;

use super::{to_spatial, Heatmap, Method};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputForm {
    /// `(df/dx_i)^2`, summed over channels.
    #[default]
    Squared,
    /// `df/dx_i`, summed over channels.
    Signed,
}

impl FromStr for OutputForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(OutputForm::Squared),
            "signed" => Ok(OutputForm::Signed),
            _ => Err(Error::usage(format!("output form must be 'squared' or 'signed', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    pub output_form: OutputForm,
    /// Gradient scaling factor per dream iteration.
    pub dream_step: f64,
    pub dream_iters: usize,
    /// Clamp the dreamed input to `[0, 1]` after the last iteration.
    pub clamp: bool,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { output_form: OutputForm::Squared, dream_step: 0.01, dream_iters: 1, clamp: false }
    }
}

pub fn sensitivity_map(net: &Network, x: &Tensor, target: usize, cfg: &SensitivityConfig) -> Result<Heatmap> {
    let g = net.input_gradient(x, target)?;
    match cfg.output_form {
        OutputForm::Signed => Heatmap::new(to_spatial(&g)?, Method::Sensitivity, target, true),
        OutputForm::Squared => Heatmap::new(to_spatial(&g.map(|v| v * v))?, Method::Sensitivity, target, false),
    }
}

/// Repeats `x <- x + step * grad f(x)` for `dream_iters` steps, recomputing
/// the gradient each time.
pub fn deep_dream(net: &Network, x: &Tensor, target: usize, cfg: &SensitivityConfig) -> Result<Tensor> {
    if cfg.dream_iters == 0 {
        return Err(Error::domain("deep dream needs at least one iteration"));
    }
    if !(cfg.dream_step.is_finite() && cfg.dream_step > 0.0) {
        return Err(Error::domain(format!("dream step must be finite and positive, got {}", cfg.dream_step)));
    }
    let mut cur = x.clone();
    for _ in 0..cfg.dream_iters {
        let g = net.input_gradient(&cur, target)?;
        cur = cur.zip_map(&g, |v, d| v + cfg.dream_step * d)?;
        if !cur.all_finite() {
            return Err(Error::Numerical("deep dream diverged".into()));
        }
    }
    if cfg.clamp {
        cur = cur.map(|v| v.clamp(0.0, 1.0));
    }
    Ok(cur)
}
