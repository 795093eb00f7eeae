//! Layer-wise relevance propagation with the epsilon rule.
//!
//! Each layer step runs the generic four-step recipe: forward to get the
//! pre-activations `z`, divide the incoming relevance by the stabilized `z`,
//! push the quotient back through the layer's VJP and multiply by the layer
//! input. No layer kind needs special treatment beyond its VJP; ReLU and
//! flatten simply hand relevance through unchanged.

use std::str::FromStr;

use super::{to_spatial, Heatmap, Method};
use crate::error::{Error, Result};
use crate::network::{Layer, LayerKind, Network};
use crate::tensor::Tensor;

const Z_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EpsilonSigning {
    /// `z + eps * sign(z)`, pushing denominators away from zero.
    #[default]
    Signed,
    /// `z + eps`.
    Unsigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputInit {
    /// Target neuron starts with its own score.
    #[default]
    ActivationValue,
    /// Target neuron starts with relevance 1.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasPolicy {
    /// Biases take part in `z` and soak up their share of relevance.
    #[default]
    Absorb,
    /// `z` is recomputed without biases, so relevance is conserved.
    Zeroed,
}

impl FromStr for EpsilonSigning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(EpsilonSigning::Signed),
            "unsigned" => Ok(EpsilonSigning::Unsigned),
            _ => Err(Error::usage(format!("epsilon sign must be 'signed' or 'unsigned', got '{s}'"))),
        }
    }
}

impl FromStr for OutputInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(OutputInit::ActivationValue),
            "unit" => Ok(OutputInit::Unit),
            _ => Err(Error::usage(format!("output init must be 'activation' or 'unit', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub signing: EpsilonSigning,
    pub output_init: OutputInit,
    pub bias_policy: BiasPolicy,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 0.01,
            signing: EpsilonSigning::Signed,
            output_init: OutputInit::ActivationValue,
            bias_policy: BiasPolicy::Absorb,
        }
    }
}

impl LrpConfig {
    /// Plain LRP-0.
    pub fn zero() -> Self {
        LrpConfig { epsilon: 0.0, ..Default::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Relevance at every layer boundary of one run.
///
/// `relevances()[l]` has the dims of layer `l`'s input; the last entry is
/// the initialized output relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceStack {
    relevances: Vec<Tensor>,
}

impl RelevanceStack {
    pub fn relevances(&self) -> &[Tensor] {
        &self.relevances
    }

    pub fn input(&self) -> &Tensor {
        &self.relevances[0]
    }

    pub fn output(&self) -> &Tensor {
        self.relevances.last().unwrap()
    }

    /// Total relevance at each boundary, input first.
    pub fn totals(&self) -> Vec<f64> {
        self.relevances.iter().map(Tensor::sum).collect()
    }
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Redistributes `r_next` (relevance on the layer output) onto the layer
/// input `a`.
pub fn lrp_step(layer: &Layer, a: &Tensor, r_next: &Tensor, cfg: &LrpConfig) -> Result<Tensor> {
    cfg.check()?;
    match layer.kind {
        LayerKind::Relu => {
            r_next.expect_dims(a.dims())?;
            return Ok(r_next.clone());
        }
        LayerKind::Flatten => {
            r_next.expect_dims(&[a.len()])?;
            return r_next.reshape(a.dims());
        }
        _ => {}
    }
    let z = layer.forward_with_bias(a, cfg.bias_policy == BiasPolicy::Absorb)?;
    r_next.expect_dims(z.dims())?;
    let eps = cfg.epsilon;
    let s = z.zip_map(r_next, |z, r| {
        let mut d = match cfg.signing {
            EpsilonSigning::Signed => z + eps * sign(z),
            EpsilonSigning::Unsigned => z + eps,
        };
        if d.abs() < Z_FLOOR {
            d = Z_FLOOR * sign(d);
        }
        r / d
    })?;
    let c = layer.vjp(a, &s)?;
    a.mul(&c)
}

pub fn lrp_stack(net: &Network, x: &Tensor, target: usize, cfg: &LrpConfig) -> Result<RelevanceStack> {
    cfg.check()?;
    let mut r = net.one_hot_output(target)?;
    let (out, trace) = net.forward_traced(x)?;
    if cfg.output_init == OutputInit::ActivationValue {
        r = r.scale(out[target]);
    }
    let mut relevances = vec![r];
    for (l, layer) in net.layers().iter().enumerate().rev() {
        let prev = lrp_step(layer, trace.input_of(l), relevances.last().unwrap(), cfg)?;
        relevances.push(prev);
    }
    relevances.reverse();
    Ok(RelevanceStack { relevances })
}

/// Input-layer relevance as a signed heatmap (channels summed).
pub fn lrp(net: &Network, x: &Tensor, target: usize, cfg: &LrpConfig) -> Result<Heatmap> {
    let stack = lrp_stack(net, x, target, cfg)?;
    Heatmap::new(to_spatial(stack.input())?, Method::Lrp, target, true)
}
