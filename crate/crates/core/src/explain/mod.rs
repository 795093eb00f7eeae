//! Explanation methods and the shared contract they report through.
//!
//! Every method produces a [`Heatmap`] with the spatial dims of the explained
//! grid. Values are raw relevances; display normalization happens only at
//! export time.

pub mod gradcam;
pub mod lime;
pub mod lrp;
pub mod sensitivity;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::network::Network;
use crate::tensor::{argmax, Tensor};

pub use gradcam::{gradcam, superimpose, GradCamConfig, GradCamResult, LayerChoice};
pub use lime::{
    lime_explain, lime_with_masks, perturb, proximity_weight, sample_masks, segment_uniform_grid, weighted_ridge_fit,
    LimeConfig, LimeResult, PerturbationSample, SegmentGrid,
};
pub use lrp::{lrp, lrp_stack, lrp_step, BiasPolicy, EpsilonSigning, LrpConfig, OutputInit, RelevanceStack};
pub use sensitivity::{deep_dream, sensitivity_map, OutputForm, SensitivityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sensitivity,
    Lrp,
    GradCam,
    Lime,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sensitivity, Method::Lrp, Method::GradCam, Method::Lime];

    /// Short name as used on the command line and in file names.
    pub fn name(self) -> &'static str {
        match self {
            Method::Sensitivity => "sa",
            Method::Lrp => "lrp",
            Method::GradCam => "gradcam",
            Method::Lime => "lime",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Exact match only: no trimming, no case folding.
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown method '{s}' (expected sa, lrp, gradcam or lime)")))
    }
}

/// Per-voxel relevance for one explained output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    values: Tensor,
    method: Method,
    target: usize,
    signed: bool,
}

impl Heatmap {
    /// `signed` marks fields whose sign carries meaning; they are displayed
    /// with a symmetric normalization.
    pub fn new(values: Tensor, method: Method, target: usize, signed: bool) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::shape(format!("heatmap needs 3 axes, got {:?}", values.dims())));
        }
        if !values.all_finite() {
            return Err(Error::Numerical(format!("{method} produced non-finite relevance")));
        }
        Ok(Heatmap { values, method, target, signed })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.values.dims();
        [d[0], d[1], d[2]]
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSelection {
    /// The output neuron with the largest score.
    #[default]
    Argmax,
    Index(usize),
}

impl FromStr for TargetSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "argmax" {
            return Ok(TargetSelection::Argmax);
        }
        s.parse()
            .map(TargetSelection::Index)
            .map_err(|_| Error::usage(format!("target must be 'argmax' or an index, got '{s}'")))
    }
}

pub fn select_target(output: &[f64], sel: TargetSelection) -> Result<usize> {
    if output.is_empty() {
        return Err(Error::domain("cannot select a target from an empty output"));
    }
    match sel {
        TargetSelection::Argmax => argmax(output),
        TargetSelection::Index(i) if i < output.len() => Ok(i),
        TargetSelection::Index(i) => Err(Error::Index { index: i, len: output.len() }),
    }
}

/// Method-specific settings; the variant must agree with the method being
/// run.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Sensitivity(SensitivityConfig),
    Lrp(LrpConfig),
    GradCam(GradCamConfig),
    Lime(LimeConfig),
}

impl MethodConfig {
    pub fn default_for(method: Method) -> MethodConfig {
        match method {
            Method::Sensitivity => MethodConfig::Sensitivity(SensitivityConfig::default()),
            Method::Lrp => MethodConfig::Lrp(LrpConfig::default()),
            Method::GradCam => MethodConfig::GradCam(GradCamConfig::default()),
            Method::Lime => MethodConfig::Lime(LimeConfig::default()),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Sensitivity(_) => Method::Sensitivity,
            MethodConfig::Lrp(_) => Method::Lrp,
            MethodConfig::GradCam(_) => Method::GradCam,
            MethodConfig::Lime(_) => Method::Lime,
        }
    }
}

/// Runs `method` on `grid` for the neuron chosen by `sel`. The result is
/// identical to calling the method's own entry point with the same
/// settings.
pub fn explain(net: &Network, grid: &VoxelGrid, method: Method, sel: TargetSelection, cfg: &MethodConfig) -> Result<Heatmap> {
    if cfg.method() != method {
        return Err(Error::usage(format!("{} settings given for method {method}", cfg.method())));
    }
    let x = grid_input(net, grid)?;
    let target = match sel {
        TargetSelection::Argmax => select_target(&net.forward(&x)?, sel)?,
        TargetSelection::Index(i) if i < net.output_width() => i,
        TargetSelection::Index(i) => return Err(Error::Index { index: i, len: net.output_width() }),
    };
    match cfg {
        MethodConfig::Sensitivity(c) => sensitivity_map(net, &x, target, c),
        MethodConfig::Lrp(c) => lrp(net, &x, target, c),
        MethodConfig::GradCam(c) => gradcam(net, &x, target, c).map(|r| r.upsampled),
        MethodConfig::Lime(c) => lime_explain(net, &x, target, c).map(|r| r.heatmap),
    }
}

/// The grid as network input, checked against the network's input dims.
pub fn grid_input(net: &Network, grid: &VoxelGrid) -> Result<Tensor> {
    let x = grid.to_input();
    if x.dims() != net.input_dims() {
        return Err(Error::shape(format!(
            "grid dims {:?} do not match network input {:?}",
            grid.dims(),
            net.input_dims()
        )));
    }
    Ok(x)
}

/// Collapses a `[channels, nx, ny, nz]` per-element field to the spatial
/// grid. Single-channel fields are reshaped without arithmetic.
pub(crate) fn to_spatial(t: &Tensor) -> Result<Tensor> {
    if t.rank() == 4 && t.dims()[0] == 1 {
        return t.reshape(&t.dims()[1..]);
    }
    t.sum_channels()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::{Layer, LayerKind};

    #[test]
    fn target_selection_examples() {
        assert_eq!(select_target(&[0.2, 0.9, 0.1], TargetSelection::Argmax).unwrap(), 1);
        let wide = vec![0.0; 11];
        assert_eq!(select_target(&wide, TargetSelection::Index(4)).unwrap(), 4);
        assert!(matches!(select_target(&wide, TargetSelection::Index(11)), Err(Error::Index { index: 11, len: 11 })));
        assert!(select_target(&[], TargetSelection::Argmax).is_err());
    }

    #[test]
    fn method_names_parse_exactly() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        for bad in ["grad-cam ", "SA", " lrp", "gradcam ", ""] {
            assert!(matches!(bad.parse::<Method>(), Err(Error::Usage(_))), "{bad:?}");
        }
        assert_eq!("argmax".parse::<TargetSelection>().unwrap(), TargetSelection::Argmax);
        assert_eq!("7".parse::<TargetSelection>().unwrap(), TargetSelection::Index(7));
        assert!(matches!("-1".parse::<TargetSelection>(), Err(Error::Usage(_))));
    }

    fn grid_for(net: &Network, seed: u64) -> VoxelGrid {
        let x = fixtures::random_input(net, seed);
        let [_, a, b, c] = net.input_dims();
        VoxelGrid::from_values(x.reshape(&[a, b, c]).unwrap()).unwrap()
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let net = fixtures::random_net(2, 3);
        let grid = grid_for(&net, 4);
        let x = grid.to_input();
        let t = select_target(&net.forward(&x).unwrap(), TargetSelection::Argmax).unwrap();
        let lime_cfg = LimeConfig { segments_per_axis: [2; 3], n_samples: 40, ..LimeConfig::default() };
        let cases = [
            (MethodConfig::Sensitivity(SensitivityConfig::default()), sensitivity_map(&net, &x, t, &SensitivityConfig::default()).unwrap()),
            (MethodConfig::Lrp(LrpConfig::default()), lrp(&net, &x, t, &LrpConfig::default()).unwrap()),
            (MethodConfig::GradCam(GradCamConfig::default()), gradcam(&net, &x, t, &GradCamConfig::default()).unwrap().upsampled),
            (MethodConfig::Lime(lime_cfg.clone()), lime_explain(&net, &x, t, &lime_cfg).unwrap().heatmap),
        ];
        for (cfg, direct) in cases {
            let via = explain(&net, &grid, cfg.method(), TargetSelection::Argmax, &cfg).unwrap();
            assert_eq!(via, direct, "{}", cfg.method());
            assert_eq!(via.dims(), grid.dims());
            assert_eq!(via.target(), t);
            let again = explain(&net, &grid, cfg.method(), TargetSelection::Argmax, &cfg).unwrap();
            assert_eq!(again, via);
        }
    }

    #[test]
    fn config_mismatch_and_bad_inputs() {
        let net = fixtures::random_net(0, 3);
        let grid = grid_for(&net, 1);
        let cfg = MethodConfig::default_for(Method::Lrp);
        assert!(matches!(explain(&net, &grid, Method::Sensitivity, TargetSelection::Argmax, &cfg), Err(Error::Usage(_))));
        assert!(matches!(explain(&net, &grid, Method::Lrp, TargetSelection::Index(3), &cfg), Err(Error::Index { .. })));
        let wrong = VoxelGrid::from_values(Tensor::zeros(&[5, 5, 5])).unwrap();
        assert!(matches!(explain(&net, &wrong, Method::Lrp, TargetSelection::Argmax, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_survives_positive_output_scaling() {
        for seed in 0..5 {
            let net = fixtures::random_net(0, seed);
            let x = fixtures::random_input(&net, seed + 10);
            let base = select_target(&net.forward(&x).unwrap(), TargetSelection::Argmax).unwrap();
            for lambda in [0.01, 3.0, 250.0] {
                let mut layers = net.layers().to_vec();
                let last = layers.iter().rposition(|l| matches!(l.kind, LayerKind::Dense { .. })).unwrap();
                let w = layers[last].weights.clone().unwrap();
                layers[last] = Layer::new(layers[last].name.clone(), layers[last].kind.clone())
                    .with_weights(w.weight.scale(lambda), w.bias.scale(lambda))
                    .unwrap();
                let scaled = Network::new(net.input_dims(), layers).unwrap();
                let t = select_target(&scaled.forward(&x).unwrap(), TargetSelection::Argmax).unwrap();
                assert_eq!(t, base);
            }
        }
    }
}
