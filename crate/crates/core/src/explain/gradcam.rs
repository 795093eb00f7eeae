//! Gradient-weighted class activation maps for 3D convolutional layers.

use super::{to_spatial, Heatmap, Method};
use crate::error::{Error, Result};
use crate::network::{LayerKind, Network};
use crate::tensor::{resample, Resample, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerChoice {
    #[default]
    LastConv,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCamConfig {
    pub layer: LayerChoice,
    pub resample: Resample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCamResult {
    /// One weight per feature map: the spatial mean of the target's
    /// gradient on that map.
    pub alpha: Vec<f64>,
    /// Rectified weighted map sum at the feature maps' spatial dims.
    pub coarse_map: Tensor,
    /// `coarse_map` stretched to the input's spatial dims.
    pub upsampled: Heatmap,
    /// Name of the convolutional layer explained.
    pub layer: String,
}

/// Index of the layer whose output holds the feature maps: the chosen conv
/// layer, or the ReLU directly after it when there is one.
fn feature_layer(net: &Network, choice: &LayerChoice) -> Result<(usize, usize)> {
    let conv = match choice {
        LayerChoice::LastConv => net.last_conv().ok_or_else(|| Error::usage("network has no convolutional layer"))?,
        LayerChoice::Named(name) => {
            let l = net.layer_index(name).ok_or_else(|| Error::usage(format!("no layer named '{name}'")))?;
            if !net.layers()[l].is_conv() {
                return Err(Error::usage(format!("layer '{name}' is {}, not conv3d", net.layers()[l].kind.tag())));
            }
            l
        }
    };
    let maps = match net.layers().get(conv + 1) {
        Some(next) if next.kind == LayerKind::Relu => conv + 1,
        _ => conv,
    };
    Ok((conv, maps))
}

/// One forward and one backward pass.
pub fn gradcam(net: &Network, x: &Tensor, target: usize, cfg: &GradCamConfig) -> Result<GradCamResult> {
    let (conv, maps) = feature_layer(net, &cfg.layer)?;
    let seed = net.one_hot_output(target)?;
    let (_, trace) = net.forward_traced(x)?;
    let grad = net.backprop(&trace, &seed, maps + 1)?;
    let a = trace.output_of(maps);

    let d = a.dims();
    let (k, spatial) = (d[0], d[1] * d[2] * d[3]);
    let alpha: Vec<f64> = grad.data().chunks_exact(spatial).map(|g| g.iter().sum::<f64>() / spatial as f64).collect();
    let mut weighted = vec![0.0; spatial];
    for (ak, alpha_k) in a.data().chunks_exact(spatial).zip(&alpha) {
        for (w, v) in weighted.iter_mut().zip(ak) {
            *w += alpha_k * v;
        }
    }
    debug_assert_eq!(alpha.len(), k);
    let coarse_map = Tensor::new(d[1..].to_vec(), weighted.into_iter().map(|v| v.max(0.0)).collect())?;
    let up = resample(&coarse_map, net.spatial_dims(), cfg.resample)?;
    Ok(GradCamResult {
        alpha,
        coarse_map,
        upsampled: Heatmap::new(up, Method::GradCam, target, false)?,
        layer: net.layers()[conv].name.clone(),
    })
}

/// `normalize01(x) * normalize01(map)`: the map restricted to where the
/// input has material.
pub fn superimpose(result: &GradCamResult, x: &Tensor) -> Result<Heatmap> {
    let x = if x.rank() == 4 { to_spatial(x)? } else { x.clone() };
    let map = result.upsampled.values();
    x.expect_dims(map.dims())?;
    let v = x.normalize01().mul(&map.normalize01())?;
    Heatmap::new(v, Method::GradCam, result.upsampled.target(), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::{Layer, Padding};

    /// Unit 1x1x1 conv on a ones grid (so A == 1 on 2^3) feeding a dense
    /// layer whose weights are all 0.5 (so dy/dA == 0.5).
    fn hand_net() -> Network {
        let conv = Layer::conv3d("c", 1, 1, 1, Padding::Same)
            .with_weights(Tensor::filled(&[1, 1, 1, 1, 1], 1.0), Tensor::zeros(&[1]))
            .unwrap();
        let dense = Layer::dense("d", 8, 1).with_weights(Tensor::filled(&[1, 8], 0.5), Tensor::zeros(&[1])).unwrap();
        Network::new([1, 2, 2, 2], vec![conv, Layer::flatten("f"), dense]).unwrap()
    }

    #[test]
    fn hand_fixture() {
        let net = hand_net();
        let x = Tensor::filled(&[1, 2, 2, 2], 1.0);
        net.reset_counters();
        let r = gradcam(&net, &x, 0, &GradCamConfig::default()).unwrap();
        assert_eq!((net.forward_count(), net.backward_count()), (1, 1));
        assert_eq!(r.alpha, vec![0.5]);
        assert!(r.coarse_map.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert_eq!(r.layer, "c");
    }

    #[test]
    fn negative_alpha_is_clipped() {
        let conv = Layer::conv3d("c", 1, 1, 1, Padding::Same)
            .with_weights(Tensor::filled(&[1, 1, 1, 1, 1], 1.0), Tensor::zeros(&[1]))
            .unwrap();
        let dense = Layer::dense("d", 8, 1).with_weights(Tensor::filled(&[1, 8], -0.5), Tensor::zeros(&[1])).unwrap();
        let net = Network::new([1, 2, 2, 2], vec![conv, Layer::flatten("f"), dense]).unwrap();
        let r = gradcam(&net, &Tensor::filled(&[1, 2, 2, 2], 1.0), 0, &GradCamConfig::default()).unwrap();
        assert_eq!(r.alpha, vec![-0.5]);
        assert!(r.coarse_map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disconnected_target_gives_zero_map() {
        let conv = Layer::conv3d("c", 1, 2, 1, Padding::Same)
            .with_weights(Tensor::filled(&[2, 1, 1, 1, 1], 1.0), Tensor::zeros(&[2]))
            .unwrap();
        let mut w = Tensor::filled(&[2, 16], 1.0);
        for j in 0..16 {
            let i = w.flat_index(&[1, j]);
            w.data_mut()[i] = 0.0;
        }
        let dense = Layer::dense("d", 16, 2).with_weights(w, Tensor::filled(&[2], 0.3)).unwrap();
        let net = Network::new([1, 2, 2, 2], vec![conv, Layer::flatten("f"), dense]).unwrap();
        let r = gradcam(&net, &Tensor::filled(&[1, 2, 2, 2], 0.7), 1, &GradCamConfig::default()).unwrap();
        assert_eq!(r.alpha, vec![0.0, 0.0]);
        assert!(r.coarse_map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maps_are_non_negative_and_input_sized() {
        for v in 0..3 {
            for seed in 0..3 {
                let net = fixtures::random_net(v, seed);
                let x = fixtures::random_input(&net, seed + 7);
                for t in 0..net.output_width() {
                    let r = gradcam(&net, &x, t, &GradCamConfig::default()).unwrap();
                    assert!(r.coarse_map.data().iter().all(|&m| m >= 0.0));
                    assert_eq!(r.upsampled.dims(), net.spatial_dims());
                    let conv = net.layer_index(&r.layer).unwrap();
                    assert_eq!(r.alpha.len(), net.shape_at(conv + 1)[0]);
                }
            }
        }
    }

    #[test]
    fn alpha_matches_finite_differences() {
        let net = fixtures::random_net(0, 21);
        let x = fixtures::random_input(&net, 22);
        let r = gradcam(&net, &x, 1, &GradCamConfig::default()).unwrap();
        let (_, maps) = feature_layer(&net, &LayerChoice::LastConv).unwrap();
        let (_, trace) = net.forward_traced(&x).unwrap();
        let a = trace.output_of(maps).clone();
        let spatial = a.len() / a.dims()[0];
        let h = 1e-6;
        for (k, &alpha) in r.alpha.iter().enumerate() {
            let mut sum = 0.0;
            for i in k * spatial..(k + 1) * spatial {
                let mut p = a.clone();
                p.data_mut()[i] += h;
                let mut m = a.clone();
                m.data_mut()[i] -= h;
                sum += (net.forward_tail(maps + 1, &p).unwrap()[1] - net.forward_tail(maps + 1, &m).unwrap()[1]) / (2.0 * h);
            }
            let fd = sum / spatial as f64;
            assert!((fd - alpha).abs() <= 1e-3 * alpha.abs().max(1e-6), "map {k}: {fd} vs {alpha}");
        }
    }

    #[test]
    fn layer_choice_errors() {
        let net = fixtures::random_net(0, 1);
        let x = fixtures::random_input(&net, 2);
        let relu_name = net.layers().iter().find(|l| l.kind == LayerKind::Relu).unwrap().name.clone();
        let named = |n: &str| GradCamConfig { layer: LayerChoice::Named(n.into()), ..Default::default() };
        assert!(matches!(gradcam(&net, &x, 0, &named(&relu_name)), Err(Error::Usage(_))));
        assert!(matches!(gradcam(&net, &x, 0, &named("nope")), Err(Error::Usage(_))));
        let first_conv = net.layers().iter().find(|l| l.is_conv()).unwrap().name.clone();
        assert_eq!(gradcam(&net, &x, 0, &named(&first_conv)).unwrap().layer, first_conv);
        let dense_only = fixtures::linear_net(&[1.0, 2.0], 0.0);
        let x2 = Tensor::zeros(&dense_only.input_dims());
        assert!(matches!(gradcam(&dense_only, &x2, 0, &GradCamConfig::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn superimpose_masks_empty_space() {
        let net = fixtures::random_net(2, 3);
        let cube = Tensor::from_fn(&[1, 8, 8, 8], |i| if i[1..].iter().all(|&c| (2..6).contains(&c)) { 1.0 } else { 0.0 });
        let r = gradcam(&net, &cube, 0, &GradCamConfig::default()).unwrap();
        let s = superimpose(&r, &cube).unwrap();
        for (v, x) in s.values().data().iter().zip(cube.data()) {
            if *x == 0.0 {
                assert_eq!(*v, 0.0);
            }
        }
        let zeros = Tensor::zeros(&[1, 8, 8, 8]);
        assert!(superimpose(&r, &zeros).unwrap().values().data().iter().all(|&v| v == 0.0));
        let mut flat = r.clone();
        flat.upsampled = Heatmap::new(Tensor::zeros(&[8, 8, 8]), Method::GradCam, 0, false).unwrap();
        assert!(superimpose(&flat, &cube).unwrap().values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_resampling_flag() {
        let net = fixtures::random_net(0, 5);
        let x = fixtures::random_input(&net, 6);
        let cfg = GradCamConfig { resample: Resample::Nearest, ..Default::default() };
        let r = gradcam(&net, &x, 0, &cfg).unwrap();
        let coarse_vals: Vec<f64> = r.coarse_map.data().to_vec();
        assert!(r.upsampled.values().data().iter().all(|v| coarse_vals.contains(v)));
    }
}
