use proptest::prelude::*;
use voxel_xai::explain::{
    gradcam, lrp_stack, segment_uniform_grid, sensitivity_map, weighted_ridge_fit, GradCamConfig, LrpConfig,
    OutputForm, SegmentGrid, SensitivityConfig,
};
use voxel_xai::fixtures;
use voxel_xai::tensor::argmax;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn squared_sensitivity_sums_to_gradient_norm(v in 0usize..3, seed in 0u64..1000, t in 0usize..3) {
        let net = fixtures::random_net(v, seed);
        let x = fixtures::random_input(&net, seed ^ 0x5a);
        let total = sensitivity_map(&net, &x, t, &SensitivityConfig::default()).unwrap().values().sum();
        let g = net.input_gradient(&x, t).unwrap();
        let norm: f64 = g.data().iter().map(|v| v * v).sum();
        prop_assert!((total - norm).abs() <= 1e-10 * norm.max(1e-300));
    }

    #[test]
    fn signed_sensitivity_is_the_gradient(v in 0usize..3, seed in 0u64..1000) {
        let net = fixtures::random_net(v, seed);
        let x = fixtures::random_input(&net, seed + 1);
        let cfg = SensitivityConfig { output_form: OutputForm::Signed, ..Default::default() };
        let map = sensitivity_map(&net, &x, 0, &cfg).unwrap();
        let g = net.input_gradient(&x, 0).unwrap().sum_channels().unwrap();
        prop_assert_eq!(map.values(), &g);
    }

    #[test]
    fn zero_epsilon_lrp_conserves(seed in 0u64..1000) {
        let net = fixtures::relu_net(seed);
        let x = fixtures::random_input(&net, seed + 3);
        let out = net.forward(&x).unwrap();
        let t = argmax(&out).unwrap();
        for total in lrp_stack(&net, &x, t, &LrpConfig::zero()).unwrap().totals() {
            prop_assert!((total - out[t]).abs() <= 1e-6 * out[t].abs());
        }
    }

    #[test]
    fn gradcam_maps_are_non_negative(v in 0usize..3, seed in 0u64..1000, t in 0usize..3) {
        let net = fixtures::random_net(v, seed);
        let x = fixtures::random_input(&net, seed + 4);
        let r = gradcam(&net, &x, t, &GradCamConfig::default()).unwrap();
        prop_assert!(r.coarse_map.data().iter().all(|&m| m >= 0.0));
        prop_assert!(r.upsampled.values().data().iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn segments_partition_the_grid(dims in prop::array::uniform3(1usize..13), p in prop::array::uniform3(1usize..5)) {
        prop_assume!((0..3).all(|a| p[a] <= dims[a]));
        let seg = SegmentGrid::uniform(dims, p).unwrap();
        prop_assert_eq!(seg.count(), p[0] * p[1] * p[2]);
        prop_assert_eq!(seg.ids().len(), dims[0] * dims[1] * dims[2]);
        let sizes = seg.sizes();
        prop_assert!(sizes.iter().all(|&s| s > 0));
        prop_assert_eq!(sizes.iter().sum::<usize>(), seg.ids().len());
        // Per-axis runs differ by at most one voxel.
        let floor: usize = (0..3).map(|a| dims[a] / p[a]).product();
        let ceil: usize = (0..3).map(|a| dims[a].div_ceil(p[a])).product();
        prop_assert!(sizes.iter().all(|&s| floor <= s && s <= ceil));
    }

    #[test]
    fn ridge_fit_recovers_exact_affine_data(
        coefs in prop::collection::vec(-5.0f64..5.0, 3),
        intercept in -5.0f64..5.0,
        seed in 0u64..1000,
    ) {
        let masks: Vec<Vec<f64>> = (0..8u64)
            .map(|m| (0..3).map(|s| f64::from(u8::from(((m ^ seed) >> s) & 1 == 1))).collect())
            .collect();
        let y: Vec<f64> = masks.iter().map(|r| intercept + r.iter().zip(&coefs).map(|(a, b)| a * b).sum::<f64>()).collect();
        let w: Vec<f64> = (0..8).map(|i| 0.2 + ((i as u64 + seed) % 5) as f64 / 5.0).collect();
        let (c, b) = weighted_ridge_fit(&masks, &y, &w, 0.0).unwrap();
        prop_assert!((b - intercept).abs() < 1e-9);
        for (got, want) in c.iter().zip(&coefs) {
            prop_assert!((got - want).abs() < 1e-9);
        }
    }
}

#[test]
fn cubic_segmentation_helper() {
    let g = segment_uniform_grid([8, 8, 8], 2).unwrap();
    assert_eq!(g.per_axis(), [2, 2, 2]);
    assert!(g.sizes().iter().all(|&s| s == 64));
}
