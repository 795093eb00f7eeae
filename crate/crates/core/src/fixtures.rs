//! Small deterministic networks and inputs for tests, examples and the guide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Layer, LayerKind, Network, Padding};
use crate::tensor::Tensor;

fn init(mut layers: Vec<Layer>, input: [usize; 4], seed: u64, with_bias: bool) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut layers {
        l.init_glorot(&mut rng);
        if with_bias {
            if let Some(w) = l.weights.as_mut() {
                for b in w.bias.data_mut() {
                    *b = rng.random_range(-0.1..0.1);
                }
            }
        }
    }
    Network::new(input, layers).expect("fixture architecture is valid")
}

/// One of three randomized architectures, each containing every layer kind
/// (conv3d, maxpool3d, global_avg_pool, flatten, dense, relu).
///
/// `variant` is taken modulo 3.
pub fn random_net(variant: usize, seed: u64) -> Network {
    let conv = |name: &str, i, o, kernel, stride, padding| {
        Layer::new(name, LayerKind::Conv3d { in_channels: i, out_channels: o, kernel, stride, padding })
    };
    let (input, layers) = match variant % 3 {
        0 => (
            [1, 6, 6, 6],
            vec![
                conv("c1", 1, 3, [3; 3], 1, Padding::Same),
                Layer::relu("r1"),
                Layer::maxpool("p1", 2),
                conv("c2", 3, 4, [2; 3], 1, Padding::Valid),
                Layer::relu("r2"),
                Layer::global_avg_pool("gap"),
                Layer::flatten("flat"),
                Layer::dense("d1", 4, 5),
                Layer::relu("r3"),
                Layer::dense("d2", 5, 3),
            ],
        ),
        1 => (
            [2, 5, 6, 4],
            vec![
                conv("c1", 2, 3, [3; 3], 2, Padding::Same),
                Layer::relu("r1"),
                conv("c2", 3, 4, [2, 2, 1], 1, Padding::Valid),
                Layer::relu("r2"),
                Layer::maxpool("p1", 2),
                Layer::global_avg_pool("gap"),
                Layer::flatten("flat"),
                Layer::dense("d1", 4, 6),
                Layer::relu("r3"),
                Layer::dense("d2", 6, 4),
            ],
        ),
        _ => (
            [1, 8, 8, 8],
            vec![
                conv("c1", 1, 4, [3; 3], 1, Padding::Same),
                Layer::relu("r1"),
                Layer::maxpool("p1", 2),
                conv("c2", 4, 4, [3; 3], 1, Padding::Same),
                Layer::relu("r2"),
                Layer::global_avg_pool("gap"),
                Layer::flatten("flat"),
                Layer::dense("d1", 4, 6),
                Layer::relu("r3"),
                Layer::dense("d2", 6, 11),
            ],
        ),
    };
    init(layers, input, seed, true)
}

/// Uniform `[0, 1)` input matching the network's input dims.
pub fn random_input(net: &Network, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&net.input_dims(), |_| rng.random_range(0.0..1.0))
}

/// Copy of `net` with every bias set to zero.
pub fn bias_free(net: &Network) -> Network {
    let layers = net
        .layers()
        .iter()
        .cloned()
        .map(|mut l| {
            if let Some(w) = l.weights.as_mut() {
                w.bias = Tensor::zeros(w.bias.dims());
            }
            l
        })
        .collect();
    Network::new(net.input_dims(), layers).expect("same architecture")
}

/// Bias-free ReLU network (conv, pool, dense) used for relevance
/// conservation checks.
pub fn relu_net(seed: u64) -> Network {
    let layers = vec![
        Layer::conv3d("c1", 1, 4, 3, Padding::Same),
        Layer::relu("r1"),
        Layer::maxpool("p1", 2),
        Layer::conv3d("c2", 4, 6, 3, Padding::Same),
        Layer::relu("r2"),
        Layer::flatten("flat"),
        Layer::dense("d1", 6 * 27, 8),
        Layer::relu("r3"),
        Layer::dense("d2", 8, 3),
    ];
    let net = init(layers, [1, 6, 6, 6], seed, false);
    // Shift the output weights so every class has a positive score on
    // positive inputs.
    let mut layers = net.layers().to_vec();
    if let Some(w) = layers.last_mut().and_then(|l| l.weights.as_mut()) {
        for v in w.weight.data_mut() {
            *v = v.abs();
        }
    }
    Network::new(net.input_dims(), layers).expect("same architecture")
}

/// `f(x) = sum_i w_i x_i + bias` over an input of dims `[1, n, 1, 1]`.
pub fn linear_net(w: &[f64], bias: f64) -> Network {
    let n = w.len();
    let layers = vec![
        Layer::flatten("flat"),
        Layer::dense("d", n, 1)
            .with_weights(
                Tensor::new(vec![1, n], w.to_vec()).expect("finite weights"),
                Tensor::from_vec(vec![bias]).expect("finite bias"),
            )
            .expect("matching dims"),
    ];
    Network::new([1, n, 1, 1], layers).expect("valid linear net")
}

/// A single 1x1x1 convolution with kernel value `k` and no bias, followed by
/// flatten, so the output is `k * x` in flat order.
pub fn scaling_conv_net(spatial: [usize; 3], k: f64) -> Network {
    let conv = Layer::conv3d("c1", 1, 1, 1, Padding::Same)
        .with_weights(Tensor::filled(&[1, 1, 1, 1, 1], k), Tensor::zeros(&[1]))
        .expect("matching dims");
    Network::new([1, spatial[0], spatial[1], spatial[2]], vec![conv, Layer::flatten("flat")])
        .expect("valid conv net")
}

/// Two convolutions, a pool and a dense layer, with fixed weights. Its
/// output on [`golden_input`] is pinned in the test suite.
pub fn golden_net() -> Network {
    let layers = vec![
        Layer::conv3d("c1", 1, 2, 3, Padding::Same),
        Layer::relu("r1"),
        Layer::maxpool("p1", 2),
        Layer::conv3d("c2", 2, 3, 3, Padding::Valid),
        Layer::relu("r2"),
        Layer::flatten("flat"),
        Layer::dense("d", 3, 4),
    ];
    init(layers, [1, 6, 6, 6], 2024, true)
}

pub fn golden_input() -> Tensor {
    Tensor::from_fn(&[1, 6, 6, 6], |i| {
        let (x, y, z) = (i[1] as f64, i[2] as f64, i[3] as f64);
        if (x - 2.5).powi(2) + (y - 2.5).powi(2) + (z - 2.0).powi(2) <= 6.0 { 1.0 } else { 0.0 }
    })
}
