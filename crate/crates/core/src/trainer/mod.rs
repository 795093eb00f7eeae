//! Desk-scale training: synthetic shape data, convolutional autoencoder
//! pretraining and classifier fine-tuning on the pretrained encoder.
//!
//! Everything runs plain mini-batch SGD (batch size 8) in a fixed sample
//! order drawn from the seed. Per-sample gradients inside a batch may be
//! computed in parallel but are summed in batch order, so weight
//! trajectories are reproducible bit for bit.

mod dataset;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use dataset::{generate_shape, generate_shape_dataset, read_dataset, write_dataset, ShapeClass, ShapeDataset};

use crate::error::{Error, Result};
use crate::network::{default_encoder_layers, Layer, LayerKind, LayerWeights, Network, Padding};
use crate::tensor::{argmax, Tensor};

pub const BATCH_SIZE: usize = 8;
const HIDDEN_UNITS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Held-out accuracy after the epoch (classifier runs only).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Final held-out accuracy (classifier runs only).
    pub accuracy: Option<f64>,
    pub epoch_count: usize,
    pub learning_rate: f64,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// `epoch,loss,accuracy` rows; accuracy is empty where not measured.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            let acc = e.accuracy.map(|a| a.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{acc}", e.epoch, e.loss).unwrap();
        }
        s
    }
}

/// A training-graph stage: a network layer or the decoder's nearest
/// neighbor 2x upsampling.
#[derive(Debug, Clone)]
enum Stage {
    Layer(Layer),
    Upsample2,
}

type Grads = Vec<Option<LayerWeights>>;

impl Stage {
    fn forward(&self, a: &Tensor) -> Result<Tensor> {
        match self {
            Stage::Layer(l) => l.forward(a),
            Stage::Upsample2 => Ok(upsample2(a)),
        }
    }

    fn backward(&self, a: &Tensor, cot: &Tensor, want_input: bool) -> Result<(Option<Tensor>, Option<LayerWeights>)> {
        match self {
            Stage::Layer(l) => {
                let input = if want_input { Some(l.vjp(a, cot)?) } else { None };
                Ok((input, l.param_grads(a, cot)))
            }
            Stage::Upsample2 => Ok((want_input.then(|| upsample2_vjp(a.dims(), cot)), None)),
        }
    }

    fn params_mut(&mut self) -> Option<&mut LayerWeights> {
        match self {
            Stage::Layer(l) => l.weights.as_mut(),
            Stage::Upsample2 => None,
        }
    }
}

// Visits (source, destination) flat index pairs of the 2x nearest
// upsampling from `[c, x, y, z]` to `[c, 2x, 2y, 2z]`.
fn upsample2_pairs(d: &[usize], mut visit: impl FnMut(usize, usize)) {
    let (c, x, y, z) = (d[0], d[1], d[2], d[3]);
    let mut dst = 0;
    for ci in 0..c {
        for xi in 0..2 * x {
            for yi in 0..2 * y {
                let row = ((ci * x + xi / 2) * y + yi / 2) * z;
                for zi in 0..2 * z {
                    visit(row + zi / 2, dst);
                    dst += 1;
                }
            }
        }
    }
}

fn upsample2(a: &Tensor) -> Tensor {
    let d = a.dims();
    let out = vec![d[0], d[1] * 2, d[2] * 2, d[3] * 2];
    let mut data = vec![0.0; out.iter().product()];
    upsample2_pairs(d, |s, t| data[t] = a.data()[s]);
    Tensor::from_parts_unchecked(out, data)
}

fn upsample2_vjp(in_dims: &[usize], cot: &Tensor) -> Tensor {
    let mut g = vec![0.0; in_dims.iter().product()];
    upsample2_pairs(in_dims, |s, t| g[s] += cot.data()[t]);
    Tensor::from_parts_unchecked(in_dims.to_vec(), g)
}

fn forward_stages(stages: &[Stage], x: &Tensor) -> Result<Vec<Tensor>> {
    let mut acts = Vec::with_capacity(stages.len() + 1);
    acts.push(x.clone());
    for s in stages {
        let next = s.forward(acts.last().unwrap())?;
        acts.push(next);
    }
    Ok(acts)
}

/// Parameter gradients for stages `trainable_from..`; earlier entries are
/// `None` and are never backpropagated into.
fn backward_stages(stages: &[Stage], acts: &[Tensor], out_cot: Tensor, trainable_from: usize) -> Result<Grads> {
    let mut grads = vec![None; stages.len()];
    let mut cot = out_cot;
    for l in (trainable_from..stages.len()).rev() {
        let (input, params) = stages[l].backward(&acts[l], &cot, l > trainable_from)?;
        grads[l] = params;
        if let Some(c) = input {
            cot = c;
        }
    }
    Ok(grads)
}

fn add_grads(acc: &mut Grads, g: &Grads) {
    for (a, b) in acc.iter_mut().zip(g) {
        match (a.as_mut(), b) {
            (Some(a), Some(b)) => {
                a.weight = a.weight.add(&b.weight).expect("same dims");
                a.bias = a.bias.add(&b.bias).expect("same dims");
            }
            (None, Some(b)) => *a = Some(b.clone()),
            _ => {}
        }
    }
}

fn sgd_update(stages: &mut [Stage], grads: &Grads, lr: f64) {
    for (stage, g) in stages.iter_mut().zip(grads) {
        if let (Some(p), Some(g)) = (stage.params_mut(), g) {
            for (w, gw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= lr * gw;
            }
            for (b, gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr * gb;
            }
        }
    }
}

/// One epoch of mini-batch SGD; returns the mean per-sample loss.
fn sgd_epoch<L>(
    stages: &mut [Stage],
    inputs: &[Tensor],
    order: &[usize],
    lr: f64,
    trainable_from: usize,
    loss: &L,
) -> Result<f64>
where
    L: Fn(usize, &Tensor) -> (f64, Tensor) + Sync,
{
    let mut total = 0.0;
    for batch in order.chunks(BATCH_SIZE) {
        let snapshot: &[Stage] = stages;
        let per_sample: Vec<Result<(f64, Grads)>> = batch
            .par_iter()
            .map(|&i| {
                let acts = forward_stages(snapshot, &inputs[i])?;
                let (l, cot) = loss(i, acts.last().unwrap());
                Ok((l, backward_stages(snapshot, &acts, cot, trainable_from)?))
            })
            .collect();
        let mut acc: Grads = vec![None; stages.len()];
        for r in per_sample {
            let (l, g) = r?;
            if !l.is_finite() {
                return Err(Error::Numerical("training loss diverged".into()));
            }
            total += l;
            add_grads(&mut acc, &g);
        }
        sgd_update(stages, &acc, lr / batch.len() as f64);
    }
    Ok(total / order.len() as f64)
}

fn check_lr(lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::domain(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

fn input_dims_of(ds: &ShapeDataset) -> Result<[usize; 4]> {
    let [x, y, z] = ds.grid_dims().ok_or_else(|| Error::domain("dataset is empty"))?;
    Ok([1, x, y, z])
}

/// Encoder of the default architecture with seeded Glorot weights, ending
/// in a flatten layer so that it is a standalone feature network.
pub fn initial_encoder(input_dims: [usize; 4], seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    encoder_with_rng(input_dims, &mut rng)
}

fn encoder_with_rng(input_dims: [usize; 4], rng: &mut ChaCha8Rng) -> Result<Network> {
    if input_dims[1..].iter().any(|d| d % 4 != 0) {
        return Err(Error::domain(format!("grid dims {:?} must be multiples of 4", &input_dims[1..])));
    }
    let mut layers = default_encoder_layers();
    for l in &mut layers {
        l.init_glorot(rng);
    }
    layers.push(Layer::flatten("flatten"));
    Network::new(input_dims, layers)
}

fn decoder_stages(rng: &mut ChaCha8Rng) -> Vec<Stage> {
    let mut c1 = Layer::conv3d("dec_conv1", 16, 8, 3, Padding::Same);
    let mut c2 = Layer::conv3d("dec_conv2", 8, 1, 3, Padding::Same);
    c1.init_glorot(rng);
    c2.init_glorot(rng);
    vec![Stage::Upsample2, Stage::Layer(c1), Stage::Layer(Layer::relu("dec_relu1")), Stage::Upsample2, Stage::Layer(c2)]
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Unsupervised reconstruction training (mean squared error) of the default
/// encoder through a mirrored upsample+conv decoder. Returns the encoder;
/// the decoder is discarded.
pub fn pretrain_autoencoder(ds: &ShapeDataset, epochs: usize, lr: f64, seed: u64) -> Result<(Network, TrainReport)> {
    if epochs == 0 {
        return Err(Error::domain("pretraining needs at least one epoch"));
    }
    check_lr(lr)?;
    let input_dims = input_dims_of(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = encoder_with_rng(input_dims, &mut rng)?;
    let enc_layers: Vec<Layer> = encoder.layers()[..encoder.layers().len() - 1].to_vec();
    let n_enc = enc_layers.len();
    let mut stages: Vec<Stage> = enc_layers.into_iter().map(Stage::Layer).collect();
    stages.extend(decoder_stages(&mut rng));

    let inputs: Vec<Tensor> = ds.samples.iter().map(|(g, _)| g.to_input()).collect();
    let mse = |i: usize, out: &Tensor| {
        let target = &inputs[i];
        let n = out.len() as f64;
        let diff = out.zip_map(target, |o, t| o - t).expect("decoder mirrors input dims");
        (diff.norm_sq() / n, diff.scale(2.0 / n))
    };
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffler = shuffle_rng(seed);
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut shuffler);
        let loss = sgd_epoch(&mut stages, &inputs, &order, lr, 0, &mse)?;
        records.push(EpochRecord { epoch, loss, accuracy: None });
    }

    let mut layers: Vec<Layer> = stages
        .into_iter()
        .take(n_enc)
        .map(|s| match s {
            Stage::Layer(l) => l,
            Stage::Upsample2 => unreachable!("encoder has no upsampling"),
        })
        .collect();
    layers.push(Layer::flatten("flatten"));
    let encoder = Network::new(input_dims, layers)?;
    Ok((encoder, TrainReport { epochs: records, accuracy: None, epoch_count: epochs, learning_rate: lr }))
}

/// Softmax cross-entropy of raw scores and its gradient with respect to them.
pub fn softmax_cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + m - scores[label];
    let grad = exps.iter().enumerate().map(|(k, e)| e / sum - if k == label { 1.0 } else { 0.0 }).collect();
    (loss, grad)
}

fn head_layers(features: usize, classes: usize, seed: u64) -> Vec<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::dense("fc1", features, HIDDEN_UNITS), Layer::relu("relu3"), Layer::dense("fc2", HIDDEN_UNITS, classes)];
    for l in &mut layers {
        l.init_glorot(&mut rng);
    }
    layers
}

fn accuracy(stages: &[Stage], inputs: &[Tensor], labels: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for &i in idx {
        let out = forward_stages(stages, &inputs[i])?;
        if argmax(out.last().unwrap().data())? == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Appends a `flatten -> dense(64) -> relu -> dense(classes)` head to the
/// encoder (the flatten is reused if the encoder already ends in one) and
/// trains with softmax cross-entropy. Every fifth sample is held out for
/// the reported accuracy.
pub fn train_classifier(
    encoder: &Network,
    ds: &ShapeDataset,
    epochs: usize,
    lr: f64,
    seed: u64,
    freeze_encoder: bool,
) -> Result<(Network, TrainReport)> {
    check_lr(lr)?;
    let input_dims = input_dims_of(ds)?;
    if encoder.input_dims() != input_dims {
        return Err(Error::shape(format!(
            "encoder expects input {:?}, dataset grids are {:?}",
            encoder.input_dims(),
            input_dims
        )));
    }
    if ds.class_count() < 2 {
        return Err(Error::domain("classifier needs at least two classes"));
    }
    let mut enc_layers = encoder.layers().to_vec();
    if !matches!(enc_layers.last().map(|l| &l.kind), Some(LayerKind::Flatten)) {
        enc_layers.push(Layer::flatten("flatten"));
    }
    let features = Network::new(input_dims, enc_layers.clone())?.output_width();
    let head = head_layers(features, ds.class_count(), seed);

    let labels: Vec<usize> = ds.samples.iter().map(|s| s.1).collect();
    let (train_idx, held_idx): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| !ShapeDataset::is_held_out(i));
    if train_idx.is_empty() {
        return Err(Error::domain("no training samples after the held-out split"));
    }

    // A frozen encoder is a fixed feature map: run it once per sample and
    // train the head on the cached features.
    let raw: Vec<Tensor> = ds.samples.iter().map(|(g, _)| g.to_input()).collect();
    let (inputs, mut stages, n_frozen) = if freeze_encoder {
        let enc_stages: Vec<Stage> = enc_layers.iter().cloned().map(Stage::Layer).collect();
        let feats = raw
            .iter()
            .map(|x| forward_stages(&enc_stages, x).map(|mut a| a.pop().unwrap()))
            .collect::<Result<Vec<_>>>()?;
        (feats, head.into_iter().map(Stage::Layer).collect::<Vec<_>>(), enc_layers.len())
    } else {
        let stages = enc_layers.iter().cloned().chain(head).map(Stage::Layer).collect();
        (raw, stages, 0)
    };

    let ce = |i: usize, out: &Tensor| {
        let (l, g) = softmax_cross_entropy(out.data(), labels[i]);
        (l, Tensor::from_parts_unchecked(vec![g.len()], g))
    };
    let mut order = train_idx.clone();
    let mut shuffler = shuffle_rng(seed);
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut shuffler);
        let loss = sgd_epoch(&mut stages, &inputs, &order, lr, 0, &ce)?;
        let acc = accuracy(&stages, &inputs, &labels, &held_idx)?;
        records.push(EpochRecord { epoch, loss, accuracy: Some(acc) });
    }
    let final_acc = match records.last() {
        Some(r) => r.accuracy.unwrap(),
        None => accuracy(&stages, &inputs, &labels, &held_idx)?,
    };

    let trained: Vec<Layer> = stages
        .into_iter()
        .map(|s| match s {
            Stage::Layer(l) => l,
            Stage::Upsample2 => unreachable!("classifier has no upsampling"),
        })
        .collect();
    let layers = if n_frozen > 0 { enc_layers.into_iter().chain(trained).collect() } else { trained };
    let net = Network::new(input_dims, layers)?;
    Ok((net, TrainReport { epochs: records, accuracy: Some(final_acc), epoch_count: epochs, learning_rate: lr }))
}

/// Softmax cross-entropy of `net` on one labeled input.
pub fn classifier_loss(net: &Network, x: &Tensor, label: usize) -> Result<f64> {
    let out = net.forward(x)?;
    if label >= out.len() {
        return Err(Error::Index { index: label, len: out.len() });
    }
    Ok(softmax_cross_entropy(&out, label).0)
}

/// Loss and per-layer parameter gradients for one labeled input.
pub fn classifier_gradients(net: &Network, x: &Tensor, label: usize) -> Result<(f64, Vec<Option<LayerWeights>>)> {
    if label >= net.output_width() {
        return Err(Error::Index { index: label, len: net.output_width() });
    }
    let stages: Vec<Stage> = net.layers().iter().cloned().map(Stage::Layer).collect();
    x.expect_dims(&net.input_dims())?;
    let acts = forward_stages(&stages, x)?;
    let (loss, g) = softmax_cross_entropy(acts.last().unwrap().data(), label);
    let grads = backward_stages(&stages, &acts, Tensor::from_parts_unchecked(vec![g.len()], g), 0)?;
    Ok((loss, grads))
}

/// In-place SGD step `w -= lr * g`.
pub fn apply_sgd(net: &mut Network, grads: &[Option<LayerWeights>], lr: f64) {
    for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
        if let (Some(p), Some(g)) = (layer.weights.as_mut(), g) {
            for (w, gw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= lr * gw;
            }
            for (b, gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr * gb;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let (l, g) = softmax_cross_entropy(&[1.0, 2.0, 0.5], 1);
        assert!(l > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[1] < 0.0);
    }

    #[test]
    fn upsample_vjp_matches_finite_differences() {
        let a = Tensor::from_fn(&[2, 2, 1, 3], |i| (i[0] + 2 * i[1] + 3 * i[3]) as f64 * 0.1);
        let s = Tensor::from_fn(&[2, 4, 2, 6], |i| ((i[1] * 5 + i[2] * 3 + i[3]) % 7) as f64 - 3.0);
        let g = upsample2_vjp(a.dims(), &s);
        for i in 0..a.len() {
            let mut p = a.clone();
            p.data_mut()[i] += 1.0;
            let d = crate::tensor::dot(upsample2(&p).data(), s.data()) - crate::tensor::dot(upsample2(&a).data(), s.data());
            assert!((d - g.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn one_small_step_reduces_loss_on_smooth_net() {
        // Linear (ReLU-free) classifier: flatten + dense.
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = Layer::dense("d", 8, 3)
            .with_weights(
                Tensor::new(vec![3, 8], (0..24).map(|i| (i as f64 * 0.71).cos() * 0.3).collect()).unwrap(),
                Tensor::zeros(&[3]),
            )
            .unwrap();
        let mut net = Network::new([1, 2, 2, 2], vec![Layer::flatten("f"), dense]).unwrap();
        let x = Tensor::new(vec![1, 2, 2, 2], w).unwrap();
        let (before, grads) = classifier_gradients(&net, &x, 2).unwrap();
        apply_sgd(&mut net, &grads, 1e-4);
        let after = classifier_loss(&net, &x, 2).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let net = fixtures::random_net(0, 5);
        let x = fixtures::random_input(&net, 6);
        let (_, grads) = classifier_gradients(&net, &x, 1).unwrap();
        let h = 1e-6;
        for (l, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            for i in (0..g.weight.len()).step_by(7) {
                let mut p = net.clone();
                p.layers_mut()[l].weights.as_mut().unwrap().weight.data_mut()[i] += h;
                let mut m = net.clone();
                m.layers_mut()[l].weights.as_mut().unwrap().weight.data_mut()[i] -= h;
                let fd = (classifier_loss(&p, &x, 1).unwrap() - classifier_loss(&m, &x, 1).unwrap()) / (2.0 * h);
                assert!((fd - g.weight.data()[i]).abs() < 1e-5, "layer {l} weight {i}: {fd} vs {}", g.weight.data()[i]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_encoder() {
        let ds = generate_shape_dataset(9, 8, 2).unwrap();
        let (enc, report) = pretrain_autoencoder(&ds, 1, 0.0, 17).unwrap();
        assert_eq!(enc, initial_encoder([1, 8, 8, 8], 17).unwrap());
        assert_eq!(report.epochs.len(), 1);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let ds = generate_shape_dataset(10, 8, 4).unwrap();
        let a = pretrain_autoencoder(&ds, 2, 0.05, 3).unwrap();
        let b = pretrain_autoencoder(&ds, 2, 0.05, 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn pretraining_argument_checks() {
        let ds = generate_shape_dataset(3, 8, 4).unwrap();
        assert!(matches!(pretrain_autoencoder(&ds, 0, 0.1, 0), Err(Error::Domain(_))));
        let empty = ShapeDataset { samples: vec![], class_names: vec!["a".into()], seed: None };
        assert!(matches!(pretrain_autoencoder(&empty, 1, 0.1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_epochs_leaves_head_at_init() {
        let ds = generate_shape_dataset(10, 8, 4).unwrap();
        let enc = initial_encoder([1, 8, 8, 8], 1).unwrap();
        let (net, report) = train_classifier(&enc, &ds, 0, 0.1, 9, false).unwrap();
        assert!(report.epochs.is_empty());
        let n_enc = enc.layers().len();
        assert_eq!(&net.layers()[..n_enc], enc.layers());
        assert_eq!(net.layers()[n_enc..].to_vec(), head_layers(enc.output_width(), 3, 9));
        assert!((0.0..=1.0).contains(&report.accuracy.unwrap()));
    }

    #[test]
    fn frozen_encoder_is_bitwise_unchanged() {
        let ds = generate_shape_dataset(16, 8, 4).unwrap();
        let enc = initial_encoder([1, 8, 8, 8], 1).unwrap();
        let (net, report) = train_classifier(&enc, &ds, 2, 0.05, 9, true).unwrap();
        assert_eq!(&net.layers()[..enc.layers().len()], enc.layers());
        assert_eq!(report.epochs.len(), 2);
        let (unfrozen, _) = train_classifier(&enc, &ds, 2, 0.05, 9, false).unwrap();
        assert_ne!(&unfrozen.layers()[..enc.layers().len()], enc.layers());
    }

    #[test]
    fn encoder_dims_must_match_dataset() {
        let ds = generate_shape_dataset(6, 8, 4).unwrap();
        let enc = initial_encoder([1, 12, 12, 12], 1).unwrap();
        assert!(matches!(train_classifier(&enc, &ds, 1, 0.1, 0, false), Err(Error::Shape(_))));
    }

    #[test]
    fn report_csv_layout() {
        let r = TrainReport {
            epochs: vec![EpochRecord { epoch: 1, loss: 0.5, accuracy: None }, EpochRecord { epoch: 2, loss: 0.25, accuracy: Some(1.0) }],
            accuracy: Some(1.0),
            epoch_count: 2,
            learning_rate: 0.1,
        };
        assert_eq!(r.to_csv(), "epoch,loss,accuracy\n1,0.5,\n2,0.25,1\n");
    }
}
