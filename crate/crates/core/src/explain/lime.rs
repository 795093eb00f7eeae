//! Local surrogate explanations on uniform super-voxel grids.
//!
//! The grid is cut into boxes; random subsets of boxes are blanked out, the
//! network scores each perturbed grid, and a weighted affine model of the
//! target score over the keep/drop mask is fitted. Samples whose full
//! prediction vector stays close (in cosine distance) to the unperturbed
//! prediction weigh more.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Heatmap, Method};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{cosine_distance, Tensor};

/// Dense segment id per voxel for an axis-aligned box partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGrid {
    dims: [usize; 3],
    per_axis: [usize; 3],
    ids: Vec<usize>,
}

/// Run lengths of `n` cells split into `p` runs; the last `n % p` runs are
/// one cell longer.
fn axis_runs(n: usize, p: usize) -> Vec<usize> {
    let (base, rem) = (n / p, n % p);
    (0..p).map(|r| base + usize::from(r >= p - rem)).collect()
}

impl SegmentGrid {
    pub fn uniform(dims: [usize; 3], per_axis: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if per_axis[a] == 0 || per_axis[a] > dims[a] {
                return Err(Error::domain(format!(
                    "{} segments along axis {a} do not fit {} voxels",
                    per_axis[a], dims[a]
                )));
            }
        }
        let lookup: [Vec<usize>; 3] = std::array::from_fn(|a| {
            axis_runs(dims[a], per_axis[a]).into_iter().enumerate().flat_map(|(r, len)| std::iter::repeat_n(r, len)).collect()
        });
        let mut ids = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    ids.push((lookup[0][i] * per_axis[1] + lookup[1][j]) * per_axis[2] + lookup[2][k]);
                }
            }
        }
        Ok(SegmentGrid { dims, per_axis, ids })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn per_axis(&self) -> [usize; 3] {
        self.per_axis
    }

    pub fn count(&self) -> usize {
        self.per_axis.iter().product()
    }

    /// Segment id of every voxel, row-major.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn id(&self, idx: [usize; 3]) -> usize {
        self.ids[crate::tensor::flat_index(&self.dims, &idx)]
    }

    /// Voxel count of each segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count()];
        for &id in &self.ids {
            sizes[id] += 1;
        }
        sizes
    }
}

/// Same number of segments along every axis.
pub fn segment_uniform_grid(dims: [usize; 3], segments_per_axis: usize) -> Result<SegmentGrid> {
    SegmentGrid::uniform(dims, [segments_per_axis; 3])
}

/// Copies `x` on kept segments and writes `replacement` on dropped ones.
/// `x` is either the spatial grid or a `[channels, nx, ny, nz]` input.
pub fn perturb(x: &Tensor, seg: &SegmentGrid, mask: &[bool], replacement: f64) -> Result<Tensor> {
    if mask.len() != seg.count() {
        return Err(Error::shape(format!("mask has {} entries for {} segments", mask.len(), seg.count())));
    }
    let spatial = &x.dims()[x.rank().saturating_sub(3)..];
    if !(x.rank() == 3 || x.rank() == 4) || spatial != seg.dims() {
        return Err(Error::shape(format!("grid dims {:?} do not match segments {:?}", x.dims(), seg.dims())));
    }
    let mut z = x.clone();
    for chunk in z.data_mut().chunks_exact_mut(seg.ids.len()) {
        for (v, &id) in chunk.iter_mut().zip(&seg.ids) {
            if !mask[id] {
                *v = replacement;
            }
        }
    }
    Ok(z)
}

/// `exp(-D^2 / sigma^2)` with `D` the cosine distance of the predictions.
pub fn proximity_weight(pred_x: &[f64], pred_z: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!("kernel width must be finite and positive, got {sigma}")));
    }
    let d = cosine_distance(pred_x, pred_z)?;
    Ok((-(d * d) / (sigma * sigma)).exp())
}

/// Minimizes `sum w_i (y_i - b - x_i . c)^2 + lambda |c|^2` over the
/// coefficients `c` and the unpenalized intercept `b`.
pub fn weighted_ridge_fit(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    let s = x.first().map_or(0, Vec::len);
    if y.len() != n || w.len() != n || x.iter().any(|r| r.len() != s) {
        return Err(Error::shape("design rows, targets and weights disagree in length"));
    }
    if n < s + 1 {
        return Err(Error::domain(format!("{n} samples cannot determine {s} coefficients and an intercept")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("ridge penalty must be finite and >= 0, got {lambda}")));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("weights must be finite and >= 0, targets finite"));
    }
    // Column s is the intercept.
    let m = s + 1;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    let mut row = vec![1.0; m];
    for i in 0..n {
        row[..s].copy_from_slice(&x[i]);
        for p in 0..m {
            b[p] += w[i] * row[p] * y[i];
            for q in 0..m {
                a[(p, q)] += w[i] * row[p] * row[q];
            }
        }
    }
    for p in 0..s {
        a[(p, p)] += lambda;
    }
    let chol = nalgebra::Cholesky::new(a).ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0 && (lo / hi).powi(2) > 1e-15) {
        return Err(singular());
    }
    let sol = chol.solve(&b);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok((sol.as_slice()[..s].to_vec(), sol[s]))
}

fn singular() -> Error {
    Error::Numerical("normal equations are singular; raise the ridge penalty or the sample count".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimeConfig {
    pub segments_per_axis: [usize; 3],
    pub n_samples: usize,
    /// Kernel width on the cosine distance.
    pub sigma: f64,
    /// Segments kept in the heatmap; `None` means `min(10, S)`.
    pub top_k: Option<usize>,
    pub lambda: f64,
    pub seed: u64,
    /// Value written into dropped segments.
    pub replacement: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            segments_per_axis: [4; 3],
            n_samples: 256,
            sigma: 0.25,
            top_k: None,
            lambda: 1e-3,
            seed: 0,
            replacement: 0.0,
        }
    }
}

impl LimeConfig {
    pub fn segment_count(&self) -> usize {
        self.segments_per_axis.iter().product()
    }

    pub fn effective_top_k(&self) -> usize {
        self.top_k.unwrap_or_else(|| self.segment_count().min(10))
    }

    fn check(&self) -> Result<()> {
        let s = self.segment_count();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::usage(format!("sigma must be finite and positive, got {}", self.sigma)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::usage(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !self.replacement.is_finite() {
            return Err(Error::usage("replacement value must be finite"));
        }
        let k = self.effective_top_k();
        if k == 0 || k > s {
            return Err(Error::usage(format!("top-k must lie in 1..={s}, got {k}")));
        }
        Ok(())
    }
}

/// One scored perturbation. The perturbed grid itself is not kept; it is
/// reproducible from the mask with [`perturb`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    /// `true` keeps the segment.
    pub mask: Vec<bool>,
    pub prediction: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimeResult {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Segments by decreasing `|coefficient|`, cut to top-k.
    pub top_segments: Vec<usize>,
    pub heatmap: Heatmap,
    pub segments: SegmentGrid,
    pub samples: Vec<PerturbationSample>,
}

/// `n` masks over `segments`: the all-ones mask first, then independent
/// fair coin flips from the seed.
pub fn sample_masks(segments: usize, n: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n);
    if n > 0 {
        masks.push(vec![true; segments]);
    }
    for _ in 1..n {
        masks.push((0..segments).map(|_| rng.random::<bool>()).collect());
    }
    masks
}

/// Explains with caller-supplied masks instead of random ones.
pub fn lime_with_masks(
    net: &Network,
    x: &Tensor,
    target: usize,
    cfg: &LimeConfig,
    masks: &[Vec<bool>],
) -> Result<LimeResult> {
    cfg.check()?;
    net.one_hot_output(target)?;
    let seg = SegmentGrid::uniform(net.spatial_dims(), cfg.segments_per_axis)?;
    let s = seg.count();
    if masks.len() < s + 1 {
        return Err(Error::usage(format!("{} samples cannot fit {s} segments; need at least {}", masks.len(), s + 1)));
    }
    let pred_x = net.forward(x)?;
    let preds = masks
        .par_iter()
        .map(|m| net.forward(&perturb(x, &seg, m, cfg.replacement)?))
        .collect::<Result<Vec<_>>>()?;
    let weights = preds.iter().map(|p| proximity_weight(&pred_x, p, cfg.sigma)).collect::<Result<Vec<_>>>()?;
    let design: Vec<Vec<f64>> = masks.iter().map(|m| m.iter().map(|&b| f64::from(u8::from(b))).collect()).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p[target]).collect();
    let (coefficients, intercept) = weighted_ridge_fit(&design, &scores, &weights, cfg.lambda)?;

    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| coefficients[b].abs().total_cmp(&coefficients[a].abs()));
    order.truncate(cfg.effective_top_k());
    let mut painted = vec![0.0; s];
    for &i in &order {
        painted[i] = coefficients[i];
    }
    let values = Tensor::new(seg.dims().to_vec(), seg.ids().iter().map(|&id| painted[id]).collect())?;
    let heatmap = Heatmap::new(values, Method::Lime, target, true)?;
    let samples = masks
        .iter()
        .zip(preds)
        .zip(weights)
        .map(|((mask, prediction), weight)| PerturbationSample { mask: mask.clone(), prediction, weight })
        .collect();
    Ok(LimeResult { coefficients, intercept, top_segments: order, heatmap, segments: seg, samples })
}

pub fn lime_explain(net: &Network, x: &Tensor, target: usize, cfg: &LimeConfig) -> Result<LimeResult> {
    cfg.check()?;
    let s = cfg.segment_count();
    if cfg.n_samples < s + 1 {
        return Err(Error::usage(format!("n_samples {} must be at least segments + 1 = {}", cfg.n_samples, s + 1)));
    }
    lime_with_masks(net, x, target, cfg, &sample_masks(s, cfg.n_samples, cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use proptest::prelude::*;

    #[test]
    fn segment_examples() {
        let g = segment_uniform_grid([32; 3], 4).unwrap();
        assert_eq!(g.count(), 64);
        assert!(g.sizes().iter().all(|&n| n == 512));
        assert_eq!(axis_runs(10, 3), vec![3, 3, 4]);
        let g = segment_uniform_grid([10; 3], 3).unwrap();
        assert_eq!(g.count(), 27);
        assert_eq!(g.id([2, 0, 0]), 0);
        assert_eq!(g.id([3, 0, 0]), 9);
        assert_eq!(g.id([6, 0, 0]), 18);
        let one = segment_uniform_grid([3, 5, 2], 1).unwrap();
        assert!(one.ids().iter().all(|&i| i == 0));
        assert!(matches!(segment_uniform_grid([4, 4, 2], 3), Err(Error::Domain(_))));
        assert!(matches!(segment_uniform_grid([4, 4, 4], 0), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn segments_partition_the_grid(
            dims in prop::array::uniform3(1usize..12),
            p in prop::array::uniform3(1usize..12),
        ) {
            let p: [usize; 3] = std::array::from_fn(|a| p[a].min(dims[a]));
            let g = SegmentGrid::uniform(dims, p).unwrap();
            prop_assert_eq!(g.ids().len(), dims.iter().product::<usize>());
            let sizes = g.sizes();
            prop_assert!(sizes.iter().all(|&n| n > 0));
            for a in 0..3 {
                let runs = axis_runs(dims[a], p[a]);
                prop_assert_eq!(runs.iter().sum::<usize>(), dims[a]);
                prop_assert!(runs.iter().max().unwrap() - runs.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn perturb_examples() {
        let seg = segment_uniform_grid([4, 4, 4], 2).unwrap();
        let x = Tensor::from_fn(&[1, 4, 4, 4], |i| 1.0 + (i[1] * 16 + i[2] * 4 + i[3]) as f64);
        assert_eq!(perturb(&x, &seg, &[true; 8], 0.0).unwrap(), x);
        let z = perturb(&x, &seg, &[false; 8], 0.25).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.25));
        let mut drop0 = [true; 8];
        drop0[0] = false;
        let z = perturb(&x, &seg, &drop0, 0.0).unwrap();
        for (f, (a, b)) in x.data().iter().zip(z.data()).enumerate() {
            assert_eq!(a != b, seg.ids()[f] == 0);
        }
        assert!(matches!(perturb(&x, &seg, &[true; 7], 0.0), Err(Error::Shape(_))));
        assert!(matches!(perturb(&Tensor::zeros(&[4, 4, 5]), &seg, &[true; 8], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn proximity_examples() {
        assert_eq!(proximity_weight(&[0.3, 0.7], &[0.3, 0.7], 0.25).unwrap(), 1.0);
        let e1 = (-1.0f64).exp();
        assert!((proximity_weight(&[1.0, 0.0], &[0.0, 2.0], 1.0).unwrap() - e1).abs() < 1e-15);
        // D = 1 - cos(60 deg) = 0.5 = sigma.
        let w = proximity_weight(&[1.0, 0.0], &[0.5, 0.75f64.sqrt()], 0.5).unwrap();
        assert!((w - 0.367879441171).abs() < 1e-9);
        assert!(matches!(proximity_weight(&[0.0, 0.0], &[1.0, 0.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(proximity_weight(&[1.0], &[1.0], 0.0), Err(Error::Domain(_))));
    }

    fn all_masks(s: usize) -> Vec<Vec<f64>> {
        (0..1usize << s).map(|m| (0..s).map(|b| ((m >> b) & 1) as f64).collect()).collect()
    }

    #[test]
    fn ridge_recovers_affine_targets() {
        let x = all_masks(4);
        let beta = [0.5, -2.0, 3.25, 0.125];
        let y: Vec<f64> = x.iter().map(|r| 1.5 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
        let (c, b0) = weighted_ridge_fit(&x, &y, &vec![1.0; 16], 0.0).unwrap();
        for (c, b) in c.iter().zip(&beta) {
            assert!((c - b).abs() < 1e-8);
        }
        assert!((b0 - 1.5).abs() < 1e-8);
    }

    #[test]
    fn uniform_weights_factor_out() {
        let x = all_masks(3);
        let y: Vec<f64> = (0..8).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let a = weighted_ridge_fit(&x, &y, &[1.0; 8], 0.0).unwrap();
        let b = weighted_ridge_fit(&x, &y, &[3.5; 8], 0.0).unwrap();
        for (p, q) in a.0.iter().zip(&b.0) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!((a.1 - b.1).abs() < 1e-10);
    }

    #[test]
    fn huge_penalty_gives_weighted_mean() {
        let x = all_masks(3);
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let w: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 * 0.5).collect();
        let (c, b0) = weighted_ridge_fit(&x, &y, &w, 1e12).unwrap();
        let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        assert!(c.iter().all(|v| v.abs() < 1e-9));
        assert!((b0 - mean).abs() < 1e-6);
    }

    #[test]
    fn singular_fit_is_reported() {
        // Two identical columns.
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![(i % 2) as f64, (i % 2) as f64]).collect();
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!(matches!(weighted_ridge_fit(&x, &y, &[1.0; 8], 0.0), Err(Error::Numerical(_))));
        assert!(weighted_ridge_fit(&x, &y, &[1.0; 8], 1e-3).is_ok());
        assert!(matches!(weighted_ridge_fit(&x[..2], &y[..2], &[1.0; 2], 1.0), Err(Error::Domain(_))));
    }

    /// Score 0 is the mean of segment 0 (2x2x2 corner of a 4^3 grid); score
    /// 1 is a constant, keeping predictions away from zero norm.
    fn corner_mean_net() -> Network {
        let w = Tensor::from_fn(&[2, 64], |i| {
            let (a, b, c) = (i[1] / 16, (i[1] / 4) % 4, i[1] % 4);
            if i[0] == 0 && a < 2 && b < 2 && c < 2 { 0.125 } else { 0.0 }
        });
        let dense = Layer::dense("d", 64, 2).with_weights(w, Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()).unwrap();
        Network::new([1, 4, 4, 4], vec![Layer::flatten("f"), dense]).unwrap()
    }

    fn small_cfg(seed: u64) -> LimeConfig {
        LimeConfig { segments_per_axis: [2; 3], n_samples: 256, seed, ..LimeConfig::default() }
    }

    #[test]
    fn oracle_segment_dominates() {
        let net = corner_mean_net();
        let x = Tensor::filled(&[1, 4, 4, 4], 1.0);
        for seed in 0..5 {
            let r = lime_explain(&net, &x, 0, &small_cfg(seed)).unwrap();
            let rest = r.coefficients[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assert!(r.coefficients[0].abs() > 5.0 * rest, "seed {seed}: {:?}", r.coefficients);
            assert_eq!(r.top_segments[0], 0);
        }
    }

    #[test]
    fn result_invariants() {
        let net = corner_mean_net();
        let x = Tensor::from_fn(&[1, 4, 4, 4], |i| ((i[1] + 2 * i[2] + 3 * i[3]) % 5) as f64 / 4.0 + 0.1);
        let cfg = LimeConfig { top_k: Some(3), ..small_cfg(9) };
        let r = lime_explain(&net, &x, 0, &cfg).unwrap();
        assert_eq!(r, lime_explain(&net, &x, 0, &cfg).unwrap());
        assert_eq!(r.samples[0].mask, vec![true; 8]);
        assert_eq!(r.samples[0].weight, 1.0);
        assert!(r.samples.iter().all(|s| s.weight > 0.0 && s.weight <= 1.0));
        let mut painted = std::collections::BTreeSet::new();
        for (v, &id) in r.heatmap.values().data().iter().zip(r.segments.ids()) {
            let expect = if r.top_segments.contains(&id) { r.coefficients[id] } else { 0.0 };
            assert_eq!(*v, expect);
            if *v != 0.0 {
                painted.insert(id);
            }
        }
        assert!(painted.len() <= 3);
        let all = lime_explain(&net, &x, 0, &LimeConfig { top_k: Some(8), ..small_cfg(9) }).unwrap();
        assert_eq!(all.top_segments.len(), 8);
        for (v, &id) in all.heatmap.values().data().iter().zip(all.segments.ids()) {
            assert_eq!(*v, all.coefficients[id]);
        }
    }

    #[test]
    fn config_checks() {
        let net = corner_mean_net();
        let x = Tensor::filled(&[1, 4, 4, 4], 1.0);
        let bad = [
            LimeConfig { n_samples: 8, ..small_cfg(0) },
            LimeConfig { sigma: 0.0, ..small_cfg(0) },
            LimeConfig { top_k: Some(0), ..small_cfg(0) },
            LimeConfig { top_k: Some(9), ..small_cfg(0) },
            LimeConfig { lambda: -1.0, ..small_cfg(0) },
        ];
        for cfg in bad {
            assert!(matches!(lime_explain(&net, &x, 0, &cfg), Err(Error::Usage(_))), "{cfg:?}");
        }
        assert!(matches!(lime_explain(&net, &x, 2, &small_cfg(0)), Err(Error::Index { .. })));
        let too_many = LimeConfig { segments_per_axis: [5; 3], n_samples: 200, top_k: Some(1), ..small_cfg(0) };
        assert!(matches!(lime_explain(&net, &x, 0, &too_many), Err(Error::Domain(_))));
    }

    #[test]
    fn masks_start_with_all_ones() {
        let m = sample_masks(6, 20, 3);
        assert_eq!(m.len(), 20);
        assert_eq!(m[0], vec![true; 6]);
        assert_eq!(m, sample_masks(6, 20, 3));
        assert_ne!(m, sample_masks(6, 20, 4));
    }
}
