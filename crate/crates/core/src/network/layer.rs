use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// Layer kinds and their shape parameters.
///
/// Spatial tensors are `[channels, nx, ny, nz]`; dense layers consume and
/// produce 1-axis tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LayerKind {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: usize,
        padding: Padding,
    },
    /// Non-overlapping max pooling (stride equals the window).
    #[serde(rename = "maxpool3d")]
    MaxPool3d { window: [usize; 3] },
    GlobalAvgPool,
    Dense { in_features: usize, out_features: usize },
    Relu,
    Flatten,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv3d { .. } => "conv3d",
            LayerKind::MaxPool3d { .. } => "maxpool3d",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Weight and bias dims for parameterized kinds.
    pub fn param_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Conv3d { in_channels, out_channels, kernel, .. } => Some((
                vec![out_channels, in_channels, kernel[0], kernel[1], kernel[2]],
                vec![out_channels],
            )),
            LayerKind::Dense { in_features, out_features } => {
                Some((vec![out_features, in_features], vec![out_features]))
            }
            _ => None,
        }
    }

    /// Glorot fan-in and fan-out.
    fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerKind::Conv3d { in_channels, out_channels, kernel, .. } => {
                let k: usize = kernel.iter().product();
                Some((in_channels * k, out_channels * k))
            }
            LayerKind::Dense { in_features, out_features } => Some((in_features, out_features)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Conv: `[out, in, kx, ky, kz]`. Dense: `[out, in]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub weights: Option<LayerWeights>,
}

impl Layer {
    /// A layer with zero parameters (if it has any).
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        let weights = kind.param_dims().map(|(w, b)| LayerWeights {
            weight: Tensor::zeros(&w),
            bias: Tensor::zeros(&b),
        });
        Layer { name: name.into(), kind, weights }
    }

    pub fn conv3d(name: &str, in_ch: usize, out_ch: usize, k: usize, padding: Padding) -> Self {
        Self::new(
            name,
            LayerKind::Conv3d {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel: [k; 3],
                stride: 1,
                padding,
            },
        )
    }

    pub fn dense(name: &str, in_features: usize, out_features: usize) -> Self {
        Self::new(name, LayerKind::Dense { in_features, out_features })
    }

    pub fn maxpool(name: &str, w: usize) -> Self {
        Self::new(name, LayerKind::MaxPool3d { window: [w; 3] })
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn flatten(name: &str) -> Self {
        Self::new(name, LayerKind::Flatten)
    }

    pub fn global_avg_pool(name: &str) -> Self {
        Self::new(name, LayerKind::GlobalAvgPool)
    }

    pub fn with_weights(mut self, weight: Tensor, bias: Tensor) -> Result<Self> {
        let (wd, bd) = self
            .kind
            .param_dims()
            .ok_or_else(|| Error::usage(format!("layer '{}' has no parameters", self.name)))?;
        weight.expect_dims(&wd)?;
        bias.expect_dims(&bd)?;
        self.weights = Some(LayerWeights { weight, bias });
        Ok(self)
    }

    /// Uniform Glorot initialization of the weight tensor; biases are zeroed.
    pub fn init_glorot(&mut self, rng: &mut impl Rng) {
        let Some((fan_in, fan_out)) = self.kind.fans() else { return };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        if let Some(w) = self.weights.as_mut() {
            for v in w.weight.data_mut() {
                *v = rng.random_range(-limit..=limit);
            }
            w.bias.data_mut().fill(0.0);
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv3d { .. })
    }

    fn params(&self) -> &LayerWeights {
        self.weights.as_ref().expect("parameterized layer without weights")
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |what: &str| {
            Error::shape(format!("layer '{}' ({what}) cannot take input {input:?}", self.name))
        };
        match &self.kind {
            LayerKind::Conv3d { in_channels, out_channels, kernel, stride, padding } => {
                if input.len() != 4 || input[0] != *in_channels {
                    return Err(err("conv3d"));
                }
                if *stride == 0 || kernel.contains(&0) {
                    return Err(err("conv3d with zero stride or kernel"));
                }
                let g = ConvGeom::new([input[1], input[2], input[3]], *kernel, *stride, *padding)
                    .ok_or_else(|| err("conv3d kernel larger than input"))?;
                Ok(vec![*out_channels, g.out_sp[0], g.out_sp[1], g.out_sp[2]])
            }
            LayerKind::MaxPool3d { window } => {
                if input.len() != 4 || window.contains(&0) || (0..3).any(|a| input[a + 1] < window[a]) {
                    return Err(err("maxpool3d"));
                }
                Ok(vec![input[0], input[1] / window[0], input[2] / window[1], input[3] / window[2]])
            }
            LayerKind::GlobalAvgPool => {
                if input.len() != 4 {
                    return Err(err("global_avg_pool"));
                }
                Ok(vec![input[0]])
            }
            LayerKind::Dense { in_features, out_features } => {
                if input != [*in_features] {
                    return Err(err("dense"));
                }
                Ok(vec![*out_features])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, a: &Tensor) -> Result<Tensor> {
        self.forward_with_bias(a, true)
    }

    /// Forward map, optionally with biases treated as zero.
    pub fn forward_with_bias(&self, a: &Tensor, use_bias: bool) -> Result<Tensor> {
        let out_dims = self.output_dims(a.dims())?;
        let out = match &self.kind {
            LayerKind::Conv3d { kernel, stride, padding, .. } => {
                let g = self.geom(a.dims(), *kernel, *stride, *padding);
                conv_forward(a, self.params(), &g, &out_dims, use_bias)
            }
            LayerKind::MaxPool3d { window } => {
                let (vals, _) = maxpool(a, *window, &out_dims);
                vals
            }
            LayerKind::GlobalAvgPool => {
                let spatial: usize = a.dims()[1..].iter().product();
                let data = a.data().chunks_exact(spatial).map(|c| c.iter().sum::<f64>() / spatial as f64).collect();
                Tensor::from_parts_unchecked(out_dims, data)
            }
            LayerKind::Dense { in_features, out_features } => {
                let p = self.params();
                let w = p.weight.data();
                let data = (0..*out_features)
                    .map(|o| {
                        let row = &w[o * in_features..(o + 1) * in_features];
                        let z = crate::tensor::dot(row, a.data());
                        if use_bias { z + p.bias.data()[o] } else { z }
                    })
                    .collect();
                Tensor::from_parts_unchecked(out_dims, data)
            }
            LayerKind::Relu => a.map(|v| v.max(0.0)),
            LayerKind::Flatten => Tensor::from_parts_unchecked(out_dims, a.data().to_vec()),
        };
        Ok(out)
    }

    /// Vector-Jacobian product: the gradient of `<layer(a), s>` with respect
    /// to `a`, holding `s` constant.
    pub fn vjp(&self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        let out_dims = self.output_dims(a.dims())?;
        s.expect_dims(&out_dims)?;
        let g = match &self.kind {
            LayerKind::Conv3d { kernel, stride, padding, .. } => {
                let g = self.geom(a.dims(), *kernel, *stride, *padding);
                conv_input_grad(a.dims(), self.params(), &g, s)
            }
            LayerKind::MaxPool3d { window } => {
                let (_, winners) = maxpool(a, *window, &out_dims);
                let mut grad = Tensor::zeros(a.dims());
                for (&w, &sv) in winners.iter().zip(s.data()) {
                    grad.data_mut()[w] += sv;
                }
                grad
            }
            LayerKind::GlobalAvgPool => {
                let spatial: usize = a.dims()[1..].iter().product();
                let inv = 1.0 / spatial as f64;
                let data = s.data().iter().flat_map(|&sv| std::iter::repeat_n(sv * inv, spatial)).collect();
                Tensor::from_parts_unchecked(a.dims().to_vec(), data)
            }
            LayerKind::Dense { in_features, out_features } => {
                let w = self.params().weight.data();
                let mut grad = vec![0.0; *in_features];
                for o in 0..*out_features {
                    let sv = s.data()[o];
                    let row = &w[o * in_features..(o + 1) * in_features];
                    for (gi, wi) in grad.iter_mut().zip(row) {
                        *gi += wi * sv;
                    }
                }
                Tensor::from_parts_unchecked(vec![*in_features], grad)
            }
            LayerKind::Relu => a.zip_map(s, |av, sv| if av > 0.0 { sv } else { 0.0 })?,
            LayerKind::Flatten => Tensor::from_parts_unchecked(a.dims().to_vec(), s.data().to_vec()),
        };
        Ok(g)
    }

    /// Gradient of `<layer(a), s>` with respect to the weights and bias.
    pub(crate) fn param_grads(&self, a: &Tensor, s: &Tensor) -> Option<LayerWeights> {
        match &self.kind {
            LayerKind::Conv3d { kernel, stride, padding, .. } => {
                let g = self.geom(a.dims(), *kernel, *stride, *padding);
                Some(conv_param_grads(a, self.params(), &g, s))
            }
            LayerKind::Dense { in_features, out_features } => {
                let mut gw = vec![0.0; in_features * out_features];
                for o in 0..*out_features {
                    let sv = s.data()[o];
                    for (gi, &ai) in gw[o * in_features..(o + 1) * in_features].iter_mut().zip(a.data()) {
                        *gi = sv * ai;
                    }
                }
                Some(LayerWeights {
                    weight: Tensor::from_parts_unchecked(vec![*out_features, *in_features], gw),
                    bias: s.clone(),
                })
            }
            _ => None,
        }
    }

    fn geom(&self, input: &[usize], kernel: [usize; 3], stride: usize, padding: Padding) -> ConvGeom {
        ConvGeom::new([input[1], input[2], input[3]], kernel, stride, padding)
            .expect("conv geometry validated by output_dims")
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    in_sp: [usize; 3],
    out_sp: [usize; 3],
    kernel: [usize; 3],
    stride: usize,
    pad: [usize; 3],
}

impl ConvGeom {
    fn new(in_sp: [usize; 3], kernel: [usize; 3], stride: usize, padding: Padding) -> Option<Self> {
        let mut out_sp = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            match padding {
                Padding::Same => {
                    out_sp[a] = in_sp[a].div_ceil(stride);
                    let total = ((out_sp[a] - 1) * stride + kernel[a]).saturating_sub(in_sp[a]);
                    pad[a] = total / 2;
                }
                Padding::Valid => {
                    if in_sp[a] < kernel[a] {
                        return None;
                    }
                    out_sp[a] = (in_sp[a] - kernel[a]) / stride + 1;
                }
            }
        }
        Some(ConvGeom { in_sp, out_sp, kernel, stride, pad })
    }

    /// Output positions `o` along `axis` whose input tap `o*stride + k - pad`
    /// falls inside the input.
    fn valid_outputs(&self, axis: usize, k: usize) -> std::ops::Range<usize> {
        let (s, p, n) = (self.stride as isize, self.pad[axis] as isize, self.in_sp[axis] as isize);
        let k = k as isize;
        // o*s + k - p >= 0  and  o*s + k - p <= n - 1
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let hi_incl = (n - 1 + p - k).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, self.out_sp[axis] as isize);
        (lo.min(hi)) as usize..hi as usize
    }

    fn tap(&self, axis: usize, o: usize, k: usize) -> usize {
        o * self.stride + k - self.pad[axis]
    }
}

// The three conv kernels share one loop nest: for every kernel offset,
// sweep the output rows whose taps are in range. `visit` receives the flat
// kernel offset, the first output and input index of a z-run, and the run
// length; consecutive outputs step the input by `stride`.
fn conv_sweep(g: &ConvGeom, mut visit: impl FnMut(usize, usize, usize, usize)) {
    let [kx, ky, kz] = g.kernel;
    let in_plane = g.in_sp[1] * g.in_sp[2];
    let out_plane = g.out_sp[1] * g.out_sp[2];
    for dx in 0..kx {
        let rx = g.valid_outputs(0, dx);
        for dy in 0..ky {
            let ry = g.valid_outputs(1, dy);
            for dz in 0..kz {
                let rz = g.valid_outputs(2, dz);
                if rz.is_empty() {
                    continue;
                }
                let kidx = (dx * ky + dy) * kz + dz;
                let iz0 = g.tap(2, rz.start, dz);
                for ox in rx.clone() {
                    let ix = g.tap(0, ox, dx);
                    for oy in ry.clone() {
                        let iy = g.tap(1, oy, dy);
                        let out_row = ox * out_plane + oy * g.out_sp[2];
                        let in_row = ix * in_plane + iy * g.in_sp[2];
                        visit(kidx, out_row + rz.start, in_row + iz0, rz.len());
                    }
                }
            }
        }
    }
}

// Column matrix `[in_channels * kernel, out_positions]`: row `(ic, k)`
// holds the input value under kernel tap `k` for every output position,
// zero where the tap falls in the padding.
fn im2col(x: &[f64], ic_n: usize, g: &ConvGeom) -> Vec<f64> {
    let k_n: usize = g.kernel.iter().product();
    let in_n: usize = g.in_sp.iter().product();
    let out_n: usize = g.out_sp.iter().product();
    let mut cols = vec![0.0; ic_n * k_n * out_n];
    for ic in 0..ic_n {
        let src = &x[ic * in_n..(ic + 1) * in_n];
        let block = &mut cols[ic * k_n * out_n..(ic + 1) * k_n * out_n];
        conv_sweep(g, |k, o, i, n| {
            let dst = &mut block[k * out_n + o..k * out_n + o + n];
            if g.stride == 1 {
                dst.copy_from_slice(&src[i..i + n]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = src[i + t * g.stride];
                }
            }
        });
    }
    cols
}

// Scatter-adds a column matrix back onto the input grid (adjoint of im2col).
fn col2im(cols: &[f64], ic_n: usize, g: &ConvGeom) -> Vec<f64> {
    let k_n: usize = g.kernel.iter().product();
    let in_n: usize = g.in_sp.iter().product();
    let out_n: usize = g.out_sp.iter().product();
    let mut x = vec![0.0; ic_n * in_n];
    for ic in 0..ic_n {
        let dst = &mut x[ic * in_n..(ic + 1) * in_n];
        let block = &cols[ic * k_n * out_n..(ic + 1) * k_n * out_n];
        conv_sweep(g, |k, o, i, n| {
            let src = &block[k * out_n + o..k * out_n + o + n];
            if g.stride == 1 {
                for (d, s) in dst[i..i + n].iter_mut().zip(src) {
                    *d += s;
                }
            } else {
                for (t, s) in src.iter().enumerate() {
                    dst[i + t * g.stride] += s;
                }
            }
        });
    }
    x
}

/// `c = a * b (+ c if accumulate)` for row-major `a: m x k`, `b: k x n`,
/// either operand optionally read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index the strides address.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

// Stride-1 layout: each channel sits in a zero-padded box of extent
// `out + kernel - 1` per axis. A kernel tap is then a constant flat offset
// and a whole channel is one contiguous sweep of length `len`; sweep
// positions that fall between output rows are computed and discarded.
struct PaddedFrame {
    dims: [usize; 3],
    lo: [usize; 3],
    len: usize,
    offsets: Vec<usize>,
}

impl PaddedFrame {
    fn new(g: &ConvGeom) -> Self {
        let dims: [usize; 3] = std::array::from_fn(|a| g.out_sp[a] + g.kernel[a] - 1);
        let plane = dims[1] * dims[2];
        let len = (g.out_sp[0] - 1) * plane + (g.out_sp[1] - 1) * dims[2] + g.out_sp[2];
        let [kx, ky, kz] = g.kernel;
        let mut offsets = Vec::with_capacity(kx * ky * kz);
        for dx in 0..kx {
            for dy in 0..ky {
                for dz in 0..kz {
                    offsets.push(dx * plane + dy * dims[2] + dz);
                }
            }
        }
        PaddedFrame { dims, lo: g.pad, len, offsets }
    }

    fn size(&self) -> usize {
        self.dims.iter().product()
    }

    fn row(&self, at: [usize; 3], x: usize, y: usize) -> usize {
        ((at[0] + x) * self.dims[1] + at[1] + y) * self.dims[2] + at[2]
    }

    /// Writes a `[channels, sp]` block into padded boxes placed at `at`.
    fn embed(&self, src: &[f64], sp: [usize; 3], at: [usize; 3]) -> Vec<f64> {
        let n: usize = sp.iter().product();
        let mut out = vec![0.0; src.len() / n * self.size()];
        for (c, chunk) in src.chunks_exact(n).enumerate() {
            let base = c * self.size();
            for x in 0..sp[0] {
                for y in 0..sp[1] {
                    let r = base + self.row(at, x, y);
                    let s = (x * sp[1] + y) * sp[2];
                    out[r..r + sp[2]].copy_from_slice(&chunk[s..s + sp[2]]);
                }
            }
        }
        out
    }

    /// Reads one padded box back out as a dense `sp` block.
    fn extract(&self, padded: &[f64], sp: [usize; 3], at: [usize; 3], dst: &mut [f64]) {
        for x in 0..sp[0] {
            for y in 0..sp[1] {
                let r = self.row(at, x, y);
                let s = (x * sp[1] + y) * sp[2];
                dst[s..s + sp[2]].copy_from_slice(&padded[r..r + sp[2]]);
            }
        }
    }
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

// Four fixed partial sums so the loop vectorizes; the order is fixed, so
// results stay reproducible.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// Measured on the default layers: GEMM wins once several output channels
// share one column matrix; with one or two it is the column copy that
// dominates and the padded sweep is faster.
fn padded_wins(g: &ConvGeom, oc_n: usize) -> bool {
    g.stride == 1 && oc_n <= 2
}

fn conv_forward(a: &Tensor, p: &LayerWeights, g: &ConvGeom, out_dims: &[usize], use_bias: bool) -> Tensor {
    let (oc_n, ic_n) = (p.weight.dims()[0], p.weight.dims()[1]);
    let k_n: usize = g.kernel.iter().product();
    let out_n: usize = g.out_sp.iter().product();
    let mut out = vec![0.0; oc_n * out_n];
    if padded_wins(g, oc_n) {
        let f = PaddedFrame::new(g);
        let (size, len) = (f.size(), f.len);
        let xp = f.embed(a.data(), g.in_sp, f.lo);
        let mut acc = vec![0.0; size];
        for oc in 0..oc_n {
            acc.fill(0.0);
            for ic in 0..ic_n {
                let wk = &p.weight.data()[(oc * ic_n + ic) * k_n..][..k_n];
                let x = &xp[ic * size..(ic + 1) * size];
                for (&w, &off) in wk.iter().zip(&f.offsets) {
                    axpy(&mut acc[..len], &x[off..off + len], w);
                }
            }
            f.extract(&acc, g.out_sp, [0; 3], &mut out[oc * out_n..(oc + 1) * out_n]);
        }
    } else {
        let cols = im2col(a.data(), ic_n, g);
        gemm(oc_n, ic_n * k_n, out_n, p.weight.data(), false, &cols, false, &mut out);
    }
    if use_bias {
        for (row, b) in out.chunks_exact_mut(out_n).zip(p.bias.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
    }
    Tensor::from_parts_unchecked(out_dims.to_vec(), out)
}

fn conv_input_grad(in_dims: &[usize], p: &LayerWeights, g: &ConvGeom, s: &Tensor) -> Tensor {
    let (oc_n, ic_n) = (p.weight.dims()[0], p.weight.dims()[1]);
    let k_n: usize = g.kernel.iter().product();
    let out_n: usize = g.out_sp.iter().product();
    if padded_wins(g, oc_n) {
        let f = PaddedFrame::new(g);
        let (size, len) = (f.size(), f.len);
        let in_n: usize = g.in_sp.iter().product();
        let sp = f.embed(s.data(), g.out_sp, [0; 3]);
        let mut grad = vec![0.0; ic_n * in_n];
        let mut acc = vec![0.0; size];
        for ic in 0..ic_n {
            acc.fill(0.0);
            for oc in 0..oc_n {
                let wk = &p.weight.data()[(oc * ic_n + ic) * k_n..][..k_n];
                let cot = &sp[oc * size..oc * size + len];
                for (&w, &off) in wk.iter().zip(&f.offsets) {
                    axpy(&mut acc[off..off + len], cot, w);
                }
            }
            f.extract(&acc, g.in_sp, f.lo, &mut grad[ic * in_n..(ic + 1) * in_n]);
        }
        return Tensor::from_parts_unchecked(in_dims.to_vec(), grad);
    }
    let mut dcols = vec![0.0; ic_n * k_n * out_n];
    gemm(ic_n * k_n, oc_n, out_n, p.weight.data(), true, s.data(), false, &mut dcols);
    Tensor::from_parts_unchecked(in_dims.to_vec(), col2im(&dcols, ic_n, g))
}

fn conv_param_grads(a: &Tensor, p: &LayerWeights, g: &ConvGeom, s: &Tensor) -> LayerWeights {
    let (oc_n, ic_n) = (p.weight.dims()[0], p.weight.dims()[1]);
    let k_n: usize = g.kernel.iter().product();
    let out_n: usize = g.out_sp.iter().product();
    let mut gw = vec![0.0; oc_n * ic_n * k_n];
    if padded_wins(g, oc_n) {
        let f = PaddedFrame::new(g);
        let (size, len) = (f.size(), f.len);
        let xp = f.embed(a.data(), g.in_sp, f.lo);
        let sp = f.embed(s.data(), g.out_sp, [0; 3]);
        for oc in 0..oc_n {
            let cot = &sp[oc * size..oc * size + len];
            for ic in 0..ic_n {
                let x = &xp[ic * size..(ic + 1) * size];
                let dst = &mut gw[(oc * ic_n + ic) * k_n..][..k_n];
                for (d, &off) in dst.iter_mut().zip(&f.offsets) {
                    *d = dot4(cot, &x[off..off + len]);
                }
            }
        }
    } else {
        let cols = im2col(a.data(), ic_n, g);
        gemm(oc_n, out_n, ic_n * k_n, s.data(), false, &cols, true, &mut gw);
    }
    let gb = s.data().chunks_exact(out_n).map(|row| row.iter().sum()).collect();
    LayerWeights {
        weight: Tensor::from_parts_unchecked(p.weight.dims().to_vec(), gw),
        bias: Tensor::from_parts_unchecked(vec![oc_n], gb),
    }
}

/// Pooled values and the flat input index of each window's winner. Ties go
/// to the lexicographically first coordinate in the window.
fn maxpool(a: &Tensor, window: [usize; 3], out_dims: &[usize]) -> (Tensor, Vec<usize>) {
    let d = a.dims();
    let (ny, nz) = (d[2], d[3]);
    let n_out: usize = out_dims.iter().product();
    let mut vals = Vec::with_capacity(n_out);
    let mut winners = Vec::with_capacity(n_out);
    for c in 0..out_dims[0] {
        for ox in 0..out_dims[1] {
            for oy in 0..out_dims[2] {
                for oz in 0..out_dims[3] {
                    let mut best = usize::MAX;
                    for wx in 0..window[0] {
                        for wy in 0..window[1] {
                            for wz in 0..window[2] {
                                let (ix, iy, iz) = (ox * window[0] + wx, oy * window[1] + wy, oz * window[2] + wz);
                                let flat = ((c * d[1] + ix) * ny + iy) * nz + iz;
                                if best == usize::MAX || a.data()[flat] > a.data()[best] {
                                    best = flat;
                                }
                            }
                        }
                    }
                    vals.push(a.data()[best]);
                    winners.push(best);
                }
            }
        }
    }
    (Tensor::from_parts_unchecked(out_dims.to_vec(), vals), winners)
}
