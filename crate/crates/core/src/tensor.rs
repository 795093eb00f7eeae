//! Dense row-major `f64` arrays and the numeric kernels shared by the
//! network, the attribution methods and the exporters.
//!
//! Layout is row-major with the last axis fastest: the flat index of
//! `(i, j, k)` in dims `(nx, ny, nz)` is `i * ny * nz + j * nz + k`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive, that they
    /// match the data length and that every value is finite.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::domain(format!("invalid extents {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at flat index {pos}")));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        assert!(!dims.is_empty() && !dims.contains(&0), "invalid extents {dims:?}");
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    /// Fills a tensor by evaluating `f` at every multi-index, in flat order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for flat in 0..t.data.len() {
            t.unravel_into(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        t
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        flat_index(&self.dims, idx)
    }

    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        unravel(&self.dims, flat)
    }

    fn unravel_into(&self, mut flat: usize, out: &mut [usize]) {
        for (axis, &n) in self.dims.iter().enumerate().rev() {
            out[axis] = flat % n;
            flat /= n;
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    /// Same data under new dims with an equal element count.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        if dims.iter().product::<usize>() != self.len() || dims.contains(&0) {
            return Err(Error::shape(format!("cannot reshape {:?} to {dims:?}", self.dims)));
        }
        Ok(Tensor { dims: dims.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_dims(other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!("expected dims {dims:?}, got {:?}", self.dims)));
        }
        Ok(())
    }

    /// Sums over the leading (channel) axis of a 4-axis tensor, leaving the
    /// three spatial axes.
    pub fn sum_channels(&self) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(Error::shape(format!("expected 4 axes, got {:?}", self.dims)));
        }
        let spatial: usize = self.dims[1..].iter().product();
        let mut out = vec![0.0; spatial];
        for chunk in self.data.chunks_exact(spatial) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        Ok(Tensor { dims: self.dims[1..].to_vec(), data: out })
    }

    /// Maps the minimum to 0 and the maximum to 1. A constant field maps to
    /// all zeros.
    pub fn normalize01(&self) -> Tensor {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        if span <= 0.0 {
            return Tensor::zeros(&self.dims);
        }
        self.map(|v| (v - lo) / span)
    }
}

pub fn flat_index(dims: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(dims.len(), idx.len());
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| {
        debug_assert!(i < n);
        acc * n + i
    })
}

pub fn unravel(dims: &[usize], mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (axis, &n) in dims.iter().enumerate().rev() {
        out[axis] = flat % n;
        flat /= n;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine distance of a zero-norm vector"));
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::domain("argmax of an empty vector"));
    }
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// How a coarse field is stretched to a finer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    #[default]
    Trilinear,
    Nearest,
}

// Corner-to-corner: output sample 0 lands on input sample 0 and the last
// output sample lands on the last input sample.
fn source_position(o: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 || n_in == 1 {
        0.0
    } else {
        o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn check_resample_args(t: &Tensor, new_dims: [usize; 3]) -> Result<[usize; 3]> {
    if t.rank() != 3 {
        return Err(Error::shape(format!("resample needs 3 axes, got {:?}", t.dims())));
    }
    if new_dims.contains(&0) {
        return Err(Error::domain(format!("zero extent in {new_dims:?}")));
    }
    Ok([t.dims[0], t.dims[1], t.dims[2]])
}

pub fn trilinear_resample(t: &Tensor, new_dims: [usize; 3]) -> Result<Tensor> {
    let src = check_resample_args(t, new_dims)?;
    // Per-axis (lower index, upper index, upper weight).
    let axis_taps: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| {
            (0..new_dims[a])
                .map(|o| {
                    let p = source_position(o, src[a], new_dims[a]);
                    let i0 = (p.floor() as usize).min(src[a] - 1);
                    let i1 = (i0 + 1).min(src[a] - 1);
                    (i0, i1, p - i0 as f64)
                })
                .collect()
        })
        .collect();
    let at = |i: usize, j: usize, k: usize| t.data[(i * src[1] + j) * src[2] + k];
    let lerp = |a: f64, b: f64, w: f64| a * (1.0 - w) + b * w;
    let mut out = Vec::with_capacity(new_dims.iter().product());
    for &(x0, x1, wx) in &axis_taps[0] {
        for &(y0, y1, wy) in &axis_taps[1] {
            for &(z0, z1, wz) in &axis_taps[2] {
                let c00 = lerp(at(x0, y0, z0), at(x0, y0, z1), wz);
                let c01 = lerp(at(x0, y1, z0), at(x0, y1, z1), wz);
                let c10 = lerp(at(x1, y0, z0), at(x1, y0, z1), wz);
                let c11 = lerp(at(x1, y1, z0), at(x1, y1, z1), wz);
                out.push(lerp(lerp(c00, c01, wy), lerp(c10, c11, wy), wx));
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(new_dims.to_vec(), out))
}

pub fn nearest_resample(t: &Tensor, new_dims: [usize; 3]) -> Result<Tensor> {
    let src = check_resample_args(t, new_dims)?;
    let taps: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            (0..new_dims[a])
                .map(|o| (source_position(o, src[a], new_dims[a]).round() as usize).min(src[a] - 1))
                .collect()
        })
        .collect();
    let out = Tensor::from_fn(&new_dims, |idx| {
        t.get(&[taps[0][idx[0]], taps[1][idx[1]], taps[2][idx[2]]])
    });
    Ok(out)
}

pub fn resample(t: &Tensor, new_dims: [usize; 3], mode: Resample) -> Result<Tensor> {
    match mode {
        Resample::Trilinear => trilinear_resample(t, new_dims),
        Resample::Nearest => nearest_resample(t, new_dims),
    }
}
