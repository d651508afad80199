//! Dense f32 kernels shared by the encoder and the dense-prediction path.
//!
//! All reductions run in a fixed order (row-major, left to right over the
//! reduced axis) so results are reproducible bit-for-bit.

use crate::error::{Error, Result};

/// Row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!("invalid shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has rank >= 1")
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }

    /// Row `r` of a rank-2 view (all axes but the last flattened).
    pub fn row(&self, r: usize) -> &[f32] {
        let d = self.last_dim();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.last_dim())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }
}

/// `a[m×k] · b[k×n]`, accumulating each output left to right over `k`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `x[m×k] · w[k×n] + bias[n]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    let n = y.last_dim();
    if bias.len() != n {
        return Err(Error::dim(format!("bias length {} vs {n}", bias.len())));
    }
    for row in y.data.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(y)
}

/// Softmax over the entries of `row` where `allowed` is true (all entries
/// when `allowed` is `None`). Disallowed entries become exactly zero.
///
/// Returns `false` if no entry is allowed; the row is left untouched.
pub fn masked_softmax_row(row: &mut [f32], allowed: Option<&[bool]>) -> bool {
    let keep = |j: usize| allowed.is_none_or(|m| m[j]);
    let mut max = f32::NEG_INFINITY;
    let mut any = false;
    for (j, &v) in row.iter().enumerate() {
        if keep(j) {
            any = true;
            if v > max {
                max = v;
            }
        }
    }
    if !any {
        return false;
    }
    let mut sum = 0.0f32;
    for (j, v) in row.iter_mut().enumerate() {
        if keep(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for (j, v) in row.iter_mut().enumerate() {
        if keep(j) {
            *v *= inv;
        }
    }
    true
}

/// Row-wise softmax restricted to mask-true entries.
pub fn masked_softmax(logits: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (rows, cols) = logits.dims2()?;
    if mask.len() != rows * cols {
        return Err(Error::dim(format!(
            "mask has {} entries for {rows}x{cols} logits",
            mask.len()
        )));
    }
    let mut out = logits.clone();
    for (r, (row, m)) in out.data.chunks_exact_mut(cols).zip(mask.chunks_exact(cols)).enumerate() {
        if !masked_softmax_row(row, Some(m)) {
            return Err(Error::DegenerateRow { row: r });
        }
    }
    Ok(out)
}

/// Plain row-wise softmax.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let cols = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data.chunks_exact_mut(cols) {
        masked_softmax_row(row, None);
    }
    Ok(out)
}

/// Per-channel bilinear resampling of an `h×w×C` map with half-pixel
/// centres: output sample `i` reads source coordinate
/// `(i + 0.5)·h/out_h − 0.5`, clamped to `[0, h−1]`.
pub fn bilinear_upsample(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = match src.shape[..] {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::dim(format!("expected h×w×C map, got {:?}", src.shape))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("zero-size upsampling target"));
    }
    if out_h < h || out_w < w {
        return Err(Error::dim(format!(
            "upsampling target {out_h}x{out_w} smaller than source {h}x{w}"
        )));
    }
    let ys = sample_weights(h, out_h);
    let xs = sample_weights(w, out_w);
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = &src.data[(y0 * w + x0) * c..][..c];
            let p01 = &src.data[(y0 * w + x1) * c..][..c];
            let p10 = &src.data[(y1 * w + x0) * c..][..c];
            let p11 = &src.data[(y1 * w + x1) * c..][..c];
            let dst = &mut out[(oy * out_w + ox) * c..][..c];
            for k in 0..c {
                let top = p00[k] + (p01[k] - p00[k]) * fx;
                let bottom = p10[k] + (p11[k] - p10[k]) * fx;
                dst[k] = top + (bottom - top) * fy;
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Per output index: (lower source index, upper source index, fraction).
fn sample_weights(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |acc, (x, y)| acc + x * y)
}

pub fn l2_norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

/// `⟨a,b⟩ / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("vector lengths {} vs {}", a.len(), b.len())));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok(dot(a, b) / (na * nb))
}

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Normalise every row over the last axis, then scale by `gamma` and shift
/// by `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::dim(format!(
            "layer norm over {d} features with gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data.chunks_exact_mut(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(&gamma.data).zip(&beta.data) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

/// `x·σ(1.702x)`, the activation used by the original CLIP towers.
pub fn quick_gelu(x: f32) -> f32 {
    x / (1.0 + (-1.702 * x).exp())
}
