//! Layer primitives with explicit forward caches and backward passes.
//!
//! Activations are stored as `(batch, channels, length)` row-major tensors.

use rand::Rng;

use crate::error::{Error, Result};

/// How a parameter tensor is treated by training and persistence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable, L2-regularised.
    Weight,
    /// Learnable, not regularised (biases, batch-norm scale and shift).
    Shift,
    /// Not learnable (batch-norm running statistics).
    Buffer,
}

pub type TensorRef<'a> = (String, ParamKind, &'a [f64]);
pub type TensorMut<'a> = (String, ParamKind, &'a mut Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Tensor {
            n,
            c,
            l,
            data: vec![0.0; n * c * l],
        }
    }

    pub fn from_vec(n: usize, c: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * l {
            return Err(Error::Shape {
                layer: "tensor".into(),
                detail: format!("{} values for shape ({n}, {c}, {l})", data.len()),
            });
        }
        Ok(Tensor { n, c, l, data })
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.c + c) * self.l + t
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let s = self.c * self.l;
        &self.data[b * s..(b + 1) * s]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.n == other.n && self.c == other.c && self.l == other.l
    }
}

/// `C = A * B + beta * C` over strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Glorot/Xavier uniform initialisation.
pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn shape_err(layer: &str, detail: String) -> Error {
    Error::Shape {
        layer: layer.to_string(),
        detail,
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out, in, k)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct ConvCache {
    cols: Vec<f64>,
    n: usize,
    in_len: usize,
    out_len: usize,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel_size;
        let fan_out = out_channels * kernel_size;
        Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            weight: glorot_uniform(rng, fan_in, fan_out, out_channels * fan_in),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv1d {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    /// `floor((L + 2 padding - kernel) / stride) + 1`.
    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        let padded = input_len + 2 * self.padding;
        if padded < self.kernel_size || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel_size) / self.stride + 1)
    }

    fn check(&self, name: &str, x: &Tensor) -> Result<usize> {
        if x.c != self.in_channels {
            return Err(shape_err(
                name,
                format!("expected {} input channels, got {}", self.in_channels, x.c),
            ));
        }
        self.output_len(x.l).ok_or_else(|| {
            shape_err(
                name,
                format!("input length {} too short for kernel {}", x.l, self.kernel_size),
            )
        })
    }

    /// Valid output index range for kernel offset `kk`.
    fn valid_range(&self, kk: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // input index = t * stride + kk - padding must lie in [0, in_len).
        let lo = if kk >= self.padding {
            0
        } else {
            (self.padding - kk).div_ceil(self.stride)
        };
        let hi = if in_len + self.padding > kk {
            ((in_len + self.padding - kk - 1) / self.stride + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[f64], in_len: usize, out_len: usize, col: &mut [f64]) {
        let k = self.kernel_size;
        for ci in 0..self.in_channels {
            let xin = &x[ci * in_len..(ci + 1) * in_len];
            for kk in 0..k {
                let row = &mut col[(ci * k + kk) * out_len..(ci * k + kk + 1) * out_len];
                let (lo, hi) = self.valid_range(kk, in_len, out_len);
                row[..lo].iter_mut().for_each(|v| *v = 0.0);
                row[hi..].iter_mut().for_each(|v| *v = 0.0);
                let base = kk as isize - self.padding as isize;
                if self.stride == 1 {
                    let start = (lo as isize + base) as usize;
                    row[lo..hi].copy_from_slice(&xin[start..start + (hi - lo)]);
                } else {
                    for (t, v) in row[lo..hi].iter_mut().enumerate() {
                        *v = xin[((t + lo) * self.stride) as isize as usize + kk - self.padding];
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f64], in_len: usize, out_len: usize, dx: &mut [f64]) {
        let k = self.kernel_size;
        for ci in 0..self.in_channels {
            let dxin = &mut dx[ci * in_len..(ci + 1) * in_len];
            for kk in 0..k {
                let row = &col[(ci * k + kk) * out_len..(ci * k + kk + 1) * out_len];
                let (lo, hi) = self.valid_range(kk, in_len, out_len);
                for t in lo..hi {
                    dxin[t * self.stride + kk - self.padding] += row[t];
                }
            }
        }
    }

    pub fn forward(&self, name: &str, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let out_len = self.check(name, x)?;
        let rows = self.in_channels * self.kernel_size;
        let per = rows * out_len;
        let mut cols = vec![0.0; x.n * per];
        let mut out = Tensor::zeros(x.n, self.out_channels, out_len);
        for b in 0..x.n {
            let col = &mut cols[b * per..(b + 1) * per];
            self.im2col(x.sample(b), x.l, out_len, col);
            let o = &mut out.data[b * self.out_channels * out_len..(b + 1) * self.out_channels * out_len];
            gemm(
                self.out_channels,
                rows,
                out_len,
                &self.weight,
                (rows, 1),
                col,
                (out_len, 1),
                0.0,
                o,
                (out_len, 1),
            );
            for (oc, chunk) in o.chunks_exact_mut(out_len).enumerate() {
                let bias = self.bias[oc];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok((
            out,
            ConvCache {
                cols,
                n: x.n,
                in_len: x.l,
                out_len,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `need_input_grad`.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dout: &Tensor,
        grad: &mut Conv1d,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let (n, out_len, in_len) = (cache.n, cache.out_len, cache.in_len);
        let rows = self.in_channels * self.kernel_size;
        let per = rows * out_len;
        let mut dx = need_input_grad.then(|| Tensor::zeros(n, self.in_channels, in_len));
        let mut dcol = vec![0.0; if need_input_grad { per } else { 0 }];
        for b in 0..n {
            let col = &cache.cols[b * per..(b + 1) * per];
            let d = dout.sample(b);
            gemm(
                self.out_channels,
                out_len,
                rows,
                d,
                (out_len, 1),
                col,
                (1, out_len),
                1.0,
                &mut grad.weight,
                (rows, 1),
            );
            for (oc, chunk) in d.chunks_exact(out_len).enumerate() {
                grad.bias[oc] += chunk.iter().sum::<f64>();
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    rows,
                    self.out_channels,
                    out_len,
                    &self.weight,
                    (1, rows),
                    d,
                    (out_len, 1),
                    0.0,
                    &mut dcol,
                    (out_len, 1),
                );
                let s = self.in_channels * in_len;
                self.col2im_add(&dcol, in_len, out_len, &mut dx.data[b * s..(b + 1) * s]);
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<TensorRef<'a>> {
        vec![
            (format!("{prefix}.weight"), ParamKind::Weight, &self.weight[..]),
            (format!("{prefix}.bias"), ParamKind::Shift, &self.bias[..]),
        ]
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<TensorMut<'a>> {
        vec![
            (format!("{prefix}.weight"), ParamKind::Weight, &mut self.weight),
            (format!("{prefix}.bias"), ParamKind::Shift, &mut self.bias),
        ]
    }
}

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Batch mean and unbiased variance, for the running-statistics update.
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm1d {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        BatchNorm1d {
            gamma: vec![0.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![0.0; c],
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    fn check(&self, name: &str, x: &Tensor) -> Result<()> {
        if x.c != self.gamma.len() {
            return Err(shape_err(
                name,
                format!("expected {} channels, got {}", self.gamma.len(), x.c),
            ));
        }
        Ok(())
    }

    /// Normalise with batch statistics over `(batch, length)`.
    pub fn forward_train(&self, name: &str, x: &Tensor) -> Result<(Tensor, BnCache)> {
        self.check(name, x)?;
        let count = (x.n * x.l) as f64;
        let c = x.c;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..x.n {
            for ch in 0..c {
                let s = &x.data[x.idx(b, ch, 0)..x.idx(b, ch, 0) + x.l];
                mean[ch] += s.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..x.n {
            for ch in 0..c {
                let s = &x.data[x.idx(b, ch, 0)..x.idx(b, ch, 0) + x.l];
                let m = mean[ch];
                var[ch] += s.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut out = Tensor::zeros(x.n, c, x.l);
        let mut xhat = vec![0.0; x.data.len()];
        for b in 0..x.n {
            for ch in 0..c {
                let start = x.idx(b, ch, 0);
                let (m, is, g, bt) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                for i in start..start + x.l {
                    let h = (x.data[i] - m) * is;
                    xhat[i] = h;
                    out.data[i] = g * h + bt;
                }
            }
        }
        let var_unbiased = if count > 1.0 {
            var.iter().map(|v| v * count / (count - 1.0)).collect()
        } else {
            var.clone()
        };
        Ok((
            out,
            BnCache {
                xhat,
                inv_std,
                mean,
                var_unbiased,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &BnCache) {
        let m = self.momentum;
        for (r, &v) in self.running_mean.iter_mut().zip(&cache.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, &v) in self.running_var.iter_mut().zip(&cache.var_unbiased) {
            *r = (1.0 - m) * *r + m * v;
        }
    }

    /// Per-channel affine map using the running statistics.
    pub fn forward_infer(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        self.check(name, x)?;
        let mut out = x.clone();
        for b in 0..x.n {
            for ch in 0..x.c {
                let scale = self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt();
                let shift = self.beta[ch] - scale * self.running_mean[ch];
                let start = x.idx(b, ch, 0);
                for v in &mut out.data[start..start + x.l] {
                    *v = scale * *v + shift;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, cache: &BnCache, dout: &Tensor, grad: &mut BatchNorm1d) -> Tensor {
        let (n, c, l) = (dout.n, dout.c, dout.l);
        let count = (n * l) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let start = dout.idx(b, ch, 0);
                for i in start..start + l {
                    sum_dy[ch] += dout.data[i];
                    sum_dy_xhat[ch] += dout.data[i] * cache.xhat[i];
                }
            }
        }
        for ch in 0..c {
            grad.gamma[ch] += sum_dy_xhat[ch];
            grad.beta[ch] += sum_dy[ch];
        }
        let mut dx = Tensor::zeros(n, c, l);
        for b in 0..n {
            for ch in 0..c {
                let k = self.gamma[ch] * cache.inv_std[ch] / count;
                let start = dout.idx(b, ch, 0);
                for i in start..start + l {
                    dx.data[i] =
                        k * (count * dout.data[i] - sum_dy[ch] - cache.xhat[i] * sum_dy_xhat[ch]);
                }
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<TensorRef<'a>> {
        vec![
            (format!("{prefix}.gamma"), ParamKind::Shift, &self.gamma[..]),
            (format!("{prefix}.beta"), ParamKind::Shift, &self.beta[..]),
            (format!("{prefix}.running_mean"), ParamKind::Buffer, &self.running_mean[..]),
            (format!("{prefix}.running_var"), ParamKind::Buffer, &self.running_var[..]),
        ]
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<TensorMut<'a>> {
        vec![
            (format!("{prefix}.gamma"), ParamKind::Shift, &mut self.gamma),
            (format!("{prefix}.beta"), ParamKind::Shift, &mut self.beta),
            (format!("{prefix}.running_mean"), ParamKind::Buffer, &mut self.running_mean),
            (format!("{prefix}.running_var"), ParamKind::Buffer, &mut self.running_var),
        ]
    }
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

pub fn relu(mut x: Tensor) -> Tensor {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

/// Gradient through ReLU given the ReLU *output*.
pub fn relu_backward(output: &Tensor, mut dout: Tensor) -> Tensor {
    for (d, &y) in dout.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *d = 0.0;
        }
    }
    dout
}

pub struct PoolCache {
    argmax: Vec<usize>,
    in_len: usize,
}

/// Non-overlapping max pooling; a trailing partial window is dropped.
pub fn max_pool(name: &str, x: &Tensor, size: usize) -> Result<(Tensor, PoolCache)> {
    if size == 0 || x.l < size {
        return Err(shape_err(
            name,
            format!("cannot pool length {} by {size}", x.l),
        ));
    }
    let out_len = x.l / size;
    let mut out = Tensor::zeros(x.n, x.c, out_len);
    let mut argmax = vec![0; out.data.len()];
    for row in 0..x.n * x.c {
        let xin = &x.data[row * x.l..(row + 1) * x.l];
        for t in 0..out_len {
            let win = &xin[t * size..(t + 1) * size];
            let mut best = 0;
            for (j, &v) in win.iter().enumerate().skip(1) {
                if v > win[best] {
                    best = j;
                }
            }
            out.data[row * out_len + t] = win[best];
            argmax[row * out_len + t] = t * size + best;
        }
    }
    Ok((out, PoolCache { argmax, in_len: x.l }))
}

pub fn max_pool_backward(cache: &PoolCache, dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(dout.n, dout.c, cache.in_len);
    for row in 0..dout.n * dout.c {
        for t in 0..dout.l {
            let i = row * dout.l + t;
            dx.data[row * cache.in_len + cache.argmax[i]] += dout.data[i];
        }
    }
    dx
}

/// Mean over the length axis: `(n, c, l) -> (n, c, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.n, x.c, 1);
    for row in 0..x.n * x.c {
        out.data[row] = x.data[row * x.l..(row + 1) * x.l].iter().sum::<f64>() / x.l as f64;
    }
    out
}

pub fn global_avg_pool_backward(dout: &Tensor, in_len: usize) -> Tensor {
    let mut dx = Tensor::zeros(dout.n, dout.c, in_len);
    for row in 0..dout.n * dout.c {
        let g = dout.data[row] / in_len as f64;
        dx.data[row * in_len..(row + 1) * in_len]
            .iter_mut()
            .for_each(|v| *v = g);
    }
    dx
}

// ---------------------------------------------------------------------------
// Dense head
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `(outputs, inputs)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense {
            inputs,
            outputs,
            weight: glorot_uniform(rng, inputs, outputs, inputs * outputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    /// `(n, inputs, 1) -> (n, outputs, 1)`.
    pub fn forward(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        if x.c * x.l != self.inputs {
            return Err(shape_err(
                name,
                format!("expected {} features, got {}", self.inputs, x.c * x.l),
            ));
        }
        let mut out = Tensor::zeros(x.n, self.outputs, 1);
        for b in 0..x.n {
            let xin = x.sample(b);
            for o in 0..self.outputs {
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                out.data[b * self.outputs + o] =
                    self.bias[o] + w.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor, dout: &Tensor, grad: &mut Dense) -> Tensor {
        let mut dx = Tensor::zeros(x.n, x.c, x.l);
        for b in 0..x.n {
            let xin = x.sample(b);
            for o in 0..self.outputs {
                let g = dout.data[b * self.outputs + o];
                grad.bias[o] += g;
                let gw = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
                for (w, &xi) in gw.iter_mut().zip(xin) {
                    *w += g * xi;
                }
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let dxb = &mut dx.data[b * self.inputs..(b + 1) * self.inputs];
                for (d, &wi) in dxb.iter_mut().zip(w) {
                    *d += g * wi;
                }
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<TensorRef<'a>> {
        vec![
            (format!("{prefix}.weight"), ParamKind::Weight, &self.weight[..]),
            (format!("{prefix}.bias"), ParamKind::Shift, &self.bias[..]),
        ]
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<TensorMut<'a>> {
        vec![
            (format!("{prefix}.weight"), ParamKind::Weight, &mut self.weight),
            (format!("{prefix}.bias"), ParamKind::Shift, &mut self.bias),
        ]
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// `log(sum(exp(z)))` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let classes = logits.c * logits.l;
    if labels.len() != logits.n {
        return Err(shape_err(
            "loss",
            format!("{} labels for a batch of {}", labels.len(), logits.n),
        ));
    }
    let mut grad = Tensor::zeros(logits.n, logits.c, logits.l);
    let mut loss = 0.0;
    let inv_n = 1.0 / logits.n as f64;
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(shape_err("loss", format!("label {y} out of {classes} classes")));
        }
        let z = logits.sample(b);
        loss += log_sum_exp(z) - z[y];
        let p = softmax(z);
        for (k, pk) in p.into_iter().enumerate() {
            grad.data[b * classes + k] = (pk - if k == y { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
