//! Forward and backward kernels for the closed-world layer set.
//!
//! Convolution runs as im2col + GEMM with the reduction over
//! (channel, kernel row, kernel column) — kernel-major — so results
//! are reproducible for fixed shapes.

use super::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Output spatial extent of a conv/pool axis.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidInput("kernel and stride must be >= 1".into()));
    }
    if padded < kernel {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} exceeds padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv2d_out_shape(
    x: Shape,
    w: Shape,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Shape> {
    if x.c() != w.c() {
        return Err(Error::ShapeMismatch(format!(
            "input channels {} vs kernel channels {}",
            x.c(),
            w.c()
        )));
    }
    let ho = out_extent(x.h(), w.h(), stride.0, padding.0)?;
    let wo = out_extent(x.w(), w.w(), stride.1, padding.1)?;
    Ok(Shape([x.n(), w.n(), ho, wo]))
}

/// Unfold one batch item into (C·kh·kw) x (Ho·Wo), zero-padding out
/// of bounds.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    ho: usize,
    wo: usize,
    cols: &mut [E],
) {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    debug_assert_eq!(cols.len(), c * kh * kw * ho * wo);
    let mut row = 0usize;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let seg = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(E::ZERO);
                        continue;
                    }
                    let src_row = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    if sw == 1 {
                        // contiguous copy with clamped edges
                        let ix0 = kx as isize - pw as isize;
                        let lo = (-ix0).max(0) as usize;
                        let hi = ((w as isize - ix0).max(0) as usize).min(wo);
                        seg[..lo.min(wo)].fill(E::ZERO);
                        if hi > lo {
                            seg[lo..hi]
                                .copy_from_slice(&src_row[(ix0 + lo as isize) as usize..][..hi - lo]);
                        }
                        if hi < wo {
                            seg[hi..].fill(E::ZERO);
                        }
                    } else {
                        for (ox, slot) in seg.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            *slot = if ix < 0 || ix >= w as isize {
                                E::ZERO
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add the column gradient back onto the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Element>(
    cols: &[E],
    c: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    ho: usize,
    wo: usize,
    dx: &mut [E],
) {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    let mut row = 0usize;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut dx[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let seg = &src[oy * wo..(oy + 1) * wo];
                    if sw == 1 {
                        let ix0 = kx as isize - pw as isize;
                        let lo = (-ix0).max(0) as usize;
                        let hi = ((w as isize - ix0).max(0) as usize).min(wo);
                        if hi > lo {
                            let dst = &mut dst_row[(ix0 + lo as isize) as usize..][..hi - lo];
                            for (d, s) in dst.iter_mut().zip(&seg[lo..hi]) {
                                *d += *s;
                            }
                        }
                    } else {
                        for (ox, &v) in seg.iter().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation with optional per-output-channel bias.
pub fn conv2d_forward<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<E>> {
    let out_shape = conv2d_out_shape(x.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape().count() != weight.shape().n() {
            return Err(Error::ShapeMismatch("bias length vs output channels".into()));
        }
    }
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let (cout, kh, kw) = (weight.shape().n(), weight.shape().h(), weight.shape().w());
    let (ho, wo) = (out_shape.h(), out_shape.w());
    let ckk = c * kh * kw;
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![E::ZERO; ckk * ho * wo];
    for ni in 0..n {
        let x_n = &x.data()[ni * c * h * w..(ni + 1) * c * h * w];
        im2col(x_n, c, h, w, (kh, kw), stride, padding, ho, wo, &mut cols);
        let out_n = &mut out.data_mut()[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
        E::gemm(
            cout,
            ckk,
            ho * wo,
            1.0,
            weight.data(),
            false,
            &cols,
            false,
            0.0,
            out_n,
        );
        if let Some(b) = bias {
            for co in 0..cout {
                let bv = b.data()[co];
                for v in &mut out_n[co * ho * wo..(co + 1) * ho * wo] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Row-major transpose of an (rows x cols) slice into `dst`.
fn transpose_into<E: Element>(src: &[E], rows: usize, cols: usize, dst: &mut [E]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                let row = &src[r * cols..];
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = row[c];
                }
            }
        }
    }
}

/// Gradients of `conv2d_forward` for input, weight and bias. Operands
/// are materialized row-major so every GEMM runs on packed inputs.
pub fn conv2d_backward<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    has_bias: bool,
    stride: (usize, usize),
    padding: (usize, usize),
    dout: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Option<Tensor<E>>)> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let (cout, kh, kw) = (weight.shape().n(), weight.shape().h(), weight.shape().w());
    let (ho, wo) = (dout.shape().h(), dout.shape().w());
    let ckk = c * kh * kw;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = has_bias.then(|| Tensor::zeros(Shape([1, cout, 1, 1])));
    let mut cols = vec![E::ZERO; ckk * ho * wo];
    let mut cols_t = vec![E::ZERO; ckk * ho * wo];
    let mut dcols = vec![E::ZERO; ckk * ho * wo];
    let mut weight_t = vec![E::ZERO; ckk * cout];
    transpose_into(weight.data(), cout, ckk, &mut weight_t);
    for ni in 0..n {
        let x_n = &x.data()[ni * c * h * w..(ni + 1) * c * h * w];
        let dout_n = &dout.data()[ni * cout * ho * wo..(ni + 1) * cout * ho * wo];
        im2col(x_n, c, h, w, (kh, kw), stride, padding, ho, wo, &mut cols);
        transpose_into(&cols, ckk, ho * wo, &mut cols_t);
        // dW += dOut · colsᵀ
        E::gemm(
            cout,
            ho * wo,
            ckk,
            1.0,
            dout_n,
            false,
            &cols_t,
            false,
            1.0,
            dw.data_mut(),
        );
        // dcols = Wᵀ · dOut
        E::gemm(
            ckk,
            cout,
            ho * wo,
            1.0,
            &weight_t,
            false,
            dout_n,
            false,
            0.0,
            &mut dcols,
        );
        let dx_n = &mut dx.data_mut()[ni * c * h * w..(ni + 1) * c * h * w];
        col2im_add(&dcols, c, h, w, (kh, kw), stride, padding, ho, wo, dx_n);
        if let Some(db) = db.as_mut() {
            for co in 0..cout {
                let mut acc = 0.0f64;
                for v in &dout_n[co * ho * wo..(co + 1) * ho * wo] {
                    acc += v.to_f64();
                }
                let slot = &mut db.data_mut()[co];
                *slot += E::from_f64(acc);
            }
        }
    }
    Ok((dx, dw, db))
}

/// Saved statistics from a train-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BnSaved<E: Element> {
    pub mean: Vec<E>,
    pub inv_std: Vec<E>,
}

/// Train-mode batch normalization (biased batch variance), returning
/// the statistics needed for backward and for the running update.
pub fn bn_train_forward<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnSaved<E>, Vec<f64>)> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    if n * h * w == 0 {
        return Err(Error::InvalidInput("batch norm over zero elements".into()));
    }
    if gamma.shape().count() != c || beta.shape().count() != c {
        return Err(Error::ShapeMismatch("batch norm parameter shapes".into()));
    }
    let m = (n * h * w) as f64;
    let mut mean = vec![E::ZERO; c];
    let mut inv_std = vec![E::ZERO; c];
    let mut biased_var = vec![0.0f64; c];
    let plane = h * w;
    for ci in 0..c {
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for v in &x.data()[base..base + plane] {
                let v = v.to_f64();
                sum += v;
                sum_sq += v * v;
            }
        }
        let mu = sum / m;
        let var = (sum_sq / m - mu * mu).max(0.0);
        mean[ci] = E::from_f64(mu);
        inv_std[ci] = E::from_f64(1.0 / (var + eps).sqrt());
        biased_var[ci] = var;
    }
    let mut y = Tensor::zeros(x.shape());
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            // y = s·x + t with per-channel constants
            let s = gamma.data()[ci] * inv_std[ci];
            let t = beta.data()[ci] - s * mean[ci];
            for (yv, xv) in y.data_mut()[base..base + plane]
                .iter_mut()
                .zip(&x.data()[base..base + plane])
            {
                *yv = s * *xv + t;
            }
        }
    }
    Ok((y, BnSaved { mean, inv_std }, biased_var))
}

/// Eval-mode batch normalization using running statistics.
pub fn bn_eval_forward<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    if gamma.shape().count() != c || beta.shape().count() != c || running_mean.len() != c
        || running_var.len() != c
    {
        return Err(Error::ShapeMismatch("batch norm parameter shapes".into()));
    }
    let plane = h * w;
    let mut y = Tensor::zeros(x.shape());
    for ci in 0..c {
        let istd = 1.0 / (running_var[ci] + eps).sqrt();
        let s = gamma.data()[ci] * E::from_f64(istd);
        let t = beta.data()[ci] - s * E::from_f64(running_mean[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for (yv, xv) in y.data_mut()[base..base + plane]
                .iter_mut()
                .zip(&x.data()[base..base + plane])
            {
                *yv = s * *xv + t;
            }
        }
    }
    Ok(y)
}

/// Backward of train-mode batch norm.
pub fn bn_train_backward<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    saved: &BnSaved<E>,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(Shape([1, c, 1, 1]));
    let mut dbeta = Tensor::zeros(Shape([1, c, 1, 1]));
    for ci in 0..c {
        let mu = saved.mean[ci].to_f64();
        let istd = saved.inv_std[ci].to_f64();
        let g = gamma.data()[ci].to_f64();
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for (xv, dv) in x.data()[base..base + plane]
                .iter()
                .zip(&dy.data()[base..base + plane])
            {
                let xhat = (xv.to_f64() - mu) * istd;
                sum_dy += dv.to_f64();
                sum_dy_xhat += dv.to_f64() * xhat;
            }
        }
        dgamma.data_mut()[ci] = E::from_f64(sum_dy_xhat);
        dbeta.data_mut()[ci] = E::from_f64(sum_dy);
        // dx = a·dy + b·x + t with per-channel constants:
        // dx = g·istd/m·(m·dy - Σdy - x̂·Σ(dy·x̂)), x̂ = (x-μ)·istd
        let a = E::from_f64(g * istd);
        let b = E::from_f64(-g * istd * istd * sum_dy_xhat / m);
        let t = E::from_f64(g * istd / m * (-sum_dy + mu * istd * sum_dy_xhat));
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for ((dxv, dyv), xv) in dx.data_mut()[base..base + plane]
                .iter_mut()
                .zip(&dy.data()[base..base + plane])
                .zip(&x.data()[base..base + plane])
            {
                *dxv = a * *dyv + b * *xv + t;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward of eval-mode batch norm (running statistics are constants).
pub fn bn_eval_backward<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let plane = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(Shape([1, c, 1, 1]));
    let mut dbeta = Tensor::zeros(Shape([1, c, 1, 1]));
    for ci in 0..c {
        let mu = running_mean[ci];
        let istd = 1.0 / (running_var[ci] + eps).sqrt();
        let g = gamma.data()[ci].to_f64();
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for k in 0..plane {
                let dyv = dy.data()[base + k].to_f64();
                let xhat = (x.data()[base + k].to_f64() - mu) * istd;
                sum_dy += dyv;
                sum_dy_xhat += dyv * xhat;
                dx.data_mut()[base + k] = E::from_f64(dyv * g * istd);
            }
        }
        dgamma.data_mut()[ci] = E::from_f64(sum_dy_xhat);
        dbeta.data_mut()[ci] = E::from_f64(sum_dy);
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < E::ZERO {
            *v = E::ZERO;
        }
    }
    y
}

pub fn relu_backward<E: Element>(x: &Tensor<E>, dy: &Tensor<E>) -> Tensor<E> {
    let mut dx = Tensor::zeros(x.shape());
    for ((dv, xv), dyv) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
        if *xv > E::ZERO {
            *dv = *dyv;
        }
    }
    dx
}

/// Window max with argmax routing. Ties resolve to the first element
/// in row-major window order; padded positions never win.
pub fn maxpool2d_forward<E: Element>(
    x: &Tensor<E>,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor<E>, Vec<u32>)> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let ho = out_extent(h, kernel.0, stride.0, padding.0)?;
    let wo = out_extent(w, kernel.1, stride.1, padding.1)?;
    let mut y = Tensor::zeros(Shape([n, c, ho, wo]));
    let mut argmax = vec![0u32; n * c * ho * wo];
    // valid input-row span per output row, shared across channels
    let row_span: Vec<(usize, usize)> = (0..ho)
        .map(|oy| {
            let start = oy * stride.0;
            let lo = start.max(padding.0) - padding.0;
            let hi = (start + kernel.0).saturating_sub(padding.0).min(h);
            (lo, hi)
        })
        .collect();
    let mut oi = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..ho {
                let (iy_lo, iy_hi) = row_span[oy];
                if iy_lo >= iy_hi {
                    return Err(Error::InvalidInput(
                        "pooling window has no valid element".into(),
                    ));
                }
                for ox in 0..wo {
                    let wstart = ox * stride.1;
                    let ix_lo = wstart.max(padding.1) - padding.1;
                    let ix_hi = (wstart + kernel.1).saturating_sub(padding.1).min(w);
                    if ix_lo >= ix_hi {
                        return Err(Error::InvalidInput(
                            "pooling window has no valid element".into(),
                        ));
                    }
                    let mut best_v = x.data()[base + iy_lo * w + ix_lo];
                    let mut best_i = base + iy_lo * w + ix_lo;
                    for iy in iy_lo..iy_hi {
                        let row = base + iy * w;
                        for idx in row + ix_lo..row + ix_hi {
                            let v = x.data()[idx];
                            if v > best_v {
                                best_v = v;
                                best_i = idx;
                            }
                        }
                    }
                    y.data_mut()[oi] = best_v;
                    argmax[oi] = best_i as u32;
                    oi += 1;
                }
            }
        }
    }
    Ok((y, argmax))
}

pub fn maxpool2d_backward<E: Element>(
    x_shape: Shape,
    argmax: &[u32],
    dy: &Tensor<E>,
) -> Tensor<E> {
    let mut dx = Tensor::zeros(x_shape);
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[idx as usize] += g;
    }
    dx
}

pub fn add_forward<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "residual add {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut y = a.clone();
    for (yv, bv) in y.data_mut().iter_mut().zip(b.data()) {
        *yv += *bv;
    }
    Ok(y)
}

/// Mean squared error over the masked column span of (n, 1, 1, w)
/// tensors. Gradient is 2(pred-target)/(n·|mask|) inside the mask and
/// exactly zero elsewhere.
pub fn mse_masked_forward<E: Element>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    mask: (usize, usize),
) -> Result<E> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch("loss shapes differ".into()));
    }
    let (n, c, h, w) = (
        pred.shape().n(),
        pred.shape().c(),
        pred.shape().h(),
        pred.shape().w(),
    );
    if c != 1 || h != 1 {
        return Err(Error::ShapeMismatch("loss expects (n,1,1,w) tensors".into()));
    }
    if mask.0 >= mask.1 || mask.1 > w {
        return Err(Error::InvalidInput(format!(
            "empty or out-of-range loss mask {}..{} for width {w}",
            mask.0, mask.1
        )));
    }
    let span = mask.1 - mask.0;
    let mut acc = 0.0f64;
    for ni in 0..n {
        let base = ni * w;
        for k in mask.0..mask.1 {
            let d = pred.data()[base + k].to_f64() - target.data()[base + k].to_f64();
            acc += d * d;
        }
    }
    Ok(E::from_f64(acc / (n * span) as f64))
}

pub fn mse_masked_backward<E: Element>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    mask: (usize, usize),
    upstream: E,
) -> Tensor<E> {
    let (n, w) = (pred.shape().n(), pred.shape().w());
    let span = mask.1 - mask.0;
    let scale = upstream.to_f64() * 2.0 / (n * span) as f64;
    let mut dx = Tensor::zeros(pred.shape());
    for ni in 0..n {
        let base = ni * w;
        for k in mask.0..mask.1 {
            let d = pred.data()[base + k].to_f64() - target.data()[base + k].to_f64();
            dx.data_mut()[base + k] = E::from_f64(scale * d);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_conv_is_identity() {
        let x = Tensor::from_vec(
            Shape([1, 1, 3, 4]),
            (0..12).map(|i| i as f64).collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(Shape([1, 1, 1, 1]), vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &w, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_3x3_conv_sums_window() {
        let x = Tensor::from_vec(Shape([1, 1, 3, 3]), vec![1.0f64; 9]).unwrap();
        let w = Tensor::from_vec(Shape([1, 1, 3, 3]), vec![1.0f64; 9]).unwrap();
        let y = conv2d_forward(&x, &w, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(y.shape(), Shape([1, 1, 1, 1]));
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn conv_bias_broadcasts_per_channel() {
        let x = Tensor::from_vec(Shape([1, 1, 2, 2]), vec![0.0f64; 4]).unwrap();
        let w = Tensor::from_vec(Shape([2, 1, 1, 1]), vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(Shape([1, 2, 1, 1]), vec![0.5, -1.5]).unwrap();
        let y = conv2d_forward(&x, &w, Some(&b), (1, 1), (0, 0)).unwrap();
        assert_eq!(&y.data()[..4], &[0.5; 4]);
        assert_eq!(&y.data()[4..], &[-1.5; 4]);
    }

    #[test]
    fn conv_stride_and_padding_shapes() {
        // stem-like: 71 -> 36 with k=7, s=2, p=3; width preserved
        let x = Tensor::<f32>::zeros(Shape([1, 1, 71, 55]));
        let w = Tensor::<f32>::zeros(Shape([16, 1, 7, 7]));
        let s = conv2d_out_shape(x.shape(), w.shape(), (2, 1), (3, 3)).unwrap();
        assert_eq!(s, Shape([1, 16, 36, 55]));
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let x = Tensor::from_vec(
            Shape([2, 2, 1, 3]),
            vec![1.0f64, 2.0, 3.0, 10.0, 20.0, 30.0, 4.0, 5.0, 6.0, 40.0, 50.0, 60.0],
        )
        .unwrap();
        let gamma = Tensor::full(Shape([1, 2, 1, 1]), 1.0f64);
        let beta = Tensor::zeros(Shape([1, 2, 1, 1]));
        let (y, _, _) = bn_train_forward(&x, &gamma, &beta, 1e-5).unwrap();
        for ci in 0..2 {
            let mut mean = 0.0;
            let mut var = 0.0;
            let mut vals = vec![];
            for ni in 0..2 {
                for k in 0..3 {
                    vals.push(y.at(ni, ci, 0, k));
                }
            }
            for &v in &vals {
                mean += v / 6.0;
            }
            for &v in &vals {
                var += (v - mean) * (v - mean) / 6.0;
            }
            assert!(mean.abs() < 1e-6, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ci} var {var}");
        }
    }

    #[test]
    fn bn_eval_identity_with_unit_stats() {
        let x = Tensor::from_vec(Shape([1, 1, 1, 4]), vec![0.5f64, -1.0, 2.0, 0.0]).unwrap();
        let gamma = Tensor::full(Shape([1, 1, 1, 1]), 1.0f64);
        let beta = Tensor::zeros(Shape([1, 1, 1, 1]));
        let y = bn_eval_forward(&x, &gamma, &beta, &[0.0], &[1.0], 1e-5).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(Shape([1, 1, 1, 3]), vec![-1.0f64, 0.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(
            Shape([1, 1, 2, 4]),
            vec![1.0f64, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 1.0],
        )
        .unwrap();
        let (y, argmax) = maxpool2d_forward(&x, (2, 2), (2, 2), (0, 0)).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let dy = Tensor::from_vec(Shape([1, 1, 1, 2]), vec![1.0f64, 2.0]).unwrap();
        let dx = maxpool2d_backward(x.shape(), &argmax, &dy);
        let mut expect = vec![0.0f64; 8];
        expect[1] = 1.0;
        expect[6] = 2.0;
        assert_eq!(dx.data(), &expect[..]);
    }

    #[test]
    fn mse_masked_ignores_unmasked_columns() {
        let pred =
            Tensor::from_vec(Shape([1, 1, 1, 5]), vec![9.0f64, 1.0, 2.0, 3.0, -9.0]).unwrap();
        let target =
            Tensor::from_vec(Shape([1, 1, 1, 5]), vec![0.0f64, 1.0, 2.0, 3.0, 0.0]).unwrap();
        let loss = mse_masked_forward(&pred, &target, (1, 4)).unwrap();
        assert_eq!(loss, 0.0);
        // uniform difference d over mask -> d²
        let pred2 =
            Tensor::from_vec(Shape([1, 1, 1, 5]), vec![0.0f64, 1.5, 2.5, 3.5, 0.0]).unwrap();
        let loss2 = mse_masked_forward(&pred2, &target, (1, 4)).unwrap();
        assert!((loss2 - 0.25).abs() < 1e-12);
        let dx = mse_masked_backward(&pred2, &target, (1, 4), 1.0);
        assert_eq!(dx.data()[0], 0.0);
        assert_eq!(dx.data()[4], 0.0);
        for k in 1..4 {
            assert!((dx.data()[k] - 2.0 * 0.5 / 3.0).abs() < 1e-12);
        }
        assert!(mse_masked_forward(&pred, &target, (3, 3)).is_err());
    }
}
