//! Tensor operations used by the network layers, plus the adjoint kernels the
//! autodiff tape dispatches to.
//!
//! Spatial operations take `[batch, height, width, channels]` tensors; rank 3
//! (`[h, w, c]`) and rank 2 (`[h, w]`, one channel) inputs are accepted and the
//! result keeps the input's rank convention.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bhwc, image_shape_like, PadSpec, Tensor};

/// Output geometry of a convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad: PadSpec,
    pub stride: usize,
}

pub(crate) fn conv_geom(
    input: &[usize],
    kernel: &[usize],
    pad: PadSpec,
    stride: usize,
) -> Result<ConvGeom> {
    let [b, h, w, ci] = bhwc("conv2d", input)?;
    let &[kh, kw, kci, co] = kernel else {
        return Err(Error::shape("conv2d", "kernel f1 x f2 x cin x cout", format!("{kernel:?}")));
    };
    if kci != ci {
        return Err(Error::shape("conv2d", format!("kernel cin {ci}"), kci));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    let (hp, wp) = (h + pad.rows(), w + pad.cols());
    if hp < kh || wp < kw {
        return Err(Error::shape(
            "conv2d",
            format!("padded input at least {kh}x{kw}"),
            format!("{hp}x{wp}"),
        ));
    }
    if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("non-integral output size for padded {hp}x{wp}, kernel {kh}x{kw}, stride {stride}"),
        ));
    }
    Ok(ConvGeom {
        b,
        h,
        w,
        ci,
        co,
        kh,
        kw,
        ho: (hp - kh) / stride + 1,
        wo: (wp - kw) / stride + 1,
        pad,
        stride,
    })
}

impl ConvGeom {
    /// Input row for output row `o` and kernel row `k`, if inside the image.
    #[inline]
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad.top).filter(|&r| r < self.h)
    }

    #[inline]
    fn in_col(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad.left).filter(|&c| c < self.w)
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `kernel` has shape `f1 x f2 x cin x cout`; the output has spatial size
/// `(H + pad_rows - f1) / stride + 1` (exact division required).
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, pad: PadSpec, stride: usize) -> Result<Tensor<T>> {
    let g = conv_geom(input.shape(), kernel.shape(), pad, stride)?;
    let mut out = vec![T::zero(); g.b * g.ho * g.wo * g.co];
    let x = input.data();
    let k = kernel.data();
    for b in 0..g.b {
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let o0 = ((b * g.ho + oh) * g.wo + ow) * g.co;
                let acc = &mut out[o0..o0 + g.co];
                for dh in 0..g.kh {
                    let Some(ih) = g.in_row(oh, dh) else { continue };
                    for dw in 0..g.kw {
                        let Some(iw) = g.in_col(ow, dw) else { continue };
                        let i0 = ((b * g.h + ih) * g.w + iw) * g.ci;
                        let k0 = (dh * g.kw + dw) * g.ci * g.co;
                        for (ci, &xv) in x[i0..i0 + g.ci].iter().enumerate() {
                            if xv == T::zero() {
                                continue;
                            }
                            let krow = &k[k0 + ci * g.co..k0 + (ci + 1) * g.co];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&image_shape_like(input.shape(), g.b, g.ho, g.wo, g.co), out)
}

/// Adjoint of [`conv2d`] with respect to its input.
pub(crate) fn conv2d_grad_input<T: Scalar>(
    g: &ConvGeom,
    kernel: &[T],
    grad_out: &[T],
) -> Vec<T> {
    // kernel transposed to f1 x f2 x cout x cin so the inner loop runs over cin
    let mut kt = vec![T::zero(); kernel.len()];
    for tap in 0..g.kh * g.kw {
        let base = tap * g.ci * g.co;
        for ci in 0..g.ci {
            for co in 0..g.co {
                kt[base + co * g.ci + ci] = kernel[base + ci * g.co + co];
            }
        }
    }
    let mut din = vec![T::zero(); g.b * g.h * g.w * g.ci];
    for b in 0..g.b {
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let o0 = ((b * g.ho + oh) * g.wo + ow) * g.co;
                let go = &grad_out[o0..o0 + g.co];
                if go.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                for dh in 0..g.kh {
                    let Some(ih) = g.in_row(oh, dh) else { continue };
                    for dw in 0..g.kw {
                        let Some(iw) = g.in_col(ow, dw) else { continue };
                        let i0 = ((b * g.h + ih) * g.w + iw) * g.ci;
                        let k0 = (dh * g.kw + dw) * g.ci * g.co;
                        let acc = &mut din[i0..i0 + g.ci];
                        for (co, &gv) in go.iter().enumerate() {
                            if gv == T::zero() {
                                continue;
                            }
                            let krow = &kt[k0 + co * g.ci..k0 + (co + 1) * g.ci];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a += gv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

/// Adjoint of [`conv2d`] with respect to its kernel.
pub(crate) fn conv2d_grad_kernel<T: Scalar>(g: &ConvGeom, input: &[T], grad_out: &[T]) -> Vec<T> {
    let mut dk = vec![T::zero(); g.kh * g.kw * g.ci * g.co];
    for b in 0..g.b {
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let o0 = ((b * g.ho + oh) * g.wo + ow) * g.co;
                let go = &grad_out[o0..o0 + g.co];
                for dh in 0..g.kh {
                    let Some(ih) = g.in_row(oh, dh) else { continue };
                    for dw in 0..g.kw {
                        let Some(iw) = g.in_col(ow, dw) else { continue };
                        let i0 = ((b * g.h + ih) * g.w + iw) * g.ci;
                        let k0 = (dh * g.kw + dw) * g.ci * g.co;
                        for (ci, &xv) in input[i0..i0 + g.ci].iter().enumerate() {
                            if xv == T::zero() {
                                continue;
                            }
                            let row = &mut dk[k0 + ci * g.co..k0 + (ci + 1) * g.co];
                            for (a, &gv) in row.iter_mut().zip(go) {
                                *a += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    dk
}

/// Embeds the input into a larger zero image.
pub fn zero_pad<T: Scalar>(input: &Tensor<T>, pad: PadSpec) -> Result<Tensor<T>> {
    let [b, h, w, c] = bhwc("zero_pad", input.shape())?;
    let (hp, wp) = (h + pad.rows(), w + pad.cols());
    let mut out = vec![T::zero(); b * hp * wp * c];
    let x = input.data();
    for bi in 0..b {
        for r in 0..h {
            let src = ((bi * h + r) * w) * c;
            let dst = ((bi * hp + r + pad.top) * wp + pad.left) * c;
            out[dst..dst + w * c].copy_from_slice(&x[src..src + w * c]);
        }
    }
    Tensor::new(&image_shape_like(input.shape(), b, hp, wp, c), out)
}

/// Inverse of [`zero_pad`]: drops the padded border. Also the adjoint of padding.
pub(crate) fn crop<T: Scalar>(padded: &[T], b: usize, h: usize, w: usize, c: usize, pad: PadSpec) -> Vec<T> {
    let wp = w + pad.cols();
    let hp = h + pad.rows();
    let mut out = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for r in 0..h {
            let src = ((bi * hp + r + pad.top) * wp + pad.left) * c;
            out.extend_from_slice(&padded[src..src + w * c]);
        }
    }
    out
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// 2x2 max pooling over disjoint blocks. Ties go to the first entry in
/// row-major order within the block.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(maxpool2_with_argmax(input)?.0)
}

pub(crate) fn maxpool2_with_argmax<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, h, w, c] = bhwc("maxpool2", input.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("maxpool2", "even spatial dims", format!("{h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * ho * wo * c);
    let mut arg = Vec::with_capacity(b * ho * wo * c);
    for bi in 0..b {
        for r in 0..ho {
            for col in 0..wo {
                for ch in 0..c {
                    let idx = |dr: usize, dc: usize| ((bi * h + 2 * r + dr) * w + 2 * col + dc) * c + ch;
                    let mut best = idx(0, 0);
                    for cand in [idx(0, 1), idx(1, 0), idx(1, 1)] {
                        if x[cand] > x[best] {
                            best = cand;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(&image_shape_like(input.shape(), b, ho, wo, c), out)?, arg))
}

/// Nearest-neighbour 2x enlargement: every pixel becomes a 2x2 block.
pub fn upsample_nn<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, h, w, c] = bhwc("upsample_nn", input.shape())?;
    let (ho, wo) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![T::zero(); b * ho * wo * c];
    for bi in 0..b {
        for r in 0..ho {
            for col in 0..wo {
                let src = ((bi * h + r / 2) * w + col / 2) * c;
                let dst = ((bi * ho + r) * wo + col) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    Tensor::new(&image_shape_like(input.shape(), b, ho, wo, c), out)
}

/// Adjoint of [`upsample_nn`]: sums each 2x2 block.
pub(crate) fn upsample_nn_adjoint<T: Scalar>(grad: &[T], b: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); b * h * w * c];
    for bi in 0..b {
        for r in 0..ho {
            for col in 0..wo {
                let src = ((bi * ho + r) * wo + col) * c;
                let dst = ((bi * h + r / 2) * w + col / 2) * c;
                for ch in 0..c {
                    out[dst + ch] += grad[src + ch];
                }
            }
        }
    }
    out
}

/// Concatenates along the last axis, `z` first. All leading dimensions must
/// agree (spatial dims for images, batch for flat vectors).
pub fn concat<T: Scalar>(z: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (zs, xs) = (z.shape(), x.shape());
    if zs.len() != xs.len() || zs.is_empty() || zs[..zs.len() - 1] != xs[..xs.len() - 1] {
        return Err(Error::shape("concat", format!("{zs:?} leading dims"), format!("{xs:?}")));
    }
    let (cz, cx) = (zs[zs.len() - 1], xs[xs.len() - 1]);
    let rows: usize = zs[..zs.len() - 1].iter().product();
    let mut out = Vec::with_capacity(rows * (cz + cx));
    for r in 0..rows {
        out.extend_from_slice(&z.data()[r * cz..(r + 1) * cz]);
        out.extend_from_slice(&x.data()[r * cx..(r + 1) * cx]);
    }
    let mut shape = zs.to_vec();
    *shape.last_mut().unwrap() = cz + cx;
    Tensor::new(&shape, out)
}

/// Splits the last axis at `at`; the inverse of [`concat`].
pub fn split_last<T: Scalar>(t: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = t.shape();
    let c = *s.last().ok_or_else(|| Error::shape("split_last", "rank >= 1", "rank 0"))?;
    if at > c {
        return Err(Error::shape("split_last", format!("split <= {c}"), at));
    }
    let rows = t.len() / c.max(1);
    let (mut a, mut b) = (Vec::with_capacity(rows * at), Vec::with_capacity(rows * (c - at)));
    for r in 0..rows {
        a.extend_from_slice(&t.data()[r * c..r * c + at]);
        b.extend_from_slice(&t.data()[r * c + at..(r + 1) * c]);
    }
    let mut sa = s.to_vec();
    let mut sb = s.to_vec();
    *sa.last_mut().unwrap() = at;
    *sb.last_mut().unwrap() = c - at;
    Ok((Tensor::new(&sa, a)?, Tensor::new(&sb, b)?))
}

/// Per-channel (last axis) mean and biased variance over all other axes.
pub fn channel_stats<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = *x.shape().last().ok_or_else(|| Error::shape("channel_stats", "rank >= 1", "rank 0"))?;
    if x.is_empty() {
        return Err(Error::invalid("channel_stats", "empty batch"));
    }
    let n = x.len() / c;
    let nf = T::from_usize_lossy(n);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= nf);
    Ok((Tensor::new(&[c], mean)?, Tensor::new(&[c], var)?))
}

/// `(x - mean) / sqrt(var + eps)` per channel with fixed statistics.
pub(crate) fn normalize_with<T: Scalar>(x: &Tensor<T>, mean: &[T], var: &[T], eps: T) -> Result<Tensor<T>> {
    let c = *x.shape().last().unwrap_or(&0);
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batchnorm", format!("{c} channel statistics"), mean.len()));
    }
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ((v, &m), &s) in row.iter_mut().zip(mean).zip(&inv) {
            *v = (*v - m) * s;
        }
    }
    Ok(out)
}

/// `x * scale + shift` per channel (last axis).
pub(crate) fn channel_affine<T: Scalar>(x: &Tensor<T>, scale: Option<&[T]>, shift: Option<&[T]>) -> Tensor<T> {
    let c = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        if let Some(s) = scale {
            row.iter_mut().zip(s).for_each(|(v, &g)| *v *= g);
        }
        if let Some(b) = shift {
            if b.len() == 1 {
                row.iter_mut().for_each(|v| *v += b[0]);
            } else {
                row.iter_mut().zip(b).for_each(|(v, &g)| *v += g);
            }
        }
    }
    out
}

/// Batch normalization in training mode.
///
/// The samples are normalized with the per-channel mean and variance of the
/// whole batch, then scaled by `gamma` and shifted by `beta`. Returns the
/// normalized samples together with the statistics that were used.
pub fn batchnorm_train<T: Scalar>(
    batch: &[Tensor<T>],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Vec<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let first = batch.first().ok_or_else(|| Error::invalid("batchnorm_train", "empty batch"))?;
    let mut stacked = Vec::with_capacity(first.len() * batch.len());
    for t in batch {
        first.expect_same_shape("batchnorm_train", t)?;
        stacked.extend_from_slice(t.data());
    }
    let c = *first.shape().last().unwrap_or(&1);
    let stacked = Tensor::new(&[stacked.len() / c, c], stacked)?;
    let (mean, var) = channel_stats(&stacked)?;
    check_channels("batchnorm_train", c, gamma, beta)?;
    let normed = normalize_with(&stacked, mean.data(), var.data(), eps)?;
    let out = channel_affine(&normed, Some(gamma.data()), Some(beta.data()));
    let per = first.len();
    let samples = out
        .data()
        .chunks_exact(per)
        .map(|chunk| Tensor::new(first.shape(), chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, mean, var))
}

/// Batch normalization with frozen population statistics: an affine map.
pub fn batchnorm_infer<T: Scalar>(
    u: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    pop_mean: &Tensor<T>,
    pop_var: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let c = *u.shape().last().unwrap_or(&1);
    check_channels("batchnorm_infer", c, gamma, beta)?;
    let normed = normalize_with(u, pop_mean.data(), pop_var.data(), eps)?;
    Ok(channel_affine(&normed, Some(gamma.data()), Some(beta.data())))
}

fn check_channels<T: Scalar>(op: &'static str, c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(op, format!("gamma/beta of length {c}"), format!("{}/{}", gamma.len(), beta.len())));
    }
    Ok(())
}
