//! Image quality metrics and the method comparison table.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_dims(op: &'static str, t: &Tensor<f64>) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] | [h, w, 1] => Ok((h, w)),
        _ => Err(Error::shape(op, "[h, w] image", format!("{:?}", t.shape()))),
    }
}

fn check_pair(op: &'static str, x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<()> {
    if x.len() != reference.len() || image_dims(op, x)? != image_dims(op, reference)? {
        return Err(Error::shape(op, format!("{:?}", reference.shape()), format!("{:?}", x.shape())));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::shape("mse", format!("{:?}", reference.shape()), format!("{:?}", x.shape())));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = x.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len() as f64)
}

/// Dynamic range `max - min`, or 1 for a constant image.
fn dynamic_range(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// `10 log10(peak^2 / mse)` with `peak = max(ref) - min(ref)`. Identical
/// images give `+inf`.
pub fn psnr(x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<f64> {
    check_pair("psnr", x, reference)?;
    let e = mse(x, &reference.reshaped(x.shape())?)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = dynamic_range(reference.min(), reference.max());
    Ok(10.0 * (peak * peak / e).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RangeMode {
    /// Dynamic range of the reference image.
    #[default]
    Reference,
    /// Dynamic range of both images together.
    Joint,
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean structural similarity over all fully contained 11x11 Gaussian
/// windows (sigma 1.5, K1 = 0.01, K2 = 0.03).
pub fn ssim(x: &Tensor<f64>, reference: &Tensor<f64>, mode: RangeMode) -> Result<f64> {
    check_pair("ssim", x, reference)?;
    let (h, w) = image_dims("ssim", x)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid("ssim", format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let l = match mode {
        RangeMode::Reference => dynamic_range(reference.min(), reference.max()),
        RangeMode::Joint => dynamic_range(x.min().min(reference.min()), x.max().max(reference.max())),
    };
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let win = gaussian_window();
    let (xd, yd) = (x.data(), reference.data());
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..SSIM_WINDOW {
                let row = (i + a) * w + j;
                for b in 0..SSIM_WINDOW {
                    let k = win[a * SSIM_WINDOW + b];
                    let (u, v) = (xd[row + b], yd[row + b]);
                    mx += k * u;
                    my += k * v;
                    sxx += k * u * u;
                    syy += k * v * v;
                    sxy += k * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// One row of a method comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn evaluate(method: impl Into<String>, x: &Tensor<f64>, reference: &Tensor<f64>) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            psnr: psnr(x, reference)?,
            ssim: ssim(x, reference, RangeMode::Reference)?,
        })
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

/// Aligned text table with columns `Method`, `PSNR`, `SSIM`.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).chain(["Method".len()]).max().unwrap_or(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>8}  {:>6}", "Method", "PSNR", "SSIM");
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>6.4}", r.method, fmt_psnr(r.psnr), r.ssim);
    }
    s
}

/// CSV with header `method,psnr,ssim`.
pub fn write_table_csv(rows: &[MetricsRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "method,psnr,ssim")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.method, fmt_psnr(r.psnr), r.ssim)?;
    }
    Ok(())
}
