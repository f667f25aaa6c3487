//! Parallel-beam projection operator, its adjoint, ART (Kaczmarz) and the
//! multiplicative Gaussian noise model.
//!
//! Geometry: unit pixels on an `n x n` grid centred at the origin. Pixel
//! `(i, j)` (row `i` from the top, column `j` from the left) has centre
//! `(j - n/2 + 1/2, n/2 - i - 1/2)`. The ray for detector offset `s` and
//! angle `phi` is `{ s (cos phi, sin phi) + t (-sin phi, cos phi) }`. Angles
//! are uniform on `[0, pi)`; detectors are centred and span the image
//! diagonal. Sinograms are `[n_det, n_views]` tensors, so measurement `i`
//! is `det * n_views + view`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sparse row-wise system matrix of the discrete Radon transform.
#[derive(Clone, Debug)]
pub struct ProjectionOperator<T> {
    n: usize,
    n_det: usize,
    n_views: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<T>,
    row_norm_sq: Vec<T>,
}

/// Pixels crossed by the line at offset `s` and angle `phi`, with the
/// intersection lengths, in traversal order.
pub fn ray_row(n: usize, s: f64, phi: f64) -> Vec<(usize, f64)> {
    let half = n as f64 / 2.0;
    let (c, sn) = (phi.cos(), phi.sin());
    let (px, py) = (s * c, s * sn);
    let (ux, uy) = (-sn, c);
    const TINY: f64 = 1e-12;

    // parameter interval inside the square [-half, half]^2
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (p, u) in [(px, ux), (py, uy)] {
        if u.abs() < TINY {
            if p < -half || p > half {
                return Vec::new();
            }
        } else {
            let (a, b) = ((-half - p) / u, (half - p) / u);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if !(hi - lo > TINY) {
        return Vec::new();
    }

    // grid-line crossings, merged and sorted
    let mut ts = vec![lo, hi];
    for (p, u) in [(px, ux), (py, uy)] {
        if u.abs() < TINY {
            continue;
        }
        for k in 0..=n {
            let t = (k as f64 - half - p) / u;
            if t > lo && t < hi {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out = Vec::with_capacity(2 * n);
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        if len <= TINY {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let (mx, my) = (px + tm * ux, py + tm * uy);
        let j = ((mx + half).floor().max(0.0) as usize).min(n - 1);
        let i = ((half - my).floor().max(0.0) as usize).min(n - 1);
        out.push((i * n + j, len));
    }
    out
}

impl<T: Scalar> ProjectionOperator<T> {
    /// Exact ray-pixel intersection lengths for `n_det * n_views` rays.
    pub fn new(n: usize, n_det: usize, n_views: usize) -> Result<Self> {
        if n == 0 || n_det == 0 || n_views == 0 {
            return Err(Error::invalid("ProjectionOperator::new", "n, n_det and n_views must be positive"));
        }
        let ds = detector_spacing(n, n_det);
        let angles = view_angles(n_views);
        let mut row_ptr = Vec::with_capacity(n_det * n_views + 1);
        row_ptr.push(0);
        let (mut cols, mut vals, mut row_norm_sq) = (Vec::new(), Vec::new(), Vec::with_capacity(n_det * n_views));
        for d in 0..n_det {
            let s = (d as f64 - (n_det as f64 - 1.0) / 2.0) * ds;
            for &phi in &angles {
                let mut nsq = 0.0;
                for (col, len) in ray_row(n, s, phi) {
                    cols.push(col as u32);
                    vals.push(T::lit(len));
                    nsq += len * len;
                }
                row_norm_sq.push(T::lit(nsq));
                row_ptr.push(cols.len());
            }
        }
        Ok(Self {
            n,
            n_det,
            n_views,
            row_ptr,
            cols,
            vals,
            row_norm_sq,
        })
    }

    pub fn image_size(&self) -> usize {
        self.n
    }

    /// `N = n^2`.
    pub fn num_pixels(&self) -> usize {
        self.n * self.n
    }

    /// `M = n_det * n_views`.
    pub fn num_rows(&self) -> usize {
        self.n_det * self.n_views
    }

    pub fn sinogram_shape(&self) -> [usize; 2] {
        [self.n_det, self.n_views]
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `i` as `(pixel, length)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&c, &v)| (c as usize, v))
    }

    fn check(&self, op: &'static str, t: &Tensor<T>, want: usize) -> Result<()> {
        if t.len() != want {
            return Err(Error::shape(op, format!("{want} entries"), format!("{:?}", t.shape())));
        }
        Ok(())
    }

    /// `F x` as an `[n_det, n_views]` sinogram.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check("apply", x, self.num_pixels())?;
        let xd = x.data();
        let out = (0..self.num_rows())
            .map(|i| {
                let r = self.row_ptr[i]..self.row_ptr[i + 1];
                self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&c, &v)| v * xd[c as usize]).sum()
            })
            .collect();
        Tensor::new(&[self.n_det, self.n_views], out)
    }

    /// `F^T y` as an `[n, n]` image.
    pub fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check("apply_adjoint", y, self.num_rows())?;
        let mut out = vec![T::zero(); self.num_pixels()];
        for (i, &yi) in y.data().iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            for (&c, &v) in self.cols[r.clone()].iter().zip(&self.vals[r]) {
                out[c as usize] += v * yi;
            }
        }
        Tensor::new(&[self.n, self.n], out)
    }

    /// One Kaczmarz sweep over all rows in index order, in place. Rows that
    /// miss the image are skipped.
    pub fn art_sweep(&self, y: &Tensor<T>, x: &mut Tensor<T>) -> Result<()> {
        self.check("art_sweep", y, self.num_rows())?;
        self.check("art_sweep", x, self.num_pixels())?;
        let xd = x.data_mut();
        for (i, &yi) in y.data().iter().enumerate() {
            let nsq = self.row_norm_sq[i];
            if nsq == T::zero() {
                continue;
            }
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let (cols, vals) = (&self.cols[r.clone()], &self.vals[r]);
            let dot: T = cols.iter().zip(vals).map(|(&c, &v)| v * xd[c as usize]).sum();
            let step = (yi - dot) / nsq;
            for (&c, &v) in cols.iter().zip(vals) {
                xd[c as usize] += step * v;
            }
        }
        Ok(())
    }

    /// `rounds` ART sweeps from the constant image `1/N`.
    pub fn pseudo_inverse(&self, y: &Tensor<T>, rounds: usize) -> Result<Tensor<T>> {
        let mut x = self.uniform_image();
        for _ in 0..rounds {
            self.art_sweep(y, &mut x)?;
        }
        Ok(x)
    }

    /// Constant image with entries `1/N`.
    pub fn uniform_image(&self) -> Tensor<T> {
        Tensor::full(&[self.n, self.n], T::one() / T::from_usize_lossy(self.num_pixels()))
    }

    /// Dense `M x N` matrix, row-major. Intended for small test problems.
    pub fn to_dense(&self) -> Vec<T> {
        let n = self.num_pixels();
        let mut out = vec![T::zero(); self.num_rows() * n];
        for i in 0..self.num_rows() {
            for (c, v) in self.row(i) {
                out[i * n + c] = v;
            }
        }
        out
    }
}

/// Detector spacing for a span equal to the image diagonal.
pub fn detector_spacing(n: usize, n_det: usize) -> f64 {
    n as f64 * std::f64::consts::SQRT_2 / n_det as f64
}

/// `n_views` angles `k pi / n_views`.
pub fn view_angles(n_views: usize) -> Vec<f64> {
    (0..n_views).map(|k| k as f64 * std::f64::consts::PI / n_views as f64).collect()
}

/// Normalized data norm `|y|_2 / sqrt(M)`.
pub fn norm_y<T: Scalar>(y: &Tensor<T>) -> T {
    if y.is_empty() {
        return T::zero();
    }
    y.norm() / T::from_usize_lossy(y.len()).sqrt()
}

/// `y_i (1 + level g_i)` with i.i.d. standard normal `g_i`, and the exact
/// noise norm `norm_y(y_delta - y)`.
pub fn add_noise<T: Scalar, R: Rng>(y: &Tensor<T>, level: f64, rng: &mut R) -> Result<(Tensor<T>, T)> {
    if !(level >= 0.0) {
        return Err(Error::invalid("add_noise", format!("noise level {level} must be nonnegative")));
    }
    let lv = T::lit(level);
    let data = y
        .data()
        .iter()
        .map(|&v| {
            let g: f64 = StandardNormal.sample(rng);
            v * (T::one() + lv * T::lit(g))
        })
        .collect();
    let noisy = Tensor::new(y.shape(), data)?;
    let delta = norm_y(&noisy.sub(y)?);
    Ok((noisy, delta))
}
