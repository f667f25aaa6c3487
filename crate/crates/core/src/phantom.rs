//! Random ellipse phantoms and image loading.
//!
//! Phantoms live on `[-1, 1]^2` mapped onto the pixel grid so that pixel
//! `(i, j)` has centre `((2j + 1)/n - 1, 1 - (2i + 1)/n)`.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::{decode_nimg, decode_pgm, NIMG_MAGIC};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseSpec {
    pub center: (f64, f64),
    /// Semi-axes along the rotated x and y directions.
    pub axes: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

impl EllipseSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let u = (c * dx + s * dy) / self.axes.0;
        let v = (-s * dx + c * dy) / self.axes.1;
        u * u + v * v <= 1.0
    }
}

/// Ranges for the random ellipse parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomParams {
    /// Inclusive range for the number of ellipses.
    pub count: (usize, usize),
    pub center_radius: f64,
    pub axis_range: (f64, f64),
    pub intensity_range: (f64, f64),
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            count: (3, 8),
            center_radius: 0.6,
            axis_range: (0.05, 0.4),
            intensity_range: (0.2, 1.0),
        }
    }
}

impl PhantomParams {
    pub fn with_count(count: (usize, usize)) -> Self {
        Self { count, ..Self::default() }
    }
}

/// Draws ellipses: centres uniform in a disk, semi-axes, rotation and
/// intensity uniform in their ranges.
pub fn random_ellipses<R: Rng>(params: &PhantomParams, rng: &mut R) -> Vec<EllipseSpec> {
    let (lo, hi) = params.count;
    let k = if hi <= lo { lo } else { rng.gen_range(lo..=hi) };
    let uniform = |rng: &mut R, (a, b): (f64, f64)| if b > a { rng.gen_range(a..b) } else { a };
    (0..k)
        .map(|_| {
            let r = params.center_radius * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            EllipseSpec {
                center: (r * theta.cos(), r * theta.sin()),
                axes: (uniform(rng, params.axis_range), uniform(rng, params.axis_range)),
                rotation: rng.gen_range(0.0..std::f64::consts::PI),
                intensity: uniform(rng, params.intensity_range),
            }
        })
        .collect()
}

/// Sum of ellipse intensities at each pixel centre, without clipping or
/// normalization.
pub fn rasterize(n: usize, ellipses: &[EllipseSpec]) -> Tensor<f64> {
    let nf = n as f64;
    Tensor::from_fn(&[n, n], |p| {
        let (i, j) = (p / n, p % n);
        let x = (2.0 * j as f64 + 1.0) / nf - 1.0;
        let y = 1.0 - (2.0 * i as f64 + 1.0) / nf;
        ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum()
    })
}

/// Random phantom in `[0, 1]`: rasterized ellipses, clipped at zero and
/// scaled to maximum one (an empty image stays zero).
pub fn random_phantom_with<R: Rng>(n: usize, params: &PhantomParams, rng: &mut R) -> Tensor<f64> {
    let img = rasterize(n, &random_ellipses(params, rng)).map(|v| v.max(0.0));
    let m = img.max();
    if m > 0.0 {
        img.map(|v| v / m)
    } else {
        img
    }
}

/// Random phantom with `k_range` ellipses and default parameter ranges.
pub fn random_phantom(n: usize, k_range: (usize, usize), seed: u64) -> Tensor<f64> {
    random_phantom_with(n, &PhantomParams::with_count(k_range), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-sample seed derived from a master seed.
pub fn phantom_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng.gen()
}

/// Loads an image from NIMG (verbatim) or 8-bit binary PGM (scaled by
/// `1/maxval`). The format is chosen by the magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f64>> {
    let t = if bytes.starts_with(NIMG_MAGIC) {
        decode_nimg(bytes)?
    } else if bytes.starts_with(b"P") {
        decode_pgm(bytes)?
    } else {
        return Err(Error::Parse {
            offset: 0,
            msg: "expected `NIMG` or `P5` magic".into(),
        });
    };
    match *t.shape() {
        [_, _] => Ok(t),
        [h, w, 1] => t.reshape(&[h, w]),
        _ => Err(Error::invalid("load_image", format!("expected a 2-D image, got shape {:?}", t.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{encode_nimg, encode_pgm};
    use proptest::prelude::*;

    #[test]
    fn no_ellipses_gives_zero_image() {
        assert_eq!(random_phantom(16, (0, 0), 1), Tensor::zeros(&[16, 16]));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = random_phantom(32, (3, 8), 7);
        assert_eq!(a, random_phantom(32, (3, 8), 7));
        assert_ne!(a, random_phantom(32, (3, 8), 8));
        assert_ne!(phantom_seed(1, 0), phantom_seed(1, 1));
        assert_eq!(phantom_seed(1, 5), phantom_seed(1, 5));
    }

    #[test]
    fn centred_disk_matches_indicator_off_the_boundary() {
        let n = 64;
        let r = 0.5;
        let disk = EllipseSpec { center: (0.0, 0.0), axes: (r, r), rotation: 0.3, intensity: 0.7 };
        let img = rasterize(n, &[disk]);
        let h = 2.0 / n as f64;
        let band = h * std::f64::consts::SQRT_2;
        for i in 0..n {
            for j in 0..n {
                let x = -1.0 + (j as f64 + 0.5) * h;
                let y = 1.0 - (i as f64 + 0.5) * h;
                let d = (x * x + y * y).sqrt();
                let v = img.data()[i * n + j];
                if d < r - band {
                    assert_eq!(v, 0.7);
                } else if d > r + band {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn overlaps_add() {
        let e = EllipseSpec { center: (0.0, 0.0), axes: (0.3, 0.3), rotation: 0.0, intensity: 0.25 };
        let img = rasterize(8, &[e, e]);
        assert_eq!(img.max(), 0.5);
    }

    #[test]
    fn rotation_swaps_axes() {
        let e = EllipseSpec { center: (0.0, 0.0), axes: (0.8, 0.2), rotation: std::f64::consts::FRAC_PI_2, intensity: 1.0 };
        assert!(e.contains(0.0, 0.7));
        assert!(!e.contains(0.7, 0.0));
    }

    #[test]
    fn load_pgm_and_nimg() {
        let pgm = b"P5\n2 1\n255\n\xff\x00";
        let t = decode_image(pgm).unwrap();
        assert_eq!(t.shape(), &[1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0]);
        let err = decode_image(b"XX").unwrap_err().to_string();
        assert!(err.contains("byte 0"), "{err}");
        let bad = decode_image(b"P2\n1 1\n255\n0").unwrap_err().to_string();
        assert!(bad.contains("P5"), "{bad}");
        let img = random_phantom(8, (3, 8), 3);
        let mut buf = Vec::new();
        encode_nimg(&img, &mut buf).unwrap();
        assert_eq!(decode_image(&buf).unwrap(), img);
        let q = decode_image(&encode_pgm(&img, false).unwrap()).unwrap();
        assert!(q.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn values_in_unit_interval_and_inside_inscribed_circle(seed in any::<u64>(), n in 8usize..40) {
            let img = random_phantom(n, (3, 8), seed);
            prop_assert!(img.min() >= 0.0 && img.max() <= 1.0);
            prop_assert!(img.max() == 1.0 || img.max() == 0.0);
            for p in 0..n * n {
                let x = (2.0 * (p % n) as f64 + 1.0) / n as f64 - 1.0;
                let y = 1.0 - (2.0 * (p / n) as f64 + 1.0) / n as f64;
                if x * x + y * y > 1.0 {
                    prop_assert_eq!(img.data()[p], 0.0);
                }
            }
        }
    }
}
