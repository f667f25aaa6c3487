//! On-disk tensor and image formats.
//!
//! NIMG layout: magic `NIMG`, `u8` version (1), `u8` rank, `rank` little-endian
//! `u32` dimensions, then the values as little-endian `f64`, row-major.
//!
//! PGM support covers binary 8-bit greymaps (`P5`, maxval ≤ 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NIMG_MAGIC: &[u8; 4] = b"NIMG";
pub const NIMG_VERSION: u8 = 1;

pub fn encode_nimg<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::invalid("encode_nimg", format!("rank {} exceeds 255", t.rank())));
    }
    out.extend_from_slice(NIMG_MAGIC);
    out.push(NIMG_VERSION);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::invalid("encode_nimg", format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.len() * 8);
    for v in t.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    Ok(())
}

/// Byte cursor that reports the offset of the first malformed field.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                msg: format!("truncated input while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let at = self.pos;
        let got = self.take(magic.len(), "magic")?;
        if got != magic {
            return Err(Error::Parse {
                offset: at,
                msg: format!(
                    "bad magic: expected `{}`, found `{}`",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub(crate) fn read_nimg<T: Scalar>(r: &mut Reader<'_>) -> Result<Tensor<T>> {
    r.expect_magic(NIMG_MAGIC)?;
    let at = r.pos;
    let version = r.u8("version")?;
    if version != NIMG_VERSION {
        return Err(Error::Parse {
            offset: at,
            msg: format!("unsupported NIMG version {version}"),
        });
    }
    let rank = r.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("dimension")? as usize);
    }
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Parse {
        offset: r.pos,
        msg: "element count overflows".into(),
    })?;
    let at = r.pos;
    let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX), "values")?;
    let mut data = Vec::with_capacity(n);
    for (i, chunk) in raw.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: at + 8 * i,
                msg: "non-finite value".into(),
            });
        }
        data.push(T::lit(v));
    }
    Tensor::new(&shape, data)
}

pub fn decode_nimg<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader::new(bytes);
    let t = read_nimg(&mut r)?;
    if !r.is_done() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: "trailing bytes after tensor".into(),
        });
    }
    Ok(t)
}

pub fn save_nimg<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode_nimg(t, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_nimg<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_nimg(&fs::read(path)?)
}

/// Quantizes `t` (rank 2, values nominally in `[0, 1]`) to an 8-bit binary PGM.
/// Values are clamped to `[0, 1]` unless `normalize` requests min-max scaling.
pub fn encode_pgm<T: Scalar>(t: &Tensor<T>, normalize: bool) -> Result<Vec<u8>> {
    let (h, w) = match *t.shape() {
        [h, w] | [h, w, 1] => (h, w),
        _ => return Err(Error::shape("encode_pgm", "[h, w] image", format!("{:?}", t.shape()))),
    };
    let (lo, hi) = if normalize { (t.min().as_f64(), t.max().as_f64()) } else { (0.0, 1.0) };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|v| {
        let s = ((v.as_f64() - lo) / span).clamp(0.0, 1.0);
        (s * 255.0).round() as u8
    }));
    Ok(out)
}

/// Parses an 8-bit binary PGM into an `[h, w]` tensor scaled by its maxval.
pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(b"P5")?;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        fields[i] = pgm_header_int(&mut r, name)?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse {
            offset: r.pos,
            msg: format!("unsupported maxval {maxval}; only 8-bit greymaps are read"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    r.take(1, "header terminator")?;
    let raw = r.take(w * h, "raster")?;
    let scale = T::one() / T::from_usize_lossy(maxval);
    Tensor::new(&[h, w], raw.iter().map(|&b| T::from_usize_lossy(b as usize) * scale).collect())
}

fn pgm_header_int(r: &mut Reader<'_>, name: &str) -> Result<usize> {
    // skip whitespace and comments
    loop {
        let save = r.pos;
        let b = r.u8(name)?;
        if b == b'#' {
            while r.u8(name)? != b'\n' {}
        } else if !b.is_ascii_whitespace() {
            r.pos = save;
            break;
        }
    }
    let start = r.pos;
    let mut v: usize = 0;
    while r.pos < r.bytes.len() && r.bytes[r.pos].is_ascii_digit() {
        v = v
            .checked_mul(10)
            .and_then(|v| v.checked_add((r.bytes[r.pos] - b'0') as usize))
            .ok_or(Error::Parse {
                offset: start,
                msg: format!("{name} overflows"),
            })?;
        r.pos += 1;
    }
    if r.pos == start {
        return Err(Error::Parse {
            offset: start,
            msg: format!("expected decimal {name}"),
        });
    }
    Ok(v)
}

pub fn save_pgm<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>, normalize: bool) -> Result<()> {
    fs::write(path, encode_pgm(t, normalize)?)?;
    Ok(())
}
