//! NCKPT parameter checkpoints: magic `NCKP`, `u8` version, `u32` count,
//! then per parameter a `u16` name length, the UTF-8 name, a `u8` frozen
//! flag and an embedded NIMG tensor. Integers are little-endian.

use std::fs;
use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::formats::{encode_nimg, read_nimg, Reader};
use crate::scalar::Scalar;

pub const NCKPT_MAGIC: &[u8; 4] = b"NCKP";
pub const NCKPT_VERSION: u8 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &ParamSet<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(NCKPT_MAGIC);
    out.push(NCKPT_VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (id, p) in params.iter() {
        let name = id.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid("encode_checkpoint", format!("parameter name `{id}` too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.frozen as u8);
        encode_nimg(&p.tensor, &mut out)?;
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ParamSet<T>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(NCKPT_MAGIC)?;
    let at = r.pos;
    let version = r.u8("version")?;
    if version != NCKPT_VERSION {
        return Err(Error::Parse {
            offset: at,
            msg: format!("unsupported NCKPT version {version}"),
        });
    }
    let count = r.u32("parameter count")?;
    let mut ps = ParamSet::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| Error::Parse {
            offset: at,
            msg: "parameter name is not UTF-8".into(),
        })?;
        let name = name.to_string();
        let at = r.pos;
        let frozen = match r.u8("frozen flag")? {
            0 => false,
            1 => true,
            f => {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("frozen flag must be 0 or 1, found {f}"),
                })
            }
        };
        if ps.contains(&name) {
            return Err(Error::Parse {
                offset: at,
                msg: format!("duplicate parameter `{name}`"),
            });
        }
        let t = read_nimg(&mut r)?;
        ps.insert(name, t, frozen);
    }
    if !r.is_done() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: "trailing bytes after checkpoint".into(),
        });
    }
    Ok(ps)
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, params: &ParamSet<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamSet<T>> {
    decode_checkpoint(&fs::read(path)?)
}
