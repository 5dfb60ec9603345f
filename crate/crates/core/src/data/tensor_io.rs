//! `.mmt` tensor files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MMT1"
//! 4       1           version (1)
//! 5       1           rank r (0..=4)
//! 6       4 * r       dims, u32 little-endian
//! 6+4r    4 * prod    values, f32 little-endian IEEE-754
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"MMT1";
pub const TENSOR_VERSION: u8 = 1;
pub const MAX_RANK: usize = 4;

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() > MAX_RANK {
        return Err(Error::dim(format!(
            "tensor rank {} exceeds the file format maximum {MAX_RANK}",
            t.rank()
        )));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::dim(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, base: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < *pos + n {
        return Err(Error::Format {
            offset: base + bytes.len(),
            msg: format!("truncated {what}: need {n} bytes at offset {}, file ends", base + *pos),
        });
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

/// Decodes one tensor from the front of `bytes`, returning it and the bytes consumed.
/// `base` is added to reported offsets when the tensor sits inside a larger file.
pub fn decode_tensor(bytes: &[u8], base: usize) -> Result<(Tensor, usize)> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4, base, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format {
            offset: base,
            msg: format!("bad magic {magic:02x?}"),
        });
    }
    let version = take(bytes, &mut pos, 1, base, "version")?[0];
    if version != TENSOR_VERSION {
        return Err(Error::Version {
            found: version,
            expected: TENSOR_VERSION,
        });
    }
    let rank = take(bytes, &mut pos, 1, base, "rank")?[0] as usize;
    if rank > MAX_RANK {
        return Err(Error::Format {
            offset: base + 5,
            msg: format!("rank {rank} exceeds {MAX_RANK}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = base + pos;
        let b = take(bytes, &mut pos, 4, base, "dimension")?;
        let d = u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: at,
                msg: "zero dimension".into(),
            });
        }
        shape.push(d);
    }
    let n: usize = shape.iter().product();
    let raw = take(bytes, &mut pos, 4 * n, base, "values")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let t = if rank == 0 {
        Tensor::new(vec![1], data)?
    } else {
        Tensor::new(shape, data)?
    };
    Ok((t, pos))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode_tensor(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used,
            msg: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(t)
}
