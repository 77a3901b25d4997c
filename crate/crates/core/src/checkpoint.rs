//! "HGE1" tensor container shared by the shape model and the policies.
//!
//! Layout (little-endian): magic `HGE1`, `u32` tensor count, one
//! `(u32 rows, u32 cols)` pair per tensor, then every tensor's `f64`
//! values in order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, ParamSet};

pub const MAGIC: &[u8; 4] = b"HGE1";

/// A tensor read back from a container.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn write_params<W: Write, P: ParamSet + ?Sized>(mut w: W, params: &P) -> Result<()> {
    let shapes = params.shapes();
    w.write_all(MAGIC)?;
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for (r, c) in &shapes {
        w.write_all(&(*r as u32).to_le_bytes())?;
        w.write_all(&(*c as u32).to_le_bytes())?;
    }
    for t in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes<P: ParamSet + ?Sized>(params: &P) -> Vec<u8> {
    let mut out = Vec::new();
    write_params(&mut out, params).expect("writing to a Vec cannot fail");
    out
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        shapes.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format(format!("truncated data for {rows}x{cols} tensor")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { rows, cols, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    Ok(tensors)
}

/// Overwrites `params` with the container contents; shapes must match exactly.
pub fn load_into<P: ParamSet + ?Sized>(params: &mut P, tensors: &[Tensor]) -> Result<()> {
    let shapes = params.shapes();
    if shapes.len() != tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, found {}",
            shapes.len(),
            tensors.len()
        )));
    }
    for (i, (s, t)) in shapes.iter().zip(tensors).enumerate() {
        if *s != (t.rows, t.cols) {
            return Err(Error::Format(format!("tensor {i}: expected {s:?}, found {}x{}", t.rows, t.cols)));
        }
    }
    for (dst, t) in params.tensors_mut().into_iter().zip(tensors) {
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn save<P: ParamSet + ?Sized>(path: impl AsRef<Path>, params: &P) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    read_tensors(fs::read(path)?.as_slice())
}

/// Rebuilds one linear layer from a `(weight, bias)` tensor pair.
pub(crate) fn linear_from(w: &Tensor, b: &Tensor) -> Result<Linear> {
    if b.rows != w.cols || b.cols != 1 {
        return Err(Error::Format(format!(
            "bias {}x{} does not match weight {}x{}",
            b.rows, b.cols, w.rows, w.cols
        )));
    }
    Ok(Linear {
        weight: DMatrix::from_column_slice(w.rows, w.cols, &w.data),
        bias: DVector::from_column_slice(&b.data),
    })
}

/// Rebuilds an MLP from consecutive `(weight, bias)` pairs.
pub(crate) fn mlp_from(tensors: &[Tensor], relu_output: bool) -> Result<Mlp> {
    if tensors.is_empty() || tensors.len() % 2 != 0 {
        return Err(Error::Format("MLP needs (weight, bias) pairs".into()));
    }
    let layers = tensors
        .chunks_exact(2)
        .map(|p| linear_from(&p[0], &p[1]))
        .collect::<Result<Vec<_>>>()?;
    for pair in layers.windows(2) {
        if pair[0].output_dim() != pair[1].input_dim() {
            return Err(Error::Format("MLP layer widths do not chain".into()));
        }
    }
    Ok(Mlp { layers, relu_output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::init(&[3, 5, 2], false, &mut rng);
        let bytes = to_bytes(&mlp);
        assert_eq!(&bytes[..4], b"HGE1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        let tensors = read_tensors(bytes.as_slice()).unwrap();
        let mut copy = Mlp::zeros(&[3, 5, 2], false);
        load_into(&mut copy, &tensors).unwrap();
        assert_eq!(copy, mlp);
        assert_eq!(mlp_from(&tensors, false).unwrap(), mlp);
        // Header plus 15+5+10+2 values.
        assert_eq!(bytes.len(), 8 + 4 * 8 + 32 * 8);
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(&[2, 2], false, &mut rng);
        let bytes = to_bytes(&mlp);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensors(bad.as_slice()), Err(Error::Format(_))));
        assert!(read_tensors(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_tensors(long.as_slice()).is_err());
        let tensors = read_tensors(bytes.as_slice()).unwrap();
        let mut wrong = Mlp::zeros(&[2, 3], false);
        assert!(load_into(&mut wrong, &tensors).is_err());
    }
}
