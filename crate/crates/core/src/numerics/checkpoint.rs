//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes  "DGCNCKPT"
//! version     u32      1
//! precision   u8       4 (f32) or 8 (f64)
//! config_hash 32 bytes SHA-256 of the model configuration
//! count       u32      number of parameters
//! count × { name_len u32, name utf-8, ndim u32, dims u64 × ndim,
//!           values × product(dims) in the stored precision }
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::ParamStore;
use super::tensor::{Precision, Real, Tensor};
use super::NumericsError;

const MAGIC: &[u8; 8] = b"DGCNCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub precision: Precision,
    pub config_hash: [u8; 32],
    pub params: ParamStore<T>,
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut out: W,
    params: &ParamStore<T>,
    config_hash: &[u8; 32],
) -> Result<(), NumericsError> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u8(T::PRECISION.byte_width() as u8)?;
    out.write_all(config_hash)?;
    out.write_u32::<LittleEndian>(params.len() as u32)?;
    for (_, name, tensor) in params.iter() {
        out.write_u32::<LittleEndian>(name.len() as u32)?;
        out.write_all(name.as_bytes())?;
        out.write_u32::<LittleEndian>(tensor.shape().len() as u32)?;
        for &d in tensor.shape() {
            out.write_u64::<LittleEndian>(d as u64)?;
        }
        for v in tensor.values() {
            match T::PRECISION {
                Precision::F32 => out.write_f32::<LittleEndian>(v.as_f64() as f32)?,
                Precision::F64 => out.write_f64::<LittleEndian>(v.as_f64())?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a checkpoint, converting stored values to `T` if the precisions differ.
pub fn read_checkpoint<T: Real, R: Read>(mut input: R) -> Result<Checkpoint<T>, NumericsError> {
    let bad = |m: &str| NumericsError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!("unsupported version {version}")));
    }
    let precision = match input.read_u8()? {
        4 => Precision::F32,
        8 => Precision::F64,
        other => return Err(NumericsError::Checkpoint(format!("bad precision tag {other}"))),
    };
    let mut config_hash = [0u8; 32];
    input.read_exact(&mut config_hash)?;
    let count = input.read_u32::<LittleEndian>()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = input.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not utf-8"))?;
        let ndim = input.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(input.read_u64::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = match precision {
                Precision::F32 => input.read_f32::<LittleEndian>()? as f64,
                Precision::F64 => input.read_f64::<LittleEndian>()?,
            };
            values.push(T::from_f64_lossy(v));
        }
        params.add(&name, Tensor::new(shape, values)?)?;
    }
    Ok(Checkpoint {
        precision,
        config_hash,
        params,
    })
}
