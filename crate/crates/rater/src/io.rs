//! Binary parameter file: magic `RATR`, version, length-prefixed JSON
//! descriptor, then named tensors until end of file.

use std::path::Path;

use arbor_core::config::RaterConfig;
use arbor_core::util::{write_atomic, ByteReader, ByteWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{RaterParams, Topology};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"RATR";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    topology: Topology,
    hyper: RaterConfig,
}

pub fn write_params<T: Real>(params: &RaterParams<T>) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let desc = Descriptor {
        topology: params.topology.clone(),
        hyper: params.hyper.clone(),
    };
    w.prefixed(&serde_json::to_vec(&desc).map_err(arbor_core::Error::from)?);
    for t in &params.tensors {
        w.prefixed(t.name.as_bytes());
        w.u8(T::DTYPE);
        w.u8(t.dims.len() as u8);
        for &d in &t.dims {
            w.u32(d as u32);
        }
        T::write_le(&t.data, &mut w.buf);
    }
    Ok(w.buf)
}

/// Decode into `T`, converting if the file stores the other precision.
pub fn read_params<T: Real>(bytes: &[u8]) -> Result<RaterParams<T>> {
    let mut r = ByteReader::new(bytes, "rater parameter file");
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let desc: Descriptor =
        serde_json::from_slice(r.prefixed()?).map_err(|e| Error::Format(format!("descriptor: {e}")))?;
    let mut tensors = Vec::new();
    while r.remaining() > 0 {
        let name = String::from_utf8(r.prefixed()?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<arbor_core::Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
        let data: Vec<T> = match dtype {
            0 => r.f32s(n)?.into_iter().map(|v| T::of(v as f64)).collect(),
            1 => r.f64s(n)?.into_iter().map(T::of).collect(),
            other => return Err(Error::Format(format!("{name}: unknown dtype {other}"))),
        };
        tensors.push((name, dims, data));
    }
    RaterParams::from_tensors(desc.topology, desc.hyper, tensors)
}

pub fn save_params<T: Real>(path: &Path, params: &RaterParams<T>) -> Result<()> {
    Ok(write_atomic(path, &write_params(params)?)?)
}

pub fn load_params(path: &Path) -> Result<RaterParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| arbor_core::Error::io(path, e))?;
    read_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RaterConfig {
        RaterConfig {
            resolution: 4,
            channels: vec![2, 3],
            head_channels: 2,
            mlp_hidden: 3,
            ..RaterConfig::default()
        }
    }

    #[test]
    fn round_trip_both_precisions() {
        let p = RaterParams::<f32>::init(&small(), 3).unwrap();
        assert_eq!(read_params::<f32>(&write_params(&p).unwrap()).unwrap(), p);
        let q = p.cast::<f64>();
        assert_eq!(read_params::<f64>(&write_params(&q).unwrap()).unwrap(), q);
        assert_eq!(read_params::<f32>(&write_params(&q).unwrap()).unwrap(), p);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = RaterParams::<f32>::init(&small(), 3).unwrap();
        let bytes = write_params(&p).unwrap();
        assert!(read_params::<f32>(&bytes[..bytes.len() - 3]).is_err());
        assert!(read_params::<f32>(b"RATX\x01\0\0\0").is_err());
        // drop the last tensor entirely: shapes no longer match the topology
        let last = p.tensors.last().unwrap();
        let tail = 4 + last.name.len() + 2 + 4 * last.dims.len() + 4 * last.data.len();
        assert!(matches!(read_params::<f32>(&bytes[..bytes.len() - tail]), Err(Error::Shape(_))));
    }
}
