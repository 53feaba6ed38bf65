//! Binary weight files.
//!
//! Layout: magic `QSCW`, format version, dimension header (embed width,
//! rounds, hidden width, feature dims), then every tensor as row-major
//! little-endian f64 in declaration order. Round-trips are exact.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::scorer::ScorerParams;
use crate::heuristics::{CTR_FEATURE_DIM, VAR_FEATURE_DIM};

const MAGIC: &[u8; 4] = b"QSCW";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("incompatible weight file: {0}")]
    VersionMismatch(String),
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
}

pub fn save_params(params: &ScorerParams, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let mut w = io::BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for dim in [
        VERSION,
        params.embed_dim as u32,
        params.rounds as u32,
        params.hidden as u32,
        VAR_FEATURE_DIM as u32,
        CTR_FEATURE_DIM as u32,
    ] {
        w.write_all(&dim.to_le_bytes())?;
    }
    for tensor in params.tensors() {
        for &x in tensor {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, WeightsError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| WeightsError::Corrupt("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ScorerParams, WeightsError> {
    let mut r = io::BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| WeightsError::Corrupt("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(WeightsError::VersionMismatch("not a weight file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(WeightsError::VersionMismatch(format!(
            "format version {version}, expected {VERSION}"
        )));
    }
    let embed_dim = read_u32(&mut r)? as usize;
    let rounds = read_u32(&mut r)? as usize;
    let hidden = read_u32(&mut r)? as usize;
    let var_dim = read_u32(&mut r)? as usize;
    let ctr_dim = read_u32(&mut r)? as usize;
    if var_dim != VAR_FEATURE_DIM || ctr_dim != CTR_FEATURE_DIM {
        return Err(WeightsError::VersionMismatch(format!(
            "feature dims {var_dim}/{ctr_dim}, expected {VAR_FEATURE_DIM}/{CTR_FEATURE_DIM}"
        )));
    }
    if embed_dim == 0 || rounds == 0 || hidden == 0 {
        return Err(WeightsError::Corrupt("zero dimension in header".into()));
    }
    let mut params = ScorerParams::init(embed_dim, rounds, hidden, 0).zeros_like();
    for tensor in params.tensors_mut() {
        let mut buf = [0u8; 8];
        for x in tensor.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| WeightsError::Corrupt("truncated tensor data".into()))?;
            *x = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => Ok(params),
        _ => Err(WeightsError::Corrupt("trailing bytes after tensors".into())),
    }
}
