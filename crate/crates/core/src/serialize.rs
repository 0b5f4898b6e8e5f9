//! Binary parameter file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "KKTGMODL"
//! version     u32
//! spec_hash   u64
//! n_groups    u32
//! per group:  name_len u16, name (utf-8), offset u64, len u64, rows u32, cols u32
//! n_values    u64
//! values      n_values × f64
//! ```

use crate::models::{GroupInfo, ModelError, ParameterVector};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"KKTGMODL";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec_hash: u64,
    pub params: ParameterVector,
}

pub fn write_model<W: Write>(mut w: W, spec_hash: u64, params: &ParameterVector) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&spec_hash.to_le_bytes())?;
    w.write_all(&(params.groups().len() as u32).to_le_bytes())?;
    for g in params.groups() {
        let name = g.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(g.offset as u64).to_le_bytes())?;
        w.write_all(&(g.len as u64).to_le_bytes())?;
        w.write_all(&(g.rows as u32).to_le_bytes())?;
        w.write_all(&(g.cols as u32).to_le_bytes())?;
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], SerializeError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => SerializeError::Corrupt("truncated".into()),
        _ => SerializeError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelFile, SerializeError> {
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(SerializeError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(SerializeError::Version(version));
    }
    let spec_hash = u64::from_le_bytes(take(&mut r)?);
    let n_groups = u32::from_le_bytes(take(&mut r)?) as usize;
    if n_groups > 4096 {
        return Err(SerializeError::Corrupt(format!("{n_groups} groups")));
    }
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let name_len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| SerializeError::Corrupt("truncated group name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| SerializeError::Corrupt("group name is not utf-8".into()))?;
        groups.push(GroupInfo {
            name,
            offset: u64::from_le_bytes(take(&mut r)?) as usize,
            len: u64::from_le_bytes(take(&mut r)?) as usize,
            rows: u32::from_le_bytes(take(&mut r)?) as usize,
            cols: u32::from_le_bytes(take(&mut r)?) as usize,
        });
    }
    let n_values = u64::from_le_bytes(take(&mut r)?) as usize;
    let declared: usize = groups.iter().map(|g| g.len).sum();
    if n_values != declared {
        return Err(SerializeError::Corrupt(format!(
            "{n_values} values but groups declare {declared}"
        )));
    }
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        values.push(f64::from_le_bytes(take(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SerializeError::Corrupt("trailing bytes".into()));
    }
    let params = ParameterVector::with_groups(groups, values)?;
    Ok(ModelFile { spec_hash, params })
}

pub fn save_model(
    path: &Path,
    spec_hash: u64,
    params: &ParameterVector,
) -> Result<(), SerializeError> {
    let f = File::create(path)?;
    write_model(BufWriter::new(f), spec_hash, params)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile, SerializeError> {
    read_model(BufReader::new(File::open(path)?))
}
