//! Model checkpoints.
//!
//! ```text
//! b"STSB" | version u8 | kind u8 | config_len u32 | config JSON
//!        | count u32 | per tensor: name_len u16 | name | rows u32 | cols u32 | dtype u8 | f64 LE data
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sts_core::container::{Kind, MAGIC, VERSION};

use crate::causal::CausalLm;
use crate::model::MultiScaleModel;
use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::LmError;

const DTYPE_F64: u8 = 2;

pub fn write_checkpoint<C: Serialize>(
    w: &mut impl Write,
    kind: Kind,
    config: &C,
    store: &ParamStore,
) -> Result<(), LmError> {
    let json = serde_json::to_vec(config).map_err(|e| LmError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, kind as u8])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let m = store.value(id);
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        w.write_all(&(m.cols as u32).to_le_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        let mut buf = Vec::with_capacity(m.len() * 8);
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, LmError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<C: DeserializeOwned>(r: &mut impl Read, kind: Kind) -> Result<(C, ParamStore), LmError> {
    let bad = |m: String| LmError::Checkpoint(m);
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    if head[4] != VERSION {
        return Err(bad(format!("unsupported version {}", head[4])));
    }
    if head[5] != kind as u8 {
        return Err(bad(format!("expected kind {kind:?}, found {}", head[5])));
    }
    let n = read_u32(r)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let config = serde_json::from_slice(&json).map_err(|e| bad(format!("config: {e}")))?;
    let count = read_u32(r)?;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let mut b = [0u8; 2];
        r.read_exact(&mut b)?;
        let mut name = vec![0u8; u16::from_le_bytes(b) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not utf-8".into()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let mut dt = [0u8; 1];
        r.read_exact(&mut dt)?;
        if dt[0] != DTYPE_F64 {
            return Err(bad(format!("tensor {name} has dtype {}", dt[0])));
        }
        let mut raw = vec![0u8; rows * cols * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if store.find(&name).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        store.add(name, Mat::from_vec(rows, cols, data));
    }
    Ok((config, store))
}

impl MultiScaleModel {
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut w, Kind::LmCheckpoint, &self.cfg, &self.store)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let (cfg, store) = read_checkpoint(&mut r, Kind::LmCheckpoint)?;
        Self::from_parts(cfg, store)
    }
}

impl CausalLm {
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut w, Kind::TranslatorCheckpoint, &self.cfg, &self.store)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let (cfg, store) = read_checkpoint(&mut r, Kind::TranslatorCheckpoint)?;
        Self::from_parts(cfg, store)
    }
}
