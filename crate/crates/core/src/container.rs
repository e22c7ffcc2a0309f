//! Versioned binary container for matrices, contours, codebooks and tokens.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"STSB" | version u8 | kind u8 | dtype u8 | ndim u8 | nmeta u8
//!        | dims: u32 * ndim | meta: u32 * nmeta | row-major payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"STSB";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("unexpected container kind {found:?}, expected {expected:?}")]
    WrongKind { expected: Kind, found: u8 },
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Features = 1,
    PitchContour = 2,
    SemanticCodebook = 3,
    RvqCodec = 4,
    Tokens = 5,
    LmCheckpoint = 6,
    TranslatorCheckpoint = 7,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::I32(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub shape: Vec<usize>,
    pub meta: Vec<u32>,
    pub payload: Payload,
}

impl Container {
    pub fn new(kind: Kind, shape: Vec<usize>, meta: Vec<u32>, payload: Payload) -> Result<Self, ContainerError> {
        let expected: usize = shape.iter().product();
        if expected != payload.len() {
            return Err(ContainerError::Malformed(format!(
                "shape {shape:?} needs {expected} values, payload has {}",
                payload.len()
            )));
        }
        Ok(Self { kind, shape, meta, payload })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ContainerError> {
        if self.shape.len() > u8::MAX as usize || self.meta.len() > u8::MAX as usize {
            return Err(ContainerError::Malformed("too many dimensions".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION, self.kind as u8, self.payload.dtype(), self.shape.len() as u8, self.meta.len() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &m in &self.meta {
            w.write_all(&m.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.payload.len() * 4);
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Payload::I32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read, expected: Kind) -> Result<Self, ContainerError> {
        let mut head = [0u8; 9];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        if head[4] != VERSION {
            return Err(ContainerError::Version(head[4]));
        }
        if head[5] != expected as u8 {
            return Err(ContainerError::WrongKind { expected, found: head[5] });
        }
        let (dtype, ndim, nmeta) = (head[6], head[7] as usize, head[8] as usize);
        let mut word = [0u8; 4];
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let mut meta = Vec::with_capacity(nmeta);
        for _ in 0..nmeta {
            r.read_exact(&mut word)?;
            meta.push(u32::from_le_bytes(word));
        }
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)?;
        let words = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let payload = match dtype {
            0 => Payload::F32(words.map(f32::from_le_bytes).collect()),
            1 => Payload::I32(words.map(i32::from_le_bytes).collect()),
            other => return Err(ContainerError::Malformed(format!("unknown dtype {other}"))),
        };
        Ok(Self { kind: expected, shape, meta, payload })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected: Kind) -> Result<Self, ContainerError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file), expected)
    }

    pub fn into_f32(self) -> Result<Vec<f32>, ContainerError> {
        match self.payload {
            Payload::F32(v) => Ok(v),
            Payload::I32(_) => Err(ContainerError::Malformed("expected f32 payload".into())),
        }
    }

    pub fn into_i32(self) -> Result<Vec<i32>, ContainerError> {
        match self.payload {
            Payload::I32(v) => Ok(v),
            Payload::F32(_) => Err(ContainerError::Malformed("expected i32 payload".into())),
        }
    }
}

mod io {
    //! Convenience readers/writers for the signal types.
    use ndarray::Array2;

    use super::*;
    use crate::signal::{FeatureSequence, PitchContour};

    pub fn save_features(path: impl AsRef<Path>, f: &FeatureSequence) -> Result<(), ContainerError> {
        let data = f.frames.iter().copied().collect();
        Container::new(Kind::Features, vec![f.num_frames(), f.dim()], vec![f.hop as u32], Payload::F32(data))?.save(path)
    }

    pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence, ContainerError> {
        let c = Container::load(path, Kind::Features)?;
        let (shape, hop) = (c.shape.clone(), c.meta.first().copied().unwrap_or(0) as usize);
        if shape.len() != 2 {
            return Err(ContainerError::Malformed("features must be 2-D".into()));
        }
        let frames = Array2::from_shape_vec((shape[0], shape[1]), c.into_f32()?)
            .map_err(|e| ContainerError::Malformed(e.to_string()))?;
        Ok(FeatureSequence::new(frames, hop))
    }

    pub fn save_contour(path: impl AsRef<Path>, c: &PitchContour) -> Result<(), ContainerError> {
        Container::new(Kind::PitchContour, vec![c.len()], vec![c.hop as u32], Payload::F32(c.f0.clone()))?.save(path)
    }

    /// Loads a contour from the binary container, or from a text file with
    /// one value per line when the magic bytes are absent.
    pub fn load_contour(path: impl AsRef<Path>, default_hop: usize) -> Result<PitchContour, ContainerError> {
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.starts_with(MAGIC) {
            let c = Container::read_from(bytes.as_slice(), Kind::PitchContour)?;
            let hop = c.meta.first().copied().unwrap_or(default_hop as u32) as usize;
            return Ok(PitchContour::new(c.into_f32()?, hop));
        }
        let text = String::from_utf8(bytes).map_err(|e| ContainerError::Malformed(e.to_string()))?;
        let f0 = text
            .split_whitespace()
            .map(|t| t.parse::<f32>().map_err(|e| ContainerError::Malformed(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PitchContour::new(f0, default_hop))
    }

    pub fn save_contour_text(path: impl AsRef<Path>, c: &PitchContour) -> Result<(), ContainerError> {
        let mut s = String::new();
        for f in &c.f0 {
            s.push_str(&format!("{f}\n"));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

pub use io::{load_contour, load_features, save_contour, save_contour_text, save_features};
