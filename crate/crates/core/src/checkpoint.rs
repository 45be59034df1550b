//! Self-describing binary checkpoint container.
//!
//! Layout: magic, format version, a string-to-u64 meta section, then named
//! arrays (name, shape, row-major f64 little-endian payload). Round-trips
//! are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::DenoiserParams;
use crate::schedule::NoiseSchedule;
use crate::tape::DenseArray;

const MAGIC: &[u8; 4] = b"ZGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("missing entry {0}")]
    Missing(String),
}

/// A named-array container with integer metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, u64>,
    pub arrays: BTreeMap<String, DenseArray>,
}

impl Checkpoint {
    pub fn meta_usize(&self, key: &str) -> Result<usize, CheckpointError> {
        self.meta.get(key).map(|v| *v as usize).ok_or_else(|| CheckpointError::Missing(key.into()))
    }

    pub fn array(&self, name: &str) -> Result<&DenseArray, CheckpointError> {
        self.arrays.get(name).ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        Ok(self.array(name)?.data()[0])
    }

    pub fn insert_scalar(&mut self, name: &str, value: f64) {
        self.arrays.insert(name.into(), DenseArray::scalar(value));
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes a checkpoint to bytes.
pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.meta.len() as u32).to_le_bytes());
    for (key, value) in &ckpt.meta {
        write_str(&mut out, key);
        out.extend_from_slice(&value.to_le_bytes());
    }
    out.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for (name, array) in &ckpt.arrays {
        write_str(&mut out, name);
        out.extend_from_slice(&(array.shape().len() as u32).to_le_bytes());
        for &dim in array.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in array.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format("truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| CheckpointError::Format(e.to_string()))
    }
}

/// Parses a checkpoint from bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut reader = Reader { bytes, pos: 0 };
    if reader.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = reader.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported format version {version}")));
    }
    let mut ckpt = Checkpoint::default();
    let n_meta = reader.u32()?;
    for _ in 0..n_meta {
        let key = reader.string()?;
        let value = reader.u64()?;
        ckpt.meta.insert(key, value);
    }
    let n_arrays = reader.u32()?;
    for _ in 0..n_arrays {
        let name = reader.string()?;
        let ndim = reader.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(reader.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(reader.f64()?);
        }
        let array = DenseArray::new(shape, data)
            .map_err(|e| CheckpointError::Format(format!("{name}: {e}")))?;
        ckpt.arrays.insert(name, array);
    }
    if reader.pos != bytes.len() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&to_bytes(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

/// Packs model parameters and schedule constants into a container.
pub fn pack_model(params: &DenoiserParams, schedule: &NoiseSchedule) -> Checkpoint {
    let mut ckpt = Checkpoint::default();
    ckpt.meta.insert("latent_dim".into(), params.latent_dim as u64);
    ckpt.meta.insert("time_steps".into(), params.time_steps as u64);
    ckpt.meta.insert("prompt_count".into(), params.prompt_count() as u64);
    ckpt.meta.insert("view_count".into(), params.view_count() as u64);
    for (name, array) in params.named_arrays() {
        ckpt.arrays.insert(name, array.clone());
    }
    ckpt.arrays.insert("schedule.beta".into(), DenseArray::vector(&schedule.beta));
    ckpt.arrays.insert("schedule.alpha_bar".into(), DenseArray::vector(&schedule.alpha_bar));
    ckpt.arrays.insert("schedule.sigma".into(), DenseArray::vector(&schedule.sigma));
    ckpt
}

/// Rebuilds model parameters and the schedule from a container.
pub fn unpack_model(ckpt: &Checkpoint) -> Result<(DenoiserParams, NoiseSchedule), CheckpointError> {
    let latent_dim = ckpt.meta_usize("latent_dim")?;
    let time_steps = ckpt.meta_usize("time_steps")?;
    let prompt_count = ckpt.meta_usize("prompt_count")?;
    let view_count = ckpt.meta_usize("view_count")?;
    let mut params = DenoiserParams::init(latent_dim, time_steps, prompt_count, view_count, 0);
    for (name, _) in params.named_arrays().iter().map(|(n, a)| (n.clone(), a.len())).collect::<Vec<_>>() {
        let stored = ckpt.array(&name)?;
        let slot = params
            .named_array_mut(&name)
            .ok_or_else(|| CheckpointError::Format(format!("unexpected array {name}")))?;
        if stored.shape() != slot.shape() {
            return Err(CheckpointError::Format(format!(
                "{name}: shape {:?} != expected {:?}",
                stored.shape(),
                slot.shape()
            )));
        }
        *slot = stored.clone();
    }
    let schedule = NoiseSchedule {
        steps: time_steps,
        beta: ckpt.array("schedule.beta")?.data().to_vec(),
        alpha_bar: ckpt.array("schedule.alpha_bar")?.data().to_vec(),
        sigma: ckpt.array("schedule.sigma")?.data().to_vec(),
    };
    if schedule.beta.len() != time_steps {
        return Err(CheckpointError::Format("schedule length mismatch".into()));
    }
    Ok((params, schedule))
}
