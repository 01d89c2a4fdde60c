//! Binary checkpoint format.
//!
//! Layout: magic `ADCK`, u32 version, u32 tensor count, then per tensor a
//! u32 name length, the name bytes, u32 ndims, the u32 shape, and the f32
//! little-endian payload. A fixed trailer carries the epoch counter, the
//! run seed, the momentum coefficient, the updating rate, the controller
//! epoch, and the queue capacity. Everything needed to resume bit-exactly
//! is inside: both encoders, the controller scores, and the queue contents.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::contrastive::Queue;
use crate::encoder::{EncoderPair, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scheduler::SamplerState;

const MAGIC: &[u8; 4] = b"ADCK";
const VERSION: u32 = 1;

/// Full training state at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub pair: EncoderPair,
    pub sampler: SamplerState,
    pub queue: Queue,
    /// Completed epochs.
    pub epoch: u32,
    /// Root seed of the run that produced this state.
    pub seed: u64,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let queue_rows = ck.queue.to_rows();
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    for (prefix, params) in [("query", &ck.pair.query), ("key", &ck.pair.key)] {
        for (name, dims, data) in params.tensors() {
            tensors.push((format!("{prefix}.{name}"), dims, data.to_vec()));
        }
    }
    tensors.push((
        "sampler.scores".into(),
        vec![ck.sampler.len()],
        ck.sampler.scores().to_vec(),
    ));
    tensors.push((
        "sampler.last_acc".into(),
        vec![ck.sampler.len()],
        ck.sampler.last_acc().to_vec(),
    ));
    tensors.push((
        "queue.entries".into(),
        vec![queue_rows.rows(), queue_rows.cols()],
        queue_rows.data().to_vec(),
    ));

    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, dims, data) in &tensors {
        write_tensor(&mut w, name, dims, data)?;
    }

    w.write_all(&ck.epoch.to_le_bytes())?;
    w.write_all(&ck.seed.to_le_bytes())?;
    w.write_all(&ck.pair.momentum.to_le_bytes())?;
    w.write_all(&ck.sampler.update_rate().to_le_bytes())?;
    w.write_all(&ck.sampler.epoch().to_le_bytes())?;
    w.write_all(&(ck.queue.capacity() as u32).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            message: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = Cursor { inner: BufReader::new(file), offset: 0 };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected ADCK".into() });
    }
    let version = r.read_u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }

    let n_tensors = r.read_u32("tensor count")? as usize;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for t in 0..n_tensors {
        let name_len = r.read_u32("tensor name length")? as usize;
        if name_len > 4096 {
            return Err(Error::Format {
                offset: r.offset - 4,
                message: format!("implausible name length {name_len} for tensor {t}"),
            });
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            offset: r.offset,
            message: format!("tensor {t} name is not utf-8"),
        })?;
        let ndims = r.read_u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.read_u32("tensor dim")? as usize);
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.read_f32(&name)?);
        }
        tensors.insert(name, (dims, data));
    }

    let epoch = r.read_u32("epoch")?;
    let seed = r.read_u64("seed")?;
    let momentum = r.read_f32("momentum")?;
    let update_rate = r.read_f32("update rate")?;
    let sampler_epoch = r.read_u32("sampler epoch")?;
    let queue_capacity = r.read_u32("queue capacity")? as usize;

    let mut take = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Format { offset: 8, message: format!("missing tensor `{name}`") })
    };

    let mut load_params = |prefix: &str| -> Result<EncoderParams> {
        let (w1d, w1) = take(&format!("{prefix}.w1"))?;
        let (_, b1) = take(&format!("{prefix}.b1"))?;
        let (w2d, w2) = take(&format!("{prefix}.w2"))?;
        let (_, b2) = take(&format!("{prefix}.b2"))?;
        let (wpd, wp) = take(&format!("{prefix}.wp"))?;
        let (_, bp) = take(&format!("{prefix}.bp"))?;
        if w1d.len() != 2 || w2d.len() != 2 || wpd.len() != 2 {
            return Err(Error::Format {
                offset: 8,
                message: format!("{prefix} weights must be rank 2"),
            });
        }
        Ok(EncoderParams {
            w1: Matrix::from_vec(w1d[0], w1d[1], w1)?,
            b1,
            w2: Matrix::from_vec(w2d[0], w2d[1], w2)?,
            b2,
            wp: Matrix::from_vec(wpd[0], wpd[1], wp)?,
            bp,
        })
    };

    let query = load_params("query")?;
    let key = load_params("key")?;
    if query.dims() != key.dims() {
        return Err(Error::Format {
            offset: 8,
            message: "query and key encoder shapes differ".into(),
        });
    }

    let (_, scores) = take("sampler.scores")?;
    let (_, last_acc) = take("sampler.last_acc")?;
    let sampler = SamplerState::from_parts(scores, update_rate, sampler_epoch, last_acc)?;

    let (qdims, qdata) = take("queue.entries")?;
    if qdims.len() != 2 || qdims[1] != query.dims().d_z {
        return Err(Error::Format {
            offset: 8,
            message: format!("queue entries must be rank 2 with {} columns", query.dims().d_z),
        });
    }
    let rows = Matrix::from_vec(qdims[0], qdims[1], qdata)?;
    let queue = Queue::from_rows(queue_capacity, &rows)?;

    let mut pair = EncoderPair::new(query, momentum)?;
    pair.key = key;

    Ok(Checkpoint { pair, sampler, queue, epoch, seed })
}
