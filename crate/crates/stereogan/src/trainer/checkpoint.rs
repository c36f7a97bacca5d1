//! Self-describing checkpoint container.
//!
//! Layout: magic `SGCK`, a u32 format version, a u64 header length, a JSON
//! header (config echo, counters, RNG states, array directory), then raw
//! little-endian f32 data. Everything that affects the training trajectory
//! is stored — parameters, Adam moments, history-buffer contents and all RNG
//! states — so resuming reproduces the uninterrupted run exactly.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::LossConfig;
use crate::model::ParamStore;

use super::{ModelConfig, ResumePos, TrainerState, TrainingConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SGCK";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    pub word_pos: String,
}

fn rng_state(rng: &ChaCha8Rng) -> RngState {
    let seed = rng.get_seed();
    let mut seed_hex = String::with_capacity(64);
    for b in seed {
        seed_hex.push_str(&format!("{b:02x}"));
    }
    RngState {
        seed_hex,
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn restore_rng(state: &RngState) -> Result<ChaCha8Rng> {
    let bad = || Error::Checkpoint("malformed RNG state".into());
    if state.seed_hex.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for i in 0..32 {
        seed[i] = u8::from_str_radix(&state.seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(state.stream);
    let pos: u128 = state.word_pos.parse().map_err(|_| bad())?;
    rng.set_word_pos(pos);
    Ok(rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements from the start of the data section.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub training: TrainingConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub global_step: u64,
    pub phase: u8,
    pub epochs_done: usize,
    /// Adam step counters for (g, f, d_x, d_y).
    pub adam_t: [u64; 4],
    pub rng_data: RngState,
    pub rng_augment: RngState,
    pub rng_condition: RngState,
    pub rng_buffer_x: RngState,
    pub rng_buffer_y: RngState,
    pub buffer_x_len: usize,
    pub buffer_y_len: usize,
    pub arrays: Vec<ArrayEntry>,
}

struct Blob {
    entries: Vec<ArrayEntry>,
    data: Vec<f32>,
}

impl Blob {
    fn new() -> Self {
        Blob {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: &[usize], values: impl Iterator<Item = f32>) {
        let offset = self.data.len() as u64;
        self.data.extend(values);
        let len = self.data.len() as u64 - offset;
        debug_assert_eq!(len as usize, shape.iter().product::<usize>());
        self.entries.push(ArrayEntry {
            name,
            shape: shape.to_vec(),
            offset,
            len,
        });
    }

    fn push_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (name, a) in store.iter() {
            self.push(format!("{prefix}/{name}"), a.shape(), a.iter().cloned());
        }
    }
}

/// Writes the complete trainer state to one file.
pub fn save_checkpoint(state: &TrainerState, path: &Path) -> Result<()> {
    let mut blob = Blob::new();
    blob.push_store("g", state.g.store());
    blob.push_store("f", state.f.store());
    blob.push_store("dx", state.d_x.store());
    blob.push_store("dy", state.d_y.store());
    for (tag, adam, store) in [
        ("g", &state.adam_g, state.g.store()),
        ("f", &state.adam_f, state.f.store()),
        ("dx", &state.adam_dx, state.d_x.store()),
        ("dy", &state.adam_dy, state.d_y.store()),
    ] {
        let (m, v) = adam.moments();
        for (kind, arrays) in [("m", m), ("v", v)] {
            for ((name, _), a) in store.iter().zip(arrays.iter()) {
                blob.push(format!("adam_{tag}/{kind}/{name}"), a.shape(), a.iter().cloned());
            }
        }
    }
    for (tag, buf) in [("x", &state.buf_x), ("y", &state.buf_y)] {
        for (i, img) in buf.contents().iter().enumerate() {
            let d = img.data();
            blob.push(
                format!("buffer_{tag}/{i}"),
                &[d.dim().0, d.dim().1, d.dim().2],
                d.iter().cloned(),
            );
        }
    }

    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        training: state.cfg,
        loss: state.loss_cfg,
        model: state.model_cfg,
        global_step: state.global_step,
        phase: state.pos.phase,
        epochs_done: state.pos.epochs_done,
        adam_t: [
            state.adam_g.t(),
            state.adam_f.t(),
            state.adam_dx.t(),
            state.adam_dy.t(),
        ],
        rng_data: rng_state(&state.rng_data),
        rng_augment: rng_state(&state.rng_augment),
        rng_condition: rng_state(&state.rng_condition),
        rng_buffer_x: rng_state(state.buf_x.rng()),
        rng_buffer_y: rng_state(state.buf_y.rng()),
        buffer_x_len: state.buf_x.len(),
        buffer_y_len: state.buf_y.len(),
        arrays: blob.entries.clone(),
    };
    let header = serde_json::to_vec(&meta).expect("meta is serializable");

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io_err)?;
    w.write_u64::<LittleEndian>(header.len() as u64).map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    for v in &blob.data {
        w.write_f32::<LittleEndian>(*v).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Reads only the header of a checkpoint (cheap config inspection).
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    read_meta(&mut r, path)
}

fn read_meta<R: Read>(r: &mut R, path: &Path) -> Result<CheckpointMeta> {
    let io_err = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io_err)?;
    serde_json::from_slice(&header)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint header: {e}")))
}

/// Restores a trainer in exactly the saved state.
pub fn load_checkpoint(path: &Path) -> Result<TrainerState> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let meta = read_meta(&mut r, path)?;
    let total: u64 = meta.arrays.iter().map(|a| a.len).sum();
    let mut data = vec![0f32; total as usize];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|e| Error::io(path, e))?;

    let take = |name: &str| -> Result<ArrayD<f32>> {
        let entry = meta
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        ArrayD::from_shape_vec(entry.shape.clone(), data[start..end].to_vec())
            .map_err(|e| Error::Checkpoint(format!("bad shape for {name}: {e}")))
    };

    let mut state = TrainerState::new(meta.training, meta.loss, meta.model)?;

    // Parameters.
    for (prefix, store) in [("g", 0usize), ("f", 1), ("dx", 2), ("dy", 3)] {
        let store_ref: &mut ParamStore<f32> = match store {
            0 => state.g.store_mut(),
            1 => state.f.store_mut(),
            2 => state.d_x.store_mut(),
            _ => state.d_y.store_mut(),
        };
        let names: Vec<String> = store_ref.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let arr = take(&format!("{prefix}/{name}"))?;
            let slot = store_ref
                .iter_mut()
                .find(|(n, _)| *n == name)
                .map(|(_, a)| a)
                .expect("name from this store");
            if slot.shape() != arr.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {prefix}/{name}"
                )));
            }
            slot.assign(&arr);
        }
    }

    // Adam moments.
    for (tag, idx) in [("g", 0usize), ("f", 1), ("dx", 2), ("dy", 3)] {
        let names: Vec<String> = match idx {
            0 => state.g.store().iter().map(|(n, _)| n.to_string()).collect(),
            1 => state.f.store().iter().map(|(n, _)| n.to_string()).collect(),
            2 => state.d_x.store().iter().map(|(n, _)| n.to_string()).collect(),
            _ => state.d_y.store().iter().map(|(n, _)| n.to_string()).collect(),
        };
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in &names {
            m.push(take(&format!("adam_{tag}/m/{name}"))?);
            v.push(take(&format!("adam_{tag}/v/{name}"))?);
        }
        let t = meta.adam_t[idx];
        match idx {
            0 => state.adam_g.restore(t, m, v),
            1 => state.adam_f.restore(t, m, v),
            2 => state.adam_dx.restore(t, m, v),
            _ => state.adam_dy.restore(t, m, v),
        }
    }

    // History buffers.
    for (tag, len, rng, idx) in [
        ("x", meta.buffer_x_len, &meta.rng_buffer_x, 0usize),
        ("y", meta.buffer_y_len, &meta.rng_buffer_y, 1),
    ] {
        let mut imgs = Vec::with_capacity(len);
        for i in 0..len {
            let arr = take(&format!("buffer_{tag}/{i}"))?;
            let arr3 = arr
                .into_dimensionality::<ndarray::Ix3>()
                .map_err(|_| Error::Checkpoint("buffer image must be rank 3".into()))?;
            imgs.push(Image::new(arr3)?);
        }
        let rng = restore_rng(rng)?;
        if idx == 0 {
            state.buf_x.restore(imgs, rng)?;
        } else {
            state.buf_y.restore(imgs, rng)?;
        }
    }

    state.rng_data = restore_rng(&meta.rng_data)?;
    state.rng_augment = restore_rng(&meta.rng_augment)?;
    state.rng_condition = restore_rng(&meta.rng_condition)?;
    state.global_step = meta.global_step;
    state.pos = ResumePos {
        phase: meta.phase,
        epochs_done: meta.epochs_done,
    };
    Ok(state)
}
