//! Checkpoint format: "SRCK" magic, version, JSON metadata block, then
//! named little-endian float32 tensor records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{build_model, Model};
use super::train::EpochStats;
use crate::autodiff::{AdamState, Shape, Tensor};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"SRCK";
const VERSION: u16 = 1;

/// Everything needed to reproduce inference (and optionally resume
/// optimization) from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub bfs_range_hz: (f64, f64),
    pub init_seed: u64,
    pub train_seed: u64,
    pub history: Vec<EpochStats>,
    pub model: Model,
    pub optimizer: Option<AdamState<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaBlock {
    config: ModelConfig,
    bfs_range_hz: (f64, f64),
    init_seed: u64,
    train_seed: u64,
    history: Vec<EpochStats>,
    has_optimizer: bool,
    optimizer_step: u64,
    optimizer_lr: f64,
    bn_channels: Vec<usize>,
}

impl Checkpoint {
    pub fn new(
        model: Model,
        bfs_range_hz: (f64, f64),
        train_seed: u64,
        history: Vec<EpochStats>,
        optimizer: Option<AdamState<f32>>,
    ) -> Self {
        Checkpoint {
            config: model.config.clone(),
            bfs_range_hz,
            init_seed: model.init_seed,
            train_seed,
            history,
            model,
            optimizer,
        }
    }
}

fn write_record<W: Write>(w: &mut W, name: &str, tensor: &Tensor<f32>) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("record name too long".into()));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    let s = tensor.shape();
    for d in s.0 {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct RecordReader<R: Read> {
    inner: R,
}

impl<R: Read> RecordReader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Corrupt("checkpoint truncated".into()))?;
        Ok(buf)
    }

    fn record(&mut self, expect_name: &str) -> Result<Tensor<f32>> {
        let name_len = u16::from_le_bytes(self.bytes()?) as usize;
        let mut name = vec![0u8; name_len];
        self.inner
            .read_exact(&mut name)
            .map_err(|_| Error::Corrupt("checkpoint truncated".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Corrupt("record name is not utf-8".into()))?;
        if name != expect_name {
            return Err(Error::Format(format!(
                "record order mismatch: found {name}, expected {expect_name}"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(self.bytes()?) as usize;
        }
        let shape = Shape(dims);
        let mut data = Vec::with_capacity(shape.count());
        for _ in 0..shape.count() {
            data.push(f32::from_le_bytes(self.bytes()?));
        }
        Tensor::from_vec(shape, data)
    }
}

/// Persist a checkpoint; loading reproduces forward outputs
/// bit-exactly.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let meta = MetaBlock {
        config: checkpoint.config.clone(),
        bfs_range_hz: checkpoint.bfs_range_hz,
        init_seed: checkpoint.init_seed,
        train_seed: checkpoint.train_seed,
        history: checkpoint.history.clone(),
        has_optimizer: checkpoint.optimizer.is_some(),
        optimizer_step: checkpoint.optimizer.as_ref().map_or(0, |o| o.step),
        optimizer_lr: checkpoint.optimizer.as_ref().map_or(0.0, |o| o.lr),
        bn_channels: checkpoint
            .model
            .bn_running
            .iter()
            .map(|r| r.mean.len())
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("meta serializes");
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (name, tensor) in checkpoint.model.names.iter().zip(&checkpoint.model.params) {
        write_record(&mut w, name, tensor)?;
    }
    for (i, running) in checkpoint.model.bn_running.iter().enumerate() {
        let c = running.mean.len();
        let to_tensor = |vals: &[f64]| {
            Tensor::from_vec(
                Shape([1, c, 1, 1]),
                vals.iter().map(|&v| v as f32).collect(),
            )
            .expect("bn stat shape")
        };
        write_record(&mut w, &format!("bn{i}.running_mean"), &to_tensor(&running.mean))?;
        write_record(&mut w, &format!("bn{i}.running_var"), &to_tensor(&running.var))?;
    }
    if let Some(opt) = &checkpoint.optimizer {
        for (name, tensor) in checkpoint.model.names.iter().zip(&opt.first) {
            write_record(&mut w, &format!("adam.m.{name}"), tensor)?;
        }
        for (name, tensor) in checkpoint.model.names.iter().zip(&opt.second) {
            write_record(&mut w, &format!("adam.v.{name}"), tensor)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = RecordReader {
        inner: BufReader::new(File::open(path)?),
    };
    let magic: [u8; 4] = r.bytes()?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:02x?}"
        )));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json_len = u32::from_le_bytes(r.bytes()?) as usize;
    let mut json = vec![0u8; json_len];
    r.inner
        .read_exact(&mut json)
        .map_err(|_| Error::Corrupt("checkpoint truncated".into()))?;
    let meta: MetaBlock =
        serde_json::from_slice(&json).map_err(|e| Error::Corrupt(format!("meta block: {e}")))?;
    meta.config.validate()?;
    if meta.bfs_range_hz.0 >= meta.bfs_range_hz.1 {
        return Err(Error::Corrupt("checkpoint bfs range is empty".into()));
    }
    // rebuild the skeleton, then overwrite every tensor from records
    let mut model = build_model(&meta.config, meta.init_seed)?;
    if model.bn_running.len() != meta.bn_channels.len() {
        return Err(Error::Format("bn layer count mismatch".into()));
    }
    let names = model.names.clone();
    for (i, name) in names.iter().enumerate() {
        let tensor = r.record(name)?;
        if tensor.shape() != model.params[i].shape() {
            return Err(Error::Format(format!(
                "record {name} has shape {}, expected {}",
                tensor.shape(),
                model.params[i].shape()
            )));
        }
        model.params[i] = tensor;
    }
    for i in 0..model.bn_running.len() {
        let mean = r.record(&format!("bn{i}.running_mean"))?;
        let var = r.record(&format!("bn{i}.running_var"))?;
        if mean.shape().count() != meta.bn_channels[i] || var.shape().count() != meta.bn_channels[i]
        {
            return Err(Error::Format("bn stat shape mismatch".into()));
        }
        model.bn_running[i].mean = mean.data().iter().map(|&v| v as f64).collect();
        model.bn_running[i].var = var.data().iter().map(|&v| v as f64).collect();
    }
    let optimizer = if meta.has_optimizer {
        let mut opt = AdamState::new(&model.params, meta.optimizer_lr);
        opt.step = meta.optimizer_step;
        for (i, name) in names.iter().enumerate() {
            opt.first[i] = r.record(&format!("adam.m.{name}"))?;
        }
        for (i, name) in names.iter().enumerate() {
            opt.second[i] = r.record(&format!("adam.v.{name}"))?;
        }
        Some(opt)
    } else {
        None
    };
    Ok(Checkpoint {
        config: meta.config,
        bfs_range_hz: meta.bfs_range_hz,
        init_seed: meta.init_seed,
        train_seed: meta.train_seed,
        history: meta.history,
        model,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;
    use crate::srnet::config::ModelConfig;

    fn small_model() -> Model {
        let config = ModelConfig {
            input_freq: 71,
            stem_channels: 4,
            stem_kernel: (7, 61),
            stage_blocks: vec![1, 1],
            stage_channels: vec![4, 8],
            block_kernel: (3, 3),
            infer_window: 96,
            edge_margin: 20,
        };
        let mut m = build_model(&config, 9).unwrap();
        // make running stats non-trivial
        for r in &mut m.bn_running {
            for (k, v) in r.mean.iter_mut().enumerate() {
                *v = 0.01 * k as f64;
            }
        }
        m.quantize_running_stats();
        m
    }

    #[test]
    fn save_load_forward_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_model();
        let x = Tensor::from_vec(
            Shape([1, 1, 71, 64]),
            (0..71 * 64).map(|i| ((i % 97) as f32) * 0.01).collect(),
        )
        .unwrap();
        let before = model.forward_eval(&x).unwrap();
        let ckpt = Checkpoint::new(model, (10.81e9, 10.89e9), 3, Vec::new(), None);
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.bfs_range_hz, (10.81e9, 10.89e9));
        let after = loaded.model.forward_eval(&x).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_model();
        let mut opt = AdamState::new(&model.params, 1e-3);
        opt.step = 17;
        opt.first[0].data_mut()[0] = 0.5;
        let ckpt = Checkpoint::new(model, (10.81e9, 10.89e9), 3, Vec::new(), Some(opt));
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let lopt = loaded.optimizer.unwrap();
        assert_eq!(lopt.step, 17);
        assert_eq!(lopt.first[0].data()[0], 0.5);
    }

    #[test]
    fn corrupted_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint::new(small_model(), (10.81e9, 10.89e9), 3, Vec::new(), None);
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        let mut garbled = bytes.clone();
        garbled[0] = b'Z';
        std::fs::write(&path, &garbled).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
