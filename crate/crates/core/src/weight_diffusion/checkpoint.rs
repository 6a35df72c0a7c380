//! Binary denoiser checkpoints (`WFDIF1`) and optimizer state (`WFOPT1`),
//! little-endian throughout.
//!
//! `WFDIF1`: u32 hidden, layers, heads, T; f64 beta_start, beta_end, time_base;
//! u32 token count and u64 per token length; u8 normalization flag (followed by
//! `h` f32 means and `h` f32 stds when set); u64 scalar count; all parameter
//! tensors as f32 in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{
    DenoiserConfig, DiffusionError, EpochLoss, Normalization, ScheduleConfig, TokenLayout,
    TransformerDenoiser,
};
use crate::numerics::{AdamW, AdamWConfig};

const MODEL_MAGIC: &[u8; 6] = b"WFDIF1";
const OPTIMIZER_MAGIC: &[u8; 6] = b"WFOPT1";

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u32(&mut self, v: usize) -> std::io::Result<()> {
        self.bytes(&(v as u32).to_le_bytes())
    }
    fn u64(&mut self, v: usize) -> std::io::Result<()> {
        self.bytes(&(v as u64).to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32s(&mut self, values: &[f32]) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(&buf)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), DiffusionError> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DiffusionError::Truncated,
            _ => DiffusionError::Io(e.to_string()),
        })
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], DiffusionError> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<usize, DiffusionError> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    fn u64(&mut self) -> Result<usize, DiffusionError> {
        Ok(u64::from_le_bytes(self.array()?) as usize)
    }
    fn f64(&mut self) -> Result<f64, DiffusionError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DiffusionError> {
        // Read in bounded chunks so a corrupt length cannot force a huge allocation.
        let mut out = Vec::new();
        let mut remaining = n;
        let mut buf = vec![0u8; 4 * remaining.min(1 << 20)];
        while remaining > 0 {
            let take = remaining.min(1 << 20);
            self.fill(&mut buf[..4 * take])?;
            out.extend(
                buf[..4 * take]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            remaining -= take;
        }
        Ok(out)
    }
    fn magic(&mut self, expected: &[u8; 6]) -> Result<(), DiffusionError> {
        if &self.array::<6>()? != expected {
            return Err(DiffusionError::BadMagic);
        }
        Ok(())
    }
}

fn io(e: std::io::Error) -> DiffusionError {
    DiffusionError::Io(e.to_string())
}

pub fn write_model(model: &TransformerDenoiser, out: impl Write) -> Result<(), DiffusionError> {
    let mut w = Writer(out);
    let c = model.config();
    w.bytes(MODEL_MAGIC).map_err(io)?;
    for v in [c.hidden, c.layers, c.heads, c.schedule.timesteps] {
        w.u32(v).map_err(io)?;
    }
    for v in [c.schedule.beta_start, c.schedule.beta_end, c.time_base] {
        w.f64(v).map_err(io)?;
    }
    w.u32(c.layout.len()).map_err(io)?;
    for &l in c.layout.lengths() {
        w.u64(l).map_err(io)?;
    }
    match &model.normalization {
        None => w.bytes(&[0]).map_err(io)?,
        Some(n) => {
            w.bytes(&[1]).map_err(io)?;
            w.f32s(&n.mean).map_err(io)?;
            w.f32s(&n.std).map_err(io)?;
        }
    }
    w.u64(model.params().numel()).map_err(io)?;
    for p in model.params().iter() {
        w.f32s(p.tensor.values()).map_err(io)?;
    }
    w.0.flush().map_err(io)
}

pub fn read_model(input: impl Read) -> Result<TransformerDenoiser, DiffusionError> {
    let mut r = Reader(input);
    r.magic(MODEL_MAGIC)?;
    let (hidden, layers, heads, timesteps) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let (beta_start, beta_end, time_base) = (r.f64()?, r.f64()?, r.f64()?);
    let tokens = r.u32()?;
    if tokens > 1 << 16 {
        return Err(DiffusionError::InvalidConfig(format!("{tokens} tokens")));
    }
    let lengths = (0..tokens)
        .map(|_| r.u64())
        .collect::<Result<Vec<_>, _>>()?;
    let config = DenoiserConfig {
        hidden,
        layers,
        heads,
        layout: TokenLayout::new(lengths)?,
        schedule: ScheduleConfig {
            timesteps,
            beta_start,
            beta_end,
        },
        time_base,
    };
    let h = config.layout.total();
    let normalization = match r.array::<1>()?[0] {
        0 => None,
        1 => Some(Normalization {
            mean: r.f32s(h)?,
            std: r.f32s(h)?,
        }),
        other => {
            return Err(DiffusionError::InvalidConfig(format!(
                "normalization flag {other}"
            )))
        }
    };
    let mut model = TransformerDenoiser::new(config, 0)?;
    let count = r.u64()?;
    if count != model.params().numel() {
        return Err(DiffusionError::LengthMismatch {
            expected: model.params().numel(),
            actual: count,
        });
    }
    for p in model.params_mut().iter_mut() {
        let values = r.f32s(p.tensor.len())?;
        p.tensor.values_mut().copy_from_slice(&values);
    }
    model.normalization = normalization;
    Ok(model)
}

pub fn save_model(
    model: &TransformerDenoiser,
    path: impl AsRef<Path>,
) -> Result<(), DiffusionError> {
    let file = File::create(path).map_err(io)?;
    write_model(model, BufWriter::new(file))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TransformerDenoiser, DiffusionError> {
    let file = File::open(path).map_err(io)?;
    read_model(BufReader::new(file))
}

/// Optimizer moments, step count and loss history needed to resume training.
pub fn write_optimizer(
    optimizer: &AdamW,
    losses: &[EpochLoss],
    out: impl Write,
) -> Result<(), DiffusionError> {
    let mut w = Writer(out);
    w.bytes(OPTIMIZER_MAGIC).map_err(io)?;
    w.u64(optimizer.step_count() as usize).map_err(io)?;
    let c = optimizer.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
        w.f64(v).map_err(io)?;
    }
    let (m, v) = optimizer.moments();
    w.u32(m.len()).map_err(io)?;
    for (mi, vi) in m.iter().zip(v) {
        w.u64(mi.len()).map_err(io)?;
        w.f32s(mi).map_err(io)?;
        w.f32s(vi).map_err(io)?;
    }
    w.u64(losses.len()).map_err(io)?;
    for l in losses {
        w.u64(l.epoch).map_err(io)?;
        w.f64(l.loss).map_err(io)?;
        w.f64(l.lr).map_err(io)?;
    }
    w.0.flush().map_err(io)
}

pub fn read_optimizer(input: impl Read) -> Result<(AdamW, Vec<EpochLoss>), DiffusionError> {
    let mut r = Reader(input);
    r.magic(OPTIMIZER_MAGIC)?;
    let step = r.u64()? as u64;
    let config = AdamWConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        weight_decay: r.f64()?,
    };
    let tensors = r.u32()?;
    let mut first = Vec::with_capacity(tensors.min(1 << 16));
    let mut second = Vec::with_capacity(tensors.min(1 << 16));
    for _ in 0..tensors {
        let len = r.u64()?;
        first.push(r.f32s(len)?);
        second.push(r.f32s(len)?);
    }
    let count = r.u64()?;
    let mut losses = Vec::new();
    for _ in 0..count {
        losses.push(EpochLoss {
            epoch: r.u64()?,
            loss: r.f64()?,
            lr: r.f64()?,
        });
    }
    Ok((AdamW::from_parts(config, step, first, second), losses))
}

pub fn save_optimizer(
    optimizer: &AdamW,
    losses: &[EpochLoss],
    path: impl AsRef<Path>,
) -> Result<(), DiffusionError> {
    let file = File::create(path).map_err(io)?;
    write_optimizer(optimizer, losses, BufWriter::new(file))
}

pub fn load_optimizer(path: impl AsRef<Path>) -> Result<(AdamW, Vec<EpochLoss>), DiffusionError> {
    let file = File::open(path).map_err(io)?;
    read_optimizer(BufReader::new(file))
}
