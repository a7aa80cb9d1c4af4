//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CDLB1" | version: u8 | n: u64 | n x f64 params | m: u64 | m bytes JSON metadata
//! ```
//!
//! The metadata holds everything except the parameters: kind, step, the full
//! trainer config and, for raw checkpoints, the optimizer state and RNG cursor.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::Checkpoint;

pub const MAGIC: &[u8; 5] = b"CDLB1";
pub const VERSION: u8 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(ckpt)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 17 + ckpt.params.len() * 8 + meta.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for p in &ckpt.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = c.take(1, "version")?[0];
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let n = c.u64("parameter count")?;
    let n = usize::try_from(n).map_err(|_| corrupt("parameter count too large"))?;
    let payload = c.take(
        n.checked_mul(8).ok_or_else(|| corrupt("parameter count too large"))?,
        "parameters",
    )?;
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let m = c.u64("metadata length")?;
    let m = usize::try_from(m).map_err(|_| corrupt("metadata too large"))?;
    let meta = c.take(m, "metadata")?;
    if c.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let mut ckpt: Checkpoint =
        serde_json::from_slice(meta).map_err(|e| corrupt(format!("metadata: {e}")))?;
    ckpt.params = params;
    Ok(ckpt)
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    out.write_all(&encode(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

/// File name used inside a run's checkpoint directory.
pub fn checkpoint_file_name(ckpt: &Checkpoint) -> String {
    match ckpt.kind {
        crate::trainer::CheckpointKind::Raw => format!("step-{:08}.ckpt", ckpt.step),
        crate::trainer::CheckpointKind::SwaWindow => format!("swa-{:08}.ckpt", ckpt.step),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{CooldownShape, ScheduleSpec};
    use crate::trainer::{train, Method, TaskSpec, TrainerConfig};

    fn checkpoints(method: Method) -> Vec<Checkpoint> {
        let cfg = TrainerConfig {
            seed: 3,
            task: TaskSpec::noisy_quadratic(6, 0.1, 1.0, 0.2),
            schedule: ScheduleSpec::constant_cooldown(0.01, 60, 5, 20, CooldownShape::Linear),
            method,
            eval_every: 10,
            checkpoint_every: 20,
            swa: Some(crate::trainer::SwaConfig::new(10)),
            ..TrainerConfig::default()
        };
        train(&cfg).unwrap().checkpoints
    }

    fn bits(x: &[f64]) -> Vec<u64> {
        x.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for method in [Method::Adamw, Method::Sgd, Method::ScheduleFree] {
            for ckpt in checkpoints(method) {
                let bytes = encode(&ckpt).unwrap();
                let back = decode(&bytes).unwrap();
                assert_eq!(bits(&back.params), bits(&ckpt.params));
                assert_eq!(back, ckpt);
                assert_eq!(encode(&back).unwrap(), bytes);
            }
        }
    }

    #[test]
    fn rejects_damage() {
        let ckpt = checkpoints(Method::Adamw).pop().unwrap();
        let good = encode(&ckpt).unwrap();

        let mut bad = good.clone();
        bad[0] ^= 0xff;
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));

        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));

        for cut in [0, 3, 6, 10, 20, good.len() - 1] {
            assert!(matches!(decode(&good[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));

        let mut bad = good;
        bad[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
    }
}
