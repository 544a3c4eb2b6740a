//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic "SPSDCKPT" | u32 version | u32 json_len | config JSON | u64 config hash
//! | u32 T | f64 beta_start | f64 beta_end | u32 param_count
//! | per parameter (name-sorted): u32 name_len | name | u32 ndims | u32 dims.. | f64 values..
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::unet::{Denoiser, DenoiserConfig, DenoiserParams};
use super::NetError;
use crate::diffusion::ScheduleConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPSDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A network together with the noise schedule it was trained for.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Denoiser,
    pub schedule: ScheduleConfig,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Denoiser, schedule: &ScheduleConfig) -> Result<(), NetError> {
    if schedule.timesteps != model.timesteps() {
        return Err(NetError::Checkpoint(format!(
            "schedule has {} steps but the network expects {}",
            schedule.timesteps,
            model.timesteps()
        )));
    }
    let json = serde_json::to_vec(model.config()).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_u32(&mut w, json.len())?;
    w.write_all(&json)?;
    w.write_all(&model.config().config_hash().to_le_bytes())?;
    write_u32(&mut w, schedule.timesteps)?;
    w.write_all(&schedule.beta_start.to_le_bytes())?;
    w.write_all(&schedule.beta_end.to_le_bytes())?;
    write_u32(&mut w, model.params().len())?;
    for (name, tensor) in model.params().sorted() {
        write_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, tensor.shape.len())?;
        for &d in &tensor.shape {
            write_u32(&mut w, d)?;
        }
        for v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint. When `expected` is given, the stored configuration hash
/// must match that configuration's hash.
pub fn read_checkpoint<R: Read>(mut r: R, expected: Option<&DenoiserConfig>) -> Result<Checkpoint, NetError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let json_len = read_u32(&mut r, "config length")? as usize;
    let json = read_vec(&mut r, json_len, "config")?;
    let config: DenoiserConfig =
        serde_json::from_slice(&json).map_err(|e| NetError::Checkpoint(format!("config: {e}")))?;
    let found = u64::from_le_bytes(read_array(&mut r, "config hash")?);
    if found != config.config_hash() {
        return Err(NetError::ConfigHash { expected: config.config_hash(), found });
    }
    if let Some(exp) = expected {
        if exp.config_hash() != found {
            return Err(NetError::ConfigHash { expected: exp.config_hash(), found });
        }
    }
    let timesteps = read_u32(&mut r, "timesteps")? as usize;
    let beta_start = f64::from_le_bytes(read_array(&mut r, "beta_start")?);
    let beta_end = f64::from_le_bytes(read_array(&mut r, "beta_end")?);
    let schedule = ScheduleConfig { timesteps, beta_start, beta_end };
    schedule.build().map_err(|e| NetError::Checkpoint(format!("schedule: {e}")))?;

    let count = read_u32(&mut r, "parameter count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let what = format!("parameter {i}");
        let name_len = read_u32(&mut r, &what)? as usize;
        let name = String::from_utf8(read_vec(&mut r, name_len, &what)?)
            .map_err(|_| NetError::Checkpoint(format!("{what}: name is not UTF-8")))?;
        let ndims = read_u32(&mut r, &name)? as usize;
        if ndims > 8 {
            return Err(NetError::Checkpoint(format!("{name}: implausible rank {ndims}")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(read_u32(&mut r, &name)? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = read_vec(&mut r, n * 8, &name)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        entries.push((name, Tensor::from_vec(&shape, data)));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NetError::Checkpoint("trailing bytes after parameters".into()));
    }
    let params = DenoiserParams::from_named(entries)?;
    let model = Denoiser::from_params(config, timesteps, params)?;
    Ok(Checkpoint { model, schedule })
}

pub fn save_checkpoint(path: &Path, model: &Denoiser, schedule: &ScheduleConfig) -> Result<(), NetError> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, schedule)
}

pub fn load_checkpoint(path: &Path, expected: Option<&DenoiserConfig>) -> Result<Checkpoint, NetError> {
    read_checkpoint(BufReader::new(File::open(path)?), expected)
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), NetError> {
    let v = u32::try_from(v).map_err(|_| NetError::Checkpoint(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), NetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NetError::Checkpoint(format!("truncated while reading {what}")),
        _ => NetError::Io(e),
    })
}

fn read_array<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N], NetError> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, what)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, NetError> {
    Ok(u32::from_le_bytes(read_array(r, what)?))
}

fn read_vec<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>, NetError> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(NetError::Checkpoint(format!("truncated while reading {what}")));
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> (Denoiser, ScheduleConfig) {
        let schedule = ScheduleConfig { timesteps: 40, beta_start: 1e-3, beta_end: 0.05 };
        (Denoiser::new(DenoiserConfig::tiny(), 40, 7).unwrap(), schedule)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, s) = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &s).unwrap();
        let ck = read_checkpoint(&buf[..], Some(m.config())).unwrap();
        assert_eq!(ck.schedule, s);
        assert_eq!(ck.model.config(), m.config());
        for (name, t) in m.params().sorted() {
            let u = ck.model.params().get(name).unwrap();
            assert_eq!(t.shape, u.shape);
            assert!(t.data.iter().zip(&u.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_config_mismatch() {
        let (m, s) = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &s).unwrap();
        let other = DenoiserConfig { base_channels: 4, ..DenoiserConfig::tiny() };
        assert!(matches!(read_checkpoint(&buf[..], Some(&other)), Err(NetError::ConfigHash { .. })));
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let (m, s) = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &s).unwrap();
        for cut in [0, 5, 12, 40, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(read_checkpoint(&buf[..cut], None), Err(NetError::Checkpoint(_))), "cut {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..], None).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..], None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let (m, s) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &m, &s).unwrap();
        let ck = load_checkpoint(&path, None).unwrap();
        assert_eq!(ck.model.params(), m.params());
    }
}
