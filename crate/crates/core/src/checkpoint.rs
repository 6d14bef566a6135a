//! Binary model checkpoints.
//!
//! Layout: the magic bytes `OCTV1`, a u64 little-endian length followed by
//! the UTF-8 JSON model config, a u64 record count, then one record per
//! state buffer: name length (u64) + name bytes, rank (u64), extents
//! (u64 each), payload as f32 little-endian. Loading validates the magic,
//! the config, every record's name and shape against a model rebuilt from
//! the config, and that the file ends exactly at the last payload byte.

use crate::error::{Error, Result};
use crate::nn::SeedRng;
use crate::tensor::Tensor;
use crate::unet::{ModelConfig, OctaveUNet, StateRef};
use rand::SeedableRng;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"OCTV1";

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_record<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    write_u64(w, name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    write_u64(w, shape.len() as u64)?;
    for &e in shape {
        write_u64(w, e as u64)?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_record<R: Read>(r: &mut R) -> Result<(String, Vec<usize>, Vec<f32>)> {
    let name_len = read_u64(r)? as usize;
    if name_len > 4096 {
        return Err(Error::Checkpoint(format!(
            "implausible record name length {name_len}"
        )));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
    let rank = read_u64(r)? as usize;
    if rank > 8 {
        return Err(Error::Checkpoint(format!(
            "implausible rank {rank} for record '{name}'"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut bytes = vec![0u8; numel * 4];
    r.read_exact(&mut bytes).map_err(|e| {
        Error::Checkpoint(format!("truncated payload for record '{name}': {e}"))
    })?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((name, shape, data))
}

/// Serialize config and full model state.
pub fn save_model<W: Write>(w: &mut W, model: &mut OctaveUNet<f32>) -> Result<()> {
    w.write_all(MAGIC)?;
    let config = serde_json::to_string(&model.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization failed: {e}")))?;
    write_u64(w, config.len() as u64)?;
    w.write_all(config.as_bytes())?;
    let state = model.state_mut();
    write_u64(w, state.len() as u64)?;
    for (name, r) in state {
        match r {
            StateRef::Tensor(t) => write_record(w, &name, t.shape(), t.data())?,
            StateRef::Stats(s) => write_record(w, &name, &[s.len()], s)?,
        }
    }
    Ok(())
}

/// Deserialize a model, validating structure against the embedded config.
pub fn load_model<R: Read>(r: &mut R) -> Result<OctaveUNet<f32>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let config_len = read_u64(r)? as usize;
    if config_len > 1 << 20 {
        return Err(Error::Checkpoint(format!(
            "implausible config length {config_len}"
        )));
    }
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| Error::Checkpoint(format!("config parse failed: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("embedded config invalid: {e}")))?;

    let mut model = OctaveUNet::build(&config, &mut SeedRng::seed_from_u64(0))?;
    let count = read_u64(r)? as usize;
    {
        let state = model.state_mut();
        if count != state.len() {
            return Err(Error::Checkpoint(format!(
                "record count {count} does not match the {} state buffers implied by the config",
                state.len()
            )));
        }
        for (expect_name, slot) in state {
            let (name, shape, data) = read_record(r)?;
            if name != expect_name {
                return Err(Error::Checkpoint(format!(
                    "record '{name}' out of order, expected '{expect_name}'"
                )));
            }
            match slot {
                StateRef::Tensor(t) => {
                    if shape != t.shape() {
                        return Err(Error::Checkpoint(format!(
                            "record '{name}' has shape {shape:?}, expected {:?}",
                            t.shape()
                        )));
                    }
                    *t = Tensor::from_vec(&shape, data)?;
                }
                StateRef::Stats(s) => {
                    if shape != [s.len()] {
                        return Err(Error::Checkpoint(format!(
                            "record '{name}' has shape {shape:?}, expected [{}]",
                            s.len()
                        )));
                    }
                    *s = data;
                }
            }
        }
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => Ok(model),
        _ => Err(Error::Checkpoint("trailing bytes after final record".into())),
    }
}

pub fn save_model_file<P: AsRef<Path>>(path: P, model: &mut OctaveUNet<f32>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_model(&mut f, model)?;
    f.flush()?;
    Ok(())
}

pub fn load_model_file<P: AsRef<Path>>(path: P) -> Result<OctaveUNet<f32>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_model(&mut f)
}
