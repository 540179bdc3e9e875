//! `CNB1` checkpoints: model configuration plus named parameter blocks and
//! the EMA shadow.
//!
//! Layout (little-endian): magic `CNB1`, `u32` version, `u32` config length
//! and config JSON, then two block sections (parameters, EMA shadow), each a
//! `u32` block count followed by blocks of `u32` name length, name bytes,
//! `u32` rows, `u32` cols and `rows·cols` `f32` values. An empty EMA section
//! means no shadow was stored.

use std::io::{Read, Write};

use ndarray::Array2;

use super::cnbmm::{Cnbmm, CnbmmConfig};
use super::tensor::ParamSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CNB1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Cnbmm,
    pub ema: Option<ParamSet<f32>>,
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn write_blocks(w: &mut impl Write, params: &ParamSet<f32>) -> Result<()> {
    write_u32(w, params.len())?;
    for (name, value) in params.names().iter().zip(params.values()) {
        write_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_u32(w, value.nrows())?;
        write_u32(w, value.ncols())?;
        for &x in value.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_blocks(r: &mut impl Read) -> Result<ParamSet<f32>> {
    let count = read_u32(r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let (rows, cols) = (read_u32(r)?, read_u32(r)?);
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let array = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
        params.add(name, array);
    }
    Ok(params)
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION as usize)?;
        let cfg = serde_json::to_vec(self.model.config())?;
        write_u32(w, cfg.len())?;
        w.write_all(&cfg)?;
        write_blocks(w, &self.model.params)?;
        match &self.ema {
            Some(ema) => write_blocks(w, ema),
            None => write_u32(w, 0),
        }
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a CNB1 checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(r)?;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let cfg: CnbmmConfig = serde_json::from_slice(&cfg)?;
        let model = Cnbmm::from_params(cfg, read_blocks(r)?)?;
        let ema = read_blocks(r)?;
        let ema = if ema.is_empty() {
            None
        } else {
            if ema.names() != model.params.names() {
                return Err(Error::Format("EMA blocks do not match the parameters".into()));
            }
            Some(ema)
        };
        Ok(Self { model, ema })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Parameters used for estimates: the shadow when present.
    pub fn eval_params(&self) -> &ParamSet<f32> {
        self.ema.as_ref().unwrap_or(&self.model.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Cnbmm {
        Cnbmm::new(
            CnbmmConfig {
                gating_hidden: vec![4],
                expert_hidden: vec![6, 6],
                ..CnbmmConfig::desk(5, 2)
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_with_and_without_shadow() {
        let m = model();
        let mut ema = m.params.clone();
        ema.get_mut(0).fill(0.25);
        for shadow in [None, Some(ema)] {
            let ck = Checkpoint { model: m.clone(), ema: shadow.clone() };
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"CNB1");
            let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back.model.config(), m.config());
            assert_eq!(back.model.params, m.params);
            assert_eq!(back.ema, shadow);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let ck = Checkpoint { model: model(), ema: None };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
    }
}
