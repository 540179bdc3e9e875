//! Real-valued views of link samples for the estimators.

use ndarray::{Array2, Axis};

use crate::channel::{ChannelModel, ChannelOutput};
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::pipeline::{generate_range, SampleBatch, SystemConfig};
use crate::rng::{derive_seed, stream, Role};

/// Paired observations `z` (rows of `n` reals) and secrets `m_s` (rows of `k`
/// bits stored as 0.0 / 1.0).
#[derive(Clone, Debug, PartialEq)]
pub struct LeakageData {
    pub z: Array2<f32>,
    pub ms: Array2<f32>,
}

fn bits_matrix(rows: &[BitVec], width: usize) -> Array2<f32> {
    Array2::from_shape_fn((rows.len(), width), |(i, j)| if rows[i].get(j) { 1.0 } else { 0.0 })
}

fn output_matrix(outputs: &[ChannelOutput], n: usize) -> Array2<f32> {
    let mut z = Array2::zeros((outputs.len(), n));
    for (mut row, out) in z.rows_mut().into_iter().zip(outputs) {
        for (dst, v) in row.iter_mut().zip(out.to_reals()) {
            *dst = v;
        }
    }
    z
}

impl LeakageData {
    /// Eve's view of a batch: hard outputs become ±1 symbols.
    pub fn from_batch(batch: &SampleBatch) -> Result<Self> {
        let n = batch
            .z_eve
            .first()
            .ok_or_else(|| Error::Config("empty batch".into()))?
            .len();
        let k = batch.m_s[0].len();
        Ok(Self {
            z: output_matrix(&batch.z_eve, n),
            ms: bits_matrix(&batch.m_s, k),
        })
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.z.ncols()
    }

    pub fn k(&self) -> usize {
        self.ms.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            z: self.z.select(Axis(0), rows),
            ms: self.ms.select(Axis(0), rows),
        }
    }

    pub fn range(&self, start: usize, end: usize) -> Self {
        let rows: Vec<usize> = (start..end.min(self.len())).collect();
        self.select(&rows)
    }
}

/// Transmitted codewords with their secrets; re-noised on demand so a
/// curriculum can vary the channel without redrawing messages.
#[derive(Clone, Debug)]
pub struct CodewordSet {
    pub x: Vec<BitVec>,
    pub ms: Array2<f32>,
}

impl CodewordSet {
    /// Records `start..start + count` of the system's message stream.
    pub fn generate(cfg: &SystemConfig, start: u64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let batch = generate_range(cfg, start, count, false)?;
        Ok(Self {
            ms: bits_matrix(&batch.m_s, cfg.k),
            x: batch.x,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Passes every codeword through `channel` with noise keyed by `(seed, tag, i)`.
    pub fn noisy(&self, channel: ChannelModel, seed: u64, tag: u64) -> LeakageData {
        let noise_seed = derive_seed(seed, tag);
        let outputs: Vec<ChannelOutput> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, x)| channel.transmit(x, &mut stream(noise_seed, Role::Eve, i as u64)))
            .collect();
        let n = self.x.first().map_or(0, BitVec::len);
        LeakageData {
            z: output_matrix(&outputs, n),
            ms: self.ms.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecc::CodeSpec;

    #[test]
    fn views_match_the_batch() {
        let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::bsc(0.0).unwrap(), false, 1).unwrap();
        let batch = crate::pipeline::generate(&cfg, 10).unwrap();
        let d = LeakageData::from_batch(&batch).unwrap();
        assert_eq!((d.n(), d.k(), d.len()), (7, 3, 10));
        for i in 0..10 {
            for j in 0..7 {
                assert_eq!(d.z[[i, j]] < 0.0, batch.x[i].get(j));
            }
            for j in 0..3 {
                assert_eq!(d.ms[[i, j]] == 1.0, batch.m_s[i].get(j));
            }
        }
        let set = CodewordSet::generate(&cfg, 0, 10).unwrap();
        assert_eq!(set.noisy(ChannelModel::bsc(0.0).unwrap(), 1, 0), d);
        let a = set.noisy(ChannelModel::bsc(0.3).unwrap(), 1, 5);
        assert_eq!(a, set.noisy(ChannelModel::bsc(0.3).unwrap(), 1, 5));
        assert_ne!(a, set.noisy(ChannelModel::bsc(0.3).unwrap(), 1, 6));
    }
}
