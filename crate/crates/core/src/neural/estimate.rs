//! vCLUB leakage estimates from any conditional model `q(m_s | z)`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cnbmm::{check_rows, Cnbmm};
use super::data::LeakageData;
use super::tensor::ParamSet;
use crate::channel::ChannelOutput;
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::oracle::{mean_and_stderr, Oracle};
use crate::rng::Rng;

/// A conditional model of the secret given Eve's observation.
pub trait ConditionalModel {
    fn n(&self) -> usize;
    fn k(&self) -> usize;
    /// `log2 q(m_s | z)` for each row pair.
    fn log2_prob(&self, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>>;
}

/// A trained model evaluated with a particular parameter set (usually the
/// EMA shadow).
pub struct WithParams<'a> {
    pub model: &'a Cnbmm,
    pub params: &'a ParamSet<f32>,
}

impl ConditionalModel for WithParams<'_> {
    fn n(&self) -> usize {
        self.model.config().n_in
    }

    fn k(&self) -> usize {
        self.model.config().k_out
    }

    fn log2_prob(&self, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        self.model.log2_prob_with(self.params, z, ms)
    }
}

impl ConditionalModel for Cnbmm {
    fn n(&self) -> usize {
        self.config().n_in
    }

    fn k(&self) -> usize {
        self.config().k_out
    }

    fn log2_prob(&self, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        self.log2_prob_with(&self.params, z, ms)
    }
}

/// The exact posterior packaged as a conditional model. Rows of `z` are read
/// as ±1 symbols for a BSC and as received reals otherwise.
pub struct OracleModel<'a> {
    pub oracle: &'a Oracle,
}

impl OracleModel<'_> {
    fn output(&self, row: ndarray::ArrayView1<f32>) -> ChannelOutput {
        if self.oracle.config().channel_eve.is_soft() {
            ChannelOutput::Soft(row.to_vec())
        } else {
            ChannelOutput::Hard(BitVec::from_bits(&row.iter().map(|&x| u8::from(x < 0.0)).collect::<Vec<_>>()))
        }
    }
}

impl ConditionalModel for OracleModel<'_> {
    fn n(&self) -> usize {
        self.oracle.config().n()
    }

    fn k(&self) -> usize {
        self.oracle.config().k
    }

    fn log2_prob(&self, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        check_rows(z, ms, self.n(), self.k())?;
        z.rows()
            .into_iter()
            .zip(ms.rows())
            .map(|(zr, mr)| {
                let post = self.oracle.posterior(&self.output(zr))?;
                let idx = mr.iter().enumerate().fold(0usize, |acc, (j, &b)| acc | (usize::from(b > 0.5) << j));
                Ok(post.over_secret.log2_prob(idx))
            })
            .collect()
    }
}

/// Estimator state at the end of one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Channel descriptor the epoch trained on.
    pub channel: String,
    /// Crossover probability (BSC) or SNR in dB (AWGN).
    pub difficulty: f64,
    /// Raw bit error rate of Eve's channel at this difficulty.
    pub ber: f64,
    pub train_loss: f64,
    pub raw_bits: f64,
    pub projected_bits: f64,
    pub stderr_bits: f64,
    pub mi_proj_per_bit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub estimator: String,
    pub k: usize,
    pub raw_bits: f64,
    pub projected_bits: f64,
    /// Standard error of the positive-minus-negative per-sample differences.
    pub stderr_bits: f64,
    pub positive_bits: f64,
    pub negative_bits: f64,
    pub eval_samples: usize,
    #[serde(default)]
    pub trace: Vec<EpochRecord>,
}

impl LeakageReport {
    /// Builds a report from a raw estimate, applying the `[0, k]` projection.
    pub fn from_raw(estimator: &str, k: usize, positive: f64, negative: f64, stderr: f64, eval_samples: usize) -> Self {
        let raw = positive - negative;
        Self {
            estimator: estimator.to_string(),
            k,
            raw_bits: raw,
            projected_bits: project(raw, k),
            stderr_bits: stderr,
            positive_bits: positive,
            negative_bits: negative,
            eval_samples,
            trace: Vec::new(),
        }
    }

    pub fn per_bit(&self) -> f64 {
        self.projected_bits / self.k as f64
    }

    /// The report followed by its trace, one JSON object per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut head = self.clone();
        head.trace.clear();
        let mut out = serde_json::to_string(&head)?;
        out.push('\n');
        for rec in &self.trace {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Clamp of a raw estimate onto `[0, k]`; NaN stays NaN.
pub fn project(raw: f64, k: usize) -> f64 {
    if raw.is_nan() {
        raw
    } else {
        raw.clamp(0.0, k as f64)
    }
}

/// vCLUB: mean `log2 q(m_s | z)` over aligned pairs minus the mean over pairs
/// whose secrets are shuffled by a uniform random permutation of the batch.
pub fn vclub_estimate<M: ConditionalModel + ?Sized>(model: &M, data: &LeakageData, estimator: &str, rng: &mut Rng) -> Result<LeakageReport> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut perm: Vec<usize> = (0..data.len()).collect();
    perm.shuffle(rng);
    let shuffled = data.ms.select(ndarray::Axis(0), &perm);
    let pos = model.log2_prob(&data.z, &data.ms)?;
    let neg = model.log2_prob(&data.z, &shuffled)?;
    let diffs: Vec<f64> = pos.iter().zip(&neg).map(|(a, b)| a - b).collect();
    let (_, stderr) = mean_and_stderr(&diffs);
    let (p, _) = mean_and_stderr(&pos);
    let (q, _) = mean_and_stderr(&neg);
    if !(p.is_finite() && q.is_finite()) {
        return Err(Error::NonFinite(format!("vCLUB terms positive={p} negative={q}")));
    }
    Ok(LeakageReport::from_raw(estimator, model.k(), p, q, stderr, data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::ecc::CodeSpec;
    use crate::neural::cnbmm::CnbmmConfig;
    use crate::oracle::Evaluation;
    use crate::pipeline::{generate, SystemConfig};
    use crate::rng::{stream, Role};

    #[test]
    fn projection_clamps() {
        assert_eq!(project(-0.3, 3), 0.0);
        assert_eq!(project(3.2, 3), 3.0);
        assert_eq!(project(1.5, 3), 1.5);
        let r = LeakageReport::from_raw("x", 3, -1.0, -4.2, 0.0, 1);
        assert!((r.raw_bits - 3.2).abs() < 1e-12);
        assert_eq!(r.projected_bits, 3.0);
    }

    #[test]
    fn fair_coin_model_reports_exact_zero() {
        let mut m = Cnbmm::new(
            CnbmmConfig {
                rank: 0,
                ..CnbmmConfig::desk(7, 3)
            },
            1,
        )
        .unwrap();
        for i in 0..m.params.len() {
            if m.params.name(i).starts_with("expert") {
                m.params.get_mut(i).fill(0.0);
            }
        }
        let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::bsc(0.1).unwrap(), true, 5).unwrap();
        let data = LeakageData::from_batch(&generate(&cfg, 300).unwrap()).unwrap();
        let r = vclub_estimate(&m, &data, "cnbmm", &mut stream(1, Role::Permute, 0)).unwrap();
        assert_eq!(r.raw_bits, 0.0);
        assert!((r.positive_bits + 3.0).abs() < 1e-6);
    }

    #[test]
    fn oracle_model_matches_exact_club() {
        let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::bsc(0.1).unwrap(), true, 42).unwrap();
        let oracle = Oracle::new(&cfg).unwrap();
        let exact = oracle.club(Evaluation::Exhaustive).unwrap();
        let data = LeakageData::from_batch(&generate(&cfg, 20_000).unwrap()).unwrap();
        let r = vclub_estimate(&OracleModel { oracle: &oracle }, &data, "oracle", &mut stream(2, Role::Permute, 0)).unwrap();
        assert!(
            (r.raw_bits - exact.club_value).abs() < 4.0 * r.stderr_bits + 0.05,
            "{} vs {} ± {}",
            r.raw_bits,
            exact.club_value,
            r.stderr_bits
        );
        assert!(r.raw_bits > exact.exact_mi);
    }

    #[test]
    fn json_lines_have_one_row_per_epoch() {
        let mut r = LeakageReport::from_raw("cnbmm", 2, -0.5, -1.5, 0.01, 10);
        r.trace = vec![
            EpochRecord {
                epoch: 0,
                channel: "bsc:0".into(),
                difficulty: 0.0,
                ber: 0.0,
                train_loss: 1.0,
                raw_bits: 1.0,
                projected_bits: 1.0,
                stderr_bits: 0.01,
                mi_proj_per_bit: 0.5,
            };
            3
        ];
        let text = r.to_json_lines().unwrap();
        assert_eq!(text.lines().count(), 4);
        let back: EpochRecord = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        assert_eq!(back, r.trace[1]);
    }
}
