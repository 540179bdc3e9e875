//! Curriculum training loop shared by every neural estimator.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cnbmm::Cnbmm;
use super::data::{CodewordSet, LeakageData};
use super::estimate::{vclub_estimate, EpochRecord, LeakageReport, WithParams};
use super::optim::{clip_global_norm, Adam, AdamConfig, Ema};
use super::tensor::{Graph, ParamSet, Var};
use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::pipeline::SystemConfig;
use crate::rng::{derive_seed, stream, Rng, Role};

/// Offset of the evaluation records in the message stream, keeping them
/// disjoint from any training set.
pub const EVAL_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Eve's channel for each epoch.
    pub channels: Vec<ChannelModel>,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub clip_norm: f64,
}

impl TrainSchedule {
    fn base(channels: Vec<ChannelModel>) -> Self {
        Self {
            channels,
            train_samples: 100_000,
            eval_samples: 10_000,
            batch_size: 512,
            lr: 1e-3,
            weight_decay: 1e-9,
            ema_decay: 0.999,
            clip_norm: 5.0,
        }
    }

    /// `P_e` from `start` upward in steps of `step`, `epochs_per_stage`
    /// epochs each, ending at `end` inclusive.
    pub fn bsc_curriculum(start: f64, end: f64, step: f64, epochs_per_stage: usize) -> Result<Self> {
        let stages = stage_values(start, end, step)?;
        let mut channels = Vec::new();
        for p in stages {
            let ch = ChannelModel::bsc(p)?;
            channels.extend(std::iter::repeat_n(ch, epochs_per_stage));
        }
        Ok(Self::base(channels))
    }

    /// SNR from `start_db` down by `step_db` per stage to `end_db` inclusive.
    pub fn awgn_curriculum(start_db: f64, end_db: f64, step_db: f64, epochs_per_stage: usize) -> Result<Self> {
        let stages = stage_values(start_db, end_db, step_db)?;
        let mut channels = Vec::new();
        for s in stages {
            let ch = ChannelModel::awgn_snr_db(s)?;
            channels.extend(std::iter::repeat_n(ch, epochs_per_stage));
        }
        Ok(Self::base(channels))
    }

    /// The standard BSC curriculum: `P_e = 0, 0.05, …, 0.5`, ten epochs each.
    pub fn standard_bsc() -> Self {
        Self::bsc_curriculum(0.0, 0.5, 0.05, 10).expect("valid curriculum")
    }

    /// The standard AWGN curriculum: 10 dB down to −10 dB in 2 dB steps.
    pub fn standard_awgn() -> Self {
        Self::awgn_curriculum(10.0, -10.0, -2.0, 10).expect("valid curriculum")
    }

    pub fn fixed(channel: ChannelModel, epochs: usize) -> Self {
        Self::base(vec![channel; epochs])
    }

    pub fn epochs(&self) -> usize {
        self.channels.len()
    }

    /// Epoch indices closing each run of equal channels, with that channel.
    pub fn stage_ends(&self) -> Vec<(usize, ChannelModel)> {
        let mut out = Vec::new();
        for (i, ch) in self.channels.iter().enumerate() {
            if self.channels.get(i + 1) != Some(ch) {
                out.push((i, *ch));
            }
        }
        out
    }

    /// Keeps every `factor`-th epoch of each stage (at least one per stage).
    pub fn shortened(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut channels = Vec::new();
        let mut start = 0;
        for (end, ch) in self.stage_ends() {
            let len = end + 1 - start;
            channels.extend(std::iter::repeat_n(ch, len.div_ceil(factor)));
            start = end + 1;
        }
        Self { channels, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.ema_decay, self.clip_norm];
        if self.channels.is_empty()
            || self.train_samples == 0
            || self.eval_samples < 2
            || self.batch_size == 0
            || positive.iter().any(|&x| !(x > 0.0 && x.is_finite()))
            || self.ema_decay >= 1.0
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::Config(format!("invalid training schedule: {self:?}")));
        }
        let soft = self.channels[0].is_soft();
        if self.channels.iter().any(|c| c.is_soft() != soft) {
            return Err(Error::Config("a schedule cannot mix hard and soft channels".into()));
        }
        Ok(())
    }
}

fn stage_values(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if step == 0.0 || !((end - start) / step >= -1e-9) {
        return Err(Error::Config(format!("curriculum {start} → {end} with step {step} never terminates")));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

/// A trainable estimator whose parameters are held by the training loop.
pub trait Estimator {
    fn kind(&self) -> &'static str;
    fn k(&self) -> usize;
    fn params(&self) -> &ParamSet<f32>;
    fn set_params(&mut self, params: ParamSet<f32>);
    /// Minibatch objective to minimize.
    fn batch_loss(&mut self, g: &mut Graph<f32>, params: &ParamSet<f32>, batch: &LeakageData, rng: &mut Rng) -> Result<Var>;
    fn evaluate(&self, params: &ParamSet<f32>, eval: &LeakageData, rng: &mut Rng) -> Result<LeakageReport>;
}

impl Estimator for Cnbmm {
    fn kind(&self) -> &'static str {
        "cnbmm"
    }

    fn k(&self) -> usize {
        self.config().k_out
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn set_params(&mut self, params: ParamSet<f32>) {
        self.params = params;
    }

    fn batch_loss(&mut self, g: &mut Graph<f32>, params: &ParamSet<f32>, batch: &LeakageData, _rng: &mut Rng) -> Result<Var> {
        Ok(self.loss(g, params, &batch.z, &batch.ms)?.total)
    }

    fn evaluate(&self, params: &ParamSet<f32>, eval: &LeakageData, rng: &mut Rng) -> Result<LeakageReport> {
        vclub_estimate(&WithParams { model: self, params }, eval, self.kind(), rng)
    }
}

pub struct TrainOutcome {
    /// Evaluation at the final epoch, carrying the per-epoch trace.
    pub report: LeakageReport,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// EMA shadow parameters, used for every reported estimate.
    pub ema: ParamSet<f32>,
}

impl TrainOutcome {
    /// The trace record closing each stage of the schedule.
    pub fn stage_reports(&self, schedule: &TrainSchedule) -> Vec<EpochRecord> {
        schedule
            .stage_ends()
            .into_iter()
            .filter_map(|(e, _)| self.report.trace.get(e).cloned())
            .collect()
    }
}

/// Trains `est` on records of `sys` passed through the scheduled channels.
///
/// Each epoch re-noises a fixed set of training codewords at the epoch's
/// difficulty, runs shuffled minibatch Adam steps with clipping, updates the
/// EMA shadow, and evaluates the shadow on a disjoint held-out set.
pub fn train<E: Estimator>(est: &mut E, sys: &SystemConfig, schedule: &TrainSchedule, seed: u64) -> Result<TrainOutcome> {
    schedule.validate()?;
    let train_set = CodewordSet::generate(sys, 0, schedule.train_samples)?;
    let eval_set = CodewordSet::generate(sys, EVAL_STREAM_OFFSET, schedule.eval_samples)?;
    let noise_seed = derive_seed(seed, 0x6e6f697365);
    let mut params = est.params().clone();
    let mut opt = Adam::new(
        AdamConfig {
            lr: schedule.lr,
            weight_decay: schedule.weight_decay,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut ema = Ema::new(schedule.ema_decay, &params);
    let mut step_losses = Vec::new();
    let mut trace = Vec::with_capacity(schedule.epochs());
    let mut last_finite = f64::NAN;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut final_report = None;
    info!(
        "training {} ({} parameters) for {} epochs on {}",
        est.kind(),
        params.scalar_count(),
        schedule.epochs(),
        sys.descriptor()
    );
    for (epoch, &channel) in schedule.channels.iter().enumerate() {
        let data = train_set.noisy(channel, noise_seed, epoch as u64);
        order.shuffle(&mut stream(seed, Role::Shuffle, epoch as u64));
        let mut batch_rng = stream(seed, Role::Misc, epoch as u64);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let batch = data.select(chunk);
            let mut g = Graph::new();
            let loss = est.batch_loss(&mut g, &params, &batch, &mut batch_rng)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} loss is {value} at epoch {epoch}, batch {b}; last finite loss {last_finite}",
                    est.kind()
                )));
            }
            last_finite = value;
            let mut grads = g.backward(loss, params.len());
            clip_global_norm(&mut grads, schedule.clip_norm);
            opt.step(&mut params, &grads);
            if !params.all_finite() {
                return Err(Error::NonFinite(format!(
                    "{} parameters diverged at epoch {epoch}, batch {b}; last finite loss {last_finite}",
                    est.kind()
                )));
            }
            ema.update(&params);
            step_losses.push(value);
            epoch_loss += value;
            batches += 1;
        }
        let eval = eval_set.noisy(channel, noise_seed, EVAL_STREAM_OFFSET + epoch as u64);
        let report = est.evaluate(&ema.shadow, &eval, &mut stream(seed, Role::Permute, epoch as u64))?;
        let rec = EpochRecord {
            epoch,
            channel: channel.descriptor(),
            difficulty: channel.snr_db().unwrap_or_else(|| channel.bit_error_rate()),
            ber: channel.bit_error_rate(),
            train_loss: epoch_loss / batches as f64,
            raw_bits: report.raw_bits,
            projected_bits: report.projected_bits,
            stderr_bits: report.stderr_bits,
            mi_proj_per_bit: report.per_bit(),
        };
        debug!("{}", serde_json::to_string(&rec)?);
        trace.push(rec);
        final_report = Some(report);
    }
    let mut report = final_report.expect("at least one epoch");
    report.trace = trace;
    est.set_params(params);
    Ok(TrainOutcome {
        report,
        step_losses,
        ema: ema.shadow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecc::CodeSpec;
    use crate::neural::cnbmm::CnbmmConfig;

    #[test]
    fn standard_curricula() {
        let bsc = TrainSchedule::standard_bsc();
        assert_eq!(bsc.epochs(), 110);
        let ends = bsc.stage_ends();
        assert_eq!(ends.len(), 11);
        assert_eq!(ends[0].0, 9);
        assert_eq!(ends[10].1, ChannelModel::bsc(0.5).unwrap());
        assert_eq!(bsc.channels[11], ChannelModel::bsc(0.05).unwrap());
        let awgn = TrainSchedule::standard_awgn();
        assert_eq!(awgn.epochs(), 110);
        assert!((awgn.channels[0].snr_db().unwrap() - 10.0).abs() < 1e-9);
        assert!((awgn.channels[109].snr_db().unwrap() + 10.0).abs() < 1e-9);
        let short = bsc.shortened(4);
        assert_eq!(short.epochs(), 33);
        assert_eq!(short.stage_ends().len(), 11);
    }

    #[test]
    fn schedules_are_validated() {
        let mut s = TrainSchedule::fixed(ChannelModel::bsc(0.1).unwrap(), 2);
        assert!(s.validate().is_ok());
        s.batch_size = 0;
        assert!(s.validate().is_err());
        let mut mixed = TrainSchedule::fixed(ChannelModel::bsc(0.1).unwrap(), 1);
        mixed.channels.push(ChannelModel::awgn_snr_db(0.0).unwrap());
        assert!(mixed.validate().is_err());
        assert!(TrainSchedule::bsc_curriculum(0.0, 0.5, -0.1, 1).is_err());
    }

    fn small_model(n: usize, k: usize) -> Cnbmm {
        Cnbmm::new(
            CnbmmConfig {
                gating_hidden: vec![16, 8],
                expert_hidden: vec![32, 32],
                ..CnbmmConfig::desk(n, k)
            },
            3,
        )
        .unwrap()
    }

    fn quick(channel: ChannelModel, epochs: usize) -> TrainSchedule {
        TrainSchedule {
            train_samples: 4096,
            eval_samples: 2048,
            batch_size: 128,
            lr: 3e-3,
            ..TrainSchedule::fixed(channel, epochs)
        }
    }

    #[test]
    fn memorizes_a_deterministic_link() {
        let sys = SystemConfig::symmetric(4, 0, CodeSpec::identity(4).unwrap(), ChannelModel::bsc(0.0).unwrap(), false, 11).unwrap();
        let mut model = small_model(4, 4);
        let out = train(&mut model, &sys, &quick(ChannelModel::bsc(0.0).unwrap(), 8), 11).unwrap();
        assert!(out.report.projected_bits >= 0.9 * 4.0, "{:?}", out.report);
        let window = 10;
        let means: Vec<f64> = out
            .step_losses
            .chunks(window)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        assert!(means.windows(2).all(|w| w[1] <= w[0] + 0.05), "{means:?}");
        assert!(means.last().unwrap() < &(means[0] * 0.5));
    }

    #[test]
    fn independent_link_leaks_nothing() {
        let sys = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::bsc(0.5).unwrap(), true, 12).unwrap();
        let mut model = small_model(7, 3);
        let out = train(&mut model, &sys, &quick(ChannelModel::bsc(0.5).unwrap(), 4), 12).unwrap();
        assert!(out.report.projected_bits <= 0.05 * 3.0, "{:?}", out.report);
    }

    #[test]
    fn training_is_reproducible() {
        let sys = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::bsc(0.1).unwrap(), true, 13).unwrap();
        let schedule = TrainSchedule {
            train_samples: 512,
            eval_samples: 256,
            ..quick(ChannelModel::bsc(0.1).unwrap(), 2)
        };
        let run = || {
            let mut m = small_model(7, 3);
            let out = train(&mut m, &sys, &schedule, 13).unwrap();
            (m.params, out.ema, out.step_losses)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}
