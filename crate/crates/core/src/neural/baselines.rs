//! Reference estimators: MINE (Donsker–Varadhan critic) and vCLUB with a
//! diagonal Gaussian conditional.

use std::f64::consts::{LN_2, PI};

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cnbmm::{check_rows, EVAL_CHUNK};
use super::data::LeakageData;
use super::estimate::{vclub_estimate, ConditionalModel, LeakageReport};
use super::layers::{Linear, Mlp};
use super::tensor::{Graph, ParamSet, Var};
use super::train::Estimator;
use crate::error::{Error, Result};
use crate::oracle::{log_sum_exp, mean_and_stderr};
use crate::rng::{stream, Rng, Role};

/// Full-size critic widths; the Gaussian network shares them.
pub const PAPER_CRITIC_HIDDEN: [usize; 5] = [2048, 4096, 8192, 1024, 512];
/// Critic widths scaled down by 32.
pub const DESK_CRITIC_HIDDEN: [usize; 5] = [64, 128, 256, 32, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub n_in: usize,
    pub k_out: usize,
    pub hidden: Vec<usize>,
}

impl BaselineConfig {
    pub fn desk(n_in: usize, k_out: usize) -> Self {
        Self {
            n_in,
            k_out,
            hidden: DESK_CRITIC_HIDDEN.to_vec(),
        }
    }

    pub fn paper(n_in: usize, k_out: usize) -> Self {
        Self {
            hidden: PAPER_CRITIC_HIDDEN.to_vec(),
            ..Self::desk(n_in, k_out)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.k_out == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid baseline network {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Network {
    trunk: Mlp,
    out: Linear,
}

impl Network {
    fn new(params: &mut ParamSet<f32>, in_dim: usize, hidden: &[usize], out_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Role::Init, 0);
        let trunk = Mlp::new(params, "net", in_dim, hidden, false, &mut rng);
        let out = Linear::new(params, "net.out", trunk.out_dim(), out_dim, &mut rng);
        Self { trunk, out }
    }

    fn forward(&self, g: &mut Graph<f32>, params: &ParamSet<f32>, x: Var) -> Result<Var> {
        let h = self.trunk.forward(g, params, x)?;
        self.out.forward(g, params, h)
    }
}

/// Critic input `[z, 2·m_s − 1]`.
fn critic_input(z: &Array2<f32>, ms: &Array2<f32>) -> Array2<f32> {
    let signs = ms.mapv(|m| 2.0 * m - 1.0);
    ndarray::concatenate(Axis(1), &[z.view(), signs.view()]).expect("row counts agree")
}

/// MINE with the Donsker–Varadhan objective
/// `E_joint[T] − ln E_marginal[e^T]`.
///
/// The gradient of the log-denominator uses an exponential moving average of
/// `E[e^T]` in place of the minibatch mean. Critic outputs on marginal pairs
/// are clamped at [`Mine::CLAMP`] before exponentiation; every clamp event is
/// counted.
#[derive(Clone, Debug)]
pub struct Mine {
    cfg: BaselineConfig,
    net: Network,
    pub params: ParamSet<f32>,
    denominator: Option<f64>,
    pub overflow_clamps: u64,
}

impl Mine {
    pub const CLAMP: f64 = 30.0;
    pub const EMA_RATE: f64 = 0.01;

    pub fn new(cfg: BaselineConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let net = Network::new(&mut params, cfg.n_in + cfg.k_out, &cfg.hidden, 1, seed);
        Ok(Self {
            cfg,
            net,
            params,
            denominator: None,
            overflow_clamps: 0,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    /// Critic values `T(m_s, z)` in nats.
    pub fn critic(&self, params: &ParamSet<f32>, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        check_rows(z, ms, self.cfg.n_in, self.cfg.k_out)?;
        let x = critic_input(z, ms);
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(x.nrows());
            let mut g = Graph::new();
            let xv = g.constant(x.slice(ndarray::s![start..end, ..]).to_owned());
            let t = self.net.forward(&mut g, params, xv)?;
            out.extend(g.value(t).iter().map(|&v| f64::from(v)));
        }
        Ok(out)
    }
}

impl Estimator for Mine {
    fn kind(&self) -> &'static str {
        "mine"
    }

    fn k(&self) -> usize {
        self.cfg.k_out
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn set_params(&mut self, params: ParamSet<f32>) {
        self.params = params;
    }

    fn batch_loss(&mut self, g: &mut Graph<f32>, params: &ParamSet<f32>, batch: &LeakageData, rng: &mut Rng) -> Result<Var> {
        let mut perm: Vec<usize> = (0..batch.len()).collect();
        perm.shuffle(rng);
        let shuffled = batch.ms.select(Axis(0), &perm);
        let joint = g.constant(critic_input(&batch.z, &batch.ms));
        let marginal = g.constant(critic_input(&batch.z, &shuffled));
        let t_joint = self.net.forward(g, params, joint)?;
        let t_marg = self.net.forward(g, params, marginal)?;
        let clamps = g.value(t_marg).iter().filter(|&&t| f64::from(t) > Self::CLAMP).count() as u64;
        if clamps > 0 {
            if self.overflow_clamps == 0 {
                warn!("MINE critic output exceeded {} on a marginal pair; clamping", Self::CLAMP);
            }
            self.overflow_clamps += clamps;
        }
        let clamped = g.clamp(t_marg, f64::NEG_INFINITY, Self::CLAMP);
        let e = g.exp(clamped);
        let mean_e = g.mean_all(e);
        let batch_mean = g.scalar(mean_e);
        let denom = match self.denominator {
            Some(d) => (1.0 - Self::EMA_RATE) * d + Self::EMA_RATE * batch_mean,
            None => batch_mean,
        };
        self.denominator = Some(denom);
        let mean_joint = g.mean_all(t_joint);
        let neg_joint = g.scale(mean_joint, -1.0);
        let corrected = g.scale(mean_e, 1.0 / denom.max(f64::MIN_POSITIVE));
        g.add(neg_joint, corrected)
    }

    fn evaluate(&self, params: &ParamSet<f32>, eval: &LeakageData, rng: &mut Rng) -> Result<LeakageReport> {
        let mut perm: Vec<usize> = (0..eval.len()).collect();
        perm.shuffle(rng);
        let shuffled = eval.ms.select(Axis(0), &perm);
        let t_joint = self.critic(params, &eval.z, &eval.ms)?;
        let t_marg = self.critic(params, &eval.z, &shuffled)?;
        let (pos, stderr) = mean_and_stderr(&t_joint);
        let neg = log_sum_exp(&t_marg) - (t_marg.len() as f64).ln();
        if !(pos.is_finite() && neg.is_finite()) {
            return Err(Error::NonFinite(format!("MINE terms joint={pos} marginal={neg}")));
        }
        Ok(LeakageReport::from_raw(self.kind(), self.cfg.k_out, pos / LN_2, neg / LN_2, stderr / LN_2, eval.len()))
    }
}

/// vCLUB with `q(m_s | z) = N(μ(z), diag σ²(z))`, secrets read as real vectors.
#[derive(Clone, Debug)]
pub struct GaussianClub {
    cfg: BaselineConfig,
    net: Network,
    pub params: ParamSet<f32>,
}

impl GaussianClub {
    pub fn new(cfg: BaselineConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let net = Network::new(&mut params, cfg.n_in, &cfg.hidden, 2 * cfg.k_out, seed);
        Ok(Self { cfg, net, params })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    /// Per-row Gaussian log density in nats, `[b, 1]`.
    fn log_density(&self, g: &mut Graph<f32>, params: &ParamSet<f32>, z: Var, ms: Var) -> Result<Var> {
        let k = self.cfg.k_out;
        let out = self.net.forward(g, params, z)?;
        let mu = g.slice_cols(out, 0, k)?;
        let log_var = g.slice_cols(out, k, k)?;
        let diff = g.sub(ms, mu)?;
        let sq = g.square(diff);
        let neg_log_var = g.scale(log_var, -1.0);
        let inv_var = g.exp(neg_log_var);
        let scaled = g.mul(sq, inv_var)?;
        let terms = g.add(scaled, log_var)?;
        let terms = g.add_scalar(terms, (2.0 * PI).ln());
        let sum = g.sum_rows(terms);
        Ok(g.scale(sum, -0.5))
    }

    pub fn log2_density_with(&self, params: &ParamSet<f32>, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        check_rows(z, ms, self.cfg.n_in, self.cfg.k_out)?;
        let mut out = Vec::with_capacity(z.nrows());
        for start in (0..z.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(z.nrows());
            let mut g = Graph::new();
            let zv = g.constant(z.slice(ndarray::s![start..end, ..]).to_owned());
            let mv = g.constant(ms.slice(ndarray::s![start..end, ..]).to_owned());
            let ld = self.log_density(&mut g, params, zv, mv)?;
            out.extend(g.value(ld).iter().map(|&v| f64::from(v) / LN_2));
        }
        Ok(out)
    }
}

struct GaussianWith<'a> {
    model: &'a GaussianClub,
    params: &'a ParamSet<f32>,
}

impl ConditionalModel for GaussianWith<'_> {
    fn n(&self) -> usize {
        self.model.cfg.n_in
    }

    fn k(&self) -> usize {
        self.model.cfg.k_out
    }

    fn log2_prob(&self, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        self.model.log2_density_with(self.params, z, ms)
    }
}

impl Estimator for GaussianClub {
    fn kind(&self) -> &'static str {
        "gaussian-club"
    }

    fn k(&self) -> usize {
        self.cfg.k_out
    }

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn set_params(&mut self, params: ParamSet<f32>) {
        self.params = params;
    }

    fn batch_loss(&mut self, g: &mut Graph<f32>, params: &ParamSet<f32>, batch: &LeakageData, _rng: &mut Rng) -> Result<Var> {
        let z = g.constant(batch.z.clone());
        let ms = g.constant(batch.ms.clone());
        let ld = self.log_density(g, params, z, ms)?;
        let mean = g.mean_all(ld);
        Ok(g.scale(mean, -1.0))
    }

    fn evaluate(&self, params: &ParamSet<f32>, eval: &LeakageData, rng: &mut Rng) -> Result<LeakageReport> {
        vclub_estimate(&GaussianWith { model: self, params }, eval, self.kind(), rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::ecc::CodeSpec;
    use crate::neural::train::{train, TrainSchedule};
    use crate::pipeline::SystemConfig;

    fn quick(channel: ChannelModel, epochs: usize, lr: f64) -> TrainSchedule {
        TrainSchedule {
            train_samples: 4096,
            eval_samples: 4096,
            batch_size: 128,
            lr,
            ..TrainSchedule::fixed(channel, epochs)
        }
    }

    fn small(n: usize, k: usize) -> BaselineConfig {
        BaselineConfig {
            hidden: vec![32, 32, 16],
            ..BaselineConfig::desk(n, k)
        }
    }

    #[test]
    fn gaussian_density_matches_closed_form() {
        let mut m = GaussianClub::new(small(2, 2), 1).unwrap();
        for i in 0..m.params.len() {
            m.params.get_mut(i).fill(0.0);
        }
        // μ = 0 and log σ² = 0: standard normal per coordinate.
        let z = Array2::zeros((1, 2));
        let ms = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let ld = m.log2_density_with(&m.params, &z, &ms).unwrap()[0];
        let expected = (-0.5 * 1.0 - (2.0 * PI).ln()) / LN_2;
        assert!((ld - expected).abs() < 1e-5);
    }

    #[test]
    fn baselines_report_near_zero_on_independent_data() {
        let ch = ChannelModel::bsc(0.5).unwrap();
        let sys = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ch, true, 21).unwrap();
        let mut mine = Mine::new(small(7, 3), 2).unwrap();
        let r = train(&mut mine, &sys, &quick(ch, 3, 1e-4), 21).unwrap().report;
        assert!(r.raw_bits.abs() <= 0.05 * 3.0, "{r:?}");
        let mut gauss = GaussianClub::new(small(7, 3), 2).unwrap();
        let r = train(&mut gauss, &sys, &quick(ch, 3, 1e-3), 21).unwrap().report;
        assert!(r.raw_bits.abs() <= 0.05 * 3.0, "{r:?}");
    }

    #[test]
    fn mine_projection_never_exceeds_k() {
        let ch = ChannelModel::bsc(0.0).unwrap();
        let sys = SystemConfig::symmetric(2, 0, CodeSpec::identity(2).unwrap(), ch, false, 22).unwrap();
        let mut mine = Mine::new(small(2, 2), 3).unwrap();
        let r = train(&mut mine, &sys, &quick(ch, 4, 1e-3), 22).unwrap().report;
        assert!(r.projected_bits <= 2.0 && r.projected_bits >= 0.0);
        assert!(r.raw_bits > 0.5, "{r:?}");
    }

    #[test]
    fn overflowing_critic_is_clamped_and_counted() {
        let mut mine = Mine::new(small(2, 1), 4).unwrap();
        let idx = mine.params.index_of("net.out.b").unwrap();
        mine.params.get_mut(idx).fill(200.0);
        let data = LeakageData {
            z: Array2::zeros((8, 2)),
            ms: Array2::from_shape_fn((8, 1), |(i, _)| (i % 2) as f32),
        };
        let params = mine.params.clone();
        let mut g = Graph::new();
        let loss = mine.batch_loss(&mut g, &params, &data, &mut stream(1, Role::Misc, 0)).unwrap();
        assert!(g.scalar(loss).is_finite());
        assert_eq!(mine.overflow_clamps, 8);
    }
}
