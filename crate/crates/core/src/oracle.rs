//! Exact, enumeration-based ground truth for small systems.
//!
//! Every quantity here is computed from the true posterior `P(m | z)`, obtained
//! by enumerating all `2^q` encoder inputs. Exhaustive evaluation additionally
//! enumerates all `2^n` BSC outputs; Monte-Carlo evaluation samples `(m, z)`
//! from the link and reports a standard error next to every estimate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::channel::{ChannelModel, ChannelOutput};
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::parallel;
use crate::pipeline::SystemConfig;
use crate::rng::{stream, Role};

/// Largest `q` for which posteriors are enumerated.
pub const ENUMERATION_BUDGET_LOG2: usize = 24;
/// Largest `n` for which BSC outputs are enumerated.
pub const EXHAUSTIVE_MAX_N: usize = 20;

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if !t.is_finite() {
            self.sum = t;
            return;
        }
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        if !self.sum.is_finite() {
            return self.sum;
        }
        self.sum + self.comp
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut acc = Accumulator::default();
    values.iter().for_each(|&v| acc.add(v));
    let mean = acc.value() / n;
    let mut sq = Accumulator::default();
    values.iter().for_each(|&v| sq.add((v - mean) * (v - mean)));
    let var = if values.len() > 1 { sq.value() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Natural-log log-sum-exp; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// A probability mass function over `0..len`, held in linear and log form.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    p: Vec<f64>,
    ln_p: Vec<f64>,
}

impl Pmf {
    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("empty pmf".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain("pmf weights must be finite and nonnegative".into()));
        }
        let mut total = Accumulator::default();
        weights.iter().for_each(|&w| total.add(w));
        let total = total.value();
        if total <= 0.0 {
            return Err(Error::Domain("pmf weights sum to zero".into()));
        }
        let p: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let ln_p = p.iter().map(|&x| x.ln()).collect();
        Ok(Self { p, ln_p })
    }

    /// Normalizes natural-log weights with log-sum-exp.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::NonFinite("log weight".into()));
        }
        let z = log_sum_exp(log_weights);
        if !z.is_finite() {
            return Err(Error::Domain("all log weights are -inf".into()));
        }
        let ln_p: Vec<f64> = log_weights.iter().map(|&w| w - z).collect();
        let p = ln_p.iter().map(|&l| l.exp()).collect();
        Ok(Self { p, ln_p })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; len])
    }

    pub fn point_mass(len: usize, at: usize) -> Result<Self> {
        let mut w = vec![0.0; len];
        *w.get_mut(at)
            .ok_or_else(|| Error::Domain(format!("point {at} outside pmf of size {len}")))? = 1.0;
        Self::from_weights(w)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    /// Natural logarithms of the probabilities.
    pub fn log_probs(&self) -> &[f64] {
        &self.ln_p
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.p[i]
    }

    pub fn log2_prob(&self, i: usize) -> f64 {
        self.ln_p[i] / std::f64::consts::LN_2
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.p)
    }

    pub fn max_prob(&self) -> f64 {
        self.p.iter().copied().fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.p.iter().enumerate() {
            if x > self.p[best] {
                best = i;
            }
        }
        best
    }

    pub fn min_entropy_bits(&self) -> f64 {
        -self.max_prob().log2()
    }

    pub fn support_size(&self) -> usize {
        self.p.iter().filter(|&&x| x > 0.0).count()
    }

    /// Pushforward under `f: 0..len → 0..out_len`.
    pub fn pushforward(&self, out_len: usize, f: impl Fn(usize) -> usize) -> Result<Self> {
        let mut w = vec![0.0; out_len];
        for (i, &x) in self.p.iter().enumerate() {
            *w.get_mut(f(i))
                .ok_or_else(|| Error::Domain("pushforward target out of range".into()))? += x;
        }
        Self::from_weights(w)
    }
}

/// Shannon entropy in bits with `0·log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let mut acc = Accumulator::default();
    for &x in p {
        if x > 0.0 {
            acc.add(-x * x.log2());
        }
    }
    acc.value()
}

/// Which variable's leakage is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Secret,
    EncoderInput,
}

impl Target {
    /// Entropy of the (uniform) target in bits.
    pub fn bits(self, cfg: &SystemConfig) -> usize {
        match self {
            Self::Secret => cfg.k,
            Self::EncoderInput => cfg.q(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Secret => "secret",
            Self::EncoderInput => "encoder-input",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "secret" => Ok(Self::Secret),
            "encoder-input" | "input" => Ok(Self::EncoderInput),
            _ => Err(Error::Config(format!("unknown target {s:?}"))),
        }
    }
}

/// How an expectation over `Z` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evaluation {
    Exhaustive,
    MonteCarlo { samples: usize },
}

impl Evaluation {
    /// Exhaustive when the system allows it, Monte-Carlo otherwise.
    pub fn auto(cfg: &SystemConfig, samples: usize) -> Self {
        if exhaustive_feasible(cfg) {
            Self::Exhaustive
        } else {
            Self::MonteCarlo { samples }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exhaustive => "exhaustive",
            Self::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

pub fn exhaustive_feasible(cfg: &SystemConfig) -> bool {
    matches!(cfg.channel_eve, ChannelModel::Bsc { .. })
        && cfg.n() <= EXHAUSTIVE_MAX_N
        && cfg.q() <= ENUMERATION_BUDGET_LOG2
}

/// A value in bits with its standard error (zero for exhaustive results).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value_bits: f64,
    pub stderr_bits: f64,
    pub method: Evaluation,
}

/// Exact posterior for one observation.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    /// Indexed by the integer value of the encoder input `m`.
    pub over_m: Pmf,
    /// Indexed by the integer value of the secret `m_s`.
    pub over_secret: Pmf,
    /// Support size `v_z` of the posterior over `m`.
    pub support: usize,
    /// Largest posterior probability `t_z` over `m`.
    pub max_prob: f64,
}

/// Conditional entropy computed two ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CondEntropy {
    /// `H(target) − I(target; Z)`.
    pub via_mi: Estimate,
    /// `E_z[H(P(target | z))]`.
    pub direct: Estimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClubOracle {
    pub club_value: f64,
    pub exact_mi: f64,
    pub gap: f64,
    pub stderr_bits: f64,
    /// `KL(P_{M_s} ⊗ P_Z ‖ P_{M_s Z})`, available for exhaustive evaluation.
    pub kl_product_joint: Option<f64>,
    pub method: Evaluation,
}

/// Expectations over all BSC outputs, accumulated in one pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExhaustiveSummary {
    pub output_mass: f64,
    pub mi_secret: f64,
    pub mi_input: f64,
    pub entropy_secret_given_z: f64,
    pub entropy_input_given_z: f64,
    pub club_positive: f64,
    pub club_negative: f64,
    pub kl_product_joint: f64,
}

/// Result record written by the `oracle` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRecord {
    pub config: String,
    pub target: String,
    pub method: String,
    pub value_bits: f64,
    pub stderr_bits: f64,
}

impl OracleRecord {
    pub fn new(cfg: &SystemConfig, target: &str, est: &Estimate) -> Self {
        Self {
            config: format!("{};k={};b={};uhf={}", cfg.descriptor(), cfg.k, cfg.b, cfg.uhf_enabled),
            target: target.to_string(),
            method: est.method.name().to_string(),
            value_bits: est.value_bits,
            stderr_bits: est.stderr_bits,
        }
    }
}

struct Draw {
    log2_secret: f64,
    log2_input: f64,
    entropy_secret: f64,
    entropy_input: f64,
    negative: f64,
}

/// Enumerated codebook of a system: for every `u = m_s + 2^k·b`, the secret,
/// the encoder input and the codeword.
#[derive(Clone, Debug)]
pub struct Oracle {
    cfg: SystemConfig,
    secret_of: Vec<usize>,
    input_of: Vec<usize>,
    codewords: Vec<BitVec>,
    packed: Option<Vec<u64>>,
}

impl Oracle {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        let q = cfg.q();
        if q > ENUMERATION_BUDGET_LOG2 {
            return Err(Error::Budget {
                required_log2: q,
                budget_log2: ENUMERATION_BUDGET_LOG2,
            });
        }
        let size = 1usize << q;
        let mut secret_of = Vec::with_capacity(size);
        let mut input_of = Vec::with_capacity(size);
        let mut codewords = Vec::with_capacity(size);
        for u in 0..size as u64 {
            let ms = u & ((1u64 << cfg.k) - 1);
            let pad = u >> cfg.k;
            let m = cfg.encoder_input(&BitVec::from_u64(ms, cfg.k), &BitVec::from_u64(pad, cfg.b))?;
            secret_of.push(ms as usize);
            input_of.push(m.to_u64() as usize);
            codewords.push(cfg.code.encode(&m)?);
        }
        let packed = (cfg.n() <= 64).then(|| codewords.iter().map(BitVec::to_u64).collect());
        Ok(Self {
            cfg: cfg.clone(),
            secret_of,
            input_of,
            codewords,
            packed,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn size(&self) -> usize {
        self.codewords.len()
    }

    fn secret_size(&self) -> usize {
        1 << self.cfg.k
    }

    /// Natural-log likelihoods `ln P(z | x_u)` for every `u`.
    fn log_likelihoods(&self, z: &ChannelOutput) -> Result<Vec<f64>> {
        match (self.cfg.channel_eve, z, &self.packed) {
            (ChannelModel::Bsc { p }, ChannelOutput::Hard(bits), Some(packed)) if bits.len() == self.cfg.n() => {
                let n = self.cfg.n();
                let table: Vec<f64> = (0..=n).map(|d| crate::channel::bsc_log_likelihood(p, d, n)).collect();
                let zw = bits.to_u64();
                Ok(packed.iter().map(|&x| table[(x ^ zw).count_ones() as usize]).collect())
            }
            (ch, _, _) => self.codewords.iter().map(|x| ch.log_transition(z, x)).collect(),
        }
    }

    /// Posterior indexed by `u`, together with its secret marginal.
    fn posterior_by_u(&self, z: &ChannelOutput) -> Result<(Pmf, Vec<f64>)> {
        let by_u = Pmf::from_log_weights(&self.log_likelihoods(z)?)?;
        let mut secret = vec![0.0; self.secret_size()];
        for (u, &p) in by_u.probs().iter().enumerate() {
            secret[self.secret_of[u]] += p;
        }
        Ok((by_u, secret))
    }

    pub fn posterior(&self, z: &ChannelOutput) -> Result<ExactPosterior> {
        let (by_u, secret) = self.posterior_by_u(z)?;
        let over_m = by_u.pushforward(self.size(), |u| self.input_of[u])?;
        Ok(ExactPosterior {
            support: over_m.support_size(),
            max_prob: over_m.max_prob(),
            over_secret: Pmf::from_weights(secret)?,
            over_m,
        })
    }

    fn require_exhaustive(&self) -> Result<f64> {
        match self.cfg.channel_eve {
            ChannelModel::Bsc { p } if self.cfg.n() <= EXHAUSTIVE_MAX_N => Ok(p),
            ChannelModel::Bsc { .. } => Err(Error::Budget {
                required_log2: self.cfg.n(),
                budget_log2: EXHAUSTIVE_MAX_N,
            }),
            _ => Err(Error::Config("exhaustive evaluation requires a BSC".into())),
        }
    }

    /// Calls `f(P(z), P(u | z), P(m_s | z))` for every BSC output `z` with
    /// positive probability, in increasing order of `z`.
    pub fn for_each_output(&self, mut f: impl FnMut(u64, f64, &[f64], &[f64])) -> Result<()> {
        let p = self.require_exhaustive()?;
        let n = self.cfg.n();
        let packed = self.packed.as_ref().expect("n <= 20 implies packed codewords");
        let weight: Vec<f64> = (0..=n)
            .map(|d| {
                let pow = |x: f64, e: usize| if e == 0 { 1.0 } else { x.powi(e as i32) };
                pow(p, d) * pow(1.0 - p, n - d)
            })
            .collect();
        let inv_size = 1.0 / self.size() as f64;
        let mut post = vec![0.0; self.size()];
        let mut secret = vec![0.0; self.secret_size()];
        for z in 0..(1u64 << n) {
            let mut total = Accumulator::default();
            for (slot, &x) in post.iter_mut().zip(packed) {
                *slot = weight[(x ^ z).count_ones() as usize];
                total.add(*slot);
            }
            let total = total.value();
            if total == 0.0 {
                continue;
            }
            secret.iter_mut().for_each(|s| *s = 0.0);
            for (u, slot) in post.iter_mut().enumerate() {
                *slot /= total;
                secret[self.secret_of[u]] += *slot;
            }
            f(z, total * inv_size, &post, &secret);
        }
        Ok(())
    }

    pub fn exhaustive_summary(&self) -> Result<ExhaustiveSummary> {
        let k = self.cfg.k as f64;
        let q = self.cfg.q() as f64;
        let ps = 1.0 / self.secret_size() as f64;
        let mut mass = Accumulator::default();
        let mut mi_s = Accumulator::default();
        let mut mi_m = Accumulator::default();
        let mut h_s = Accumulator::default();
        let mut h_m = Accumulator::default();
        let mut pos = Accumulator::default();
        let mut neg = Accumulator::default();
        let mut kl = Accumulator::default();
        self.for_each_output(|_, pz, post, secret| {
            mass.add(pz);
            let hu = entropy_bits(post);
            let hs = entropy_bits(secret);
            h_m.add(pz * hu);
            h_s.add(pz * hs);
            for &x in post {
                if x > 0.0 {
                    mi_m.add(pz * x * (x.log2() + q));
                }
            }
            for &x in secret {
                if x > 0.0 {
                    mi_s.add(pz * x * (x.log2() + k));
                    pos.add(pz * x * x.log2());
                }
                neg.add(pz * ps * x.log2());
                // P(m_s, z) = P(m_s | z) P(z); the product measure is P(m_s) P(z).
                let joint = x * pz;
                kl.add(ps * pz * ((ps * pz).log2() - joint.log2()));
            }
        })?;
        Ok(ExhaustiveSummary {
            output_mass: mass.value(),
            mi_secret: mi_s.value(),
            mi_input: mi_m.value(),
            entropy_secret_given_z: h_s.value(),
            entropy_input_given_z: h_m.value(),
            club_positive: pos.value(),
            club_negative: neg.value(),
            kl_product_joint: kl.value(),
        })
    }

    fn draws(&self, samples: usize) -> Result<Vec<Draw>> {
        if samples == 0 {
            return Err(Error::Config("Monte-Carlo evaluation needs at least one sample".into()));
        }
        let k = self.cfg.k;
        let ps = 1.0 / self.secret_size() as f64;
        parallel::try_map_indexed(samples, |i| {
            let mut rng = stream(self.cfg.seed, Role::Oracle, i as u64);
            let u = (BitVec::random(self.cfg.q(), &mut rng).to_u64()) as usize;
            let z = self.cfg.channel_eve.transmit(&self.codewords[u], &mut rng);
            let (by_u, secret) = self.posterior_by_u(&z)?;
            let ms = u & ((1 << k) - 1);
            let mut negative = 0.0;
            for &x in &secret {
                negative += ps * x.log2();
            }
            Ok(Draw {
                log2_secret: secret[ms].log2(),
                log2_input: by_u.log2_prob(u),
                entropy_secret: entropy_bits(&secret),
                entropy_input: by_u.entropy_bits(),
                negative,
            })
        })
    }

    pub fn mi(&self, target: Target, eval: Evaluation) -> Result<Estimate> {
        match eval {
            Evaluation::Exhaustive => {
                let s = self.exhaustive_summary()?;
                let value_bits = match target {
                    Target::Secret => s.mi_secret,
                    Target::EncoderInput => s.mi_input,
                };
                Ok(Estimate {
                    value_bits,
                    stderr_bits: 0.0,
                    method: eval,
                })
            }
            Evaluation::MonteCarlo { samples } => {
                let h = target.bits(&self.cfg) as f64;
                let terms: Vec<f64> = self
                    .draws(samples)?
                    .iter()
                    .map(|d| h + if target == Target::Secret { d.log2_secret } else { d.log2_input })
                    .collect();
                let (value_bits, stderr_bits) = mean_and_stderr(&terms);
                Ok(Estimate {
                    value_bits,
                    stderr_bits,
                    method: eval,
                })
            }
        }
    }

    pub fn cond_entropy(&self, target: Target, eval: Evaluation) -> Result<CondEntropy> {
        let h = target.bits(&self.cfg) as f64;
        let mi = self.mi(target, eval)?;
        let direct = match eval {
            Evaluation::Exhaustive => {
                let s = self.exhaustive_summary()?;
                Estimate {
                    value_bits: match target {
                        Target::Secret => s.entropy_secret_given_z,
                        Target::EncoderInput => s.entropy_input_given_z,
                    },
                    stderr_bits: 0.0,
                    method: eval,
                }
            }
            Evaluation::MonteCarlo { samples } => {
                let terms: Vec<f64> = self
                    .draws(samples)?
                    .iter()
                    .map(|d| if target == Target::Secret { d.entropy_secret } else { d.entropy_input })
                    .collect();
                let (value_bits, stderr_bits) = mean_and_stderr(&terms);
                Estimate {
                    value_bits,
                    stderr_bits,
                    method: eval,
                }
            }
        };
        Ok(CondEntropy {
            via_mi: Estimate {
                value_bits: h - mi.value_bits,
                ..mi
            },
            direct,
        })
    }

    /// The contrastive log-ratio bound evaluated with the true posterior in
    /// place of a learned conditional model.
    pub fn club(&self, eval: Evaluation) -> Result<ClubOracle> {
        let k = self.cfg.k as f64;
        match eval {
            Evaluation::Exhaustive => {
                let s = self.exhaustive_summary()?;
                let club_value = s.club_positive - s.club_negative;
                Ok(ClubOracle {
                    club_value,
                    exact_mi: s.mi_secret,
                    gap: club_value - s.mi_secret,
                    stderr_bits: 0.0,
                    kl_product_joint: Some(s.kl_product_joint),
                    method: eval,
                })
            }
            Evaluation::MonteCarlo { samples } => {
                let draws = self.draws(samples)?;
                let club: Vec<f64> = draws.iter().map(|d| d.log2_secret - d.negative).collect();
                let mi: Vec<f64> = draws.iter().map(|d| d.log2_secret + k).collect();
                let (club_value, stderr_bits) = mean_and_stderr(&club);
                let (exact_mi, _) = mean_and_stderr(&mi);
                Ok(ClubOracle {
                    club_value,
                    exact_mi,
                    gap: club_value - exact_mi,
                    stderr_bits,
                    kl_product_joint: None,
                    method: eval,
                })
            }
        }
    }
}

pub fn posterior(cfg: &SystemConfig, z: &ChannelOutput) -> Result<ExactPosterior> {
    Oracle::new(cfg)?.posterior(z)
}

pub fn exact_mi(cfg: &SystemConfig, target: Target, eval: Evaluation) -> Result<Estimate> {
    Oracle::new(cfg)?.mi(target, eval)
}

pub fn exact_cond_entropy(cfg: &SystemConfig, target: Target, eval: Evaluation) -> Result<CondEntropy> {
    Oracle::new(cfg)?.cond_entropy(target, eval)
}

pub fn club_with_oracle(cfg: &SystemConfig, eval: Evaluation) -> Result<ClubOracle> {
    Oracle::new(cfg)?.club(eval)
}

/// Mixture of independent Bernoulli vectors over `d` bits.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BernoulliMixture {
    pub weights: Vec<f64>,
    /// `means[c][j] = P(bit j = 1 | component c)`.
    pub means: Vec<Vec<f64>>,
}

const MEAN_CLAMP: f64 = 1e-15;

impl BernoulliMixture {
    pub fn prob(&self, pattern: usize) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(&w, mu)| {
                w * mu
                    .iter()
                    .enumerate()
                    .map(|(j, &m)| if (pattern >> j) & 1 == 1 { m } else { 1.0 - m })
                    .product::<f64>()
            })
            .sum()
    }

    /// Average log2-likelihood per sample over `(pattern, count)` pairs.
    fn mean_log_likelihood(&self, counts: &BTreeMap<usize, usize>, total: usize) -> f64 {
        let mut acc = Accumulator::default();
        for (&pat, &c) in counts {
            acc.add(c as f64 * self.prob(pat).log2());
        }
        acc.value() / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MvbReport {
    pub d: usize,
    pub samples: usize,
    pub distinct_patterns: usize,
    /// Full `2^d`-entry table of empirical frequencies.
    #[serde(skip)]
    pub table: Pmf,
    /// Mean log2-likelihood per sample under the table.
    pub table_log_likelihood: f64,
    pub components: usize,
    pub mixture: BernoulliMixture,
    pub mixture_log_likelihood: f64,
    pub em_iterations: usize,
}

fn pattern_counts(samples: &[BitVec]) -> Result<(usize, BTreeMap<usize, usize>)> {
    let d = samples
        .first()
        .ok_or_else(|| Error::Config("no samples".into()))?
        .len();
    if d == 0 || d > 10 {
        return Err(Error::Config(format!("pattern width {d} outside 1..=10")));
    }
    let mut counts = BTreeMap::new();
    for s in samples {
        if s.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: s.len(),
            });
        }
        *counts.entry(s.to_u64() as usize).or_insert(0) += 1;
    }
    Ok((d, counts))
}

/// Full multivariate-Bernoulli table of empirical frequencies.
pub fn mvb_table(samples: &[BitVec]) -> Result<Pmf> {
    let (d, counts) = pattern_counts(samples)?;
    let mut w = vec![0.0; 1 << d];
    for (&pat, &c) in &counts {
        w[pat] = c as f64;
    }
    Pmf::from_weights(w)
}

/// Fits a `components`-term Bernoulli mixture by expectation-maximization.
///
/// Components start near the most frequent observed patterns, so with at least
/// as many components as distinct patterns the fit reaches the table optimum.
pub fn fit_bernoulli_mixture(
    samples: &[BitVec],
    components: usize,
    max_iters: usize,
) -> Result<(BernoulliMixture, usize)> {
    if components == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    let (d, counts) = pattern_counts(samples)?;
    let total = samples.len();
    let mut ranked: Vec<(usize, usize)> = counts.iter().map(|(&p, &c)| (p, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let eta = 0.05;
    let mut mix = BernoulliMixture {
        weights: vec![1.0 / components as f64; components],
        means: (0..components)
            .map(|c| {
                let pat = ranked[c % ranked.len()].0;
                (0..d).map(|j| if (pat >> j) & 1 == 1 { 1.0 - eta } else { eta }).collect()
            })
            .collect(),
    };
    let mut prev = mix.mean_log_likelihood(&counts, total);
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let mut w_acc = vec![0.0; components];
        let mut m_acc = vec![vec![0.0; d]; components];
        for (&pat, &c) in &counts {
            let joint: Vec<f64> = (0..components)
                .map(|k| {
                    mix.weights[k]
                        * mix.means[k]
                            .iter()
                            .enumerate()
                            .map(|(j, &m)| if (pat >> j) & 1 == 1 { m } else { 1.0 - m })
                            .product::<f64>()
                })
                .collect();
            let norm: f64 = joint.iter().sum();
            for k in 0..components {
                let r = c as f64 * joint[k] / norm;
                w_acc[k] += r;
                for (j, acc) in m_acc[k].iter_mut().enumerate() {
                    if (pat >> j) & 1 == 1 {
                        *acc += r;
                    }
                }
            }
        }
        for k in 0..components {
            mix.weights[k] = w_acc[k] / total as f64;
            if w_acc[k] > 0.0 {
                for j in 0..d {
                    mix.means[k][j] = (m_acc[k][j] / w_acc[k]).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP);
                }
            }
        }
        let ll = mix.mean_log_likelihood(&counts, total);
        if (ll - prev).abs() < 1e-13 {
            break;
        }
        prev = ll;
    }
    Ok((mix, iters))
}

/// Compares the full table with a `components`-term mixture on the same data.
pub fn mvb_fit_check(samples: &[BitVec], components: usize) -> Result<MvbReport> {
    let (d, counts) = pattern_counts(samples)?;
    let table = mvb_table(samples)?;
    let total = samples.len();
    let mut acc = Accumulator::default();
    for (&pat, &c) in &counts {
        acc.add(c as f64 * table.log2_prob(pat));
    }
    let (mixture, em_iterations) = fit_bernoulli_mixture(samples, components, 5_000)?;
    Ok(MvbReport {
        d,
        samples: total,
        distinct_patterns: counts.len(),
        table,
        table_log_likelihood: acc.value() / total as f64,
        components,
        mixture_log_likelihood: mixture.mean_log_likelihood(&counts, total),
        mixture,
        em_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecc::CodeSpec;
    use crate::gf2::Gf2Matrix;

    fn hamming(p: f64, uhf: bool) -> SystemConfig {
        SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::bsc(p).unwrap(), uhf, 42).unwrap()
    }

    fn identity(p: f64) -> SystemConfig {
        SystemConfig::symmetric(3, 2, CodeSpec::identity(5).unwrap(), ChannelModel::bsc(p).unwrap(), false, 1).unwrap()
    }

    #[test]
    fn pmf_normalization_and_entropy() {
        let p = Pmf::from_log_weights(&[0.0, 0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p.support_size(), 3);
        assert!((p.entropy_bits() - 3f64.log2()).abs() < 1e-12);
        assert!((p.min_entropy_bits() - 3f64.log2()).abs() < 1e-12);
        let big = Pmf::from_log_weights(&[-1000.0, -1001.0]).unwrap();
        assert!((big.prob(0) - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
        assert!(Pmf::from_weights(vec![1.0, -0.1]).is_err());
        assert!(Pmf::from_log_weights(&[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn point_mass_posterior_on_noiseless_identity() {
        let cfg = identity(0.0);
        let oracle = Oracle::new(&cfg).unwrap();
        let m = BitVec::from_u64(0b10110, 5);
        let post = oracle.posterior(&ChannelOutput::Hard(m.clone())).unwrap();
        assert_eq!(post.support, 1);
        assert_eq!(post.max_prob, 1.0);
        assert_eq!(post.over_m.argmax(), 0b10110);
        assert_eq!(post.over_secret.argmax(), 0b110);
    }

    #[test]
    fn uniform_posterior_on_useless_channel() {
        let cfg = hamming(0.5, true);
        let post = posterior(&cfg, &ChannelOutput::Hard(BitVec::from_u64(0b1011001, 7))).unwrap();
        assert_eq!(post.support, 16);
        assert!((post.max_prob - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_naive_bayes() {
        // Independent evaluation: enumerate m directly, hash with A, encode
        // through the explicit Hamming generator matrix, multiply per-bit
        // likelihoods.
        let p: f64 = 0.1;
        let cfg = hamming(p, true);
        let oracle = Oracle::new(&cfg).unwrap();
        let a: &Gf2Matrix = cfg.uhf().unwrap().matrix();
        let g = Gf2Matrix::from_nested(&[
            &[1, 0, 0, 0, 1, 1, 0],
            &[0, 1, 0, 0, 1, 0, 1],
            &[0, 0, 1, 0, 0, 1, 1],
            &[0, 0, 0, 1, 1, 1, 1],
        ])
        .unwrap();
        for zv in 0..128u64 {
            let z = BitVec::from_u64(zv, 7);
            let mut joint_m = [0.0f64; 16];
            for (mv, slot) in joint_m.iter_mut().enumerate() {
                let x = g.left_mul(&BitVec::from_u64(mv as u64, 4)).unwrap();
                *slot = (0..7).map(|i| if x.get(i) == z.get(i) { 1.0 - p } else { p }).product();
            }
            let total: f64 = joint_m.iter().sum();
            let mut secret = [0.0f64; 8];
            for (mv, &w) in joint_m.iter().enumerate() {
                let ms = a.left_mul(&BitVec::from_u64(mv as u64, 4)).unwrap().truncate(3).to_u64();
                secret[ms as usize] += w / total;
            }
            let post = oracle.posterior(&ChannelOutput::Hard(z)).unwrap();
            for mv in 0..16 {
                assert!((post.over_m.prob(mv) - joint_m[mv] / total).abs() < 1e-14);
            }
            for ms in 0..8 {
                assert!((post.over_secret.prob(ms) - secret[ms]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mi_endpoints() {
        let useless = exact_mi(&hamming(0.5, true), Target::Secret, Evaluation::Exhaustive).unwrap();
        assert!(useless.value_bits.abs() < 1e-9);
        let clean = exact_mi(&identity(0.0), Target::Secret, Evaluation::Exhaustive).unwrap();
        assert!((clean.value_bits - 3.0).abs() < 1e-12);
        let clean_input = exact_mi(&identity(0.0), Target::EncoderInput, Evaluation::Exhaustive).unwrap();
        assert!((clean_input.value_bits - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mi_properties_over_crossover_grid() {
        for uhf in [false, true] {
            let mut prev = f64::INFINITY;
            for i in 0..=5 {
                let cfg = hamming(0.1 * i as f64, uhf);
                let o = Oracle::new(&cfg).unwrap();
                let s = o.exhaustive_summary().unwrap();
                assert!((s.output_mass - 1.0).abs() < 1e-12);
                assert!(s.mi_secret >= -1e-12 && s.mi_secret <= 3.0 + 1e-12);
                assert!(s.mi_secret <= s.mi_input + 1e-12);
                assert!(s.mi_secret <= prev + 1e-12, "uhf={uhf} p={}", 0.1 * i as f64);
                prev = s.mi_secret;
                assert!((3.0 - s.mi_secret - s.entropy_secret_given_z).abs() < 1e-9);
                assert!((4.0 - s.mi_input - s.entropy_input_given_z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn exhaustive_and_monte_carlo_agree() {
        let cfg = hamming(0.1, true);
        let o = Oracle::new(&cfg).unwrap();
        let ex = o.mi(Target::Secret, Evaluation::Exhaustive).unwrap();
        let mc = o.mi(Target::Secret, Evaluation::MonteCarlo { samples: 100_000 }).unwrap();
        assert!((ex.value_bits - mc.value_bits).abs() < 3.0 * mc.stderr_bits);
        let h = o.cond_entropy(Target::Secret, Evaluation::MonteCarlo { samples: 100_000 }).unwrap();
        let tol = 3.0 * (h.via_mi.stderr_bits + h.direct.stderr_bits);
        assert!((h.via_mi.value_bits - h.direct.value_bits).abs() < tol);
    }

    #[test]
    fn club_gap_is_kl_of_product_against_joint() {
        let o = Oracle::new(&hamming(0.1, true)).unwrap();
        let c = o.club(Evaluation::Exhaustive).unwrap();
        assert!(c.gap >= 0.0);
        assert!((c.gap - c.kl_product_joint.unwrap()).abs() < 1e-9);

        let indep = club_with_oracle(&hamming(0.5, true), Evaluation::Exhaustive).unwrap();
        assert!(indep.club_value.abs() < 1e-12 && indep.gap.abs() < 1e-12);

        let det = club_with_oracle(&identity(0.0), Evaluation::Exhaustive).unwrap();
        assert!(det.club_value >= det.exact_mi);
        assert!((det.exact_mi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn budgets_are_enforced() {
        let awgn = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::awgn_sigma(1.0).unwrap(), true, 1).unwrap();
        assert!(exact_mi(&awgn, Target::Secret, Evaluation::Exhaustive).is_err());
        assert_eq!(Evaluation::auto(&awgn, 10), Evaluation::MonteCarlo { samples: 10 });
        let big = SystemConfig::symmetric(13, 12, CodeSpec::identity(25).unwrap(), ChannelModel::bsc(0.1).unwrap(), false, 1).unwrap();
        assert!(matches!(Oracle::new(&big), Err(Error::Budget { required_log2: 25, .. })));
    }

    #[test]
    fn awgn_monte_carlo_is_finite_and_bounded() {
        let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), ChannelModel::awgn_snr_db(0.0).unwrap(), true, 3).unwrap();
        let e = exact_mi(&cfg, Target::Secret, Evaluation::MonteCarlo { samples: 5_000 }).unwrap();
        assert!(e.value_bits > 0.0 && e.value_bits < 3.0 && e.stderr_bits > 0.0);
    }

    fn patterns(values: &[u64], d: usize) -> Vec<BitVec> {
        values.iter().map(|&v| BitVec::from_u64(v, d)).collect()
    }

    #[test]
    fn mvb_table_and_mixture() {
        let zeros = mvb_fit_check(&patterns(&[0; 20], 3), 1).unwrap();
        assert_eq!(zeros.table.prob(0), 1.0);
        assert!(zeros.table_log_likelihood.abs() < 1e-12);

        // XOR-correlated pair: patterns 00 and 11 equally often. The best
        // single product distribution is uniform (−2 bits); the table gets −1.
        let xor = patterns(&[0, 3, 0, 3, 3, 0, 0, 3], 2);
        let one = mvb_fit_check(&xor, 1).unwrap();
        assert!((one.table_log_likelihood + 1.0).abs() < 1e-12);
        assert!((one.mixture_log_likelihood + 2.0).abs() < 1e-9);
        let full = mvb_fit_check(&xor, 4).unwrap();
        assert!((full.mixture_log_likelihood - full.table_log_likelihood).abs() < 1e-6);
    }

    #[test]
    fn full_capacity_mixture_matches_table_on_random_data() {
        let mut rng = stream(5, Role::Misc, 0);
        let data: Vec<BitVec> = (0..2_000)
            .map(|_| {
                let v = BitVec::random(4, &mut rng);
                // correlate bit 3 with bit 0
                let mut w = v.clone();
                w.set(3, v.get(0) ^ (v.get(1) & v.get(2)));
                w
            })
            .collect();
        let r = mvb_fit_check(&data, 16).unwrap();
        assert!(r.mixture_log_likelihood <= r.table_log_likelihood + 1e-9);
        assert!((r.mixture_log_likelihood - r.table_log_likelihood).abs() < 1e-6);
        let small = mvb_fit_check(&data, 2).unwrap();
        assert!(small.mixture_log_likelihood < r.table_log_likelihood - 1e-3);
    }
}
