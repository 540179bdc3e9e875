//! Closed-loop choice of the hash output size `k`.
//!
//! Starting from an initial `k0`, each iteration builds the system for the
//! current `k` (padding `b = q − k`), estimates the leakage `I(M_s; Z^n)`, and
//! moves `k` by one bit towards the tolerated leakage. The search stops when
//! the estimate crosses the tolerance between consecutive iterations.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::Serialize;

use crate::bounds::{k_init, minimize_b, BoundConfig, GapReport, KInit, PsiSamples};
use crate::channel::ChannelModel;
use crate::ecc::CodeSpec;
use crate::error::{Error, Result};
use crate::neural::{train, BaselineConfig, Cnbmm, CnbmmConfig, GaussianClub, Mine, TrainSchedule};
use crate::oracle::{exact_cond_entropy, exact_mi, Evaluation, Target};
use crate::pipeline::SystemConfig;

/// Leakage differences smaller than this count as hitting the tolerance.
pub const DEAD_BAND: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Oracle,
    Cnbmm,
    GaussianClub,
    Mine,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::Cnbmm => "cnbmm",
            Self::GaussianClub => "gaussian-club",
            Self::Mine => "mine",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "cnbmm" => Ok(Self::Cnbmm),
            "gaussian-club" | "gauss" | "club" => Ok(Self::GaussianClub),
            "mine" => Ok(Self::Mine),
            _ => Err(Error::Config(format!("unknown estimator '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrainPolicy {
    /// A new estimator trained on the full schedule for each `k`.
    FreshPerK,
    /// As above with a quarter of the epochs per stage.
    ReducedEpochs,
}

impl FromStr for RetrainPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh-per-k" => Ok(Self::FreshPerK),
            "reduced-epochs" => Ok(Self::ReducedEpochs),
            _ => Err(Error::Config(format!("unknown retrain policy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DesignConfig {
    /// Tolerated leakage in bits.
    pub max_leakage: f64,
    pub code: CodeSpec,
    pub channel_eve: ChannelModel,
    pub channel_bob: ChannelModel,
    pub uhf_enabled: bool,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub retrain: RetrainPolicy,
    pub max_iters: usize,
    /// Starting point; derived from the entropy bound when absent.
    pub k0: Option<usize>,
    /// Monte-Carlo size for oracle estimates beyond the enumeration budget.
    pub oracle_samples: usize,
    pub bounds: BoundConfig,
    pub schedule: TrainSchedule,
    pub desk_widths: bool,
}

impl DesignConfig {
    pub fn new(max_leakage: f64, code: CodeSpec, channel: ChannelModel, estimator: EstimatorKind, seed: u64) -> Self {
        Self {
            max_leakage,
            code,
            channel_eve: channel,
            channel_bob: channel,
            uhf_enabled: true,
            seed,
            estimator,
            retrain: RetrainPolicy::FreshPerK,
            max_iters: 32,
            k0: None,
            oracle_samples: 20_000,
            bounds: BoundConfig::default(),
            schedule: TrainSchedule::fixed(channel, 20),
            desk_widths: true,
        }
    }

    pub fn q(&self) -> usize {
        self.code.q_in()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_leakage > 0.0 && self.max_leakage.is_finite()) {
            return Err(Error::Config("tolerated leakage must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.q() < 2 {
            return Err(Error::Config("hash design needs q ≥ 2".into()));
        }
        if let Some(k0) = self.k0 {
            if !(1..self.q()).contains(&k0) {
                return Err(Error::Config(format!("k0 = {k0} outside [1, {}]", self.q() - 1)));
            }
        }
        Ok(())
    }

    pub fn system(&self, k: usize) -> Result<SystemConfig> {
        SystemConfig::new(
            k,
            self.q() - k,
            self.code.clone(),
            self.channel_eve,
            self.channel_bob,
            self.uhf_enabled,
            self.seed,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Increase,
    Decrease,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    SignChange,
    ExactHit,
    IterCap,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignStep {
    pub iteration: usize,
    pub k: usize,
    pub leakage_bits: f64,
    pub decision: Decision,
}

/// Starting point derived from `H(M | Z^n)` and the gap correction `g`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialPoint {
    pub h_cond_bits: f64,
    pub gap: GapReport,
    pub k_init: KInit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignTrace {
    pub code: String,
    pub channel: String,
    pub estimator: EstimatorKind,
    pub max_leakage: f64,
    pub k0: usize,
    pub initial: Option<InitialPoint>,
    pub steps: Vec<DesignStep>,
    pub final_k: usize,
    pub final_leakage: f64,
    pub termination: Termination,
}

impl DesignTrace {
    /// Number of changes of `k`.
    pub fn iterations(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    /// One JSON object per iteration followed by a summary object.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        let mut summary = self.clone();
        summary.steps.clear();
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        Ok(out)
    }
}

/// `k0` from the exact conditional entropy of the encoder input and the
/// minimized gap correction, both evaluated on the system at `k = q − 1`.
pub fn initial_point(cfg: &DesignConfig) -> Result<InitialPoint> {
    let sys = cfg.system(cfg.q() - 1)?;
    let eval = Evaluation::auto(&sys, cfg.oracle_samples);
    let h = exact_cond_entropy(&sys, Target::EncoderInput, eval)?.via_mi.value_bits;
    let samples = PsiSamples::draw(&sys, cfg.bounds.mc_samples)?;
    let mut gap = minimize_b(&samples, &cfg.bounds)?;
    let ki = k_init(h, gap.g_bits, cfg.q())?;
    gap.k0 = Some(ki.k0);
    Ok(InitialPoint {
        h_cond_bits: h,
        gap,
        k_init: ki,
    })
}

/// Projected leakage estimate for the system with hash output size `k`.
pub fn estimate_leakage(cfg: &DesignConfig, k: usize) -> Result<f64> {
    let sys = cfg.system(k)?;
    let schedule = match cfg.retrain {
        RetrainPolicy::FreshPerK => cfg.schedule.clone(),
        RetrainPolicy::ReducedEpochs => cfg.schedule.shortened(4),
    };
    let (n, seed) = (sys.n(), cfg.seed);
    let report = match cfg.estimator {
        EstimatorKind::Oracle => {
            let est = exact_mi(&sys, Target::Secret, Evaluation::auto(&sys, cfg.oracle_samples))?;
            return Ok(est.value_bits.clamp(0.0, k as f64));
        }
        EstimatorKind::Cnbmm => {
            let mc = if cfg.desk_widths {
                CnbmmConfig::desk(n, k)
            } else {
                CnbmmConfig::paper(n, k)
            };
            train(&mut Cnbmm::new(mc, seed)?, &sys, &schedule, seed)?.report
        }
        EstimatorKind::GaussianClub => {
            let bc = baseline(cfg, n, k);
            train(&mut GaussianClub::new(bc, seed)?, &sys, &schedule, seed)?.report
        }
        EstimatorKind::Mine => {
            let bc = baseline(cfg, n, k);
            let schedule = TrainSchedule { lr: 1e-5, ..schedule };
            train(&mut Mine::new(bc, seed)?, &sys, &schedule, seed)?.report
        }
    };
    Ok(report.projected_bits)
}

fn baseline(cfg: &DesignConfig, n: usize, k: usize) -> BaselineConfig {
    if cfg.desk_widths {
        BaselineConfig::desk(n, k)
    } else {
        BaselineConfig::paper(n, k)
    }
}

fn side(leak: f64, eps: f64) -> f64 {
    if (leak - eps).abs() <= DEAD_BAND {
        0.0
    } else {
        (leak - eps).signum()
    }
}

/// Runs the search with [`estimate_leakage`].
pub fn design(cfg: &DesignConfig) -> Result<DesignTrace> {
    design_with(cfg, |k| estimate_leakage(cfg, k))
}

/// Runs the search with a caller-supplied leakage estimate per `k`.
pub fn design_with(cfg: &DesignConfig, mut leakage: impl FnMut(usize) -> Result<f64>) -> Result<DesignTrace> {
    cfg.validate()?;
    let q = cfg.q();
    let eps = cfg.max_leakage;
    let (k0, initial) = match cfg.k0 {
        Some(k0) => (k0, None),
        None => {
            let init = initial_point(cfg)?;
            (init.k_init.k0, Some(init))
        }
    };
    info!("hash design: q = {q}, k0 = {k0}, tolerance {eps} bits, estimator {}", cfg.estimator);
    let mut steps: Vec<DesignStep> = Vec::new();
    let mut k = k0;
    let mut leak = leakage(k)?;
    let finish = |steps: Vec<DesignStep>, final_k: usize, final_leakage: f64, termination: Termination| DesignTrace {
        code: cfg.code.to_string(),
        channel: cfg.channel_eve.descriptor(),
        estimator: cfg.estimator,
        max_leakage: eps,
        k0,
        initial: initial.clone(),
        steps,
        final_k,
        final_leakage,
        termination,
    };
    loop {
        let s = side(leak, eps);
        let decision = match s {
            x if x < 0.0 => Decision::Increase,
            x if x > 0.0 => Decision::Decrease,
            _ => Decision::Stop,
        };
        steps.push(DesignStep {
            iteration: steps.len(),
            k,
            leakage_bits: leak,
            decision,
        });
        if decision == Decision::Stop {
            return Ok(finish(steps, k, leak, Termination::ExactHit));
        }
        let next = if decision == Decision::Increase { k + 1 } else { k - 1 };
        if next < 1 || next > q - 1 {
            steps.last_mut().expect("just pushed").decision = Decision::Stop;
            return Ok(finish(steps, k, leak, Termination::Boundary));
        }
        if steps.len() > cfg.max_iters {
            steps.last_mut().expect("just pushed").decision = Decision::Stop;
            return Ok(finish(steps, k, leak, Termination::IterCap));
        }
        let next_leak = leakage(next)?;
        let next_side = side(next_leak, eps);
        if next_side == 0.0 {
            steps.push(DesignStep {
                iteration: steps.len(),
                k: next,
                leakage_bits: next_leak,
                decision: Decision::Stop,
            });
            return Ok(finish(steps, next, next_leak, Termination::ExactHit));
        }
        if s * next_side < 0.0 {
            steps.push(DesignStep {
                iteration: steps.len(),
                k: next,
                leakage_bits: next_leak,
                decision: Decision::Stop,
            });
            let (k_final, l_final) = [(k, leak), (next, next_leak)]
                .into_iter()
                .filter(|&(_, l)| l <= eps)
                .max_by_key(|&(kk, _)| kk)
                .expect("a sign change puts one side below the tolerance");
            return Ok(finish(steps, k_final, l_final, Termination::SignChange));
        }
        k = next;
        leak = next_leak;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: f64, eps: f64, code: CodeSpec) -> DesignConfig {
        DesignConfig {
            uhf_enabled: false,
            ..DesignConfig::new(eps, code, ChannelModel::bsc(p).unwrap(), EstimatorKind::Oracle, 42)
        }
    }

    #[test]
    fn noiseless_link_drives_k_to_one() {
        let c = DesignConfig {
            k0: Some(3),
            ..cfg(0.0, 0.01, CodeSpec::hamming74())
        };
        let t = design(&c).unwrap();
        assert_eq!(t.termination, Termination::Boundary);
        assert_eq!(t.final_k, 1);
        assert!((t.final_leakage - 1.0).abs() < 1e-9);
        assert!(t.steps.windows(2).all(|w| w[0].k.abs_diff(w[1].k) == 1));
    }

    #[test]
    fn useless_channel_drives_k_to_the_top() {
        let c = DesignConfig {
            k0: Some(1),
            ..cfg(0.5, 0.01, CodeSpec::hamming74())
        };
        let t = design(&c).unwrap();
        assert_eq!(t.termination, Termination::Boundary);
        assert_eq!(t.final_k, 3);
    }

    #[test]
    fn sign_change_returns_the_compliant_side() {
        let table = [0.0, 0.2, 0.6, 1.1, 1.9, 2.5];
        for k0 in 1..6 {
            let c = DesignConfig {
                k0: Some(k0),
                ..cfg(0.2, 0.8, CodeSpec::identity(6).unwrap())
            };
            let t = design_with(&c, |k| Ok(table[k])).unwrap();
            assert_eq!(t.final_k, 2, "k0 = {k0}");
            assert_eq!(t.termination, Termination::SignChange);
            assert!(t.iterations() <= k0.abs_diff(2) + 1);
        }
    }

    #[test]
    fn dead_band_stops_immediately() {
        let c = DesignConfig {
            k0: Some(2),
            ..cfg(0.2, 0.6005, CodeSpec::identity(6).unwrap())
        };
        let t = design_with(&c, |k| Ok([0.0, 0.2, 0.6, 1.1, 1.9, 2.5][k])).unwrap();
        assert_eq!(t.termination, Termination::ExactHit);
        assert_eq!(t.steps.len(), 1);
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let c = DesignConfig {
            k0: Some(1),
            max_iters: 2,
            ..cfg(0.2, 10.0, CodeSpec::identity(8).unwrap())
        };
        let t = design_with(&c, |k| Ok(0.1 * k as f64)).unwrap();
        assert_eq!(t.termination, Termination::IterCap);
        assert_eq!(t.steps.len(), 3);
    }

    #[test]
    fn initial_point_is_reproducible() {
        let c = cfg(0.2, 0.5, CodeSpec::hamming74());
        let a = initial_point(&c).unwrap();
        let b = initial_point(&c).unwrap();
        assert_eq!(a, b);
        assert!((1..=3).contains(&a.k_init.k0));
    }

    #[test]
    fn names_round_trip() {
        for e in [EstimatorKind::Oracle, EstimatorKind::Cnbmm, EstimatorKind::GaussianClub, EstimatorKind::Mine] {
            assert_eq!(e.to_string().parse::<EstimatorKind>().unwrap(), e);
        }
        assert!("nope".parse::<EstimatorKind>().is_err());
    }
}
