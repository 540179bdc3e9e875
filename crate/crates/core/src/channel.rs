//! Memoryless channels and Gaussian tail utilities.
//!
//! BPSK maps bit `b` to the symbol `1 − 2b`, so bit 0 is sent as `+1`. Symbols
//! have unit energy and the SNR is `1/σ²` (Es/N0), i.e. `σ = 10^{−SNR_dB/20}`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::BitVec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    Bsc { p: f64 },
    BpskAwgn { sigma: f64 },
}

impl ChannelModel {
    /// Binary symmetric channel; crossover probabilities above 1/2 are folded
    /// to `1 − p` (the receiver can invert its bits).
    pub fn bsc(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("crossover probability {p} outside [0, 1]")));
        }
        Ok(Self::Bsc { p: p.min(1.0 - p) })
    }

    pub fn awgn_sigma(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("noise std {sigma} must be positive")));
        }
        Ok(Self::BpskAwgn { sigma })
    }

    pub fn awgn_snr_db(snr_db: f64) -> Result<Self> {
        Self::awgn_sigma(10f64.powf(-snr_db / 20.0))
    }

    pub fn snr_db(&self) -> Option<f64> {
        match *self {
            Self::BpskAwgn { sigma } => Some(-20.0 * sigma.log10()),
            Self::Bsc { .. } => None,
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self, Self::BpskAwgn { .. })
    }

    /// Raw hard-decision bit error probability.
    pub fn bit_error_rate(&self) -> f64 {
        match *self {
            Self::Bsc { p } => p,
            Self::BpskAwgn { sigma } => q_func(1.0 / sigma),
        }
    }

    pub fn transmit<R: Rng + ?Sized>(&self, x: &BitVec, rng: &mut R) -> ChannelOutput {
        match *self {
            Self::Bsc { p } => {
                let mut z = x.clone();
                if p > 0.0 {
                    for i in 0..x.len() {
                        if rng.random::<f64>() < p {
                            z.flip(i);
                        }
                    }
                }
                ChannelOutput::Hard(z)
            }
            Self::BpskAwgn { sigma } => ChannelOutput::Soft(
                x.iter()
                    .map(|b| {
                        let s = if b { -1.0 } else { 1.0 };
                        let noise: f64 = rng.sample(StandardNormal);
                        (s + sigma * noise) as f32
                    })
                    .collect(),
            ),
        }
    }

    /// Natural-log likelihood (log-density for AWGN) of observing `z` when `x`
    /// was sent. Impossible BSC observations at `p = 0` give `−∞`.
    pub fn log_transition(&self, z: &ChannelOutput, x: &BitVec) -> Result<f64> {
        if z.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: z.len(),
            });
        }
        match (*self, z) {
            (Self::Bsc { p }, ChannelOutput::Hard(bits)) => {
                let d = bits.distance(x)?;
                Ok(bsc_log_likelihood(p, d, x.len()))
            }
            (Self::BpskAwgn { sigma }, ChannelOutput::Soft(values)) => {
                let norm = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
                let inv = 1.0 / (2.0 * sigma * sigma);
                Ok(values
                    .iter()
                    .zip(x.iter())
                    .map(|(&zi, b)| {
                        let s = if b { -1.0 } else { 1.0 };
                        -(zi as f64 - s).powi(2) * inv - norm
                    })
                    .sum())
            }
            _ => Err(Error::Config(
                "channel output kind does not match the channel model".into(),
            )),
        }
    }

    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

/// `d·ln p + (n−d)·ln(1−p)` with `0·ln 0 = 0`.
pub fn bsc_log_likelihood(p: f64, d: usize, n: usize) -> f64 {
    let term = |count: usize, prob: f64| {
        if count == 0 {
            0.0
        } else {
            count as f64 * prob.ln()
        }
    };
    term(d, p) + term(n - d, 1.0 - p)
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Bsc { p } => write!(f, "bsc:{p}"),
            Self::BpskAwgn { sigma } => write!(f, "awgn:sigma={sigma}"),
        }
    }
}

impl FromStr for ChannelModel {
    type Err = Error;

    /// Accepts `"bsc:0.2"`, `"awgn:snr_db=4.0"` and `"awgn:sigma=0.5"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown channel {s:?}"));
        let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind {
            "bsc" => Self::bsc(arg.parse().map_err(|_| bad())?),
            "awgn" => {
                let (key, value) = arg.split_once('=').ok_or_else(bad)?;
                let value: f64 = value.parse().map_err(|_| bad())?;
                match key {
                    "snr_db" => Self::awgn_snr_db(value),
                    "sigma" => Self::awgn_sigma(value),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

/// What a receiver observes: hard bits (BSC) or real samples (AWGN).
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelOutput {
    Hard(BitVec),
    Soft(Vec<f32>),
}

impl ChannelOutput {
    pub fn len(&self) -> usize {
        match self {
            Self::Hard(b) => b.len(),
            Self::Soft(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hard decision: negative samples decide 1.
    pub fn hard_decision(&self) -> BitVec {
        match self {
            Self::Hard(b) => b.clone(),
            Self::Soft(v) => {
                let mut out = BitVec::zeros(v.len());
                for (i, &x) in v.iter().enumerate() {
                    if x < 0.0 {
                        out.set(i, true);
                    }
                }
                out
            }
        }
    }

    /// Real-valued view: hard bits become BPSK symbols ±1.
    pub fn to_reals(&self) -> Vec<f32> {
        match self {
            Self::Hard(b) => b.iter().map(|x| if x { -1.0 } else { 1.0 }).collect(),
            Self::Soft(v) => v.clone(),
        }
    }

    /// Largest absolute sample; 1 for hard outputs.
    pub fn max_abs(&self) -> f64 {
        match self {
            Self::Hard(_) => 1.0,
            Self::Soft(v) => v.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs())),
        }
    }
}

/// Upper tail of the standard normal, `Q(x) = P(N > x)`.
pub fn q_func(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q_func`]: Acklam's rational approximation of the normal
/// quantile refined by two Newton steps on `Q(x) − p`.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("q_inv argument {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Q^{-1}(p) = Φ^{-1}(1 − p) = −Φ^{-1}(p).
    let mut x = -acklam_quantile(p);
    for _ in 0..2 {
        let pdf = std_normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        x += (q_func(x) - p) / pdf;
    }
    Ok(x)
}

fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.02425;
    if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
