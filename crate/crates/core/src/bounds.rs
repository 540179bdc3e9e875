//! Gap between Shannon and smooth min-entropy: the ψ correction, its
//! Monte-Carlo expectation, the `B(ε)` minimization, the initial hash size,
//! and the leftover-hash bound.

use log::warn;
use serde::Serialize;

use crate::channel::{q_func, q_inv, ChannelModel, ChannelOutput};
use crate::error::{Error, Result};
use crate::oracle::{entropy_bits, mean_and_stderr, Accumulator, Oracle, Pmf};
use crate::parallel;
use crate::pipeline::{generate_range, SystemConfig};

/// Tolerance on `t ∈ [1/v, 1]` absorbing rounding in computed posteriors.
const DOMAIN_SLACK: f64 = 1e-12;

/// `H_b(t)` in bits, with `H_b(0) = H_b(1) = 0`.
pub fn binary_entropy(t: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(t) + term(1.0 - t)
}

/// `ψ_v(t) = H_b(t) + (1 − t)·log2(v − 1) + log2 t`; zero for `v = 1`.
pub fn psi(v: usize, t: f64) -> Result<f64> {
    if v == 0 {
        return Err(Error::Domain("support size must be at least 1".into()));
    }
    let lo = 1.0 / v as f64;
    if !(t >= lo - DOMAIN_SLACK && t <= 1.0 + DOMAIN_SLACK) {
        return Err(Error::Domain(format!("max probability {t} outside [1/{v}, 1]")));
    }
    if v == 1 {
        return Ok(0.0);
    }
    let t = t.clamp(lo, 1.0);
    let value = binary_entropy(t) + (1.0 - t) * ((v - 1) as f64).log2() + t.log2();
    Ok(value.max(0.0))
}

/// Both per-pmf inequalities behind the gap bound, with their sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SchurCheck {
    pub holds: bool,
    /// `H(p)`.
    pub entropy: f64,
    /// `H_b(t) + (1 − t)·log2(m − 1)`.
    pub entropy_cap: f64,
    /// `−H_min(p) = log2 t`.
    pub neg_min_entropy: f64,
    /// `−H(p) + ψ_m(t)`.
    pub neg_min_entropy_cap: f64,
}

pub fn schur_gap_check(p: &Pmf) -> Result<SchurCheck> {
    let m = p.support_size();
    let t = p.max_prob();
    if m < 2 {
        return Err(Error::Domain("pmf needs at least two outcomes with positive mass".into()));
    }
    let h = p.entropy_bits();
    let cap = binary_entropy(t) + (1.0 - t) * ((m - 1) as f64).log2();
    let neg_hmin = t.log2();
    let neg_hmin_cap = -h + psi(m, t)?;
    let tol = 1e-12 * (1.0 + cap.abs());
    Ok(SchurCheck {
        holds: h <= cap + tol && neg_hmin <= neg_hmin_cap + tol,
        entropy: h,
        entropy_cap: cap,
        neg_min_entropy: neg_hmin,
        neg_min_entropy_cap: neg_hmin_cap,
    })
}

fn check_eps_n(eps: f64, n: usize, sigma: f64) -> Result<()> {
    if n == 0 || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("need n ≥ 1 and σ > 0, got n={n}, σ={sigma}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("ε = {eps} outside (0, 1)")));
    }
    Ok(())
}

/// Radius from the tail equation `2n·Q((r − 1)/σ) = ε`.
pub fn r_of_eps(eps: f64, n: usize, sigma: f64) -> Result<f64> {
    check_eps_n(eps, n, sigma)?;
    Ok(1.0 + sigma * q_inv(eps / (2.0 * n as f64))?)
}

/// `P(max_i |Z_i| > r)` for BPSK over AWGN with noise deviation `sigma`.
pub fn region_tail(r: f64, n: usize, sigma: f64) -> f64 {
    let s = q_func((r - 1.0) / sigma) + q_func((r + 1.0) / sigma);
    -(n as f64 * (-s).ln_1p()).exp_m1()
}

/// Radius at which `P(max_i |Z_i| > r) = ε` exactly for BPSK over AWGN, where
/// each coordinate leaves `[−r, r]` with probability
/// `Q((r − 1)/σ) + Q((r + 1)/σ)`.
pub fn exact_radius(eps: f64, n: usize, sigma: f64) -> Result<f64> {
    check_eps_n(eps, n, sigma)?;
    let tail = |r: f64| region_tail(r, n, sigma);
    let (mut lo, mut hi) = (0.0, 1.0 + 40.0 * sigma);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionCaps {
    pub r: f64,
    /// `log2 (2r)^n`.
    pub log2_v_max: f64,
    /// `log2 [2^{−n}(2πσ²)^{−n/2}]`; reported only, never used in `g`.
    pub log2_t_max: f64,
}

pub fn region_caps(eps: f64, n: usize, sigma: f64) -> Result<RegionCaps> {
    let r = r_of_eps(eps, n, sigma)?;
    let nf = n as f64;
    Ok(RegionCaps {
        r,
        log2_v_max: nf * (2.0 * r).log2(),
        log2_t_max: -nf - 0.5 * nf * (2.0 * std::f64::consts::PI * sigma * sigma).log2(),
    })
}

/// Offset of the ψ samples in the message stream.
pub const PSI_STREAM_OFFSET: u64 = 1 << 44;

/// Per-observation `ψ_{v_z}(t_z)` with the largest `|z_i|`, reusable across ε.
#[derive(Clone, Debug)]
pub struct PsiSamples {
    pub psi: Vec<f64>,
    pub max_abs: Vec<f64>,
    /// `log2` of the largest posterior support seen.
    pub log2_max_support: f64,
    pub channel: ChannelModel,
    pub n: usize,
}

impl PsiSamples {
    pub fn draw(cfg: &SystemConfig, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Config("need at least one Monte-Carlo sample".into()));
        }
        let oracle = Oracle::new(cfg)?;
        const CHUNK: usize = 2048;
        let chunks = samples.div_ceil(CHUNK);
        let parts = parallel::try_map_indexed(chunks, |c| {
            let start = c * CHUNK;
            let len = CHUNK.min(samples - start);
            let batch = generate_range(cfg, PSI_STREAM_OFFSET + start as u64, len, false)?;
            batch
                .z_eve
                .iter()
                .map(|z| {
                    let post = oracle.posterior(z)?;
                    let max_abs = match z {
                        ChannelOutput::Soft(v) => v.iter().fold(0.0f64, |m, &x| m.max(f64::from(x).abs())),
                        ChannelOutput::Hard(_) => 1.0,
                    };
                    Ok((psi(post.support, post.max_prob)?, max_abs, post.support))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let flat: Vec<_> = parts.into_iter().flatten().collect();
        let max_support = flat.iter().map(|s| s.2).max().unwrap_or(1);
        Ok(Self {
            psi: flat.iter().map(|s| s.0).collect(),
            max_abs: flat.iter().map(|s| s.1).collect(),
            log2_max_support: (max_support as f64).log2(),
            channel: cfg.channel_eve,
            n: cfg.n(),
        })
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// Smoothing region radius for ε: the exact AWGN radius, or none (whole
    /// output space) for a BSC.
    pub fn radius(&self, eps: f64) -> Result<Option<f64>> {
        match self.channel {
            ChannelModel::BpskAwgn { sigma } => exact_radius(eps, self.n, sigma).map(Some),
            ChannelModel::Bsc { .. } => Ok(None),
        }
    }

    pub fn expected_psi(&self, eps: f64) -> Result<PsiEstimate> {
        let radius = self.radius(eps)?;
        let inside: Vec<bool> = self.max_abs.iter().map(|&m| radius.is_none_or(|r| m <= r)).collect();
        let accepted: Vec<f64> = self.psi.iter().zip(&inside).filter(|(_, &k)| k).map(|(&p, _)| p).collect();
        if accepted.is_empty() {
            return Err(Error::Domain(format!(
                "no sample fell inside the smoothing region for ε = {eps} (radius {radius:?})"
            )));
        }
        let (mean, stderr) = mean_and_stderr(&accepted);
        let masked: Vec<f64> = self.psi.iter().zip(&inside).map(|(&p, &k)| if k { p } else { 0.0 }).collect();
        let (uncond, uncond_stderr) = mean_and_stderr(&masked);
        Ok(PsiEstimate {
            epsilon: eps,
            conditional_mean: mean,
            conditional_stderr: stderr,
            unconditional_mean: uncond,
            unconditional_stderr: uncond_stderr,
            accepted: accepted.len(),
            samples: self.len(),
            accept_frac: accepted.len() as f64 / self.len() as f64,
            radius,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsiEstimate {
    pub epsilon: f64,
    /// `ψ̄(ε) = E[ψ_V(T) | Z ∈ E]`.
    pub conditional_mean: f64,
    pub conditional_stderr: f64,
    /// `E[ψ_V(T)]` with `V, T` zero outside `E`.
    pub unconditional_mean: f64,
    pub unconditional_stderr: f64,
    pub accepted: usize,
    pub samples: usize,
    pub accept_frac: f64,
    pub radius: Option<f64>,
}

/// Monte-Carlo `E[ψ_V(T) | Z ∈ E]` over `samples` draws of the system.
pub fn mc_expected_psi(cfg: &SystemConfig, eps: f64, samples: usize) -> Result<PsiEstimate> {
    let est = PsiSamples::draw(cfg, samples)?.expected_psi(eps)?;
    log::info!("ψ Monte-Carlo: accepted {} of {} samples", est.accepted, est.samples);
    Ok(est)
}

/// `Σ_z P(z)·ψ_{v_z}(t_z)` over every BSC output.
pub fn exhaustive_expected_psi(oracle: &Oracle) -> Result<f64> {
    let mut acc = Accumulator::default();
    let mut err = None;
    oracle.for_each_output(|_, p_z, post, _| {
        let support = post.iter().filter(|&&x| x > 0.0).count();
        let t = post.iter().copied().fold(0.0, f64::max);
        match psi(support, t) {
            Ok(v) => acc.add(p_z * v),
            Err(e) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(acc.value()),
    }
}

/// `B(ε) = (1 − ε)·ψ̄ − log2(1 − ε) + ε/(1 − ε)·H_max`.
pub fn b_of_eps(eps: f64, psi_bar: f64, h_max_bits: f64) -> f64 {
    (1.0 - eps) * psi_bar - (1.0 - eps).log2() + eps / (1.0 - eps) * h_max_bits
}

/// `g = E[ψ_V(T)] − log2(1 − ε) + ε/(1 − ε)·H_max`.
pub fn g_of(eps: f64, unconditional_psi: f64, h_max_bits: f64) -> f64 {
    unconditional_psi - (1.0 - eps).log2() + eps / (1.0 - eps) * h_max_bits
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundConfig {
    pub mc_samples: usize,
    pub grid_points: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub rel_tol: f64,
    /// Overrides `log2 sup_z v_z` estimated from the samples.
    pub h_max_bits: Option<f64>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            mc_samples: 10_000,
            grid_points: 64,
            eps_lo: 1e-6,
            eps_hi: 1.0 - 1e-3,
            rel_tol: 1e-4,
            h_max_bits: None,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0
            || self.grid_points < 3
            || !(self.eps_lo > 0.0 && self.eps_lo < self.eps_hi && self.eps_hi < 1.0)
            || !(self.rel_tol > 0.0)
            || self.h_max_bits.is_some_and(|h| !(h >= 0.0))
        {
            return Err(Error::Config(format!("invalid bound search settings {self:?}")));
        }
        Ok(())
    }

    /// Log-spaced ε grid.
    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = (self.eps_lo.ln(), self.eps_hi.ln());
        let last = (self.grid_points - 1) as f64;
        (0..self.grid_points).map(|i| (a + (b - a) * i as f64 / last).exp()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub epsilon: f64,
    pub b_bits: f64,
    pub mean_psi: f64,
    pub accept_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub eps_star: f64,
    pub b_bits: f64,
    /// `ψ̄(ε*)` and its standard error.
    pub mean_psi_bits: f64,
    pub mean_psi_stderr: f64,
    /// `E[ψ_V(T)]` at `ε*`.
    pub unconditional_psi_bits: f64,
    pub accept_frac: f64,
    /// Smoothing radius used for sampling (AWGN only).
    pub region_radius: Option<f64>,
    /// Closed-form radius and caps from the tail equation (AWGN only).
    pub caps: Option<RegionCaps>,
    pub h_max_bits: f64,
    pub g_bits: f64,
    /// `k0` when a conditional entropy was supplied.
    pub k0: Option<usize>,
    pub grid: Vec<GridPoint>,
}

impl GapReport {
    pub fn recompute_g(&self) -> f64 {
        g_of(self.eps_star, self.unconditional_psi_bits, self.h_max_bits)
    }

    /// `epsilon,B_bits,mean_psi,accept_frac` rows with a header.
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("epsilon,B_bits,mean_psi,accept_frac\n");
        for p in &self.grid {
            out.push_str(&format!("{:e},{},{},{}\n", p.epsilon, p.b_bits, p.mean_psi, p.accept_frac));
        }
        out
    }
}

/// Minimizes `B(ε)` over a log grid, then refines around the grid argmin by
/// golden-section search.
pub fn minimize_b(samples: &PsiSamples, bc: &BoundConfig) -> Result<GapReport> {
    bc.validate()?;
    let h_max = bc.h_max_bits.unwrap_or(samples.log2_max_support);
    let eval = |eps: f64| -> (f64, Option<PsiEstimate>) {
        match samples.expected_psi(eps) {
            Ok(est) => (b_of_eps(eps, est.conditional_mean, h_max), Some(est)),
            Err(_) => (f64::INFINITY, None),
        }
    };
    let grid_eps = bc.grid();
    let mut grid = Vec::with_capacity(grid_eps.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, &eps) in grid_eps.iter().enumerate() {
        let (b, est) = eval(eps);
        grid.push(GridPoint {
            epsilon: eps,
            b_bits: b,
            mean_psi: est.map_or(f64::NAN, |e| e.conditional_mean),
            accept_frac: est.map_or(0.0, |e| e.accept_frac),
        });
        if b.is_finite() && best.is_none_or(|(_, v)| b < v) {
            best = Some((i, b));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::NonFinite("B(ε) is not finite anywhere on the grid".into()))?;
    let mut lo = grid_eps[i.saturating_sub(1)];
    let mut hi = grid_eps[(i + 1).min(grid_eps.len() - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (eval(c).0, eval(d).0);
    while hi - lo > bc.rel_tol * 0.5 * (hi + lo) {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = eval(c).0;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = eval(d).0;
        }
    }
    let mut eps_star = 0.5 * (lo + hi);
    let mut b_star = eval(eps_star).0;
    if !(b_star <= grid[i].b_bits) {
        eps_star = grid_eps[i];
        b_star = grid[i].b_bits;
    }
    if let ChannelModel::BpskAwgn { sigma } = samples.channel {
        if let Some(eps) = best_breakpoint(samples, bc, sigma, h_max) {
            let (b, _) = eval(eps);
            if b < b_star {
                eps_star = eps;
                b_star = b;
            }
        }
    }
    let est = samples.expected_psi(eps_star)?;
    let caps = match samples.channel {
        ChannelModel::BpskAwgn { sigma } => Some(region_caps(eps_star, samples.n, sigma)?),
        ChannelModel::Bsc { .. } => None,
    };
    Ok(GapReport {
        eps_star,
        b_bits: b_star,
        mean_psi_bits: est.conditional_mean,
        mean_psi_stderr: est.conditional_stderr,
        unconditional_psi_bits: est.unconditional_mean,
        accept_frac: est.accept_frac,
        region_radius: est.radius,
        caps,
        h_max_bits: h_max,
        g_bits: g_of(eps_star, est.unconditional_mean, h_max),
        k0: None,
        grid,
    })
}

/// Under AWGN the sampled `ψ̄(ε)` is piecewise constant, jumping where a
/// sample leaves the shrinking region, and `B` increases on every piece. The
/// best left end of a piece can fall between grid points; this scans them all.
fn best_breakpoint(samples: &PsiSamples, bc: &BoundConfig, sigma: f64, h_max: f64) -> Option<f64> {
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| samples.max_abs[b].total_cmp(&samples.max_abs[a]));
    let total: f64 = samples.psi.iter().sum();
    let mut removed = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for j in 0..n.saturating_sub(1) {
        let (cur, next) = (order[j], order[j + 1]);
        removed += samples.psi[cur];
        if samples.max_abs[cur] == samples.max_abs[next] {
            continue;
        }
        let eps = region_tail(samples.max_abs[cur], samples.n, sigma) * (1.0 + 1e-9);
        if !(eps > bc.eps_lo && eps < bc.eps_hi) {
            continue;
        }
        let psi_bar = (total - removed) / (n - j - 1) as f64;
        let b = b_of_eps(eps, psi_bar, h_max);
        if best.is_none_or(|(_, v)| b < v) {
            best = Some((eps, b));
        }
    }
    best.map(|(eps, _)| eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KInit {
    pub k0: usize,
    pub low_entropy: bool,
}

/// `k0 = max(1, ⌊H(M|Z) − g − 1e-6⌋)`, capped at `q − 1`.
pub fn k_init(h_cond_bits: f64, g_bits: f64, q: usize) -> Result<KInit> {
    if !(h_cond_bits.is_finite() && g_bits.is_finite()) {
        return Err(Error::NonFinite(format!("H = {h_cond_bits}, g = {g_bits}")));
    }
    if q < 2 {
        return Err(Error::Config("hash design needs q ≥ 2".into()));
    }
    let slack = h_cond_bits - g_bits;
    if slack <= 1.0 {
        warn!("conditional entropy {h_cond_bits:.4} leaves no room above the correction {g_bits:.4}; using k0 = 1");
        return Ok(KInit { k0: 1, low_entropy: true });
    }
    let k0 = ((slack - 1e-6).floor() as usize).clamp(1, q - 1);
    Ok(KInit { k0, low_entropy: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LhlBound {
    pub value: f64,
    pub raw: f64,
    pub vacuous: bool,
    /// The output alphabet is taken as binary, so `ℓ·log|V|` is `ℓ` bits.
    pub binary_alphabet_assumed: bool,
}

/// `2ε + 2^{(ℓ − H_min^ε)/2 − 1}`, clamped to 1.
pub fn lhl_bound(eps: f64, ell_bits: f64, hmin_eps_bits: f64) -> Result<LhlBound> {
    if !(0.0..1.0).contains(&eps) || !ell_bits.is_finite() || !hmin_eps_bits.is_finite() {
        return Err(Error::Domain(format!("ε = {eps}, ℓ = {ell_bits}, H = {hmin_eps_bits}")));
    }
    let raw = 2.0 * eps + ((ell_bits - hmin_eps_bits) / 2.0 - 1.0).exp2();
    Ok(LhlBound {
        value: raw.min(1.0),
        raw,
        vacuous: raw > 1.0,
        binary_alphabet_assumed: true,
    })
}

/// Exact pieces of the gap-bound chain for one smoothing region on an
/// enumerable BSC system, with `X = M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub eps_target: f64,
    /// `P_Z(E^c)` for the region actually built.
    pub eps_realized: f64,
    pub h_given_z: f64,
    pub h_given_e: f64,
    pub h_given_ec: f64,
    /// Average min-entropy `E[H_min(p_z) | E]`.
    pub hmin_given_e: f64,
    /// `E[ψ_V(T) | E]`.
    pub psi_given_e: f64,
    pub h_max_bits: f64,
    /// `−H_min(X|Z,E) ≤ −H(X|Z,E) + E[ψ | E]`.
    pub hmin_h_holds: bool,
    /// `H(X|Z,E) ≥ H(X|Z) − ε/(1 − ε)·H_max`.
    pub cond_h_holds: bool,
    /// `|(1 − ε)H(X|Z,E) + ε·H(X|Z,E^c) − H(X|Z)|`.
    pub split_error: f64,
}

/// Builds `E` by removing the least likely outputs while their total mass
/// stays within `eps`, then evaluates every term of the chain exactly.
pub fn inequality_chain(oracle: &Oracle, eps: f64) -> Result<ChainReport> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("ε = {eps} outside [0, 1)")));
    }
    struct Row {
        p_z: f64,
        h: f64,
        hmin: f64,
        psi: f64,
        support: usize,
    }
    let mut rows = Vec::new();
    let mut err = None;
    oracle.for_each_output(|_, p_z, post, _| {
        let support = post.iter().filter(|&&x| x > 0.0).count();
        let t = post.iter().copied().fold(0.0, f64::max);
        match psi(support, t) {
            Ok(psi) => rows.push(Row {
                p_z,
                h: entropy_bits(post),
                hmin: -t.log2(),
                psi,
                support,
            }),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].p_z.total_cmp(&rows[b].p_z).then(a.cmp(&b)));
    let mut outside = vec![false; rows.len()];
    let mut removed = Accumulator::default();
    for &i in &order {
        if removed.value() + rows[i].p_z > eps {
            break;
        }
        removed.add(rows[i].p_z);
        outside[i] = true;
    }
    let mut acc = [(); 6].map(|_| Accumulator::default());
    let [mass_e, h_e, hmin_e, psi_e, mass_c, h_c] = &mut acc;
    let mut h_all = Accumulator::default();
    for (row, &out) in rows.iter().zip(&outside) {
        h_all.add(row.p_z * row.h);
        if out {
            mass_c.add(row.p_z);
            h_c.add(row.p_z * row.h);
        } else {
            mass_e.add(row.p_z);
            h_e.add(row.p_z * row.h);
            hmin_e.add(row.p_z * row.hmin);
            psi_e.add(row.p_z * row.psi);
        }
    }
    let pe = mass_e.value();
    let pc = mass_c.value();
    let eps_r = pc / (pe + pc);
    let h_given_e = h_e.value() / pe;
    let h_given_ec = if pc > 0.0 { h_c.value() / pc } else { 0.0 };
    let h_given_z = h_all.value() / (pe + pc);
    let hmin_given_e = hmin_e.value() / pe;
    let psi_given_e = psi_e.value() / pe;
    let h_max = (rows.iter().map(|r| r.support).max().unwrap_or(1) as f64).log2();
    let tol = 1e-9;
    Ok(ChainReport {
        eps_target: eps,
        eps_realized: eps_r,
        h_given_z,
        h_given_e,
        h_given_ec,
        hmin_given_e,
        psi_given_e,
        h_max_bits: h_max,
        hmin_h_holds: -hmin_given_e <= -h_given_e + psi_given_e + tol,
        cond_h_holds: h_given_e >= h_given_z - eps_r / (1.0 - eps_r) * h_max - tol,
        split_error: ((1.0 - eps_r) * h_given_e + eps_r * h_given_ec - h_given_z).abs(),
    })
}
