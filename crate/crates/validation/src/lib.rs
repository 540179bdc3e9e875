//! Acceptance checks. Each check runs one experiment end to end, writes its
//! result files (where it has any) under a caller-supplied directory, and
//! returns a pass/fail verdict with the measured numbers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};
use wiretap_cli::commands::{self, LeakageRow};
use wiretap_cli::output::read_csv;
use wiretap_cli::{CliResult, ExperimentConfig};
use wiretap_core::bounds::{b_of_eps, inequality_chain, mc_expected_psi, psi, schur_gap_check, BoundConfig, PsiSamples};
use wiretap_core::neural::gradcheck::{loss_check, op_suite};
use wiretap_core::neural::EpochRecord;
use wiretap_core::oracle::{club_with_oracle, exact_mi, Evaluation, Oracle, Pmf, Target};
use wiretap_core::rng::{stream, Role};
use wiretap_core::{BitVec, ChannelModel, CodeSpec, SystemConfig, UhfPair};

pub const SEED: u64 = 42;

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: usize,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2}: {}  {} [{:.1} s]",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(id: usize, limit: Option<Duration>, f: impl FnOnce() -> CliResult<(bool, String)>) -> Verdict {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; runtime exceeds {} s", limit.as_secs()));
        }
    }
    Verdict {
        id,
        passed,
        detail,
        elapsed,
    }
}

fn hamming(k: usize, b: usize, ch: ChannelModel, uhf: bool) -> CliResult<SystemConfig> {
    Ok(SystemConfig::symmetric(k, b, CodeSpec::hamming74(), ch, uhf, SEED)?)
}

fn config(out: &Path, entries: &[(&str, Value)]) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default().with("output", json!(out.display().to_string()))?;
    cfg = cfg.with("seed", json!(SEED))?;
    for (k, v) in entries {
        cfg.set(k, v.clone())?;
    }
    Ok(cfg)
}

/// Hash-of-inverse identity over every input of a q = 12 hash, and the
/// pairwise collision rate of random q = 16, k = 8 hashes.
pub fn uhf_correctness() -> Verdict {
    timed(1, Some(Duration::from_secs(10)), || {
        let (q, k) = (12, 5);
        let u = UhfPair::random(q, k, &mut stream(SEED, Role::Hash, 0))?;
        let mut exact = 0;
        for v in 0u64..1 << q {
            let m_s = BitVec::from_u64(v & ((1 << k) - 1), k);
            let pad = BitVec::from_u64(v >> k, q - k);
            if u.hash(&u.inverse(&m_s, &pad)?)? == m_s {
                exact += 1;
            }
        }
        let trials = 100_000u64;
        let mut rng = stream(SEED, Role::Misc, 1);
        let mut collisions = 0u64;
        for _ in 0..trials {
            let h = UhfPair::random(16, 8, &mut rng)?;
            let x: u64 = rng.random_range(0..1 << 16);
            let y = loop {
                let y: u64 = rng.random_range(0..1 << 16);
                if y != x {
                    break y;
                }
            };
            if h.hash(&BitVec::from_u64(x, 16))? == h.hash(&BitVec::from_u64(y, 16))? {
                collisions += 1;
            }
        }
        let p = 255.0 / 65535.0;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        let ok_inverse = exact == 1 << q;
        let ok_rate = (collisions as f64 - mean).abs() <= 3.0 * sd;
        Ok((
            ok_inverse && ok_rate,
            format!(
                "hash(inverse) exact on {exact}/{} inputs; {collisions} collisions in {trials} draws vs {mean:.1} ± {:.1} (3σ)",
                1 << q,
                3.0 * sd
            ),
        ))
    })
}

/// Minimum distance of BCH(15,5) and exact decoding of every pattern of at
/// most three errors on every codeword.
pub fn bch_15_5() -> Verdict {
    timed(2, Some(Duration::from_secs(10)), || {
        let code = CodeSpec::bch_by_size(15, 5)?;
        let dmin = (1u64..32)
            .map(|m| code.encode(&BitVec::from_u64(m, 5)).map(|c| c.weight()))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .min()
            .unwrap_or(0);
        let mut patterns = vec![Vec::new()];
        for i in 0..15 {
            patterns.push(vec![i]);
            for j in i + 1..15 {
                patterns.push(vec![i, j]);
                for l in j + 1..15 {
                    patterns.push(vec![i, j, l]);
                }
            }
        }
        let (mut ok, mut total) = (0usize, 0usize);
        for m in 0u64..32 {
            let msg = BitVec::from_u64(m, 5);
            let c = code.encode(&msg)?;
            for p in &patterns {
                let mut r = c.clone();
                for &i in p {
                    r.flip(i);
                }
                let d = code.decode_hard(&r)?;
                total += 1;
                if d.success && d.message == msg {
                    ok += 1;
                }
            }
        }
        Ok((
            dmin == 7 && patterns.len() == 576 && ok == total,
            format!("d_min = {dmin}; {ok}/{total} (codeword, ≤3-error) pairs decoded exactly"),
        ))
    })
}

/// Oracle endpoints and exhaustive vs Monte-Carlo agreement.
pub fn oracle_endpoints() -> Verdict {
    timed(3, Some(Duration::from_secs(60)), || {
        let noise = exact_mi(&hamming(3, 1, ChannelModel::bsc(0.5)?, true)?, Target::Secret, Evaluation::Exhaustive)?;
        let clean = exact_mi(&hamming(3, 1, ChannelModel::bsc(0.0)?, false)?, Target::Secret, Evaluation::Exhaustive)?;
        let mut ok = noise.value_bits.abs() <= 1e-9 && (clean.value_bits - 3.0).abs() <= 1e-9;
        let mut detail = format!("I(Bsc 0.5) = {:.2e}, I(Bsc 0) = {:.12}", noise.value_bits, clean.value_bits);
        for pe in [0.05, 0.1, 0.2] {
            let sys = hamming(3, 1, ChannelModel::bsc(pe)?, true)?;
            let ex = exact_mi(&sys, Target::Secret, Evaluation::Exhaustive)?;
            let mc = exact_mi(&sys, Target::Secret, Evaluation::MonteCarlo { samples: 20_000 })?;
            let z = (ex.value_bits - mc.value_bits).abs() / mc.stderr_bits;
            ok &= z <= 3.0;
            detail.push_str(&format!(
                "; P_e {pe}: exact {:.4} vs MC {:.4} ({z:.2} se)",
                ex.value_bits, mc.value_bits
            ));
        }
        Ok((ok, detail))
    })
}

/// Oracle-posterior vCLUB minus exact MI against the product-vs-joint KL.
pub fn vclub_gap_identity() -> Verdict {
    timed(4, Some(Duration::from_secs(60)), || {
        let sys = hamming(3, 1, ChannelModel::bsc(0.1)?, true)?;
        let club = club_with_oracle(&sys, Evaluation::Exhaustive)?;
        let kl = club.kl_product_joint.unwrap_or(f64::NAN);
        let diff = (club.club_value - club.exact_mi - kl).abs();
        Ok((
            diff <= 1e-9,
            format!(
                "vCLUB {:.9} − I {:.9} = {:.9}, KL {:.9}, |Δ| = {diff:.1e}",
                club.club_value,
                club.exact_mi,
                club.club_value - club.exact_mi,
                kl
            ),
        ))
    })
}

/// Finite-difference gradient checks for every op and for the full loss.
pub fn autodiff() -> Verdict {
    timed(5, Some(Duration::from_secs(60)), || {
        let mut checks = op_suite(10);
        checks.push(loss_check(10, 8)?);
        let worst = checks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("non-empty");
        let failed: Vec<&str> = checks.iter().filter(|c| !(c.max_rel_error < 1e-3)).map(|c| c.name.as_str()).collect();
        Ok((
            failed.is_empty(),
            format!(
                "{} checks × 10 probes; worst {} at {:.2e}; failing: {:?}",
                checks.len(),
                worst.name,
                worst.max_rel_error,
                failed
            ),
        ))
    })
}

fn trace_records(path: &Path) -> CliResult<Vec<EpochRecord>> {
    let text = fs::read_to_string(path)?;
    // provenance line, then the report, then one record per epoch
    text.lines().skip(2).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// CNBMM on Hamming74, k = 3, b = 1 trained on the full BSC curriculum,
/// compared with the exact leakage at the stage ends.
pub fn cnbmm_vs_oracle(out: &Path) -> Verdict {
    timed(6, None, || {
        let cfg = config(
            out,
            &[
                ("estimator", json!("cnbmm")),
                ("system.code", json!("hamming74")),
                ("system.k", json!(3)),
                ("system.b", json!(1)),
                ("train.curriculum", json!("bsc")),
                ("train.epochs_per_stage", json!(10)),
                ("train.samples", json!(100_000)),
                ("train.eval_samples", json!(10_000)),
            ],
        )?;
        commands::train_cmd(&cfg)?;
        let trace = trace_records(&out.join("trace.jsonl"))?;
        let mut ok = trace.len() == 110;
        let mut detail = format!("{} epochs", trace.len());
        let mut prev = f64::INFINITY;
        for pe in [0.05, 0.2, 0.35, 0.5] {
            let rec = trace
                .iter()
                .rfind(|r| (r.difficulty - pe).abs() < 1e-9)
                .ok_or_else(|| wiretap_cli::CliError::Invariant(format!("no stage at P_e = {pe}")))?;
            let exact = exact_mi(&hamming(3, 1, ChannelModel::bsc(pe)?, true)?, Target::Secret, Evaluation::Exhaustive)?;
            let err = (rec.projected_bits - exact.value_bits).abs();
            ok &= err <= 0.3 && rec.projected_bits <= prev;
            prev = rec.projected_bits;
            detail.push_str(&format!(
                "; P_e {pe}: Î_proj {:.3} vs I {:.3} (|Δ| {err:.3}, tol 0.300)",
                rec.projected_bits, exact.value_bits
            ));
        }
        Ok((ok, detail))
    })
}

fn mean_proj(rows: &[LeakageRow], estimator: &str, k: usize) -> f64 {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| r.estimator == estimator)
        .map(|r| r.mi_proj_per_bit * k as f64)
        .collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

/// CNBMM against the Gaussian vCLUB and MINE baselines on BCH(15,5).
pub fn estimator_comparison(out: &Path) -> Verdict {
    timed(7, Some(Duration::from_secs(30 * 60)), || {
        let k = 4;
        let cfg = config(
            out,
            &[
                ("system.code", json!("bch:15:5")),
                ("system.k", json!(k)),
                ("system.b", json!(1)),
                ("sweep.axis", json!("pe")),
                ("sweep.values", json!([0.1])),
                ("sweep.uhf", json!([true])),
                ("sweep.seeds", json!(5)),
                ("sweep.estimators", json!(["oracle", "cnbmm", "gaussian-club", "mine"])),
                ("sweep.mode", json!("per-point")),
                ("train.epochs", json!(20)),
                ("train.samples", json!(20_000)),
                ("train.eval_samples", json!(10_000)),
            ],
        )?;
        commands::leakage_sweep(&cfg)?;
        let rows: Vec<LeakageRow> = read_csv(&out.join("leakage.csv"))?;
        let oracle = mean_proj(&rows, "oracle", k);
        let cnbmm = mean_proj(&rows, "cnbmm", k);
        let gauss = mean_proj(&rows, "gaussian-club", k);
        let mine = mean_proj(&rows, "mine", k);
        let ok = cnbmm >= gauss && cnbmm >= mine && (cnbmm - oracle).abs() <= 0.15 * k as f64;
        Ok((
            ok,
            format!(
                "5-seed means at P_e 0.1: oracle {oracle:.3}, CNBMM {cnbmm:.3}, Gaussian vCLUB {gauss:.3}, MINE {mine:.3} (|CNBMM − oracle| tol {:.2})",
                0.15 * k as f64
            ),
        ))
    })
}

/// Hash on/off ablation and the leakage-vs-BER trend on BCH(15,5).
pub fn uhf_ablation(out: &Path) -> Verdict {
    timed(8, Some(Duration::from_secs(3600)), || {
        let values = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
        let cfg = config(
            out,
            &[
                ("estimator", json!("cnbmm")),
                ("system.code", json!("bch:15:5")),
                ("system.k", json!(2)),
                ("system.b", json!(3)),
                ("sweep.axis", json!("pe")),
                ("sweep.values", json!(values)),
                ("sweep.uhf", json!([true, false])),
                ("sweep.seeds", json!(5)),
                ("sweep.mode", json!("curriculum")),
                ("train.epochs_per_stage", json!(5)),
                ("train.samples", json!(20_000)),
                ("train.eval_samples", json!(10_000)),
            ],
        )?;
        commands::leakage_sweep(&cfg)?;
        let rows: Vec<LeakageRow> = read_csv(&out.join("leakage.csv"))?;
        let mut ok = rows.len() == 2 * values.len();
        let mut detail = String::from("mean Î_proj/k on vs off:");
        for &v in &values {
            let get = |uhf: bool| rows.iter().find(|r| r.snr_db_or_pe == v && r.uhf == uhf).map(|r| r.mi_proj_per_bit);
            let (on, off) = (get(true).unwrap_or(f64::NAN), get(false).unwrap_or(f64::NAN));
            ok &= on <= off;
            detail.push_str(&format!(" {v}: {on:.3}/{off:.3}"));
        }
        for uhf in [true, false] {
            let mut pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.uhf == uhf).map(|r| (r.ber, r.mi_proj_per_bit)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let monotone = pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1);
            let decreasing = monotone && pts.last().map(|l| l.1) < pts.first().map(|f| f.1);
            ok &= decreasing;
            detail.push_str(&format!("; uhf={uhf} leakage decreasing in BER: {decreasing}"));
        }
        Ok((ok, detail))
    })
}

/// ψ endpoints, the Schur inequalities, region acceptance, the gap search
/// and the appendix inequality chain.
pub fn bounds_suite(out: &Path) -> Verdict {
    timed(9, Some(Duration::from_secs(300)), || {
        let mut detail = Vec::new();
        let mut endpoint_err: f64 = 0.0;
        for v in 2..=1024usize {
            endpoint_err = endpoint_err.max(psi(v, 1.0 / v as f64)?.abs()).max(psi(v, 1.0)?.abs());
        }
        let ok_endpoints = endpoint_err <= 1e-12;
        detail.push(format!("ψ endpoints max |ψ| {endpoint_err:.1e}"));

        let mut rng = stream(SEED, Role::Misc, 9);
        let mut violations = 0;
        for i in 0..10_000 {
            let len = rng.random_range(2..=64);
            let sharp = [1.0, 4.0, 16.0][i % 3];
            let w: Vec<f64> = (0..len).map(|_| rng.random::<f64>().powf(sharp)).collect();
            if !schur_gap_check(&Pmf::from_weights(w)?)?.holds {
                violations += 1;
            }
        }
        detail.push(format!("{violations} Schur violations in 10000 pmfs"));

        let awgn = ChannelModel::awgn_snr_db(2.0)?;
        let sys = hamming(3, 1, awgn, true)?;
        let n = 10_000usize;
        let mut ok_accept = true;
        let mut acc = Vec::new();
        for eps in [0.01, 0.05, 0.2, 0.5] {
            let est = mc_expected_psi(&sys, eps, n)?;
            let tol = 3.0 * (eps * (1.0 - eps) / n as f64).sqrt();
            ok_accept &= (est.accept_frac - (1.0 - eps)).abs() <= tol;
            acc.push(format!("{eps}: {:.4}", est.accept_frac));
        }
        detail.push(format!("acceptance {}", acc.join(", ")));

        let cfg = config(
            out,
            &[
                ("system.channel", json!(awgn.descriptor())),
                ("system.code", json!("hamming74")),
                ("bounds.samples", json!(n)),
            ],
        )?;
        let summary = commands::bounds(&cfg)?;
        let eps_star = summary["eps_star"].as_f64().unwrap_or(f64::NAN);
        let bc = BoundConfig {
            mc_samples: n,
            ..BoundConfig::default()
        };
        let samples = PsiSamples::draw(&sys, n)?;
        let h_max = samples.log2_max_support;
        let dense = 4096;
        let (a, b) = (bc.eps_lo.ln(), bc.eps_hi.ln());
        let mut best = (f64::NAN, f64::INFINITY);
        for i in 0..dense {
            let eps = (a + (b - a) * i as f64 / (dense - 1) as f64).exp();
            if let Ok(est) = samples.expected_psi(eps) {
                let val = b_of_eps(eps, est.conditional_mean, h_max);
                if val < best.1 {
                    best = (eps, val);
                }
            }
        }
        let step = (b - a) / (bc.grid_points - 1) as f64;
        let ok_min = (eps_star.ln() - best.0.ln()).abs() <= step;
        detail.push(format!("ε* {eps_star:.4e} vs dense argmin {:.4e}", best.0));

        let oracle = Oracle::new(&hamming(3, 1, ChannelModel::bsc(0.1)?, true)?)?;
        let mut ok_chain = true;
        for eps in [0.0, 0.05, 0.2] {
            let c = inequality_chain(&oracle, eps)?;
            ok_chain &= c.hmin_h_holds && c.cond_h_holds && c.split_error <= 1e-9;
        }
        detail.push(format!("inequality chain holds: {ok_chain}"));
        Ok((
            ok_endpoints && violations == 0 && ok_accept && ok_min && ok_chain,
            detail.join("; "),
        ))
    })
}

/// Exact leakage of Hamming74 over Bsc(0.2) for each hash size.
pub fn leakage_table(uhf: bool) -> CliResult<Vec<f64>> {
    (1..4)
        .map(|k| {
            let sys = hamming(k, 4 - k, ChannelModel::bsc(0.2)?, uhf)?;
            Ok(exact_mi(&sys, Target::Secret, Evaluation::Exhaustive)?.value_bits)
        })
        .collect()
}

pub const DESIGN_TOLERANCE: f64 = 1.0;

/// Hash design with the oracle estimator against the exact leakage table.
pub fn hash_design(out: &Path) -> Verdict {
    timed(10, Some(Duration::from_secs(60)), || {
        let table = leakage_table(true)?;
        let k_star = (1..4).filter(|&k| table[k - 1] <= DESIGN_TOLERANCE).max().unwrap_or(0);
        let cfg = config(
            out,
            &[
                ("estimator", json!("oracle")),
                ("system.code", json!("hamming74")),
                ("system.channel", json!("bsc:0.2")),
                ("design.max_leakage", json!(DESIGN_TOLERANCE)),
            ],
        )?;
        commands::design_hash(&cfg)?;
        let text = fs::read_to_string(out.join("design.jsonl"))?;
        let summary: Value = serde_json::from_str(text.lines().last().unwrap_or("{}"))?;
        let final_k = summary["final_k"].as_u64().unwrap_or(0) as usize;
        let k0 = summary["k0"].as_u64().unwrap_or(0) as usize;
        let steps = text.lines().count().saturating_sub(2);
        let iterations = steps.saturating_sub(1);
        let termination = summary["termination"].as_str().unwrap_or("");
        let ok = final_k == k_star && iterations <= k0.abs_diff(k_star) + 1 && termination == "sign-change";
        Ok((
            ok,
            format!(
                "table {:?}, tolerance {DESIGN_TOLERANCE} → k* = {k_star}; got k = {final_k} from k0 = {k0} in {iterations} iterations, {termination}",
                table.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
            ),
        ))
    })
}

fn result_files(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "config.json") {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Byte comparison of every result file of two runs. `config.json` files
/// differ only in the echoed output directory and are skipped.
pub fn determinism(a: &Path, b: &Path, elapsed: Duration) -> Verdict {
    let start = Instant::now();
    let mut v = timed(11, None, || {
        let fa = result_files(a)?;
        let fb = result_files(b)?;
        if fa != fb {
            return Ok((false, format!("file sets differ: {fa:?} vs {fb:?}")));
        }
        let mut differing = Vec::new();
        for f in &fa {
            if fs::read(a.join(f))? != fs::read(b.join(f))? {
                differing.push(f.display().to_string());
            }
        }
        Ok((
            differing.is_empty() && !fa.is_empty(),
            format!("{} result files from two runs of checks 6–10; differing: {differing:?}", fa.len()),
        ))
    });
    v.elapsed = elapsed + start.elapsed();
    v
}
