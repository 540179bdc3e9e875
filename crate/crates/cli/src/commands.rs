//! Subcommand implementations. Each takes the resolved configuration, writes
//! its files under the output directory and returns a short JSON summary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wiretap_core::bounds::{k_init, lhl_bound, minimize_b, BoundConfig, PsiSamples};
use wiretap_core::hashdesign::{design, DesignConfig, EstimatorKind, RetrainPolicy};
use wiretap_core::neural::{
    train, vclub_estimate, BaselineConfig, Checkpoint, Cnbmm, CnbmmConfig, GaussianClub, LeakageData, Mine, OracleModel,
    TrainOutcome, TrainSchedule, WithParams,
};
use wiretap_core::oracle::{exact_cond_entropy, exact_mi, Evaluation, Oracle, OracleRecord, Target};
use wiretap_core::pipeline::{config_from_header, generate_range, measure_ber, read_dataset, write_dataset};
use wiretap_core::rng::{stream, Role};
use wiretap_core::{ChannelModel, SystemConfig};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Invariant(msg()))
    }
}

fn estimator_kind(cfg: &ExperimentConfig) -> CliResult<EstimatorKind> {
    Ok(cfg.str("estimator")?.parse()?)
}

fn open_input(path: &str) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::MissingFile {
        path: path.to_string(),
        source,
    })
}

fn desk_widths(cfg: &ExperimentConfig) -> CliResult<bool> {
    match cfg.str("model.widths")? {
        "desk" => Ok(true),
        "paper" => Ok(false),
        other => Err(CliError::Config(format!("model.widths must be 'desk' or 'paper', got '{other}'"))),
    }
}

pub fn cnbmm_config(cfg: &ExperimentConfig, n: usize, k: usize) -> CliResult<CnbmmConfig> {
    let mut mc = if desk_widths(cfg)? {
        CnbmmConfig::desk(n, k)
    } else {
        CnbmmConfig::paper(n, k)
    };
    mc.num_experts = cfg.usize("model.experts")?;
    if let Some(r) = cfg.opt_usize("model.rank")? {
        mc.rank = r;
    }
    mc.temperature = cfg.f64("model.temperature")?;
    mc.lambda_div = cfg.f64("model.lambda_div")?;
    mc.lambda_int = cfg.f64("model.lambda_int")?;
    mc.validate()?;
    Ok(mc)
}

/// A trained or trainable neural estimator of any supported kind.
pub enum NeuralEstimator {
    Cnbmm(Cnbmm),
    GaussianClub(GaussianClub),
    Mine(Mine),
}

impl NeuralEstimator {
    pub fn build(cfg: &ExperimentConfig, kind: EstimatorKind, n: usize, k: usize, seed: u64) -> CliResult<Self> {
        let baseline = || -> CliResult<BaselineConfig> {
            Ok(if desk_widths(cfg)? {
                BaselineConfig::desk(n, k)
            } else {
                BaselineConfig::paper(n, k)
            })
        };
        Ok(match kind {
            EstimatorKind::Cnbmm => Self::Cnbmm(Cnbmm::new(cnbmm_config(cfg, n, k)?, seed)?),
            EstimatorKind::GaussianClub => Self::GaussianClub(GaussianClub::new(baseline()?, seed)?),
            EstimatorKind::Mine => Self::Mine(Mine::new(baseline()?, seed)?),
            EstimatorKind::Oracle => {
                return Err(CliError::Config("the oracle estimator has nothing to train".into()));
            }
        })
    }

    pub fn train(&mut self, sys: &SystemConfig, schedule: &TrainSchedule, seed: u64) -> CliResult<TrainOutcome> {
        Ok(match self {
            Self::Cnbmm(e) => train(e, sys, schedule, seed)?,
            Self::GaussianClub(e) => train(e, sys, schedule, seed)?,
            Self::Mine(e) => train(e, sys, schedule, seed)?,
        })
    }
}

fn dataset_path(cfg: &ExperimentConfig, out: &OutputDir) -> CliResult<PathBuf> {
    Ok(match cfg.opt_str("data.path")? {
        Some(p) => PathBuf::from(p),
        None => out.path("dataset.wtp"),
    })
}

/// Writes a `WTP1` dataset of `data.count` records.
pub fn gen_data(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "gen-data")?;
    let sys = cfg.system()?;
    let count = cfg.usize("data.count")?;
    if count == 0 {
        return Err(CliError::Config("data.count must be at least 1".into()));
    }
    let batch = generate_range(&sys, 0, count, cfg.bool("data.with_bob")?)?;
    let path = dataset_path(cfg, &out)?;
    let mut w = BufWriter::new(File::create(&path)?);
    write_dataset(&mut w, &sys, &batch)?;
    w.flush()?;
    let recorded = cfg.opt_str("data.path")?.unwrap_or("dataset.wtp");
    let mut summary = json!({
        "dataset": recorded,
        "records": batch.len(),
        "system": sys.descriptor(),
        "k": sys.k,
        "b": sys.b,
        "uhf": sys.uhf_enabled,
    });
    out.write_json("dataset.json", &summary)?;
    summary["dataset"] = json!(path.display().to_string());
    Ok(summary)
}

/// Trains the configured estimator and writes its trace, report and (for
/// CNBMM) checkpoint.
pub fn train_cmd(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "train")?;
    let kind = estimator_kind(cfg)?;
    let sys = cfg.system()?;
    let seed = cfg.seed()?;
    let schedule = cfg.schedule(&kind.to_string())?;
    let mut est = NeuralEstimator::build(cfg, kind, sys.n(), sys.k, seed)?;
    let outcome = est.train(&sys, &schedule, seed)?;
    let report = &outcome.report;
    ensure(report.trace.len() == schedule.epochs(), || {
        format!("trace has {} epochs, schedule {}", report.trace.len(), schedule.epochs())
    })?;
    ensure((0.0..=sys.k as f64).contains(&report.projected_bits), || {
        format!("projected estimate {} outside [0, {}]", report.projected_bits, sys.k)
    })?;
    out.write_json_lines("trace.jsonl", &report.to_json_lines()?)?;
    let mut head = report.clone();
    head.trace.clear();
    let mut summary = json!({
        "report": head,
        "stages": outcome.stage_reports(&schedule),
        "final_step_loss": outcome.step_losses.last(),
    });
    match est {
        NeuralEstimator::Cnbmm(model) => {
            summary["parameters"] = json!(model.parameter_count());
            let (path, recorded) = match cfg.opt_str("checkpoint")? {
                Some(p) => (PathBuf::from(p), p),
                None => (out.path("model.cnb"), "model.cnb"),
            };
            Checkpoint {
                model,
                ema: Some(outcome.ema),
            }
            .save(&path)?;
            // the file names the checkpoint relative to the output directory
            summary["checkpoint"] = json!(recorded);
            out.write_json("report.json", &summary)?;
            summary["checkpoint"] = json!(path.display().to_string());
            return Ok(summary);
        }
        NeuralEstimator::Mine(m) => summary["overflow_clamps"] = json!(m.overflow_clamps),
        NeuralEstimator::GaussianClub(_) => {}
    }
    out.write_json("report.json", &summary)?;
    Ok(summary)
}

/// vCLUB estimate on a stored dataset with the exact posterior or a trained
/// CNBMM checkpoint.
pub fn estimate(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "estimate")?;
    let path = cfg
        .opt_str("data.path")?
        .ok_or_else(|| CliError::Config("estimate needs data.path".into()))?
        .to_string();
    let (header, batch) = read_dataset(&mut open_input(&path)?)?;
    let sys = config_from_header(&header)?;
    let data = LeakageData::from_batch(&batch)?;
    let mut rng = stream(cfg.seed()?, Role::Permute, 0);
    let report = match estimator_kind(cfg)? {
        EstimatorKind::Oracle => {
            let oracle = Oracle::new(&sys)?;
            vclub_estimate(&OracleModel { oracle: &oracle }, &data, "oracle", &mut rng)?
        }
        EstimatorKind::Cnbmm => {
            let ckpt_path = cfg
                .opt_str("checkpoint")?
                .ok_or_else(|| CliError::Config("estimate with cnbmm needs a checkpoint".into()))?;
            if !std::path::Path::new(ckpt_path).exists() {
                return Err(CliError::MissingFile {
                    path: ckpt_path.to_string(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                });
            }
            let ckpt = Checkpoint::load(ckpt_path)?;
            let model = WithParams {
                model: &ckpt.model,
                params: ckpt.eval_params(),
            };
            vclub_estimate(&model, &data, "cnbmm", &mut rng)?
        }
        other => {
            return Err(CliError::Config(format!("estimate supports oracle and cnbmm, not {other}")));
        }
    };
    let summary = json!({
        "dataset": path,
        "system": sys.descriptor(),
        "report": report,
    });
    out.write_json("estimate.json", &summary)?;
    Ok(summary)
}

/// Exact (or Monte-Carlo) oracle quantities for the configured system.
pub fn oracle(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "oracle")?;
    let sys = cfg.system()?;
    let target: Target = cfg.str("oracle.target")?.parse()?;
    let eval = Evaluation::auto(&sys, cfg.usize("oracle.samples")?);
    let mi = exact_mi(&sys, target, eval)?;
    let ce = exact_cond_entropy(&sys, target, eval)?;
    let bits = target.bits(&sys) as f64;
    ensure(mi.value_bits >= -1e-9 && mi.value_bits <= bits + 1e-9 || eval != Evaluation::Exhaustive, || {
        format!("exact MI {} outside [0, {bits}]", mi.value_bits)
    })?;
    let records = [
        OracleRecord::new(&sys, &format!("mi:{target}"), &mi),
        OracleRecord::new(&sys, &format!("cond-entropy:{target}"), &ce.via_mi),
        OracleRecord::new(&sys, &format!("cond-entropy-direct:{target}"), &ce.direct),
    ];
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    out.write_json_lines("oracle.jsonl", &body)?;
    Ok(json!({ "records": records }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub snr_db_or_pe: f64,
    pub channel_ber: f64,
    pub raw_ber: f64,
    pub raw_half_width: f64,
    pub secret_ber: f64,
    pub secret_half_width: f64,
    pub count: usize,
}

/// Bob's decoded error rates along the sweep axis.
pub fn ber_sweep(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "ber-sweep")?;
    let sys = cfg.system()?;
    let count = cfg.usize("sweep.ber_samples")?;
    let mut rows = Vec::new();
    for v in cfg.f64_list("sweep.values")? {
        let ch = cfg.sweep_channel(v)?;
        let r = measure_ber(&sys.with_channel(ch), count)?;
        rows.push(BerRow {
            snr_db_or_pe: v,
            channel_ber: ch.bit_error_rate(),
            raw_ber: r.raw_ber,
            raw_half_width: r.raw_half_width,
            secret_ber: r.secret_ber,
            secret_half_width: r.secret_half_width,
            count: r.count,
        });
    }
    out.write_csv("ber.csv", &rows)?;
    Ok(json!({ "rows": rows.len() }))
}

fn bound_config(cfg: &ExperimentConfig) -> CliResult<BoundConfig> {
    let bc = BoundConfig {
        mc_samples: cfg.usize("bounds.samples")?,
        grid_points: cfg.usize("bounds.grid_points")?,
        eps_lo: cfg.f64("bounds.eps_lo")?,
        eps_hi: cfg.f64("bounds.eps_hi")?,
        rel_tol: cfg.f64("bounds.rel_tol")?,
        h_max_bits: cfg.opt_f64("bounds.h_max_bits")?,
    };
    bc.validate()?;
    Ok(bc)
}

/// Gap correction `g`, the initial hash size and the leftover-hash bound.
pub fn bounds(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "bounds")?;
    let sys = cfg.system()?;
    let bc = bound_config(cfg)?;
    let samples = PsiSamples::draw(&sys, bc.mc_samples)?;
    let mut gap = minimize_b(&samples, &bc)?;
    ensure(gap.g_bits.is_finite() && gap.accept_frac > 0.0, || {
        format!("gap correction {} with acceptance {}", gap.g_bits, gap.accept_frac)
    })?;
    let h = match cfg.opt_f64("bounds.h_cond_bits")? {
        Some(h) => h,
        None => {
            let eval = Evaluation::auto(&sys, cfg.usize("oracle.samples")?);
            exact_cond_entropy(&sys, Target::EncoderInput, eval)?.via_mi.value_bits
        }
    };
    let ki = k_init(h, gap.g_bits, sys.q())?;
    gap.k0 = Some(ki.k0);
    let lhl = lhl_bound(gap.eps_star, sys.k as f64, h - gap.g_bits)?;
    out.write_csv_text("bounds_grid.csv", &gap.grid_csv())?;
    let summary = json!({
        "h_cond_bits": h,
        "k_init": ki,
        "lhl": lhl,
        "gap": gap,
    });
    out.write_json("gap.json", &summary)?;
    Ok(json!({ "eps_star": gap.eps_star, "g_bits": gap.g_bits, "k0": ki.k0, "lhl": lhl.value }))
}

/// Closed-loop search for the hash output size.
pub fn design_hash(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "design-hash")?;
    let kind = estimator_kind(cfg)?;
    let channel = cfg.channel()?;
    let mut dc = DesignConfig::new(cfg.f64("design.max_leakage")?, cfg.code()?, channel, kind, cfg.seed()?);
    dc.channel_bob = cfg.channel_bob()?;
    dc.uhf_enabled = cfg.bool("system.uhf")?;
    dc.retrain = cfg.str("design.retrain")?.parse::<RetrainPolicy>()?;
    dc.max_iters = cfg.usize("design.max_iters")?;
    dc.k0 = cfg.opt_usize("design.k0")?;
    dc.oracle_samples = cfg.usize("oracle.samples")?;
    dc.bounds = bound_config(cfg)?;
    dc.desk_widths = desk_widths(cfg)?;
    if kind != EstimatorKind::Oracle {
        dc.schedule = cfg.schedule(&kind.to_string())?;
    }
    dc.validate()?;
    let trace = design(&dc)?;
    ensure((1..dc.q()).contains(&trace.final_k), || format!("final k = {} outside [1, {}]", trace.final_k, dc.q() - 1))?;
    out.write_json_lines("design.jsonl", &trace.to_json_lines()?)?;
    Ok(json!({
        "final_k": trace.final_k,
        "final_leakage": trace.final_leakage,
        "iterations": trace.iterations(),
        "termination": trace.termination,
    }))
}

/// One row of `leakage.csv`: seed-averaged leakage at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub snr_db_or_pe: f64,
    pub estimator: String,
    pub uhf: bool,
    pub mi_raw_bits: f64,
    pub mi_proj_per_bit: f64,
    pub ber: f64,
    pub stderr: f64,
}

struct Point {
    raw: f64,
    projected: f64,
    stderr: f64,
}

fn sweep_estimators(cfg: &ExperimentConfig) -> CliResult<Vec<EstimatorKind>> {
    let names = cfg.str_list("sweep.estimators")?.unwrap_or_else(|| vec![cfg.str("estimator").unwrap_or("cnbmm").to_string()]);
    names.iter().map(|s| Ok(s.parse()?)).collect()
}

fn oracle_points(cfg: &ExperimentConfig, channels: &[ChannelModel], uhf: bool, seed: u64) -> CliResult<Vec<Point>> {
    let samples = cfg.usize("oracle.samples")?;
    channels
        .iter()
        .map(|&ch| {
            let sys = cfg.system_with(Some(ch), Some(uhf), Some(seed))?;
            let est = exact_mi(&sys, Target::Secret, Evaluation::auto(&sys, samples))?;
            Ok(Point {
                raw: est.value_bits,
                projected: est.value_bits.clamp(0.0, sys.k as f64),
                stderr: est.stderr_bits,
            })
        })
        .collect()
}

fn neural_points(
    cfg: &ExperimentConfig,
    kind: EstimatorKind,
    channels: &[ChannelModel],
    uhf: bool,
    seed: u64,
) -> CliResult<Vec<Point>> {
    let name = kind.to_string();
    let sys = cfg.system_with(Some(channels[0]), Some(uhf), Some(seed))?;
    match cfg.str("sweep.mode")? {
        "curriculum" => {
            let schedule = cfg.staged_schedule(channels, &name)?;
            let mut est = NeuralEstimator::build(cfg, kind, sys.n(), sys.k, seed)?;
            let outcome = est.train(&sys, &schedule, seed)?;
            let stages = outcome.stage_reports(&schedule);
            ensure(stages.len() == channels.len(), || {
                format!("{} stage reports for {} sweep points", stages.len(), channels.len())
            })?;
            Ok(stages
                .iter()
                .map(|r| Point {
                    raw: r.raw_bits,
                    projected: r.projected_bits,
                    stderr: r.stderr_bits,
                })
                .collect())
        }
        "per-point" => channels
            .iter()
            .map(|&ch| {
                let schedule = cfg.fixed_schedule(ch, &name)?;
                let mut est = NeuralEstimator::build(cfg, kind, sys.n(), sys.k, seed)?;
                let r = est.train(&sys.with_channel(ch), &schedule, seed)?.report;
                Ok(Point {
                    raw: r.raw_bits,
                    projected: r.projected_bits,
                    stderr: r.stderr_bits,
                })
            })
            .collect(),
        other => Err(CliError::Config(format!("sweep.mode must be 'curriculum' or 'per-point', got '{other}'"))),
    }
}

/// Leakage along the sweep axis for every estimator and hash setting,
/// averaged over `sweep.seeds` consecutive seeds.
pub fn leakage_sweep(cfg: &ExperimentConfig) -> CliResult<Value> {
    let out = OutputDir::create(cfg, "leakage-sweep")?;
    let values = cfg.f64_list("sweep.values")?;
    if values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    let channels = values.iter().map(|&v| cfg.sweep_channel(v)).collect::<CliResult<Vec<_>>>()?;
    let uhf_states = cfg.bool_list("sweep.uhf")?;
    let seeds = cfg.u64("sweep.seeds")?.max(1);
    let base_seed = cfg.seed()?;
    let estimators = sweep_estimators(cfg)?;
    let k = cfg.usize("system.k")?;
    let ber_samples = cfg.usize("sweep.ber_samples")?;

    let base = cfg.system()?;
    let bers = channels
        .iter()
        .map(|&ch| Ok(measure_ber(&base.with_channel(ch), ber_samples)?.raw_ber))
        .collect::<CliResult<Vec<_>>>()?;

    // (estimator, uhf) → per-point sums over seeds
    let mut grid = Vec::new();
    for &kind in &estimators {
        for &uhf in &uhf_states {
            let mut sums: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0); channels.len()];
            for s in 0..seeds {
                let seed = base_seed + s;
                info!("sweep {kind} uhf={uhf} seed={seed}");
                let points = match kind {
                    EstimatorKind::Oracle => oracle_points(cfg, &channels, uhf, seed)?,
                    _ => neural_points(cfg, kind, &channels, uhf, seed)?,
                };
                for (acc, p) in sums.iter_mut().zip(&points) {
                    ensure((0.0..=k as f64).contains(&p.projected), || {
                        format!("projected estimate {} outside [0, {k}]", p.projected)
                    })?;
                    acc.0 += p.raw;
                    acc.1 += p.projected;
                    acc.2 += p.stderr * p.stderr;
                }
            }
            grid.push((kind, uhf, sums));
        }
    }

    let n = seeds as f64;
    let mut rows = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        for (kind, uhf, sums) in &grid {
            let (raw, proj, var) = sums[i];
            rows.push(LeakageRow {
                snr_db_or_pe: v,
                estimator: kind.to_string(),
                uhf: *uhf,
                mi_raw_bits: raw / n,
                mi_proj_per_bit: proj / n / k as f64,
                ber: bers[i],
                stderr: var.sqrt() / n,
            });
        }
    }
    out.write_csv("leakage.csv", &rows)?;
    Ok(json!({ "rows": rows.len(), "csv": out.path("leakage.csv").display().to_string() }))
}
