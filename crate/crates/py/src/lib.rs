use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use wiretap_cli::{CliError, ExperimentConfig};
use wiretap_core::oracle::{exact_mi, Evaluation, Target};
use wiretap_core::pipeline::{generate, measure_ber};
use wiretap_core::rng::{stream, Role};
use wiretap_core::{BitVec, ChannelModel, CodeSpec, SystemConfig, UhfPair};

fn core_err(e: wiretap_core::Error) -> PyErr {
    use wiretap_core::Error as E;
    match e {
        E::Config(_) | E::Domain(_) | E::LengthMismatch { .. } | E::Dimension(_) => PyValueError::new_err(e.to_string()),
        E::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Core(c) => core_err(c),
        CliError::Config(_) => PyValueError::new_err(e.to_string()),
        CliError::MissingFile { .. } | CliError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn bits_out(v: &BitVec) -> Vec<u32> {
    v.iter().map(u32::from).collect()
}

fn system(code: &str, channel: &str, k: usize, b: usize, uhf: bool, seed: u64) -> PyResult<SystemConfig> {
    let code: CodeSpec = code.parse().map_err(core_err)?;
    let ch: ChannelModel = channel.parse().map_err(core_err)?;
    SystemConfig::symmetric(k, b, code, ch, uhf, seed).map_err(core_err)
}

/// Invertible universal hash over GF(2) with `q` inputs and `k` outputs.
#[pyclass(module = "wiretap")]
struct Uhf {
    inner: UhfPair,
}

#[pymethods]
impl Uhf {
    #[new]
    #[pyo3(signature = (q, k, seed=42))]
    fn new(q: usize, k: usize, seed: u64) -> PyResult<Self> {
        let inner = UhfPair::random(q, k, &mut stream(seed, Role::Hash, 0)).map_err(core_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Secret of a `q`-bit input given as 0/1 values.
    fn hash(&self, m: Vec<u8>) -> PyResult<Vec<u32>> {
        Ok(bits_out(&self.inner.hash(&BitVec::from_bits(&m)).map_err(core_err)?))
    }

    /// Encoder input mapping to `secret` with padding `pad`.
    fn inverse(&self, secret: Vec<u8>, pad: Vec<u8>) -> PyResult<Vec<u32>> {
        let m = self
            .inner
            .inverse(&BitVec::from_bits(&secret), &BitVec::from_bits(&pad))
            .map_err(core_err)?;
        Ok(bits_out(&m))
    }
}

/// Exact leakage `I(target; Z)` in bits and its standard error.
#[pyfunction]
#[pyo3(signature = (code, channel, k, b, uhf=true, seed=42, target="secret", samples=100_000))]
#[allow(clippy::too_many_arguments)]
fn oracle_mi(
    code: &str,
    channel: &str,
    k: usize,
    b: usize,
    uhf: bool,
    seed: u64,
    target: &str,
    samples: usize,
) -> PyResult<(f64, f64)> {
    let sys = system(code, channel, k, b, uhf, seed)?;
    let target: Target = target.parse().map_err(core_err)?;
    let est = exact_mi(&sys, target, Evaluation::auto(&sys, samples)).map_err(core_err)?;
    Ok((est.value_bits, est.stderr_bits))
}

/// `count` records as `(secrets, eve_outputs)`: 0/1 secret bits and Eve's
/// observations (±1 for hard channels, received reals for AWGN).
#[pyfunction]
#[pyo3(signature = (code, channel, k, b, count, uhf=true, seed=42))]
fn sample(
    code: &str,
    channel: &str,
    k: usize,
    b: usize,
    count: usize,
    uhf: bool,
    seed: u64,
) -> PyResult<(Vec<Vec<u32>>, Vec<Vec<f32>>)> {
    let sys = system(code, channel, k, b, uhf, seed)?;
    let batch = generate(&sys, count).map_err(core_err)?;
    let secrets = batch.m_s.iter().map(bits_out).collect();
    let z = batch.z_eve.iter().map(|z| z.to_reals()).collect();
    Ok((secrets, z))
}

/// Bob's decoded bit error rate on the encoder input and on the secret.
#[pyfunction]
#[pyo3(signature = (code, channel, k, b, count=10_000, uhf=true, seed=42))]
fn ber(code: &str, channel: &str, k: usize, b: usize, count: usize, uhf: bool, seed: u64) -> PyResult<(f64, f64)> {
    let sys = system(code, channel, k, b, uhf, seed)?;
    let r = measure_ber(&sys, count).map_err(core_err)?;
    Ok((r.raw_ber, r.secret_ber))
}

/// Runs a CLI subcommand with dotted-key overrides and returns its JSON
/// summary as a string.
#[pyfunction]
#[pyo3(signature = (command, overrides=None))]
fn run(command: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    use wiretap_cli::Command as C;
    let cmd = match command {
        "gen-data" => C::GenData,
        "train" => C::Train,
        "estimate" => C::Estimate,
        "oracle" => C::Oracle,
        "ber-sweep" => C::BerSweep,
        "bounds" => C::Bounds,
        "design-hash" => C::DesignHash,
        "leakage-sweep" => C::LeakageSweep,
        other => return Err(PyValueError::new_err(format!("unknown command '{other}'"))),
    };
    let mut cfg = ExperimentConfig::default();
    if let Some(d) = overrides {
        let json = d.py().import("json")?;
        for (key, value) in d.iter() {
            let key: String = key.extract()?;
            let text: String = json.call_method1("dumps", (value,))?.extract()?;
            let value = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
            cfg.set(&key, value).map_err(cli_err)?;
        }
    }
    let summary = wiretap_cli::run_command(&cmd, &cfg).map_err(cli_err)?;
    Ok(summary.to_string())
}

#[pymodule]
fn wiretap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Uhf>()?;
    m.add_function(wrap_pyfunction!(oracle_mi, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(ber, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
