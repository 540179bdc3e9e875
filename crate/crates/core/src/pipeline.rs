//! The end-to-end link: `(M_s, B) → inverse hash → ENC → channel`, with Eve
//! observing `Z^n` and Bob decoding `Y^n` and hashing back to `M̂_s`.
//!
//! Record `i` of any dataset draws its source bits, Eve's noise and Bob's noise
//! from streams keyed by `(seed, role, i)`, so datasets are bit-reproducible
//! whatever the scheduling.

use std::io::{Read, Write};

use serde::Serialize;

use crate::channel::{ChannelModel, ChannelOutput};
use crate::ecc::CodeSpec;
use crate::error::{Error, Result};
use crate::gf2::{BitVec, UhfPair};
use crate::rng::{stream, Role};

/// One wiretap system instance parameterized by `(n, k, b)`.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    pub k: usize,
    pub b: usize,
    pub code: CodeSpec,
    pub channel_eve: ChannelModel,
    pub channel_bob: ChannelModel,
    pub uhf_enabled: bool,
    /// Draw a fresh hash matrix per record instead of one per system.
    pub fresh_hash_per_record: bool,
    pub seed: u64,
    uhf: Option<UhfPair>,
}

impl SystemConfig {
    pub fn new(
        k: usize,
        b: usize,
        code: CodeSpec,
        channel_eve: ChannelModel,
        channel_bob: ChannelModel,
        uhf_enabled: bool,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("secret length k must be at least 1".into()));
        }
        if code.q_in() != k + b {
            return Err(Error::Config(format!(
                "code {} takes {} input bits but k + b = {}",
                code,
                code.q_in(),
                k + b
            )));
        }
        let uhf = if uhf_enabled {
            Some(UhfPair::random(k + b, k, &mut stream(seed, Role::Hash, 0))?)
        } else {
            None
        };
        Ok(Self {
            k,
            b,
            code,
            channel_eve,
            channel_bob,
            uhf_enabled,
            fresh_hash_per_record: false,
            seed,
            uhf,
        })
    }

    /// Same channel for Bob and Eve.
    pub fn symmetric(
        k: usize,
        b: usize,
        code: CodeSpec,
        channel: ChannelModel,
        uhf_enabled: bool,
        seed: u64,
    ) -> Result<Self> {
        Self::new(k, b, code, channel, channel, uhf_enabled, seed)
    }

    pub fn n(&self) -> usize {
        self.code.n()
    }

    pub fn q(&self) -> usize {
        self.k + self.b
    }

    /// The system's hash pair, `None` when hashing is disabled.
    pub fn uhf(&self) -> Option<&UhfPair> {
        self.uhf.as_ref()
    }

    /// A copy with both channels replaced; the hash matrix is kept.
    pub fn with_channel(&self, channel: ChannelModel) -> Self {
        Self {
            channel_eve: channel,
            channel_bob: channel,
            ..self.clone()
        }
    }

    fn hash_for_record(&self, index: u64) -> Result<Option<UhfPair>> {
        if !self.uhf_enabled {
            return Ok(None);
        }
        if self.fresh_hash_per_record {
            let mut rng = stream(self.seed, Role::Hash, index + 1);
            return Ok(Some(UhfPair::random(self.q(), self.k, &mut rng)?));
        }
        Ok(self.uhf.clone())
    }

    /// Encoder input for `(m_s, pad)`.
    pub fn encoder_input(&self, m_s: &BitVec, pad: &BitVec) -> Result<BitVec> {
        match &self.uhf {
            Some(u) => u.inverse(m_s, pad),
            None => {
                if m_s.len() != self.k || pad.len() != self.b {
                    return Err(Error::LengthMismatch {
                        expected: self.q(),
                        got: m_s.len() + pad.len(),
                    });
                }
                Ok(m_s.concat(pad))
            }
        }
    }

    /// Secret recovered from an encoder input: the hash, or the first `k` bits.
    pub fn secret_of(&self, m: &BitVec) -> Result<BitVec> {
        match &self.uhf {
            Some(u) => u.hash(m),
            None => Ok(m.truncate(self.k)),
        }
    }

    /// Compact descriptor embedded in dataset headers and result files.
    pub fn descriptor(&self) -> String {
        format!(
            "code={};eve={};bob={}",
            self.code, self.channel_eve, self.channel_bob
        )
    }
}

/// Aligned records produced by [`generate`].
#[derive(Clone, Debug, Default)]
pub struct SampleBatch {
    pub m_s: Vec<BitVec>,
    pub b_pad: Vec<BitVec>,
    pub m: Vec<BitVec>,
    pub x: Vec<BitVec>,
    pub z_eve: Vec<ChannelOutput>,
    pub y_bob: Option<Vec<ChannelOutput>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.m_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_s.is_empty()
    }

    /// Secrets as integers (`k ≤ 64`).
    pub fn secret_indices(&self) -> Vec<u64> {
        self.m_s.iter().map(BitVec::to_u64).collect()
    }
}

/// Generates `count` records starting at stream index `start`.
pub fn generate_range(cfg: &SystemConfig, start: u64, count: usize, with_bob: bool) -> Result<SampleBatch> {
    let mut batch = SampleBatch {
        y_bob: with_bob.then(Vec::new),
        ..Default::default()
    };
    for i in 0..count as u64 {
        let index = start + i;
        let mut src = stream(cfg.seed, Role::Source, index);
        let m_s = BitVec::random(cfg.k, &mut src);
        let pad = BitVec::random(cfg.b, &mut src);
        let m = match cfg.hash_for_record(index)? {
            Some(u) => u.inverse(&m_s, &pad)?,
            None => m_s.concat(&pad),
        };
        let x = cfg.code.encode(&m)?;
        let z = cfg.channel_eve.transmit(&x, &mut stream(cfg.seed, Role::Eve, index));
        if let Some(ys) = batch.y_bob.as_mut() {
            ys.push(cfg.channel_bob.transmit(&x, &mut stream(cfg.seed, Role::Bob, index)));
        }
        batch.m_s.push(m_s);
        batch.b_pad.push(pad);
        batch.m.push(m);
        batch.x.push(x);
        batch.z_eve.push(z);
    }
    Ok(batch)
}

pub fn generate(cfg: &SystemConfig, count: usize) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    generate_range(cfg, 0, count, true)
}

/// Bob's estimate of the secret and of the encoder input.
pub fn bob_receive_full(cfg: &SystemConfig, y: &ChannelOutput) -> Result<(BitVec, BitVec)> {
    let decoded = cfg.code.decode_hard(&y.hard_decision())?;
    let secret = cfg.secret_of(&decoded.message)?;
    Ok((secret, decoded.message))
}

pub fn bob_receive(cfg: &SystemConfig, y: &ChannelOutput) -> Result<BitVec> {
    Ok(bob_receive_full(cfg, y)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BerReport {
    pub raw_ber: f64,
    pub raw_half_width: f64,
    pub secret_ber: f64,
    pub secret_half_width: f64,
    pub count: usize,
}

fn half_width(rate: f64, trials: usize) -> f64 {
    1.96 * (rate * (1.0 - rate) / trials as f64).sqrt()
}

/// Error rates over Bob's records of a batch.
pub fn ber_of_batch(cfg: &SystemConfig, batch: &SampleBatch) -> Result<BerReport> {
    let ys = batch
        .y_bob
        .as_ref()
        .ok_or_else(|| Error::Config("batch has no Bob observations".into()))?;
    let (mut raw, mut secret) = (0usize, 0usize);
    for ((y, m), m_s) in ys.iter().zip(&batch.m).zip(&batch.m_s) {
        let (s_hat, m_hat) = bob_receive_full(cfg, y)?;
        raw += m_hat.distance(m)?;
        secret += s_hat.distance(m_s)?;
    }
    let raw_trials = batch.len() * cfg.q();
    let secret_trials = batch.len() * cfg.k;
    let raw_ber = raw as f64 / raw_trials as f64;
    let secret_ber = secret as f64 / secret_trials as f64;
    Ok(BerReport {
        raw_ber,
        raw_half_width: half_width(raw_ber, raw_trials),
        secret_ber,
        secret_half_width: half_width(secret_ber, secret_trials),
        count: batch.len(),
    })
}

pub fn measure_ber(cfg: &SystemConfig, count: usize) -> Result<BerReport> {
    ber_of_batch(cfg, &generate(cfg, count)?)
}

const DATASET_MAGIC: &[u8; 4] = b"WTP1";
const DATASET_VERSION: u32 = 1;

/// Header fields of a dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub n: usize,
    pub k: usize,
    pub b: usize,
    pub descriptor: String,
    pub uhf: bool,
    pub soft: bool,
    pub has_bob: bool,
    pub seed: u64,
    pub count: usize,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn write_output<W: Write>(w: &mut W, z: &ChannelOutput) -> Result<()> {
    match z {
        ChannelOutput::Hard(bits) => w.write_all(&bits.to_bytes())?,
        ChannelOutput::Soft(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_bits<R: Read>(r: &mut R, len: usize) -> Result<BitVec> {
    let mut buf = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut buf)?;
    BitVec::from_bytes(&buf, len)
}

fn read_output<R: Read>(r: &mut R, n: usize, soft: bool) -> Result<ChannelOutput> {
    if soft {
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf)?;
        Ok(ChannelOutput::Soft(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    } else {
        Ok(ChannelOutput::Hard(read_bits(r, n)?))
    }
}

/// Writes a `WTP1` dataset.
///
/// Layout (little-endian): magic `"WTP1"`, version `u32`, `n`, `k`, `b`, `q`
/// as `u32`, descriptor length `u32` and UTF-8 bytes, flags `u8` (bit 0: hash
/// enabled, bit 1: soft outputs, bit 2: Bob observations present), seed `u64`,
/// count `u64`. Each record then stores `m_s`, `b`, `m`, `x` as LSB-first packed
/// bytes, followed by `z` and optionally `y` (packed bits, or `n` × `f32`).
pub fn write_dataset<W: Write>(w: &mut W, cfg: &SystemConfig, batch: &SampleBatch) -> Result<()> {
    let soft = cfg.channel_eve.is_soft();
    if batch.y_bob.is_some() && cfg.channel_bob.is_soft() != soft {
        return Err(Error::Config("Bob and Eve channels must share an output kind".into()));
    }
    w.write_all(DATASET_MAGIC)?;
    write_u32(w, DATASET_VERSION as usize)?;
    for v in [cfg.n(), cfg.k, cfg.b, cfg.q()] {
        write_u32(w, v)?;
    }
    let desc = cfg.descriptor();
    write_u32(w, desc.len())?;
    w.write_all(desc.as_bytes())?;
    let flags = u8::from(cfg.uhf_enabled) | (u8::from(soft) << 1) | (u8::from(batch.y_bob.is_some()) << 2);
    w.write_all(&[flags])?;
    w.write_all(&cfg.seed.to_le_bytes())?;
    w.write_all(&(batch.len() as u64).to_le_bytes())?;
    for i in 0..batch.len() {
        for v in [&batch.m_s[i], &batch.b_pad[i], &batch.m[i], &batch.x[i]] {
            w.write_all(&v.to_bytes())?;
        }
        write_output(w, &batch.z_eve[i])?;
        if let Some(ys) = &batch.y_bob {
            write_output(w, &ys[i])?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<(DatasetHeader, SampleBatch)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = read_u32(r)?;
    if version != DATASET_VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let (n, k, b, q) = (read_u32(r)?, read_u32(r)?, read_u32(r)?, read_u32(r)?);
    if q != k + b {
        return Err(Error::Format(format!("q = {q} but k + b = {}", k + b)));
    }
    let dlen = read_u32(r)?;
    let mut desc = vec![0u8; dlen];
    r.read_exact(&mut desc)?;
    let descriptor = String::from_utf8(desc).map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let seed = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let count = u64::from_le_bytes(word) as usize;
    let header = DatasetHeader {
        n,
        k,
        b,
        descriptor,
        uhf: flags[0] & 1 != 0,
        soft: flags[0] & 2 != 0,
        has_bob: flags[0] & 4 != 0,
        seed,
        count,
    };
    let mut batch = SampleBatch {
        y_bob: header.has_bob.then(Vec::new),
        ..Default::default()
    };
    for _ in 0..count {
        batch.m_s.push(read_bits(r, k)?);
        batch.b_pad.push(read_bits(r, b)?);
        batch.m.push(read_bits(r, q)?);
        batch.x.push(read_bits(r, n)?);
        batch.z_eve.push(read_output(r, n, header.soft)?);
        if let Some(ys) = batch.y_bob.as_mut() {
            ys.push(read_output(r, n, header.soft)?);
        }
    }
    Ok((header, batch))
}

/// Rebuilds the system configuration recorded in a dataset header.
pub fn config_from_header(h: &DatasetHeader) -> Result<SystemConfig> {
    let mut code = None;
    let mut eve = None;
    let mut bob = None;
    for part in h.descriptor.split(';') {
        match part.split_once('=') {
            Some(("code", v)) => code = Some(v.parse::<CodeSpec>()?),
            Some(("eve", v)) => eve = Some(v.parse::<ChannelModel>()?),
            Some(("bob", v)) => bob = Some(v.parse::<ChannelModel>()?),
            _ => return Err(Error::Format(format!("bad descriptor field {part:?}"))),
        }
    }
    let missing = |f: &str| Error::Format(format!("descriptor lacks {f}"));
    let code = code.ok_or_else(|| missing("code"))?;
    if code.n() != h.n {
        return Err(Error::Format("descriptor code length disagrees with header".into()));
    }
    SystemConfig::new(
        h.k,
        h.b,
        code,
        eve.ok_or_else(|| missing("eve"))?,
        bob.ok_or_else(|| missing("bob"))?,
        h.uhf,
        h.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bsc(p: f64) -> ChannelModel {
        ChannelModel::bsc(p).unwrap()
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(SystemConfig::symmetric(0, 4, CodeSpec::identity(4).unwrap(), bsc(0.1), true, 1).is_err());
        assert!(SystemConfig::symmetric(3, 2, CodeSpec::hamming74(), bsc(0.1), true, 1).is_err());
        let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), bsc(0.1), true, 1).unwrap();
        assert!(generate(&cfg, 0).is_err());
    }

    #[test]
    fn noiseless_identity_without_hash_exposes_the_message() {
        let cfg = SystemConfig::symmetric(5, 3, CodeSpec::identity(8).unwrap(), bsc(0.0), false, 9).unwrap();
        let batch = generate(&cfg, 200).unwrap();
        for i in 0..batch.len() {
            let expected = batch.m_s[i].concat(&batch.b_pad[i]);
            assert_eq!(batch.z_eve[i], ChannelOutput::Hard(expected));
        }
    }

    #[test]
    fn every_record_is_consistent() {
        let cfg = SystemConfig::symmetric(3, 2, "bch:15:5".parse().unwrap(), bsc(0.1), true, 10).unwrap();
        let batch = generate(&cfg, 500).unwrap();
        let u = cfg.uhf().unwrap();
        for i in 0..batch.len() {
            assert_eq!(batch.m[i], u.inverse(&batch.m_s[i], &batch.b_pad[i]).unwrap());
            assert_eq!(batch.x[i], cfg.code.encode(&batch.m[i]).unwrap());
        }
    }

    #[test]
    fn marginals_are_uniform_with_and_without_hash() {
        let count = 100_000;
        for uhf in [false, true] {
            let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), bsc(0.1), uhf, 11).unwrap();
            let batch = generate_range(&cfg, 0, count, false).unwrap();
            let bound = 3.0 * (0.25 / count as f64).sqrt();
            for bit in 0..3 {
                let f = batch.m_s.iter().filter(|v| v.get(bit)).count() as f64 / count as f64;
                assert!((f - 0.5).abs() < bound);
            }
            for bit in 0..4 {
                let f = batch.m.iter().filter(|v| v.get(bit)).count() as f64 / count as f64;
                assert!((f - 0.5).abs() < bound, "uhf = {uhf}, bit {bit}: {f}");
            }
        }
    }

    #[test]
    fn generation_is_reproducible_and_range_addressable() {
        let cfg = SystemConfig::symmetric(4, 1, "bch:15:5".parse().unwrap(), ChannelModel::awgn_snr_db(3.0).unwrap(), true, 12).unwrap();
        let a = generate(&cfg, 50).unwrap();
        let b = generate(&cfg, 50).unwrap();
        let tail = generate_range(&cfg, 20, 30, true).unwrap();
        assert_eq!(a.z_eve, b.z_eve);
        assert_eq!(a.z_eve[20..], tail.z_eve[..]);
        assert_eq!(a.y_bob.as_ref().unwrap()[20..], tail.y_bob.as_ref().unwrap()[..]);
    }

    #[test]
    fn bob_recovers_secret_on_noiseless_link_exhaustively() {
        let cfg = SystemConfig::symmetric(7, 5, CodeSpec::identity(12).unwrap(), bsc(0.0), true, 13).unwrap();
        for ms in 0..(1u64 << 7) {
            for pad in 0..(1u64 << 5) {
                let m_s = BitVec::from_u64(ms, 7);
                let m = cfg.encoder_input(&m_s, &BitVec::from_u64(pad, 5)).unwrap();
                let y = ChannelOutput::Hard(cfg.code.encode(&m).unwrap());
                assert_eq!(bob_receive(&cfg, &y).unwrap(), m_s);
            }
        }
    }

    #[test]
    fn bob_recovers_secret_within_bch_radius() {
        let cfg = SystemConfig::symmetric(3, 2, "bch:15:5".parse().unwrap(), bsc(0.0), true, 14).unwrap();
        let mut rng = stream(1, Role::Misc, 0);
        for trial in 0..300u64 {
            let m_s = BitVec::random(3, &mut rng);
            let m = cfg.encoder_input(&m_s, &BitVec::random(2, &mut rng)).unwrap();
            let mut y = cfg.code.encode(&m).unwrap();
            for j in 0..(trial % 4) as usize {
                y.flip((j * 5 + trial as usize) % 15);
            }
            assert_eq!(bob_receive(&cfg, &ChannelOutput::Hard(y)).unwrap(), m_s);
        }
    }

    #[test]
    fn ber_endpoints() {
        let clean = SystemConfig::symmetric(3, 2, "bch:15:5".parse().unwrap(), bsc(0.0), true, 15).unwrap();
        let r = measure_ber(&clean, 2_000).unwrap();
        assert_eq!((r.raw_ber, r.secret_ber), (0.0, 0.0));

        let count = 100_000;
        let noisy = SystemConfig::symmetric(2, 2, CodeSpec::identity(4).unwrap(), bsc(0.5), true, 16).unwrap();
        let r = measure_ber(&noisy, count).unwrap();
        let bound = |trials: usize| 3.0 * (0.25 / trials as f64).sqrt();
        assert!((r.raw_ber - 0.5).abs() < bound(count * 4));
        assert!((r.secret_ber - 0.5).abs() < bound(count * 2));
    }

    #[test]
    fn bch_ber_matches_exhaustive_error_pattern_prediction() {
        // By linearity the decoder's behaviour depends only on the error
        // pattern; enumerate all 2^15 patterns against the zero codeword and
        // weight each by its BSC probability.
        let p: f64 = 0.1;
        let code: CodeSpec = "bch:15:5".parse().unwrap();
        let zero = code.encode(&BitVec::zeros(5)).unwrap();
        let mut predicted = 0.0;
        for e in 0u64..1 << 15 {
            let w = e.count_ones() as i32;
            let prob = p.powi(w) * (1.0 - p).powi(15 - w);
            let d = code.decode_hard(&zero.xor(&BitVec::from_u64(e, 15)).unwrap()).unwrap();
            predicted += prob * d.message.weight() as f64 / 5.0;
        }
        let cfg = SystemConfig::symmetric(5, 0, code, bsc(p), false, 17).unwrap();
        let count = 100_000;
        let r = measure_ber(&cfg, count).unwrap();
        let sigma = (predicted * (1.0 - predicted) / (5 * count) as f64).sqrt();
        // Bits within a block are correlated; allow for the block-level variance.
        assert!((r.raw_ber - predicted).abs() < 3.0 * sigma * 5f64.sqrt(), "{} vs {}", r.raw_ber, predicted);
    }

    #[test]
    fn dataset_round_trip_hard_and_soft() {
        for channel in [bsc(0.2), ChannelModel::awgn_snr_db(1.0).unwrap()] {
            let cfg = SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), channel, true, 18).unwrap();
            let batch = generate(&cfg, 40).unwrap();
            let mut buf = Vec::new();
            write_dataset(&mut buf, &cfg, &batch).unwrap();
            assert_eq!(&buf[..4], b"WTP1");
            let (header, back) = read_dataset(&mut buf.as_slice()).unwrap();
            assert_eq!(header.count, 40);
            assert_eq!(back.z_eve, batch.z_eve);
            assert_eq!(back.y_bob, batch.y_bob);
            assert_eq!(back.m, batch.m);
            let rebuilt = config_from_header(&header).unwrap();
            assert_eq!(rebuilt.uhf(), cfg.uhf());
            assert_eq!(rebuilt.channel_eve, cfg.channel_eve);
        }
        assert!(read_dataset(&mut &b"WTP2"[..]).is_err());
    }
}
