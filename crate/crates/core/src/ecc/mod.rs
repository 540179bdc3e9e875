//! Block channel codes: the ENC/DEC stage of the link.
//!
//! Codes are named in configuration files as `"bch:15:5"`, `"hamming74"`,
//! `"rep:3"` or `"identity:8"`. A BCH code is keyed by `(n, q_in)` from its own
//! construction; the achieved correction radius is reported by [`CodeSpec::t`].

mod bch;
mod gf2m;
mod poly;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use bch::{BchCode, Decoded};
pub use gf2m::{GaloisField, PRIMITIVE_POLYS};
pub use poly::Gf2Poly;

use crate::error::{Error, Result};
use crate::gf2::BitVec;

#[derive(Clone, Debug)]
pub enum CodeFamily {
    Identity,
    Repetition,
    Hamming74,
    Bch(Arc<BchCode>),
}

/// A block code `F_2^{q_in} → F_2^n` with hard-decision decoding.
#[derive(Clone, Debug)]
pub struct CodeSpec {
    family: CodeFamily,
    n: usize,
    q_in: usize,
    t: usize,
}

// Systematic Hamming(7,4): codeword = [m0 m1 m2 m3 p0 p1 p2].
const HAMMING_PARITY: [[u8; 3]; 4] = [[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]];

impl CodeSpec {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("identity code needs n >= 1".into()));
        }
        Ok(Self {
            family: CodeFamily::Identity,
            n,
            q_in: n,
            t: 0,
        })
    }

    pub fn repetition(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("repetition code needs n >= 1".into()));
        }
        Ok(Self {
            family: CodeFamily::Repetition,
            n,
            q_in: 1,
            t: (n - 1) / 2,
        })
    }

    pub fn hamming74() -> Self {
        Self {
            family: CodeFamily::Hamming74,
            n: 7,
            q_in: 4,
            t: 1,
        }
    }

    /// BCH code of length `2^m − 1` with designed radius `t`.
    pub fn bch(m: usize, t: usize) -> Result<Self> {
        let code = BchCode::new(m, t)?;
        Ok(Self {
            n: code.n(),
            q_in: code.k(),
            t: code.t(),
            family: CodeFamily::Bch(Arc::new(code)),
        })
    }

    /// The BCH code with the given length and message size, if one exists.
    pub fn bch_by_size(n: usize, q_in: usize) -> Result<Self> {
        let m = (3..=8)
            .find(|&m| (1usize << m) - 1 == n)
            .ok_or_else(|| Error::Config(format!("BCH length {n} is not 2^m - 1 with 3 <= m <= 8")))?;
        for t in 1..n {
            match Self::bch(m, t) {
                Ok(spec) if spec.q_in == q_in => return Ok(spec),
                Ok(spec) if spec.q_in < q_in => break,
                Ok(_) => {}
                Err(_) => break,
            }
        }
        Err(Error::Config(format!("no BCH code with n = {n} and q_in = {q_in}")))
    }

    pub fn family(&self) -> &CodeFamily {
        &self.family
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q_in(&self) -> usize {
        self.q_in
    }

    /// Guaranteed correction radius.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn encode(&self, m: &BitVec) -> Result<BitVec> {
        if m.len() != self.q_in {
            return Err(Error::LengthMismatch {
                expected: self.q_in,
                got: m.len(),
            });
        }
        match &self.family {
            CodeFamily::Identity => Ok(m.clone()),
            CodeFamily::Repetition => Ok(if m.get(0) {
                BitVec::ones(self.n)
            } else {
                BitVec::zeros(self.n)
            }),
            CodeFamily::Hamming74 => {
                let mut c = BitVec::zeros(7);
                for i in 0..4 {
                    if m.get(i) {
                        c.set(i, true);
                        for (j, &p) in HAMMING_PARITY[i].iter().enumerate() {
                            if p == 1 {
                                c.flip(4 + j);
                            }
                        }
                    }
                }
                Ok(c)
            }
            CodeFamily::Bch(code) => code.encode(m),
        }
    }

    /// Hard-decision decoding. Always returns a decision; `success` is false
    /// when the decoder detected an uncorrectable pattern.
    pub fn decode_hard(&self, r: &BitVec) -> Result<Decoded> {
        if r.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: r.len(),
            });
        }
        match &self.family {
            CodeFamily::Identity => Ok(Decoded {
                message: r.clone(),
                corrected: 0,
                success: true,
            }),
            CodeFamily::Repetition => {
                let w = r.weight();
                let one = 2 * w > self.n;
                let corrected = if one { self.n - w } else { w };
                Ok(Decoded {
                    message: BitVec::from_bits(&[u8::from(one)]),
                    corrected,
                    // An even-length tie cannot be resolved.
                    success: 2 * w != self.n,
                })
            }
            CodeFamily::Hamming74 => {
                let mut word = r.clone();
                let mut syndrome = [0u8; 3];
                for (j, s) in syndrome.iter_mut().enumerate() {
                    let mut acc = u8::from(r.get(4 + j));
                    for (i, row) in HAMMING_PARITY.iter().enumerate() {
                        acc ^= row[j] & u8::from(r.get(i));
                    }
                    *s = acc;
                }
                let mut corrected = 0;
                if syndrome != [0, 0, 0] {
                    let pos = HAMMING_PARITY
                        .iter()
                        .position(|row| *row == syndrome)
                        .unwrap_or_else(|| 4 + syndrome.iter().position(|&b| b == 1).unwrap());
                    word.flip(pos);
                    corrected = 1;
                }
                Ok(Decoded {
                    message: word.truncate(4),
                    corrected,
                    success: true,
                })
            }
            CodeFamily::Bch(code) => code.decode(r),
        }
    }

    /// Configuration name, parseable by [`FromStr`].
    pub fn name(&self) -> String {
        match &self.family {
            CodeFamily::Identity => format!("identity:{}", self.n),
            CodeFamily::Repetition => format!("rep:{}", self.n),
            CodeFamily::Hamming74 => "hamming74".to_string(),
            CodeFamily::Bch(_) => format!("bch:{}:{}", self.n, self.q_in),
        }
    }
}

impl fmt::Display for CodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl FromStr for CodeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| -> Result<usize> {
            p.parse()
                .map_err(|_| Error::Config(format!("bad number {p:?} in code name {s:?}")))
        };
        match parts.as_slice() {
            ["identity", n] => Self::identity(num(n)?),
            ["rep", n] => Self::repetition(num(n)?),
            ["hamming74"] => Ok(Self::hamming74()),
            ["bch", n, k] => Self::bch_by_size(num(n)?, num(k)?),
            _ => Err(Error::Config(format!("unknown code {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};
    use proptest::prelude::*;

    fn min_weight(spec: &CodeSpec) -> usize {
        (1u64..1 << spec.q_in())
            .map(|m| spec.encode(&BitVec::from_u64(m, spec.q_in())).unwrap().weight())
            .min()
            .unwrap()
    }

    #[test]
    fn identity_and_repetition() {
        let id = CodeSpec::identity(8).unwrap();
        let v = BitVec::from_u64(0b1011_0010, 8);
        assert_eq!(id.encode(&v).unwrap(), v);
        let rep = CodeSpec::repetition(3).unwrap();
        assert_eq!(rep.encode(&BitVec::from_bits(&[1])).unwrap(), BitVec::from_bits(&[1, 1, 1]));
        let d = rep.decode_hard(&BitVec::from_bits(&[1, 0, 1])).unwrap();
        assert_eq!(d.message, BitVec::from_bits(&[1]));
        assert_eq!(d.corrected, 1);
    }

    #[test]
    fn bch_15_5_has_minimum_distance_seven() {
        let spec: CodeSpec = "bch:15:5".parse().unwrap();
        assert_eq!(spec.t(), 3);
        assert_eq!(min_weight(&spec), 7);
        // Generator degree 10 from the minimal polynomials of α, α^3, α^5.
        if let CodeFamily::Bch(code) = spec.family() {
            assert_eq!(code.generator().degree(), Some(10));
        }
    }

    #[test]
    fn bch_build_sizes() {
        let a = CodeSpec::bch(4, 3).unwrap();
        assert_eq!((a.n(), a.q_in()), (15, 5));
        let b = CodeSpec::bch(4, 1).unwrap();
        assert_eq!((b.n(), b.q_in()), (15, 11));
        assert_eq!(min_weight(&b), 3);
        assert_eq!(CodeSpec::bch(6, 6).unwrap().q_in(), 30);
        assert_eq!(CodeSpec::bch(6, 5).unwrap().q_in(), 36);
        assert!(CodeSpec::bch(4, 8).is_err());
    }

    #[test]
    fn hamming_has_distance_three_and_corrects_single_errors() {
        let h = CodeSpec::hamming74();
        assert_eq!(min_weight(&h), 3);
        for m in 0..16u64 {
            let msg = BitVec::from_u64(m, 4);
            let cw = h.encode(&msg).unwrap();
            for i in 0..7 {
                let mut r = cw.clone();
                r.flip(i);
                assert_eq!(h.decode_hard(&r).unwrap().message, msg);
            }
        }
    }

    #[test]
    fn zero_error_round_trip_is_exhaustive_for_small_codes() {
        for name in ["identity:10", "rep:5", "hamming74", "bch:15:5", "bch:15:7", "bch:15:11", "bch:7:4"] {
            let spec: CodeSpec = name.parse().unwrap();
            for m in 0..(1u64 << spec.q_in()) {
                let msg = BitVec::from_u64(m, spec.q_in());
                let d = spec.decode_hard(&spec.encode(&msg).unwrap()).unwrap();
                assert_eq!(d.message, msg, "{name}");
                assert!(d.success);
            }
        }
    }

    #[test]
    fn bch_15_7_corrects_up_to_two_errors_exhaustively() {
        let spec: CodeSpec = "bch:15:7".parse().unwrap();
        assert_eq!(spec.t(), 2);
        let mut rng = stream(12, Role::Misc, 0);
        for _ in 0..8 {
            let msg = BitVec::random(7, &mut rng);
            let cw = spec.encode(&msg).unwrap();
            for e in 0u64..1 << 15 {
                if e.count_ones() > 2 {
                    continue;
                }
                let r = cw.xor(&BitVec::from_u64(e, 15)).unwrap();
                assert_eq!(spec.decode_hard(&r).unwrap().message, msg);
            }
        }
    }

    #[test]
    fn too_many_errors_is_flagged_or_miscorrected_never_panics() {
        let spec: CodeSpec = "bch:15:5".parse().unwrap();
        let cw = spec.encode(&BitVec::zeros(5)).unwrap();
        let mut flagged = 0;
        for e in 0u64..1 << 15 {
            if e.count_ones() != 4 {
                continue;
            }
            let d = spec.decode_hard(&cw.xor(&BitVec::from_u64(e, 15)).unwrap()).unwrap();
            if !d.success {
                flagged += 1;
            }
        }
        assert!(flagged > 0);
    }

    #[test]
    fn names_round_trip_and_errors() {
        for name in ["identity:8", "rep:3", "hamming74", "bch:15:5", "bch:63:30", "bch:63:36"] {
            let spec: CodeSpec = name.parse().unwrap();
            assert_eq!(spec.name(), name);
        }
        assert!("bch:15:6".parse::<CodeSpec>().is_err());
        assert!("bch:16:5".parse::<CodeSpec>().is_err());
        assert!("polar:128:16".parse::<CodeSpec>().is_err());
        assert!("rep:x".parse::<CodeSpec>().is_err());
        let h = CodeSpec::hamming74();
        assert!(h.encode(&BitVec::zeros(3)).is_err());
        assert!(h.decode_hard(&BitVec::zeros(6)).is_err());
    }

    proptest! {
        #[test]
        fn encoding_is_linear(a in any::<u64>(), b in any::<u64>(), which in 0usize..4) {
            let spec: CodeSpec = ["hamming74", "bch:15:5", "bch:31:16", "bch:63:36"][which].parse().unwrap();
            let q = spec.q_in();
            let mut ra = stream(a, Role::Misc, 0);
            let mut rb = stream(b, Role::Misc, 0);
            let x = BitVec::random(q, &mut ra);
            let y = BitVec::random(q, &mut rb);
            let lhs = spec.encode(&x.xor(&y).unwrap()).unwrap();
            let rhs = spec.encode(&x).unwrap().xor(&spec.encode(&y).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
            prop_assert_eq!(spec.encode(&BitVec::zeros(q)).unwrap().weight(), 0);
        }
    }
}
