//! Binary narrow-sense primitive BCH codes.
//!
//! Codeword bit `i` is the coefficient of `x^i`. Encoding is systematic: the
//! `n − k` parity bits occupy positions `0..n−k` and the message occupies
//! `n−k..n`. Decoding computes syndromes `S_j = r(α^j)` for `j = 1..2t`, runs
//! Berlekamp–Massey for the error locator and finds its roots by Chien search.

use super::gf2m::GaloisField;
use super::poly::Gf2Poly;
use crate::error::{Error, Result};
use crate::gf2::BitVec;

#[derive(Clone, Debug)]
pub struct BchCode {
    field: GaloisField,
    n: usize,
    k: usize,
    t: usize,
    generator: Gf2Poly,
}

/// Outcome of a hard-decision decode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub message: BitVec,
    pub corrected: usize,
    /// False when the decoder detected an uncorrectable pattern.
    pub success: bool,
}

impl BchCode {
    /// Builds the code of length `2^m − 1` with designed radius `t`.
    pub fn new(m: usize, t: usize) -> Result<Self> {
        if !(3..=8).contains(&m) {
            return Err(Error::Config(format!("BCH field degree {m} outside 3..=8")));
        }
        if t == 0 {
            return Err(Error::Config("BCH radius must be at least 1".into()));
        }
        let field = GaloisField::new(m)?;
        let n = field.order();
        let mut generator = Gf2Poly::one();
        let mut covered = vec![false; n];
        for i in 1..=(2 * t).min(n) {
            if covered[i % n] {
                continue;
            }
            let coset = cyclotomic_coset(i, n);
            for &c in &coset {
                covered[c] = true;
            }
            generator = generator.mul(&minimal_polynomial(&field, &coset));
        }
        let deg = generator.degree().unwrap_or(0);
        if deg >= n {
            return Err(Error::Config(format!(
                "radius {t} is infeasible for n = {n}: message length would be {}",
                n as isize - deg as isize
            )));
        }
        Ok(Self {
            field,
            n,
            k: n - deg,
            t,
            generator,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m(&self) -> usize {
        self.field.m()
    }

    pub fn generator(&self) -> &Gf2Poly {
        &self.generator
    }

    pub fn encode(&self, message: &BitVec) -> Result<BitVec> {
        if message.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                got: message.len(),
            });
        }
        let shifted = Gf2Poly::from_bitvec(message).shift(self.n - self.k);
        let parity = shifted.rem(&self.generator);
        Ok(shifted.add(&parity).to_bitvec(self.n))
    }

    fn syndromes(&self, r: &BitVec) -> Vec<u16> {
        let ones: Vec<usize> = (0..self.n).filter(|&i| r.get(i)).collect();
        (1..=2 * self.t)
            .map(|j| {
                ones.iter()
                    .fold(0u16, |acc, &i| acc ^ self.field.alpha_pow(i * j))
            })
            .collect()
    }

    /// Error-locator polynomial via Berlekamp–Massey (lowest degree first).
    fn berlekamp_massey(&self, s: &[u16]) -> Vec<u16> {
        let f = &self.field;
        let mut c = vec![1u16];
        let mut b = vec![1u16];
        let mut l = 0usize;
        let mut shift = 1usize;
        let mut last_d = 1u16;
        for step in 0..s.len() {
            let mut d = s[step];
            for i in 1..=l.min(c.len() - 1) {
                d ^= f.mul(c[i], s[step - i]);
            }
            if d == 0 {
                shift += 1;
                continue;
            }
            let coef = f.div(d, last_d);
            let mut next = c.clone();
            if next.len() < b.len() + shift {
                next.resize(b.len() + shift, 0);
            }
            for (i, &bi) in b.iter().enumerate() {
                next[i + shift] ^= f.mul(coef, bi);
            }
            if 2 * l <= step {
                l = step + 1 - l;
                b = c;
                last_d = d;
                shift = 1;
            } else {
                shift += 1;
            }
            c = next;
        }
        c.truncate(l + 1);
        c.resize(l + 1, 0);
        c
    }

    pub fn decode(&self, r: &BitVec) -> Result<Decoded> {
        if r.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: r.len(),
            });
        }
        let s = self.syndromes(r);
        let mut word = r.clone();
        if s.iter().all(|&x| x == 0) {
            return Ok(Decoded {
                message: word.slice(self.n - self.k, self.k),
                corrected: 0,
                success: true,
            });
        }
        let locator = self.berlekamp_massey(&s);
        let degree = locator.len() - 1;
        // Chien search: position i is in error iff Λ(α^{-i}) = 0.
        let roots: Vec<usize> = (0..self.n)
            .filter(|&i| {
                let x = self.field.alpha_pow((self.n - i) % self.n);
                self.field.eval(&locator, x) == 0
            })
            .collect();
        if degree > self.t || roots.len() != degree {
            return Ok(Decoded {
                message: r.slice(self.n - self.k, self.k),
                corrected: 0,
                success: false,
            });
        }
        for &i in &roots {
            word.flip(i);
        }
        Ok(Decoded {
            message: word.slice(self.n - self.k, self.k),
            corrected: roots.len(),
            success: true,
        })
    }
}

fn cyclotomic_coset(i: usize, n: usize) -> Vec<usize> {
    let mut coset = vec![i % n];
    let mut j = (2 * i) % n;
    while j != i % n {
        coset.push(j);
        j = (2 * j) % n;
    }
    coset
}

/// `∏_{j ∈ coset} (x − α^j)`, whose coefficients lie in GF(2).
fn minimal_polynomial(field: &GaloisField, coset: &[usize]) -> Gf2Poly {
    let mut coeffs = vec![1u16];
    for &j in coset {
        let root = field.alpha_pow(j);
        let mut next = vec![0u16; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] ^= c;
            next[i] ^= field.mul(c, root);
        }
        coeffs = next;
    }
    debug_assert!(coeffs.iter().all(|&c| c <= 1));
    Gf2Poly::from_coeffs(&coeffs.iter().map(|&c| c as u8).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_parameters() {
        // (n, t) -> k from the standard narrow-sense BCH tables.
        let table = [
            (3, 1, 4),
            (4, 1, 11),
            (4, 2, 7),
            (4, 3, 5),
            (5, 1, 26),
            (5, 2, 21),
            (5, 3, 16),
            (5, 5, 11),
            (5, 7, 6),
            (6, 1, 57),
            (6, 2, 51),
            (6, 3, 45),
            (6, 4, 39),
            (6, 5, 36),
            (6, 6, 30),
            (6, 7, 24),
            (7, 1, 120),
            (8, 1, 247),
            (8, 2, 239),
        ];
        for (m, t, k) in table {
            let code = BchCode::new(m, t).unwrap();
            assert_eq!(code.k(), k, "BCH m={m}, t={t}");
        }
    }

    #[test]
    fn generator_for_15_11_is_primitive_polynomial() {
        let code = BchCode::new(4, 1).unwrap();
        assert_eq!(format!("{:?}", code.generator()), "x^4 + x + 1");
    }

    #[test]
    fn infeasible_radius_is_rejected() {
        assert!(BchCode::new(4, 8).is_err());
        assert!(BchCode::new(4, 0).is_err());
        assert!(BchCode::new(2, 1).is_err());
    }

    #[test]
    fn corrects_every_weight_two_pattern_of_63_36() {
        let code = BchCode::new(6, 5).unwrap();
        let mut rng = crate::rng::stream(11, crate::rng::Role::Misc, 0);
        let msg = BitVec::random(code.k(), &mut rng);
        let cw = code.encode(&msg).unwrap();
        for i in 0..63 {
            for j in i + 1..63 {
                let mut r = cw.clone();
                r.flip(i);
                r.flip(j);
                let d = code.decode(&r).unwrap();
                assert!(d.success);
                assert_eq!(d.message, msg);
                assert_eq!(d.corrected, 2);
            }
        }
    }
}
