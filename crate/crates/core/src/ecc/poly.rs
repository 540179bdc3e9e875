//! Polynomials over GF(2), coefficient `i` stored as bit `i`.

use std::fmt;

use crate::gf2::BitVec;

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Gf2Poly {
    // Little-endian words; trailing zero words are trimmed so equality is structural.
    words: Vec<u64>,
}

impl Gf2Poly {
    pub fn zero() -> Self {
        Self { words: Vec::new() }
    }

    pub fn one() -> Self {
        Self { words: vec![1] }
    }

    pub fn from_coeffs(coeffs: &[u8]) -> Self {
        let mut p = Self::zero();
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0 {
                p.set(i);
            }
        }
        p
    }

    pub fn from_bitvec(v: &BitVec) -> Self {
        let mut p = Self {
            words: v.words().to_vec(),
        };
        p.trim();
        p
    }

    /// Coefficients `0..len` as a bit vector.
    pub fn to_bitvec(&self, len: usize) -> BitVec {
        assert!(
            self.degree().is_none_or(|d| d < len),
            "polynomial does not fit in {len} bits"
        );
        let mut v = BitVec::zeros(len);
        for i in 0..len {
            if self.coeff(i) {
                v.set(i, true);
            }
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.words.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        let last = *self.words.last()?;
        Some((self.words.len() - 1) * 64 + 63 - last.leading_zeros() as usize)
    }

    pub fn coeff(&self, i: usize) -> bool {
        self.words
            .get(i / 64)
            .is_some_and(|w| (w >> (i % 64)) & 1 == 1)
    }

    fn set(&mut self, i: usize) {
        if self.words.len() <= i / 64 {
            self.words.resize(i / 64 + 1, 0);
        }
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn trim(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.words.len().max(other.words.len());
        let mut words = vec![0u64; len];
        for (i, w) in words.iter_mut().enumerate() {
            *w = self.words.get(i).copied().unwrap_or(0) ^ other.words.get(i).copied().unwrap_or(0);
        }
        let mut p = Self { words };
        p.trim();
        p
    }

    /// Multiplication by `x^s`.
    pub fn shift(&self, s: usize) -> Self {
        let mut p = Self::zero();
        for i in 0..=self.degree().unwrap_or(0) {
            if self.coeff(i) {
                p.set(i + s);
            }
        }
        p
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut acc = Self::zero();
        if let Some(d) = self.degree() {
            for i in 0..=d {
                if self.coeff(i) {
                    acc = acc.add(&other.shift(i));
                }
            }
        }
        acc
    }

    /// Remainder of `self` modulo `divisor`.
    pub fn rem(&self, divisor: &Self) -> Self {
        let dd = divisor.degree().expect("division by the zero polynomial");
        let mut r = self.clone();
        while let Some(rd) = r.degree() {
            if rd < dd {
                break;
            }
            r = r.add(&divisor.shift(rd - dd));
        }
        r
    }
}

impl fmt::Debug for Gf2Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(d) = self.degree() else {
            return write!(f, "0");
        };
        let terms: Vec<String> = (0..=d)
            .rev()
            .filter(|&i| self.coeff(i))
            .map(|i| match i {
                0 => "1".to_string(),
                1 => "x".to_string(),
                _ => format!("x^{i}"),
            })
            .collect();
        write!(f, "{}", terms.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_and_leading_coefficient() {
        assert_eq!(Gf2Poly::zero().degree(), None);
        let p = Gf2Poly::from_coeffs(&[1, 1, 0, 0, 1, 0, 0]);
        assert_eq!(p.degree(), Some(4));
        assert!(p.coeff(4));
        assert_eq!(format!("{p:?}"), "x^4 + x + 1");
    }

    #[test]
    fn remainder_of_product_vanishes() {
        let a = Gf2Poly::from_coeffs(&[1, 1, 0, 1]);
        let b = Gf2Poly::from_coeffs(&[1, 0, 1, 1, 1]);
        assert!(a.mul(&b).rem(&a).is_zero());
        assert!(a.mul(&b).rem(&b).is_zero());
        // (x + 1)^2 = x^2 + 1 over GF(2)
        let x1 = Gf2Poly::from_coeffs(&[1, 1]);
        assert_eq!(x1.mul(&x1), Gf2Poly::from_coeffs(&[1, 0, 1]));
    }
}
