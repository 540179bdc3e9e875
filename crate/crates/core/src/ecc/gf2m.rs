//! Arithmetic in GF(2^m), 3 ≤ m ≤ 8, via log/antilog tables.

use crate::error::{Error, Result};

/// Primitive polynomials, one per field degree, bit `i` = coefficient of `x^i`.
///
/// | m | polynomial                  |
/// |---|-----------------------------|
/// | 3 | x^3 + x + 1                 |
/// | 4 | x^4 + x + 1                 |
/// | 5 | x^5 + x^2 + 1               |
/// | 6 | x^6 + x + 1                 |
/// | 7 | x^7 + x^3 + 1               |
/// | 8 | x^8 + x^4 + x^3 + x^2 + 1   |
pub const PRIMITIVE_POLYS: [(usize, u32); 6] = [
    (3, 0b1011),
    (4, 0b1_0011),
    (5, 0b10_0101),
    (6, 0b100_0011),
    (7, 0b1000_1001),
    (8, 0b1_0001_1101),
];

#[derive(Clone, Debug)]
pub struct GaloisField {
    m: usize,
    order: usize,
    poly: u32,
    exp: Vec<u16>,
    log: Vec<u16>,
}

impl GaloisField {
    pub fn new(m: usize) -> Result<Self> {
        let poly = PRIMITIVE_POLYS
            .iter()
            .find(|(deg, _)| *deg == m)
            .map(|&(_, p)| p)
            .ok_or_else(|| Error::Config(format!("field degree {m} outside 3..=8")))?;
        let order = (1usize << m) - 1;
        let mut exp = vec![0u16; 2 * order];
        let mut log = vec![0u16; order + 1];
        let mut x: u32 = 1;
        for i in 0..order {
            exp[i] = x as u16;
            log[x as usize] = i as u16;
            x <<= 1;
            if x & (1 << m) != 0 {
                x ^= poly;
            }
        }
        for i in order..2 * order {
            exp[i] = exp[i - order];
        }
        Ok(Self {
            m,
            order,
            poly,
            exp,
            log,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Multiplicative order `2^m − 1`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn primitive_poly(&self) -> u32 {
        self.poly
    }

    /// `α^i`.
    pub fn alpha_pow(&self, i: usize) -> u16 {
        self.exp[i % self.order]
    }

    pub fn mul(&self, a: u16, b: u16) -> u16 {
        if a == 0 || b == 0 {
            return 0;
        }
        self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
    }

    pub fn inv(&self, a: u16) -> u16 {
        assert!(a != 0, "zero has no inverse");
        self.exp[(self.order - self.log[a as usize] as usize) % self.order]
    }

    pub fn div(&self, a: u16, b: u16) -> u16 {
        self.mul(a, self.inv(b))
    }

    pub fn log(&self, a: u16) -> usize {
        assert!(a != 0, "log of zero");
        self.log[a as usize] as usize
    }

    /// Evaluates a polynomial with coefficients in the field (lowest degree first).
    pub fn eval(&self, coeffs: &[u16], x: u16) -> u16 {
        coeffs
            .iter()
            .rev()
            .fold(0u16, |acc, &c| self.mul(acc, x) ^ c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_cover_every_nonzero_element() {
        for &(m, _) in &PRIMITIVE_POLYS {
            let f = GaloisField::new(m).unwrap();
            let mut seen = vec![false; f.order() + 1];
            for i in 0..f.order() {
                let a = f.alpha_pow(i);
                assert!(!seen[a as usize], "α is not primitive for m = {m}");
                seen[a as usize] = true;
            }
            assert!(!seen[0]);
        }
    }

    #[test]
    fn inverse_and_division_are_consistent() {
        let f = GaloisField::new(5).unwrap();
        for a in 1..=31u16 {
            assert_eq!(f.mul(a, f.inv(a)), 1);
            for b in 1..=31u16 {
                assert_eq!(f.mul(f.div(a, b), b), a);
            }
        }
    }

    #[test]
    fn unsupported_degree_is_rejected() {
        assert!(GaloisField::new(2).is_err());
        assert!(GaloisField::new(9).is_err());
    }
}
