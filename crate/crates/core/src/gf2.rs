//! Linear algebra over GF(2) and the invertible-matrix universal hash.
//!
//! Bits are packed little-endian into `u64` words: bit `i` of a vector lives
//! in word `i / 64` at position `i % 64`. Pad bits beyond the logical length
//! are always zero.
//!
//! The hash maps `v ∈ F_2^q` to the first `k` coordinates of `v · A` for an
//! invertible `A`; its inverse pads a secret with random bits and applies
//! `A^{-1}`, so that hashing after decoding returns the secret.

use std::fmt;
use std::io::{Read, Write};

use rand::RngCore;

use crate::error::{Error, Result};

const WORD: usize = 64;

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// A fixed-length vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVec {
    len: usize,
    words: Vec<u64>,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        v.clear_pad();
        v
    }

    /// Builds a vector from 0/1 values; any nonzero entry is a one.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.set(i, true);
            }
        }
        v
    }

    /// The low `len` bits of `value` (bit `i` of the integer is coordinate `i`).
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= WORD, "from_u64 supports at most 64 bits");
        let mut v = Self::zeros(len);
        if len > 0 {
            v.words[0] = value;
            v.clear_pad();
        }
        v
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::Dimension(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        let mut v = Self { len, words };
        v.clear_pad();
        Ok(v)
    }

    pub fn random<R: RngCore + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = Self::zeros(len);
        for w in &mut v.words {
            *w = rng.next_u64();
        }
        v.clear_pad();
        v
    }

    /// Integer value of a vector of at most 64 bits.
    pub fn to_u64(&self) -> u64 {
        assert!(self.len <= WORD, "to_u64 supports at most 64 bits");
        self.words.first().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        Ok(())
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a ^ b)
            .collect();
        Ok(Self {
            len: self.len,
            words,
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a & b)
            .collect();
        Ok(Self {
            len: self.len,
            words,
        })
    }

    pub fn xor_assign(&mut self, other: &Self) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        Ok(())
    }

    /// Inner product over GF(2): parity of the popcount of `self & other`.
    pub fn dot(&self, other: &Self) -> Result<bool> {
        self.check_len(other)?;
        let ones: u32 = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        Ok(ones & 1 == 1)
    }

    /// Number of positions where the two vectors differ.
    pub fn distance(&self, other: &Self) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// `self ‖ other`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.len + other.len);
        out.words[..self.words.len()].copy_from_slice(&self.words);
        for i in 0..other.len {
            if other.get(i) {
                out.set(self.len + i, true);
            }
        }
        out
    }

    /// Coordinates `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = Self::zeros(len);
        for i in 0..len {
            if self.get(start + i) {
                out.set(i, true);
            }
        }
        out
    }

    /// The first `k` coordinates.
    pub fn truncate(&self, k: usize) -> Self {
        self.slice(0, k)
    }

    /// Bytes with bit `i` at byte `i / 8`, position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        for b in 0..nbytes {
            out.push((self.words[b / 8] >> ((b % 8) * 8)) as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let mut v = Self::zeros(len);
        for (b, &byte) in bytes.iter().enumerate() {
            v.words[b / 8] |= (byte as u64) << ((b % 8) * 8);
        }
        if v.words.last().is_some_and(|&w| {
            let used = len % WORD;
            used != 0 && (w >> used) != 0
        }) {
            return Err(Error::Format("nonzero pad bits".into()));
        }
        Ok(v)
    }

    fn clear_pad(&mut self) {
        let used = self.len % WORD;
        if used != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << used) - 1;
            }
        }
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVec[")?;
        for b in self.iter() {
            write!(f, "{}", u8::from(b))?;
        }
        write!(f, "]")
    }
}

/// A dense matrix over GF(2), packed row by row.
#[derive(Clone, PartialEq, Eq)]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    data: Vec<BitVec>,
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![BitVec::zeros(cols); rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_rows(rows: Vec<BitVec>) -> Result<Self> {
        let cols = rows.first().map_or(0, BitVec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                got: bad.len(),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows,
        })
    }

    /// Builds a matrix from nested 0/1 rows.
    pub fn from_nested(rows: &[&[u8]]) -> Result<Self> {
        Self::from_rows(rows.iter().map(|r| BitVec::from_bits(r)).collect())
    }

    pub fn random<R: RngCore + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows).map(|_| BitVec::random(cols, rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &BitVec {
        &self.data[i]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i].get(j)
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.data[i].set(j, value);
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    t.set(j, i, true);
                }
            }
        }
        t
    }

    /// `self · rhs`. Row `i` of the product is the XOR of the rows of `rhs`
    /// selected by the ones in row `i` of `self`.
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .map(|row| rhs.left_mul_unchecked(row))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: rhs.cols,
            data,
        })
    }

    /// Row vector times matrix: `v · self`.
    pub fn left_mul(&self, v: &BitVec) -> Result<BitVec> {
        if v.len() != self.rows {
            return Err(Error::LengthMismatch {
                expected: self.rows,
                got: v.len(),
            });
        }
        Ok(self.left_mul_unchecked(v))
    }

    fn left_mul_unchecked(&self, v: &BitVec) -> BitVec {
        let mut acc = BitVec::zeros(self.cols);
        for (wi, &word) in v.words().iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let t = wi * WORD + w.trailing_zeros() as usize;
                for (a, b) in acc.words.iter_mut().zip(&self.data[t].words) {
                    *a ^= b;
                }
                w &= w - 1;
            }
        }
        acc
    }

    pub fn rank(&self) -> usize {
        let mut m = self.data.clone();
        let mut rank = 0;
        for col in 0..self.cols {
            let Some(p) = (rank..self.rows).find(|&r| m[r].get(col)) else {
                continue;
            };
            m.swap(rank, p);
            let pivot = m[rank].clone();
            for (r, row) in m.iter_mut().enumerate() {
                if r != rank && row.get(col) {
                    row.xor_assign(&pivot).expect("rows share a length");
                }
            }
            rank += 1;
        }
        rank
    }

    /// Gauss–Jordan inverse.
    pub fn invert(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Dimension(format!(
                "cannot invert non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut left = self.data.clone();
        let mut right = Self::identity(n).data;
        for col in 0..n {
            let p = (col..n).find(|&r| left[r].get(col)).ok_or(Error::Singular)?;
            left.swap(col, p);
            right.swap(col, p);
            let (pl, pr) = (left[col].clone(), right[col].clone());
            for r in 0..n {
                if r != col && left[r].get(col) {
                    left[r].xor_assign(&pl)?;
                    right[r].xor_assign(&pr)?;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: n,
            data: right,
        })
    }

    /// Draws a uniformly distributed element of GL(q, F_2) by rejection and
    /// returns it with its inverse.
    pub fn random_invertible<R: RngCore + ?Sized>(q: usize, rng: &mut R) -> (Self, Self) {
        assert!(q >= 1, "GL(0) is empty");
        let mut rejections = 0usize;
        loop {
            let candidate = Self::random(q, q, rng);
            match candidate.invert() {
                Ok(inv) => return (candidate, inv),
                Err(_) => {
                    rejections += 1;
                    if rejections.is_multiple_of(1000) {
                        log::warn!(
                            "random_invertible: {rejections} rejections for q = {q}; \
                             expected acceptance is about 0.29"
                        );
                    }
                }
            }
        }
    }

    fn write_packed<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut flat = BitVec::zeros(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    flat.set(i * self.cols + j, true);
                }
            }
        }
        w.write_all(&flat.to_bytes())?;
        Ok(())
    }

    fn read_packed<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Self> {
        let mut buf = vec![0u8; (rows * cols).div_ceil(8)];
        r.read_exact(&mut buf)?;
        let flat = BitVec::from_bytes(&buf, rows * cols)?;
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if flat.get(i * cols + j) {
                    m.set(i, j, true);
                }
            }
        }
        Ok(m)
    }
}

impl fmt::Debug for Gf2Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Gf2Matrix {}x{}", self.rows, self.cols)?;
        for row in &self.data {
            writeln!(f, "  {row:?}")?;
        }
        Ok(())
    }
}

/// A hash `F(v) = ζ_k(v · A)` together with the inverse map used at the encoder.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct UhfPair {
    q: usize,
    k: usize,
    a: Gf2Matrix,
    a_inv: Gf2Matrix,
}

const UHF_MAGIC: &[u8; 4] = b"UHF1";

impl UhfPair {
    pub fn new(a: Gf2Matrix, k: usize) -> Result<Self> {
        let q = a.rows();
        if k == 0 || k > q {
            return Err(Error::Config(format!("hash output {k} must be in 1..={q}")));
        }
        let a_inv = a.invert()?;
        Ok(Self { q, k, a, a_inv })
    }

    pub fn random<R: RngCore + ?Sized>(q: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k > q {
            return Err(Error::Config(format!("hash output {k} must be in 1..={q}")));
        }
        let (a, a_inv) = Gf2Matrix::random_invertible(q, rng);
        Ok(Self { q, k, a, a_inv })
    }

    /// The pair with `A = I_q`: hashing is plain truncation.
    pub fn identity(q: usize, k: usize) -> Result<Self> {
        Self::new(Gf2Matrix::identity(q), k)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn b(&self) -> usize {
        self.q - self.k
    }

    pub fn matrix(&self) -> &Gf2Matrix {
        &self.a
    }

    pub fn inverse_matrix(&self) -> &Gf2Matrix {
        &self.a_inv
    }

    pub fn hash(&self, v: &BitVec) -> Result<BitVec> {
        Ok(self.a.left_mul(v)?.truncate(self.k))
    }

    /// `(m_s ‖ pad) · A^{-1}`.
    pub fn inverse(&self, m_s: &BitVec, pad: &BitVec) -> Result<BitVec> {
        if m_s.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                got: m_s.len(),
            });
        }
        if pad.len() != self.q - self.k {
            return Err(Error::LengthMismatch {
                expected: self.q - self.k,
                got: pad.len(),
            });
        }
        self.a_inv.left_mul(&m_s.concat(pad))
    }

    /// Header `"UHF1"`, `q` and `k` as little-endian `u32`, then `A` and
    /// `A^{-1}`, each as `q·q` row-major bits packed LSB-first into bytes.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(UHF_MAGIC)?;
        w.write_all(&(self.q as u32).to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        self.a.write_packed(w)?;
        self.a_inv.write_packed(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != UHF_MAGIC {
            return Err(Error::Format("bad UHF magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let q = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let k = u32::from_le_bytes(word) as usize;
        if q == 0 || k == 0 || k > q {
            return Err(Error::Format(format!("invalid dimensions q={q}, k={k}")));
        }
        let a = Gf2Matrix::read_packed(r, q, q)?;
        let a_inv = Gf2Matrix::read_packed(r, q, q)?;
        if a.mul(&a_inv)? != Gf2Matrix::identity(q) {
            return Err(Error::Format("stored matrices are not inverses".into()));
        }
        Ok(Self { q, k, a, a_inv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};
    use proptest::prelude::*;

    fn naive_mul(a: &Gf2Matrix, b: &Gf2Matrix) -> Gf2Matrix {
        let mut out = Gf2Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = false;
                for t in 0..a.cols() {
                    acc ^= a.get(i, t) & b.get(t, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = stream(1, Role::Misc, 0);
        let m = Gf2Matrix::random(4, 4, &mut rng);
        assert_eq!(Gf2Matrix::identity(4).mul(&m).unwrap(), m);
    }

    #[test]
    fn upper_unipotent_two_by_two_is_an_involution() {
        let m = Gf2Matrix::from_nested(&[&[1, 1], &[0, 1]]).unwrap();
        assert_eq!(m.mul(&m).unwrap(), Gf2Matrix::identity(2));
        assert_eq!(m.invert().unwrap(), m);
    }

    #[test]
    fn all_ones_is_singular() {
        let m = Gf2Matrix::from_nested(&[&[1, 1], &[1, 1]]).unwrap();
        assert!(matches!(m.invert(), Err(Error::Singular)));
        assert_eq!(m.rank(), 1);
    }

    #[test]
    fn non_square_inverse_and_bad_product_are_rejected() {
        let a = Gf2Matrix::zeros(2, 3);
        assert!(matches!(a.invert(), Err(Error::Dimension(_))));
        assert!(a.mul(&a).is_err());
    }

    #[test]
    fn matmul_matches_naive_on_random_triples() {
        let mut rng = stream(2, Role::Misc, 0);
        for trial in 0..100 {
            let (r, m, c) = (1 + trial % 9, 1 + (trial * 7) % 70, 1 + (trial * 13) % 67);
            let a = Gf2Matrix::random(r, m, &mut rng);
            let b = Gf2Matrix::random(m, c, &mut rng);
            assert_eq!(a.mul(&b).unwrap(), naive_mul(&a, &b));
        }
        let a = Gf2Matrix::random(8, 8, &mut rng);
        let b = Gf2Matrix::random(8, 8, &mut rng);
        assert_eq!(a.mul(&b).unwrap(), naive_mul(&a, &b));
    }

    #[test]
    fn gl1_has_one_element() {
        let mut rng = stream(3, Role::Misc, 0);
        for _ in 0..20 {
            let (a, inv) = Gf2Matrix::random_invertible(1, &mut rng);
            assert_eq!(a, Gf2Matrix::identity(1));
            assert_eq!(inv, Gf2Matrix::identity(1));
        }
    }

    #[test]
    fn gl2_sampling_is_uniform_over_six_elements() {
        // |GL(2, F_2)| = 6: enumerate the 16 matrices and keep the invertible ones.
        let invertible: Vec<u64> = (0u64..16)
            .filter(|&bits| {
                let m = Gf2Matrix::from_rows(vec![
                    BitVec::from_u64(bits & 3, 2),
                    BitVec::from_u64(bits >> 2, 2),
                ])
                .unwrap();
                m.invert().is_ok()
            })
            .collect();
        assert_eq!(invertible.len(), 6);

        let mut rng = stream(4, Role::Misc, 0);
        let draws = 10_000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let (a, _) = Gf2Matrix::random_invertible(2, &mut rng);
            let key = a.row(0).to_u64() | (a.row(1).to_u64() << 2);
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (&key, &c) in &counts {
            assert!(invertible.contains(&key));
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn random_pairs_multiply_to_identity() {
        let mut rng = stream(5, Role::Misc, 0);
        for q in [1, 2, 5, 16, 63, 64, 65, 100] {
            let (a, inv) = Gf2Matrix::random_invertible(q, &mut rng);
            assert_eq!(a.mul(&inv).unwrap(), Gf2Matrix::identity(q));
            assert_eq!(inv.mul(&a).unwrap(), Gf2Matrix::identity(q));
        }
    }

    #[test]
    fn hash_of_zero_is_zero_and_identity_hash_truncates() {
        let mut rng = stream(6, Role::Misc, 0);
        let u = UhfPair::random(10, 4, &mut rng).unwrap();
        assert_eq!(u.hash(&BitVec::zeros(10)).unwrap(), BitVec::zeros(4));
        let id = UhfPair::identity(10, 4).unwrap();
        let v = BitVec::random(10, &mut rng);
        assert_eq!(id.hash(&v).unwrap(), v.truncate(4));
        let ms = BitVec::random(4, &mut rng);
        assert_eq!(
            id.inverse(&ms, &BitVec::zeros(6)).unwrap(),
            ms.concat(&BitVec::zeros(6))
        );
    }

    #[test]
    fn length_mismatches_are_rejected() {
        let u = UhfPair::identity(6, 2).unwrap();
        assert!(u.hash(&BitVec::zeros(5)).is_err());
        assert!(u.inverse(&BitVec::zeros(3), &BitVec::zeros(3)).is_err());
        assert!(u.inverse(&BitVec::zeros(2), &BitVec::zeros(3)).is_err());
        assert!(BitVec::zeros(3).xor(&BitVec::zeros(4)).is_err());
        assert!(UhfPair::identity(4, 0).is_err());
        assert!(UhfPair::identity(4, 5).is_err());
    }

    #[test]
    fn hash_of_inverse_is_exhaustive_identity_for_q10() {
        let mut rng = stream(7, Role::Misc, 0);
        let u = UhfPair::random(10, 6, &mut rng).unwrap();
        for ms in 0..64u64 {
            for pad in 0..16u64 {
                let m = u
                    .inverse(&BitVec::from_u64(ms, 6), &BitVec::from_u64(pad, 4))
                    .unwrap();
                assert_eq!(u.hash(&m).unwrap().to_u64(), ms);
            }
        }
    }

    #[test]
    fn inverse_of_uniform_input_is_uniform() {
        // Chi-square over all 2^8 outcomes; A^{-1} is a bijection so every
        // output value is hit exactly once when sweeping all (m_s, pad).
        let mut rng = stream(8, Role::Misc, 0);
        let u = UhfPair::random(8, 3, &mut rng).unwrap();
        let mut hits = vec![0u32; 256];
        for ms in 0..8u64 {
            for pad in 0..32u64 {
                let m = u
                    .inverse(&BitVec::from_u64(ms, 3), &BitVec::from_u64(pad, 5))
                    .unwrap();
                hits[m.to_u64() as usize] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h == 1));

        let draws = 64_000usize;
        let mut counts = vec![0f64; 256];
        for _ in 0..draws {
            let m = u
                .inverse(&BitVec::random(3, &mut rng), &BitVec::random(5, &mut rng))
                .unwrap();
            counts[m.to_u64() as usize] += 1.0;
        }
        let expected = draws as f64 / 256.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 255 degrees of freedom; 99.9th percentile is about 330.
        assert!(chi2 < 330.0, "chi2 = {chi2}");
    }

    #[test]
    fn serialization_round_trips_and_rejects_garbage() {
        let mut rng = stream(9, Role::Misc, 0);
        let u = UhfPair::random(13, 5, &mut rng).unwrap();
        let mut buf = Vec::new();
        u.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"UHF1");
        assert_eq!(buf.len(), 12 + 2 * (13 * 13usize).div_ceil(8));
        let back = UhfPair::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, u);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(UhfPair::read_from(&mut bad.as_slice()).is_err());
        let mut corrupt = buf.clone();
        let last = corrupt.len() - 3;
        corrupt[last] ^= 0x10;
        assert!(UhfPair::read_from(&mut corrupt.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn xor_is_length_preserving_and_self_inverse(a in proptest::collection::vec(0u8..2, 0..200), seed in any::<u64>()) {
            let x = BitVec::from_bits(&a);
            let mut rng = stream(seed, Role::Misc, 0);
            let y = BitVec::random(x.len(), &mut rng);
            let z = x.xor(&y).unwrap();
            prop_assert_eq!(z.len(), x.len());
            prop_assert_eq!(z.xor(&y).unwrap(), x.clone());
            prop_assert_eq!(BitVec::from_bytes(&x.to_bytes(), x.len()).unwrap(), x);
        }

        #[test]
        fn hash_inverts_inverse_hash(q in 2usize..80, seed in any::<u64>()) {
            let mut rng = stream(seed, Role::Misc, 1);
            let k = 1 + (seed as usize % (q - 1));
            let u = UhfPair::random(q, k, &mut rng).unwrap();
            let ms = BitVec::random(k, &mut rng);
            let pad = BitVec::random(q - k, &mut rng);
            let m = u.inverse(&ms, &pad).unwrap();
            prop_assert_eq!(u.hash(&m).unwrap(), ms);
        }
    }
}
