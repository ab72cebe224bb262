// SPDX-License-Identifier: Apache-2.0

//! Packed row-major bit matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            words: vec![0; (rows * cols).div_ceil(64)],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows * cols {
            if f(i) {
                m.set(i, true);
            }
        }
        m
    }

    pub fn from_bools(rows: usize, cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension {
                expected: format!("{} bits", rows * cols),
                actual: format!("{} bits", bits.len()),
            });
        }
        Ok(Self::from_fn(rows, cols, |i| bits[i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: format!("{}x{}", self.rows, self.cols),
                actual: format!("{}x{}", other.rows, other.cols),
            })
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn get_rc(&self, row: usize, col: usize) -> bool {
        self.get(row * self.cols + col)
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        let mask = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }

    fn zip_words(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            words: self.words.iter().zip(&other.words).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn xor(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| a ^ b)
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn not(&self) -> Self {
        let mut out = self.clone();
        for w in out.words.iter_mut() {
            *w = !*w;
        }
        out.clear_padding();
        out
    }

    fn clear_padding(&mut self) {
        let tail = self.len() % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }

    /// Number of differing bits.
    pub fn hamming(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Differing bits among positions where `keep` is set.
    pub fn hamming_within(&self, other: &Self, keep: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .zip(&keep.words)
            .map(|((a, b), k)| ((a ^ b) & k).count_ones() as usize)
            .sum()
    }

    /// Row-major packing, 1 bit per cell, most significant bit first.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(8)];
        for i in 0..self.len() {
            if self.get(i) {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn from_packed_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let n = rows * cols;
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::Dimension {
                expected: format!("{} bytes", n.div_ceil(8)),
                actual: format!("{} bytes", bytes.len()),
            });
        }
        Ok(Self::from_fn(rows, cols, |i| bytes[i / 8] & (0x80 >> (i % 8)) != 0))
    }

    /// Lowercase hex of [`Self::to_packed_bytes`], one line per row when the
    /// row width is a multiple of 8.
    pub fn to_hex(&self) -> String {
        let bytes = self.to_packed_bytes();
        let mut out = String::with_capacity(bytes.len() * 2 + self.rows);
        if self.cols % 8 == 0 && self.cols > 0 {
            for row in bytes.chunks(self.cols / 8) {
                for b in row {
                    out.push_str(&format!("{b:02x}"));
                }
                out.push('\n');
            }
        } else {
            for b in &bytes {
                out.push_str(&format!("{b:02x}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_hex(rows: usize, cols: usize, text: &str) -> Result<Self> {
        let digits: Vec<u8> = text.bytes().filter(|c| !c.is_ascii_whitespace()).collect();
        if digits.len() % 2 != 0 {
            return Err(Error::Parse("odd number of hex digits".into()));
        }
        let mut bytes = Vec::with_capacity(digits.len() / 2);
        for pair in digits.chunks(2) {
            let s = std::str::from_utf8(pair).map_err(|e| Error::Parse(e.to_string()))?;
            bytes.push(u8::from_str_radix(s, 16).map_err(|e| Error::Parse(format!("{s}: {e}")))?);
        }
        Self::from_packed_bytes(rows, cols, &bytes)
    }

    /// Same cells permuted: output `(r, c)` takes input `(row_perm[r], col_perm[c])`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        Self::from_fn(self.rows, self.cols, |i| {
            let (r, c) = (i / self.cols, i % self.cols);
            self.get_rc(row_perm[r], col_perm[c])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packing_is_msb_first_row_major() {
        let m = BitMatrix::from_bools(2, 8, &[
            true, false, false, false, false, false, false, true, //
            false, true, true, false, false, false, false, false,
        ])
        .unwrap();
        assert_eq!(m.to_packed_bytes(), vec![0x81, 0x60]);
        assert_eq!(m.to_hex(), "81\n60\n");
    }

    #[test]
    fn not_keeps_padding_clear() {
        let m = BitMatrix::zeros(3, 5);
        assert_eq!(m.not().count_ones(), 15);
    }

    #[test]
    fn wrong_sizes_rejected() {
        assert!(BitMatrix::from_bools(2, 2, &[true]).is_err());
        assert!(BitMatrix::from_packed_bytes(4, 4, &[0]).is_err());
        assert!(BitMatrix::from_hex(1, 8, "zz").is_err());
    }

    proptest! {
        #[test]
        fn packed_and_hex_round_trip(rows in 1usize..12, cols in 1usize..40, seed in any::<u64>()) {
            let m = BitMatrix::from_fn(rows, cols, |i| (seed.rotate_left(i as u32 % 64) ^ i as u64) & 1 == 1);
            prop_assert_eq!(&BitMatrix::from_packed_bytes(rows, cols, &m.to_packed_bytes()).unwrap(), &m);
            prop_assert_eq!(&BitMatrix::from_hex(rows, cols, &m.to_hex()).unwrap(), &m);
        }
    }
}
