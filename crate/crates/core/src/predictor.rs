//! Training-free sparsity prediction from packed sign bits.
//!
//! XOR of a weight-row sign word with the input sign word marks the element
//! products predicted negative; their popcount is `N_neg`, and `N_pos = d - N_neg`.
//! A row is predicted sparse (skipped) iff `alpha * N_pos < N_neg`, evaluated
//! as `alpha_x100 * N_pos < 100 * N_neg` in `u64`. Ties are not skipped.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signpack::{SignPackedMatrix, SignPackedVector};

/// One flag per output row; `true` means the row is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SkipMask {
    bits: Vec<bool>,
}

impl SkipMask {
    pub fn all_false(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn all_true(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Mask with `true` exactly where `pred` holds.
    pub fn from_fn(len: usize, pred: impl FnMut(usize) -> bool) -> Self {
        Self {
            bits: (0..len).map(pred).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn is_skipped(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn skipped_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of rows skipped.
    pub fn skip_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.skipped_count() as f64 / self.bits.len() as f64
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::shape("SkipMask::union", self.len(), other.len()));
        }
        Ok(Self {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Every row skipped here is also skipped in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Conservativeness coefficient as fixed-point `round(alpha * 100)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaX100(pub u32);

/// Skips only rows with `N_pos == 0`.
pub const ALPHA_NEVER_SKIP_BY_MAJORITY: AlphaX100 = AlphaX100(u32::MAX);

impl AlphaX100 {
    pub const ONE: Self = Self(100);

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn is_never(self) -> bool {
        self == ALPHA_NEVER_SKIP_BY_MAJORITY
    }

    pub fn from_f64(alpha: f64) -> Result<Self> {
        if alpha.is_infinite() && alpha > 0.0 {
            return Ok(ALPHA_NEVER_SKIP_BY_MAJORITY);
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidAlpha(alpha.to_string()));
        }
        let scaled = (alpha * 100.0).round();
        if scaled >= f64::from(u32::MAX) {
            return Err(Error::InvalidAlpha(alpha.to_string()));
        }
        Ok(Self(scaled as u32))
    }
}

impl FromStr for AlphaX100 {
    type Err = Error;

    /// Accepts decimals such as `1.03` and `inf`/`never`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("never") {
            return Ok(ALPHA_NEVER_SKIP_BY_MAJORITY);
        }
        let v: f64 = t.parse().map_err(|_| Error::InvalidAlpha(s.to_string()))?;
        Self::from_f64(v).map_err(|_| Error::InvalidAlpha(s.to_string()))
    }
}

impl fmt::Display for AlphaX100 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_never() {
            write!(f, "inf")
        } else {
            write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub per_layer: Vec<AlphaX100>,
    pub early_layer_count: usize,
}

impl AlphaSchedule {
    pub fn uniform(layers: usize, alpha: AlphaX100) -> Self {
        Self {
            per_layer: vec![alpha; layers],
            early_layer_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }
}

/// Popcount of `row XOR x` over all words, with the last word masked by `tail_mask`.
#[inline]
pub fn count_negatives(row_words: &[u32], x_words: &[u32], tail_mask: u32) -> u32 {
    debug_assert_eq!(row_words.len(), x_words.len());
    let Some(last) = row_words.len().checked_sub(1) else {
        return 0;
    };
    let body: u32 = row_words[..last]
        .iter()
        .zip(&x_words[..last])
        .map(|(w, x)| (w ^ x).count_ones())
        .sum();
    body + ((row_words[last] ^ x_words[last]) & tail_mask).count_ones()
}

#[inline]
pub fn predict_row(n_neg: u32, d: u32, alpha: AlphaX100) -> bool {
    debug_assert!(n_neg <= d);
    let n_pos = u64::from(d - n_neg);
    u64::from(alpha.0) * n_pos < 100 * u64::from(n_neg)
}

pub fn predict_skip_mask(
    w_signs: &SignPackedMatrix,
    x_signs: &SignPackedVector,
    alpha: AlphaX100,
) -> Result<SkipMask> {
    predict_skip_mask_with_counts(w_signs, x_signs, alpha, None)
}

/// As [`predict_skip_mask`], optionally writing each row's `N_neg` into `counts`.
pub fn predict_skip_mask_with_counts(
    w_signs: &SignPackedMatrix,
    x_signs: &SignPackedVector,
    alpha: AlphaX100,
    counts: Option<&mut Vec<u32>>,
) -> Result<SkipMask> {
    if w_signs.cols() != x_signs.len() {
        return Err(Error::shape(
            "predict_skip_mask",
            format!("x.len == {}", w_signs.cols()),
            x_signs.len(),
        ));
    }
    let d = u32::try_from(w_signs.cols())
        .map_err(|_| Error::InvalidDims(format!("d = {} exceeds u32", w_signs.cols())))?;
    let wpr = w_signs.words_per_row();
    let tail = w_signs.tail_mask();
    let xw = x_signs.words();

    let mut n_neg = vec![0u32; w_signs.rows()];
    let rows = w_signs.words().par_chunks_exact(wpr);
    n_neg
        .par_iter_mut()
        .zip(rows)
        .with_min_len(1024)
        .for_each(|(n, row)| *n = count_negatives(row, xw, tail));

    let mask = SkipMask::from_bools(n_neg.iter().map(|&n| predict_row(n, d, alpha)).collect());
    if let Some(out) = counts {
        *out = n_neg;
    }
    Ok(mask)
}
