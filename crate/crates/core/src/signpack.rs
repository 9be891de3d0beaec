//! IEEE-754 sign bits packed 32 per `u32`.
//!
//! Element `j` of a row lands in bit `j % 32` of word `j / 32` (LSB-first).
//! Bits past the last element of a row are always zero. `-0.0` packs as 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, DenseVector, PAR_MIN_WORK};

pub const WORD_BITS: usize = 32;

pub fn words_per_row(cols: usize) -> usize {
    cols.div_ceil(WORD_BITS)
}

/// Low `((cols - 1) % 32) + 1` bits set.
pub fn tail_mask(cols: usize) -> u32 {
    debug_assert!(cols > 0);
    let live = (cols - 1) % WORD_BITS + 1;
    if live == WORD_BITS {
        u32::MAX
    } else {
        (1u32 << live) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPackedMatrix {
    words: Vec<u32>,
    rows: usize,
    cols: usize,
    words_per_row: usize,
    tail_mask: u32,
}

impl SignPackedMatrix {
    /// Rebuilds a matrix from raw words (e.g. a sidecar), checking length and padding.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDims(format!("sign-pack dims {rows}x{cols}")));
        }
        let wpr = words_per_row(cols);
        if words.len() != rows * wpr {
            return Err(Error::CorruptSignPack(format!(
                "expected {} words for {rows}x{cols}, got {}",
                rows * wpr,
                words.len()
            )));
        }
        let m = Self {
            words,
            rows,
            cols,
            words_per_row: wpr,
            tail_mask: tail_mask(cols),
        };
        if let Some(row) = m.first_dirty_row() {
            return Err(Error::CorruptSignPack(format!("padding bits set in row {row}")));
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn tail_mask(&self) -> u32 {
        self.tail_mask
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    fn first_dirty_row(&self) -> Option<usize> {
        let pad = !self.tail_mask;
        (0..self.rows).find(|&i| self.row(i)[self.words_per_row - 1] & pad != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPackedVector {
    words: Vec<u32>,
    len: usize,
    tail_mask: u32,
}

impl SignPackedVector {
    /// An all-positive buffer of `len` signs, reusable via [`pack_signs_vector_into`].
    pub fn with_len(len: usize) -> Self {
        assert!(len > 0, "sign vector length must be positive");
        Self {
            words: vec![0; words_per_row(len)],
            len,
            tail_mask: tail_mask(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn words_per_row(&self) -> usize {
        self.words.len()
    }

    pub fn tail_mask(&self) -> u32 {
        self.tail_mask
    }
}

#[inline]
fn pack_row(src: &[f32], dst: &mut [u32]) {
    for (word, chunk) in dst.iter_mut().zip(src.chunks(WORD_BITS)) {
        let mut w = 0u32;
        for (bit, &v) in chunk.iter().enumerate() {
            w |= (v.to_bits() >> 31) << bit;
        }
        *word = w;
    }
}

pub fn pack_signs_matrix(w: &DenseMatrix) -> SignPackedMatrix {
    let (rows, cols) = (w.rows(), w.cols());
    let wpr = words_per_row(cols);
    let mut words = vec![0u32; rows * wpr];
    let src = w.as_slice();
    if rows * cols < PAR_MIN_WORK {
        for (dst, row) in words.chunks_exact_mut(wpr).zip(src.chunks_exact(cols)) {
            pack_row(row, dst);
        }
    } else {
        words
            .par_chunks_exact_mut(wpr)
            .zip(src.par_chunks_exact(cols))
            .with_min_len(16)
            .for_each(|(dst, row)| pack_row(row, dst));
    }
    let packed = SignPackedMatrix {
        words,
        rows,
        cols,
        words_per_row: wpr,
        tail_mask: tail_mask(cols),
    };
    debug_assert!(packed.first_dirty_row().is_none());
    packed
}

pub fn pack_signs_vector(x: &DenseVector) -> SignPackedVector {
    let mut out = SignPackedVector::with_len(x.len());
    pack_signs_vector_into(&mut out, x).expect("buffer sized from x");
    out
}

/// Packs `x` into an existing buffer of the same length.
pub fn pack_signs_vector_into(buf: &mut SignPackedVector, x: &DenseVector) -> Result<()> {
    if buf.len != x.len() {
        return Err(Error::shape("pack_signs_vector_into", buf.len, x.len()));
    }
    pack_row(x.as_slice(), &mut buf.words);
    Ok(())
}
