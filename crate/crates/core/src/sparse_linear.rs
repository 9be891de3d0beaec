//! Row-skipping GEMV kernels.
//!
//! `sparse_gemv_rows` computes only the unskipped rows of `W x`, with the same
//! per-row accumulation as [`dense_gemv`](crate::tensor::dense_gemv).
//! `accumulate_down` computes `sum_i h3[i] * Wdt[i, :]` over unskipped rows,
//! adding rows in ascending `i` for every output element. Parallel execution
//! splits rows (gemv) or output columns (down projection), which leaves each
//! element's summation order untouched.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::predictor::SkipMask;
use crate::tensor::{dot, DenseMatrix, DenseVector, PAR_MIN_WORK};

const DOWN_COL_BLOCK: usize = 256;

/// Counts multiply-accumulates performed by the kernels it is passed to.
#[derive(Debug, Default)]
pub struct MacCounter(AtomicU64);

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }

    fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }
}

pub fn sparse_gemv_rows(w: &DenseMatrix, x: &DenseVector, skip: &SkipMask) -> Result<DenseVector> {
    sparse_gemv_rows_counted(w, x, skip, None)
}

pub fn sparse_gemv_rows_counted(
    w: &DenseMatrix,
    x: &DenseVector,
    skip: &SkipMask,
    macs: Option<&MacCounter>,
) -> Result<DenseVector> {
    if x.len() != w.cols() {
        return Err(Error::shape("sparse_gemv_rows", format!("x.len == {}", w.cols()), x.len()));
    }
    if skip.len() != w.rows() {
        return Err(Error::shape("sparse_gemv_rows", format!("skip.len == {}", w.rows()), skip.len()));
    }
    let cols = w.cols();
    let xs = x.as_slice();
    let data = w.as_slice();
    let flags = skip.as_slice();
    let mut out = vec![0.0f32; w.rows()];

    let run = |start: usize, chunk: &mut [f32]| {
        let mut done = 0u64;
        for (off, o) in chunk.iter_mut().enumerate() {
            let i = start + off;
            if flags[i] {
                continue;
            }
            *o = dot(&data[i * cols..(i + 1) * cols], xs);
            done += 1;
        }
        if let Some(c) = macs {
            c.add(done * cols as u64);
        }
    };

    let live = w.rows() - skip.skipped_count();
    if live * cols < PAR_MIN_WORK {
        run(0, &mut out);
    } else {
        const ROWS_PER_TASK: usize = 64;
        out.par_chunks_mut(ROWS_PER_TASK)
            .enumerate()
            .for_each(|(c, chunk)| run(c * ROWS_PER_TASK, chunk));
    }
    Ok(DenseVector::from_raw(out))
}

pub fn accumulate_down(wdt: &DenseMatrix, h3: &DenseVector, skip: &SkipMask) -> Result<DenseVector> {
    accumulate_down_counted(wdt, h3, skip, None)
}

pub fn accumulate_down_counted(
    wdt: &DenseMatrix,
    h3: &DenseVector,
    skip: &SkipMask,
    macs: Option<&MacCounter>,
) -> Result<DenseVector> {
    if h3.len() != wdt.rows() {
        return Err(Error::shape("accumulate_down", format!("h3.len == {}", wdt.rows()), h3.len()));
    }
    if skip.len() != wdt.rows() {
        return Err(Error::shape("accumulate_down", format!("skip.len == {}", wdt.rows()), skip.len()));
    }
    let cols = wdt.cols();
    let data = wdt.as_slice();
    let hs = h3.as_slice();
    let live: Vec<usize> = (0..wdt.rows()).filter(|&i| !skip.is_skipped(i)).collect();
    let mut out = vec![0.0f32; cols];

    let run = |col0: usize, acc: &mut [f32]| {
        let width = acc.len();
        for &i in &live {
            let s = hs[i];
            let row = &data[i * cols + col0..i * cols + col0 + width];
            for (a, w) in acc.iter_mut().zip(row) {
                *a += s * w;
            }
        }
        if let Some(c) = macs {
            c.add((live.len() * width) as u64);
        }
    };

    if live.len() * cols < PAR_MIN_WORK || cols <= DOWN_COL_BLOCK {
        run(0, &mut out);
    } else {
        out.par_chunks_mut(DOWN_COL_BLOCK)
            .enumerate()
            .for_each(|(b, acc)| run(b * DOWN_COL_BLOCK, acc));
    }
    Ok(DenseVector::from_raw(out))
}
