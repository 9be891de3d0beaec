//! Predictor scoring, operation counts, memory footprints and error norms.
//!
//! The "positive" class throughout is *sparse* (row skipped).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::predictor::SkipMask;
use crate::signpack::words_per_row;
use crate::tensor::DenseVector;

pub const MIB: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PredictorScore {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl PredictorScore {
    /// `TP / (TP + FP)`, or 1.0 when nothing was predicted sparse.
    pub fn precision(&self) -> f64 {
        let denom = self.true_positive + self.false_positive;
        if denom == 0 {
            1.0
        } else {
            self.true_positive as f64 / denom as f64
        }
    }

    /// `TP / (TP + FN)`, or 1.0 when nothing is truly sparse.
    pub fn recall(&self) -> f64 {
        let denom = self.true_positive + self.false_negative;
        if denom == 0 {
            1.0
        } else {
            self.true_positive as f64 / denom as f64
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn merge(&mut self, other: &Self) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.false_negative += other.false_negative;
        self.true_negative += other.true_negative;
    }
}

pub fn score_predictor(predicted: &SkipMask, truth: &SkipMask) -> Result<PredictorScore> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("score_predictor", truth.len(), predicted.len()));
    }
    let mut s = PredictorScore::default();
    for (&p, &t) in predicted.as_slice().iter().zip(truth.as_slice()) {
        match (p, t) {
            (true, true) => s.true_positive += 1,
            (true, false) => s.false_positive += 1,
            (false, true) => s.false_negative += 1,
            (false, false) => s.true_negative += 1,
        }
    }
    Ok(s)
}

/// Per-layer operation counts for one decoded token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCountReport {
    /// 32-bit XOR+popcount word operations of the sign predictor.
    pub predictor_word_ops: u64,
    /// MACs of the three dense projections.
    pub dense_mlp_macs: u64,
    pub sparse_mlp_macs: u64,
    /// MACs of a rank-`r` low-rank predictor (`d x r` then `r x k`).
    pub comparator_predictor_macs: u64,
}

pub fn op_counts(d: u64, k: u64, sparsity: f64, rank: u64) -> Result<OpCountReport> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidDims(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let dense = 3 * d * k;
    Ok(OpCountReport {
        predictor_word_ops: k * words_per_row(d as usize) as u64,
        dense_mlp_macs: dense,
        sparse_mlp_macs: (dense as f64 * (1.0 - sparsity)).round() as u64,
        comparator_predictor_macs: d * rank + rank * k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryFootprint {
    pub bytes: u64,
}

impl MemoryFootprint {
    pub fn mib(&self) -> f64 {
        self.bytes as f64 / MIB
    }
}

/// Bytes of packed gate signs over all layers: `k * ceil(d/32) * 4 * layers`.
pub fn signpack_memory(d: u64, k: u64, layers: u64) -> MemoryFootprint {
    MemoryFootprint {
        bytes: k * words_per_row(d as usize) as u64 * 4 * layers,
    }
}

/// Bytes of a rank-`r` low-rank predictor stored at `bytes_per_weight` per entry.
pub fn comparator_memory(d: u64, k: u64, rank: u64, layers: u64, bytes_per_weight: u64) -> MemoryFootprint {
    MemoryFootprint {
        bytes: (d * rank + rank * k) * bytes_per_weight * layers,
    }
}

/// Euclidean distance, accumulated in `f64`.
pub fn l2_error(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("l2_error", a.len(), b.len()));
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let diff = f64::from(x) - f64::from(y);
            diff * diff
        })
        .sum();
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(k: usize, set: &[usize]) -> SkipMask {
        SkipMask::from_fn(k, |i| set.contains(&i))
    }

    #[test]
    fn score_examples() {
        let s = score_predictor(&mask(4, &[1]), &mask(4, &[1, 2])).unwrap();
        assert_eq!(s.precision(), 1.0);

        let s = score_predictor(&mask(4, &[1, 2]), &mask(4, &[2, 3])).unwrap();
        assert_eq!((s.true_positive, s.false_positive, s.false_negative, s.true_negative), (1, 1, 1, 1));
        assert_eq!(s.precision(), 0.5);
        assert_eq!(s.recall(), 0.5);

        let s = score_predictor(&mask(4, &[]), &mask(4, &[0])).unwrap();
        assert_eq!(s.precision(), 1.0);
        assert_eq!(s.recall(), 0.0);

        let s = score_predictor(&mask(4, &[]), &mask(4, &[])).unwrap();
        assert_eq!(s.recall(), 1.0);

        assert!(score_predictor(&mask(3, &[]), &mask(4, &[])).is_err());
    }

    #[test]
    fn table_one_counts() {
        let r = op_counts(5120, 13824, 0.92, 1024).unwrap();
        assert_eq!(r.predictor_word_ops, 2_211_840);
        assert_eq!(r.dense_mlp_macs, 212_336_640);
        assert_eq!(r.comparator_predictor_macs, 19_398_656);
        assert_eq!(r.sparse_mlp_macs, 16_986_931);
        assert!(op_counts(1, 1, 1.5, 1).is_err());
        // 1.699e7 / 2.123e8 back-solves to roughly 8% density
        assert!((1.0 - 1.699e7 / 2.123e8 - 0.92f64).abs() < 0.001);
    }

    #[test]
    fn memory_golden() {
        let s = signpack_memory(5120, 13824, 40);
        assert_eq!(s.bytes, 353_894_400);
        assert_eq!(s.mib(), 337.5);
        let c = comparator_memory(5120, 13824, 1024, 40, 2);
        assert_eq!(c.bytes, 1_551_892_480);
        assert_eq!(c.mib(), 1480.0);
        assert_eq!(signpack_memory(32, 1, 1).bytes, 4);
    }

    #[test]
    fn l2_examples() {
        let v = |d: &[f32]| DenseVector::new(d.to_vec()).unwrap();
        assert_eq!(l2_error(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(l2_error(&v(&[3.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 3.0);
        assert_eq!(l2_error(&v(&[1.0, 2.0]), &v(&[2.0, 0.0])).unwrap(), 5f64.sqrt());
        assert!(l2_error(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    proptest! {
        #[test]
        fn score_is_permutation_invariant(
            pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..64),
            rot in 0usize..64,
        ) {
            let p = SkipMask::from_bools(pairs.iter().map(|x| x.0).collect());
            let t = SkipMask::from_bools(pairs.iter().map(|x| x.1).collect());
            let mut shifted = pairs.clone();
            let n = shifted.len();
            shifted.rotate_left(rot % n);
            let ps = SkipMask::from_bools(shifted.iter().map(|x| x.0).collect());
            let ts = SkipMask::from_bools(shifted.iter().map(|x| x.1).collect());
            let a = score_predictor(&p, &t).unwrap();
            prop_assert_eq!(a, score_predictor(&ps, &ts).unwrap());
            prop_assert_eq!(a.total(), n as u64);
            prop_assert!((0.0..=1.0).contains(&a.precision()));
            prop_assert!((0.0..=1.0).contains(&a.recall()));
        }
    }
}
