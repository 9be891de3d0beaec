//! Seeded synthetic models and inputs.
//!
//! Generator contract, fixed so seeds reproduce across implementations:
//!
//! * Stream seeds: `s = SplitMix64(seed ^ SplitMix64(tag << 32 | index))`, taking the
//!   first output of each SplitMix64 seeded with the given value. `tag` is 1 for
//!   layer weights (`index` = layer) and 2 for inputs (`index` = input number).
//! * Each stream is xoshiro256++ seeded with `s` through SplitMix64 (the standard
//!   `seed_from_u64` expansion).
//! * Uniforms: `u = ((next_u64 >> 11) + 0.5) * 2^-53`, in (0, 1).
//! * Normals: Box-Muller on consecutive uniform pairs `(u1, u2)`, yielding
//!   `r cos(2 pi u2)` then `r sin(2 pi u2)` with `r = sqrt(-2 ln u1)`, computed in
//!   `f64` and rounded to `f32`.
//! * A layer stream fills `gate`, then `up`, then `down_t`, each row-major.
//!
//! `SparsityBiased` subtracts `gate_row_shift` from every gate entry and adds
//! `input_mean` to every input entry, skewing the sign balance so most gate
//! outputs land below zero. It is a synthetic stand-in for the high activation
//! sparsity of ReLU-fied checkpoints; the sparsity it reaches is measured, not promised.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{MlpLayerWeights, MlpStack};
use crate::tensor::{ActivationThreshold, DenseMatrix, DenseVector};

const TAG_WEIGHTS: u64 = 1;
const TAG_INPUTS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GenMode {
    IidGaussian,
    SparsityBiased { gate_row_shift: f32, input_mean: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub layers: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub mode: GenMode,
    pub theta: f32,
}

impl GenSpec {
    pub fn iid(layers: usize, d: usize, k: usize, seed: u64) -> Self {
        Self {
            layers,
            d,
            k,
            seed,
            mode: GenMode::IidGaussian,
            theta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d == 0 || self.k == 0 {
            return Err(Error::InvalidSpec(format!(
                "layers, d and k must be positive (got {}, {}, {})",
                self.layers, self.d, self.k
            )));
        }
        if u32::try_from(self.d.max(self.k).max(self.layers)).is_err() {
            return Err(Error::InvalidSpec("dimensions must fit in u32".into()));
        }
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(Error::InvalidSpec(format!("theta must be finite and >= 0, got {}", self.theta)));
        }
        if let GenMode::SparsityBiased {
            gate_row_shift,
            input_mean,
        } = self.mode
        {
            if !gate_row_shift.is_finite() || gate_row_shift < 0.0 {
                return Err(Error::InvalidSpec(format!("gate_row_shift must be finite and >= 0, got {gate_row_shift}")));
            }
            if !input_mean.is_finite() {
                return Err(Error::InvalidSpec(format!("input_mean must be finite, got {input_mean}")));
            }
        }
        Ok(())
    }

    fn gate_shift(&self) -> f32 {
        match self.mode {
            GenMode::IidGaussian => 0.0,
            GenMode::SparsityBiased { gate_row_shift, .. } => gate_row_shift,
        }
    }

    fn input_mean(&self) -> f32 {
        match self.mode {
            GenMode::IidGaussian => 0.0,
            GenMode::SparsityBiased { input_mean, .. } => input_mean,
        }
    }
}

fn stream_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let salt = SplitMix64::seed_from_u64((tag << 32) | index).next_u64();
    SplitMix64::seed_from_u64(seed ^ salt).next_u64()
}

/// Standard normal samples from a xoshiro256++ stream.
pub struct GaussianStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    fn for_stream(seed: u64, tag: u64, index: u64) -> Self {
        Self::new(stream_seed(seed, tag, index))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }

    pub fn fill_normal(&mut self, n: usize, shift: f32) -> Vec<f32> {
        (0..n).map(|_| self.next_normal() as f32 + shift).collect()
    }
}

fn gen_layer(spec: &GenSpec, l: usize) -> Result<MlpLayerWeights> {
    let mut g = GaussianStream::for_stream(spec.seed, TAG_WEIGHTS, l as u64);
    let n = spec.k * spec.d;
    let gate = g.fill_normal(n, -spec.gate_shift());
    let up = g.fill_normal(n, 0.0);
    let down_t = g.fill_normal(n, 0.0);
    MlpLayerWeights::new(
        DenseMatrix::new(spec.k, spec.d, gate)?,
        DenseMatrix::new(spec.k, spec.d, up)?,
        DenseMatrix::new(spec.k, spec.d, down_t)?,
        ActivationThreshold::new(spec.theta)?,
    )
}

pub fn gen_synthetic(spec: &GenSpec) -> Result<MlpStack> {
    spec.validate()?;
    let layers = (0..spec.layers)
        .into_par_iter()
        .map(|l| gen_layer(spec, l))
        .collect::<Result<Vec<_>>>()?;
    MlpStack::new(layers)
}

/// `count` input vectors of length `d`; input `i` always comes from the same stream.
pub fn gen_inputs(spec: &GenSpec, count: usize) -> Result<Vec<DenseVector>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let mut g = GaussianStream::for_stream(spec.seed, TAG_INPUTS, i as u64);
            DenseVector::new(g.fill_normal(spec.d, spec.input_mean()))
        })
        .collect()
}
