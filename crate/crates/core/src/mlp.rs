//! Gate-based MLP block: `y = (relu_theta(x Wg) * (x Wu)) Wd^T`.
//!
//! The sparse path runs the four steps in order and widens the skip mask as
//! exact zeros show up:
//!
//! 1. predict skipped rows from sign bits, then `h1 = relu_theta(gate x)` on the rest;
//! 2. skip rows where `h1 == 0`, then `h2 = up x`;
//! 3. `h3 = h1 * h2`;
//! 4. skip rows where `h3 == 0`, then accumulate `h3[i] * down_t[i, :]`.

use crate::error::{Error, Result};
use crate::predictor::{predict_skip_mask_with_counts, AlphaSchedule, AlphaX100, SkipMask};
use crate::signpack::{pack_signs_matrix, pack_signs_vector_into, SignPackedMatrix, SignPackedVector};
use crate::sparse_linear::{accumulate_down, sparse_gemv_rows};
use crate::tensor::{dense_gemv, hadamard, relu_theta, ActivationThreshold, DenseMatrix, DenseVector};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayerWeights {
    gate: DenseMatrix,
    up: DenseMatrix,
    down_t: DenseMatrix,
    gate_signs: SignPackedMatrix,
    theta: ActivationThreshold,
}

impl MlpLayerWeights {
    /// `down_t` holds `W_down^T`: row `i` is the contribution of hidden unit `i`.
    pub fn new(
        gate: DenseMatrix,
        up: DenseMatrix,
        down_t: DenseMatrix,
        theta: ActivationThreshold,
    ) -> Result<Self> {
        let gate_signs = pack_signs_matrix(&gate);
        Self::with_signs(gate, up, down_t, gate_signs, theta)
    }

    /// Uses precomputed gate signs, e.g. from a sidecar file.
    pub fn with_signs(
        gate: DenseMatrix,
        up: DenseMatrix,
        down_t: DenseMatrix,
        gate_signs: SignPackedMatrix,
        theta: ActivationThreshold,
    ) -> Result<Self> {
        let dims = (gate.rows(), gate.cols());
        for (name, m) in [("up", &up), ("down_t", &down_t)] {
            if (m.rows(), m.cols()) != dims {
                return Err(Error::shape(
                    "MlpLayerWeights",
                    format!("{name} {}x{}", dims.0, dims.1),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }
        if (gate_signs.rows(), gate_signs.cols()) != dims {
            return Err(Error::SidecarMismatch(format!(
                "gate signs are {}x{}, gate is {}x{}",
                gate_signs.rows(),
                gate_signs.cols(),
                dims.0,
                dims.1
            )));
        }
        debug_assert_eq!(gate_signs, pack_signs_matrix(&gate));
        Ok(Self {
            gate,
            up,
            down_t,
            gate_signs,
            theta,
        })
    }

    /// Model (input/output) dimension.
    pub fn d(&self) -> usize {
        self.gate.cols()
    }

    /// Hidden dimension.
    pub fn k(&self) -> usize {
        self.gate.rows()
    }

    pub fn gate(&self) -> &DenseMatrix {
        &self.gate
    }

    pub fn up(&self) -> &DenseMatrix {
        &self.up
    }

    pub fn down_t(&self) -> &DenseMatrix {
        &self.down_t
    }

    pub fn gate_signs(&self) -> &SignPackedMatrix {
        &self.gate_signs
    }

    pub fn theta(&self) -> ActivationThreshold {
        self.theta
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.gate.bit_eq(&other.gate)
            && self.up.bit_eq(&other.up)
            && self.down_t.bit_eq(&other.down_t)
            && self.theta.theta().to_bits() == other.theta.theta().to_bits()
    }

    fn check_input(&self, x: &DenseVector) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::shape("mlp forward", format!("x.len == {}", self.d()), x.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpStack {
    layers: Vec<MlpLayerWeights>,
    d: usize,
    k: usize,
}

impl MlpStack {
    pub fn new(layers: Vec<MlpLayerWeights>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidDims("stack needs at least one layer".into()))?;
        let (d, k) = (first.d(), first.k());
        if let Some((i, l)) = layers.iter().enumerate().find(|(_, l)| (l.d(), l.k()) != (d, k)) {
            return Err(Error::shape(
                "MlpStack::new",
                format!("layer {i} with d={d}, k={k}"),
                format!("d={}, k={}", l.d(), l.k()),
            ));
        }
        Ok(Self { layers, d, k })
    }

    pub fn layers(&self) -> &[MlpLayerWeights] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.bit_eq(b))
    }
}

/// How much a forward pass records beyond the cheap masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceLevel {
    /// Masks only; no dense recomputation.
    #[default]
    Off,
    /// Adds the ground-truth mask and the `N_neg` histogram.
    Truth,
    /// Adds the intermediate vectors.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenVectors {
    pub h1: DenseVector,
    pub h2: DenseVector,
    pub h3: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Rows skipped by sign prediction (all false on the dense path).
    pub predicted: SkipMask,
    /// Rows whose dense gate output is `<= theta`.
    pub truth: Option<SkipMask>,
    pub h1_actual_zero: SkipMask,
    pub h3_zero: SkipMask,
    pub vectors: Option<HiddenVectors>,
    /// `n_neg_histogram[n]` is the number of rows with `N_neg == n`.
    pub n_neg_histogram: Option<Vec<u32>>,
}

fn zero_mask(v: &DenseVector) -> SkipMask {
    SkipMask::from_bools(v.as_slice().iter().map(|&e| e == 0.0).collect())
}

/// Rows with `gate . x <= theta`, from a dense recomputation.
pub fn truth_mask(layer: &MlpLayerWeights, x: &DenseVector) -> Result<SkipMask> {
    layer.check_input(x)?;
    let theta = layer.theta.theta();
    let g = dense_gemv(&layer.gate, x)?;
    Ok(SkipMask::from_bools(g.as_slice().iter().map(|&v| v <= theta).collect()))
}

pub fn mlp_forward_dense(layer: &MlpLayerWeights, x: &DenseVector) -> Result<(DenseVector, LayerTrace)> {
    mlp_forward_dense_traced(layer, x, TraceLevel::Full)
}

pub fn mlp_forward_dense_traced(
    layer: &MlpLayerWeights,
    x: &DenseVector,
    level: TraceLevel,
) -> Result<(DenseVector, LayerTrace)> {
    layer.check_input(x)?;
    let k = layer.k();
    let g = dense_gemv(&layer.gate, x)?;
    let theta = layer.theta.theta();
    let h1 = relu_theta(&g, layer.theta);
    let h2 = dense_gemv(&layer.up, x)?;
    let h3 = hadamard(&h1, &h2)?;
    let y = accumulate_down(&layer.down_t, &h3, &SkipMask::all_false(k))?;

    let truth = (level != TraceLevel::Off)
        .then(|| SkipMask::from_bools(g.as_slice().iter().map(|&v| v <= theta).collect()));
    let trace = LayerTrace {
        predicted: SkipMask::all_false(k),
        truth,
        h1_actual_zero: zero_mask(&h1),
        h3_zero: zero_mask(&h3),
        vectors: (level == TraceLevel::Full).then_some(HiddenVectors { h1, h2, h3 }),
        n_neg_histogram: None,
    };
    Ok((y, trace))
}

/// Sign-predicted sparse forward. `xsigns` is a reusable buffer of length `d`.
pub fn mlp_forward_sparse(
    layer: &MlpLayerWeights,
    xsigns: &mut SignPackedVector,
    x: &DenseVector,
    alpha: AlphaX100,
    level: TraceLevel,
) -> Result<(DenseVector, LayerTrace)> {
    layer.check_input(x)?;
    pack_signs_vector_into(xsigns, x)?;
    let mut counts = Vec::new();
    let want_counts = level != TraceLevel::Off;
    let predicted = predict_skip_mask_with_counts(
        &layer.gate_signs,
        xsigns,
        alpha,
        want_counts.then_some(&mut counts),
    )?;
    let (y, mut trace) = mlp_forward_masked(layer, x, predicted, level)?;
    if want_counts {
        let mut hist = vec![0u32; layer.d() + 1];
        for n in counts {
            hist[n as usize] += 1;
        }
        trace.n_neg_histogram = Some(hist);
    }
    Ok((y, trace))
}

/// Runs steps 1-4 with a caller-supplied initial skip mask.
pub fn mlp_forward_masked(
    layer: &MlpLayerWeights,
    x: &DenseVector,
    predicted: SkipMask,
    level: TraceLevel,
) -> Result<(DenseVector, LayerTrace)> {
    layer.check_input(x)?;
    if predicted.len() != layer.k() {
        return Err(Error::shape("mlp_forward_masked", layer.k(), predicted.len()));
    }
    let h1 = relu_theta(&sparse_gemv_rows(&layer.gate, x, &predicted)?, layer.theta);
    let h1_actual_zero = zero_mask(&h1);
    let mask2 = predicted.union(&h1_actual_zero)?;
    let h2 = sparse_gemv_rows(&layer.up, x, &mask2)?;
    let h3 = hadamard(&h1, &h2)?;
    let h3_zero = zero_mask(&h3);
    let mask4 = mask2.union(&h3_zero)?;
    let y = accumulate_down(&layer.down_t, &h3, &mask4)?;

    let truth = match level {
        TraceLevel::Off => None,
        _ => Some(truth_mask(layer, x)?),
    };
    let trace = LayerTrace {
        predicted,
        truth,
        h1_actual_zero,
        h3_zero,
        vectors: (level == TraceLevel::Full).then_some(HiddenVectors { h1, h2, h3 }),
        n_neg_histogram: None,
    };
    Ok((y, trace))
}

#[derive(Debug, Clone, Copy)]
pub enum ForwardMode<'a> {
    Dense,
    Sparse(&'a AlphaSchedule),
}

/// Feeds `x` through every layer. Each layer after the first sees the previous
/// output rescaled to unit RMS; the returned vector is the last layer's raw output.
pub fn stack_forward(
    model: &MlpStack,
    x: &DenseVector,
    mode: ForwardMode<'_>,
    level: TraceLevel,
) -> Result<(DenseVector, Vec<LayerTrace>)> {
    if let ForwardMode::Sparse(schedule) = mode {
        if schedule.len() != model.layer_count() {
            return Err(Error::ScheduleLength {
                expected: model.layer_count(),
                actual: schedule.len(),
            });
        }
    }
    if x.len() != model.d() {
        return Err(Error::shape("stack_forward", format!("x.len == {}", model.d()), x.len()));
    }
    let mut scratch = SignPackedVector::with_len(model.d());
    let mut traces = Vec::with_capacity(model.layer_count());
    let mut cur = x.clone();
    let mut out = None;
    for (l, layer) in model.layers().iter().enumerate() {
        let (y, trace) = match mode {
            ForwardMode::Dense => mlp_forward_dense_traced(layer, &cur, level)?,
            ForwardMode::Sparse(s) => mlp_forward_sparse(layer, &mut scratch, &cur, s.per_layer[l], level)?,
        };
        traces.push(trace);
        if l + 1 < model.layer_count() {
            cur = y.rms_normalized();
        }
        out = Some(y);
    }
    Ok((out.expect("stack has at least one layer"), traces))
}
