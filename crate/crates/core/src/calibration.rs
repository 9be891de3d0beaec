//! Alpha sweeps and per-layer alpha selection.
//!
//! Every layer is evaluated on the inputs it would see in a dense run of the
//! stack, so all grid points of a layer share identical inputs and their skip
//! masks nest.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{l2_error, score_predictor};
use crate::mlp::{mlp_forward_dense, mlp_forward_sparse, truth_mask, MlpLayerWeights, MlpStack, TraceLevel};
use crate::predictor::{AlphaSchedule, AlphaX100, SkipMask};
use crate::signpack::SignPackedVector;
use crate::tensor::DenseVector;

pub const DEFAULT_GRID: [AlphaX100; 6] = [
    AlphaX100(100),
    AlphaX100(101),
    AlphaX100(102),
    AlphaX100(103),
    AlphaX100(105),
    AlphaX100(110),
];

pub const DEFAULT_PRECISION_TARGET: f64 = 0.99;

pub fn ground_truth_mask(layer: &MlpLayerWeights, x: &DenseVector) -> Result<SkipMask> {
    truth_mask(layer, x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub layer: usize,
    pub alpha_x100: u32,
    pub precision: f64,
    pub recall: f64,
    pub sparsity: f64,
    pub h3_l2_error: f64,
    /// False positives for each input, in input order.
    #[serde(skip)]
    pub false_positives: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub layers: usize,
    pub grid: Vec<AlphaX100>,
    /// Layer-major, then grid order.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, layer: usize, grid_index: usize) -> &SweepRow {
        &self.rows[layer * self.grid.len() + grid_index]
    }

    pub fn layer_rows(&self, layer: usize) -> &[SweepRow] {
        &self.rows[layer * self.grid.len()..(layer + 1) * self.grid.len()]
    }

    /// Mean of `h3_l2_error` across layers for each grid point.
    pub fn mean_h3_error_by_alpha(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|g| (0..self.layers).map(|l| self.row(l, g).h3_l2_error).sum::<f64>() / self.layers as f64)
            .collect()
    }

    /// Columns: `layer,alpha_x100,precision,recall,sparsity,h3_l2_error`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct DenseRef {
    x: DenseVector,
    h3: DenseVector,
    truth: SkipMask,
}

/// Per input, per layer: the dense-run input, dense `h3` and ground truth.
fn dense_trajectories(model: &MlpStack, inputs: &[DenseVector]) -> Result<Vec<Vec<DenseRef>>> {
    inputs
        .par_iter()
        .map(|x0| {
            let mut refs = Vec::with_capacity(model.layer_count());
            let mut x = x0.clone();
            for layer in model.layers() {
                let (y, trace) = mlp_forward_dense(layer, &x)?;
                let vectors = trace.vectors.expect("full trace");
                let truth = trace.truth.expect("full trace");
                refs.push(DenseRef {
                    x: x.clone(),
                    h3: vectors.h3,
                    truth,
                });
                x = y.rms_normalized();
            }
            Ok(refs)
        })
        .collect()
}

pub fn sweep_alpha(model: &MlpStack, inputs: &[DenseVector], grid: &[AlphaX100]) -> Result<SweepTable> {
    if inputs.is_empty() {
        return Err(Error::EmptyInputs);
    }
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != model.d()) {
        return Err(Error::shape("sweep_alpha", format!("inputs of length {}", model.d()), x.len()));
    }
    let refs = dense_trajectories(model, inputs)?;
    let cells: Vec<(usize, AlphaX100)> = (0..model.layer_count())
        .flat_map(|l| grid.iter().map(move |&a| (l, a)))
        .collect();
    let n = inputs.len() as f64;

    let rows = cells
        .par_iter()
        .map(|&(l, alpha)| {
            let layer = &model.layers()[l];
            let mut scratch = SignPackedVector::with_len(model.d());
            let (mut p, mut r, mut s, mut e) = (0.0, 0.0, 0.0, 0.0);
            let mut fps = Vec::with_capacity(inputs.len());
            for per_input in &refs {
                let dr = &per_input[l];
                let (_, trace) = mlp_forward_sparse(layer, &mut scratch, &dr.x, alpha, TraceLevel::Full)?;
                let score = score_predictor(&trace.predicted, &dr.truth)?;
                let h3 = &trace.vectors.as_ref().expect("full trace").h3;
                p += score.precision();
                r += score.recall();
                s += trace.predicted.skip_ratio();
                e += l2_error(h3, &dr.h3)?;
                fps.push(score.false_positive);
            }
            Ok(SweepRow {
                layer: l,
                alpha_x100: alpha.value(),
                precision: p / n,
                recall: r / n,
                sparsity: s / n,
                h3_l2_error: e / n,
                false_positives: fps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepTable {
        layers: model.layer_count(),
        grid: grid.to_vec(),
        rows,
    })
}

/// Smallest grid alpha meeting `precision_target` for each of the first
/// `early_layer_count` layers (largest alpha if none does); 1.00 elsewhere.
pub fn select_alpha(table: &SweepTable, precision_target: f64, early_layer_count: usize) -> Result<AlphaSchedule> {
    if table.layers == 0 || table.grid.is_empty() {
        return Err(Error::InvalidTable("empty sweep table".into()));
    }
    if table.rows.len() != table.layers * table.grid.len() {
        return Err(Error::InvalidTable(format!(
            "{} rows for {} layers x {} grid points",
            table.rows.len(),
            table.layers,
            table.grid.len()
        )));
    }
    if table.grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidGrid("grid must be sorted ascending".into()));
    }
    if early_layer_count > table.layers {
        return Err(Error::InvalidTable(format!(
            "early_layer_count {early_layer_count} exceeds {} layers",
            table.layers
        )));
    }
    let per_layer = (0..table.layers)
        .map(|l| {
            if l >= early_layer_count {
                return AlphaX100::ONE;
            }
            let rows = table.layer_rows(l);
            rows.iter()
                .position(|r| r.precision >= precision_target)
                .map_or(*table.grid.last().unwrap(), |g| table.grid[g])
        })
        .collect();
    Ok(AlphaSchedule {
        per_layer,
        early_layer_count,
    })
}
