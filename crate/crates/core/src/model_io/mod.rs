//! On-disk formats. All multi-byte values are little-endian.
//!
//! Model file (`SPMF`):
//!
//! ```text
//! magic   "SPMF"
//! version u32 = 1
//! layers  u32
//! d       u32
//! k       u32
//! theta   f32
//! per layer: gate, up, down_t   each k*d f32, row-major (k rows of length d)
//! ```
//!
//! Sign sidecar (`SPSG`):
//!
//! ```text
//! magic          "SPSG"
//! version        u32 = 1
//! layers         u32
//! d              u32
//! k              u32
//! words_per_row  u32 = ceil(d / 32)
//! per layer: k * words_per_row u32 words; element j of a row is bit j%32 of word j/32
//! ```

mod synth;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use synth::{gen_inputs, gen_synthetic, GaussianStream, GenMode, GenSpec};

use crate::error::{Error, Result};
use crate::mlp::{MlpLayerWeights, MlpStack};
use crate::signpack::{pack_signs_matrix, words_per_row, SignPackedMatrix};
use crate::tensor::{ActivationThreshold, DenseMatrix};

pub const MODEL_MAGIC: [u8; 4] = *b"SPMF";
pub const SIGNPACK_MAGIC: [u8; 4] = *b"SPSG";
pub const FORMAT_VERSION: u32 = 1;

const MATRIX_NAMES: [&str; 3] = ["gate", "up", "down_t"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHeader {
    pub layers: u32,
    pub d: u32,
    pub k: u32,
    pub theta: f32,
}

fn dim_u32(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidDims(format!("{what} = {v} does not fit in u32")))
}

pub fn write_model(path: impl AsRef<Path>, model: &MlpStack) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn write_model_to(w: &mut impl Write, model: &MlpStack) -> Result<()> {
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&dim_u32("layers", model.layer_count())?.to_le_bytes())?;
    w.write_all(&dim_u32("d", model.d())?.to_le_bytes())?;
    w.write_all(&dim_u32("k", model.k())?.to_le_bytes())?;
    let theta = model.layers()[0].theta().theta();
    w.write_all(&theta.to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.d() * model.k() * 4);
    for layer in model.layers() {
        for m in [layer.gate(), layer.up(), layer.down_t()] {
            buf.clear();
            buf.extend(m.as_slice().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], kind: &'static str, section: impl FnOnce() -> String) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated {
            kind,
            section: section(),
        },
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read, kind: &'static str, field: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, kind, || format!("header field {field}"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_preamble(r: &mut impl Read, kind: &'static str, magic: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    read_exact_or(r, &mut found, kind, || "magic".into())?;
    if found != magic {
        return Err(Error::BadMagic {
            kind,
            expected: magic,
            found,
        });
    }
    let version = read_u32(r, kind, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion {
            kind,
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    Ok(())
}

pub fn read_model_header(r: &mut impl Read) -> Result<ModelHeader> {
    read_preamble(r, "model", MODEL_MAGIC)?;
    let layers = read_u32(r, "model", "layers")?;
    let d = read_u32(r, "model", "d")?;
    let k = read_u32(r, "model", "k")?;
    let theta = f32::from_bits(read_u32(r, "model", "theta")?);
    if layers == 0 || d == 0 || k == 0 {
        return Err(Error::InvalidDims(format!("model header layers={layers} d={d} k={k}")));
    }
    Ok(ModelHeader { layers, d, k, theta })
}

pub fn read_model(path: impl AsRef<Path>) -> Result<MlpStack> {
    read_model_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_model_from(r: &mut impl Read) -> Result<MlpStack> {
    let h = read_model_header(r)?;
    let theta = ActivationThreshold::new(h.theta)?;
    let (d, k) = (h.d as usize, h.k as usize);
    let mut bytes = vec![0u8; d * k * 4];
    let mut layers = Vec::with_capacity(h.layers as usize);
    for l in 0..h.layers as usize {
        let mut mats = Vec::with_capacity(3);
        for name in MATRIX_NAMES {
            read_exact_or(r, &mut bytes, "model", || format!("layer {l} matrix {name}"))?;
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let m = DenseMatrix::new(k, d, data).map_err(|e| match e {
                Error::NonFinite { index, value, .. } => Error::NonFinite {
                    what: format!("layer {l} matrix {name}"),
                    index,
                    value,
                },
                other => other,
            })?;
            mats.push(m);
        }
        let down_t = mats.pop().unwrap();
        let up = mats.pop().unwrap();
        let gate = mats.pop().unwrap();
        layers.push(MlpLayerWeights::new(gate, up, down_t, theta)?);
    }
    MlpStack::new(layers)
}

/// Packed gate signs for every layer of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPackFile {
    pub d: usize,
    pub k: usize,
    pub layers: Vec<SignPackedMatrix>,
}

impl SignPackFile {
    pub fn from_model(model: &MlpStack) -> Self {
        Self {
            d: model.d(),
            k: model.k(),
            layers: model.layers().iter().map(|l| l.gate_signs().clone()).collect(),
        }
    }

    pub fn check_matches(&self, model: &MlpStack) -> Result<()> {
        if (self.layers.len(), self.d, self.k) != (model.layer_count(), model.d(), model.k()) {
            return Err(Error::SidecarMismatch(format!(
                "sidecar has layers={} d={} k={}, model has layers={} d={} k={}",
                self.layers.len(),
                self.d,
                self.k,
                model.layer_count(),
                model.d(),
                model.k()
            )));
        }
        Ok(())
    }

    /// Rebuilds `model` around these signs after checking dims and contents.
    pub fn attach(self, model: MlpStack) -> Result<MlpStack> {
        self.check_matches(&model)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, (layer, signs)) in model.layers().iter().zip(self.layers).enumerate() {
            if signs != pack_signs_matrix(layer.gate()) {
                return Err(Error::SidecarMismatch(format!("layer {l} signs differ from gate weights")));
            }
            layers.push(MlpLayerWeights::with_signs(
                layer.gate().clone(),
                layer.up().clone(),
                layer.down_t().clone(),
                signs,
                layer.theta(),
            )?);
        }
        MlpStack::new(layers)
    }
}

pub fn write_signpack(path: impl AsRef<Path>, packs: &SignPackFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_signpack_to(&mut w, packs)?;
    w.flush()?;
    Ok(())
}

pub fn write_signpack_to(w: &mut impl Write, packs: &SignPackFile) -> Result<()> {
    let wpr = words_per_row(packs.d);
    w.write_all(&SIGNPACK_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&dim_u32("layers", packs.layers.len())?.to_le_bytes())?;
    w.write_all(&dim_u32("d", packs.d)?.to_le_bytes())?;
    w.write_all(&dim_u32("k", packs.k)?.to_le_bytes())?;
    w.write_all(&dim_u32("words_per_row", wpr)?.to_le_bytes())?;
    for (l, m) in packs.layers.iter().enumerate() {
        if (m.rows(), m.cols()) != (packs.k, packs.d) {
            return Err(Error::SidecarMismatch(format!("layer {l} is {}x{}", m.rows(), m.cols())));
        }
        let buf: Vec<u8> = m.words().iter().flat_map(|w| w.to_le_bytes()).collect();
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_signpack(path: impl AsRef<Path>) -> Result<SignPackFile> {
    read_signpack_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_signpack_from(r: &mut impl Read) -> Result<SignPackFile> {
    read_preamble(r, "sign-pack", SIGNPACK_MAGIC)?;
    let layers = read_u32(r, "sign-pack", "layers")? as usize;
    let d = read_u32(r, "sign-pack", "d")? as usize;
    let k = read_u32(r, "sign-pack", "k")? as usize;
    let wpr = read_u32(r, "sign-pack", "words_per_row")? as usize;
    if layers == 0 || d == 0 || k == 0 {
        return Err(Error::InvalidDims(format!("sign-pack header layers={layers} d={d} k={k}")));
    }
    if wpr != words_per_row(d) {
        return Err(Error::CorruptSignPack(format!(
            "words_per_row {wpr} inconsistent with d={d}"
        )));
    }
    let mut bytes = vec![0u8; k * wpr * 4];
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        read_exact_or(r, &mut bytes, "sign-pack", || format!("layer {l} words"))?;
        let words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = SignPackedMatrix::from_words(k, d, words)
            .map_err(|e| Error::CorruptSignPack(format!("layer {l}: {e}")))?;
        out.push(m);
    }
    Ok(SignPackFile { d, k, layers: out })
}
