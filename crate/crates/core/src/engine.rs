//! Integer inference: per-tensor weight quantization, dynamic activation
//! quantization, packed GEMM, folded bias, f32 rescale between layers.
//!
//! The final layer returns raw integer accumulators (logits before any
//! rescale), which is what generated programs print.

use thiserror::Error;

use crate::kernels::{self, DotPOp, IntMatrix, KernelError, KernelStats, PackedMatrix};
use crate::model_ir::{BitPair, IrError, LayerDesc, LayerKind, NetworkIR, QuantScheme};
use crate::quant::{self, QuantError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("network has no weights")]
    MissingWeights,
    #[error("input has {got} elements, expected {want}")]
    Input { got: usize, want: usize },
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLayer {
    pub desc: LayerDesc,
    /// Quantization bitwidths as requested by the scheme.
    pub pair: BitPair,
    /// Storage / compute bitwidths (5-7 widen to 8).
    pub wbits: u8,
    pub abits: u8,
    pub op: DotPOp,
    /// `N x K` weight matrix, packed for `op`.
    pub weight: PackedMatrix,
    pub w_scale: f32,
    pub bias: Vec<i32>,
    pub bias_scale: f32,
}

impl QLayer {
    pub fn widened(&self) -> bool {
        self.wbits != self.pair.w || self.abits != self.pair.a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub name: String,
    pub layers: Vec<QLayer>,
}

pub fn quantize_model(network: &NetworkIR, scheme: &QuantScheme) -> Result<QuantizedModel, EngineError> {
    let ws = network.weights.as_ref().ok_or(EngineError::MissingWeights)?;
    if scheme.len() != network.len() {
        return Err(IrError::LengthMismatch {
            got: scheme.len(),
            want: network.len(),
        }
        .into());
    }
    ws.check(&network.layers)?;
    let mut layers = Vec::with_capacity(network.len());
    for ((desc, lw), &pair) in network.layers.iter().zip(&ws.layers).zip(&scheme.pairs) {
        let (wbits, abits) = (quant::storage_bits(pair.w), quant::storage_bits(pair.a));
        let op = DotPOp::for_pair(wbits, abits)?;
        let wp = quant::compute_scale(&lw.weight, pair.w);
        let q = quant::quantize(&lw.weight, &wp);
        let m = IntMatrix::new(desc.gemm_n(), desc.gemm_k(), q)?;
        let weight = kernels::pack_matrix(&m, wbits, op.lanes())?;
        let (bias_scale, bias) = quant::quantize_bias(&lw.bias);
        layers.push(QLayer {
            desc: desc.clone(),
            pair,
            wbits,
            abits,
            op,
            weight,
            w_scale: wp.scale,
            bias,
            bias_scale,
        });
    }
    Ok(QuantizedModel {
        name: network.name.clone(),
        layers,
    })
}

/// Result of one layer on the integer path.
pub enum LayerOut {
    Float(Vec<f32>),
    Logits(Vec<i32>),
}

/// Quantizes `x` at the layer's activation width and lowers it to the GEMM
/// input matrix (`rows x K`).
pub fn lower_input(l: &QLayer, x: &[f32]) -> Result<(IntMatrix, f32), EngineError> {
    if x.len() != l.desc.activation_count {
        return Err(EngineError::Input {
            got: x.len(),
            want: l.desc.activation_count,
        });
    }
    let p = quant::compute_scale(x, l.pair.a);
    let q = quant::quantize(x, &p);
    let m = match l.desc.kind {
        LayerKind::Linear => IntMatrix::new(l.desc.gemm_rows(), l.desc.gemm_k(), q)?,
        LayerKind::Conv2d => kernels::im2col(&q, &l.desc, kernels::pad_value(l.abits))?,
    };
    Ok((m, p.scale))
}

/// Adds the folded bias to every row of `acc` with saturation.
pub fn add_bias(acc: &mut IntMatrix, l: &QLayer, a_scale: f32) {
    let folded = quant::fold_bias(&l.bias, l.bias_scale, l.w_scale, a_scale);
    for r in 0..acc.rows {
        for (v, &b) in acc.data[r * acc.cols..(r + 1) * acc.cols].iter_mut().zip(&folded) {
            *v = v.saturating_add(b);
        }
    }
}

/// Rescales accumulators to floats (`acc * (s_w * s_a)`), applies ReLU and
/// restores the layer's output layout.
pub fn dequantize_output(acc: &IntMatrix, l: &QLayer, a_scale: f32) -> Vec<f32> {
    let s = l.w_scale * a_scale;
    let ints = output_layout(acc, l);
    ints.into_iter()
        .map(|v| {
            let y = v as f32 * s;
            if l.desc.relu && y < 0.0 {
                0.0
            } else {
                y
            }
        })
        .collect()
}

/// `rows x N` for Linear, channel-major `[OC, OH, OW]` for Conv2D.
pub fn output_layout(acc: &IntMatrix, l: &QLayer) -> Vec<i32> {
    match l.desc.kind {
        LayerKind::Linear => acc.data.clone(),
        LayerKind::Conv2d => kernels::transpose(acc),
    }
}

pub fn run_layer(l: &QLayer, x: &[f32], last: bool, stats: &mut KernelStats) -> Result<LayerOut, EngineError> {
    let (m, a_scale) = lower_input(l, x)?;
    let packed = kernels::pack_matrix(&m, l.abits, l.op.lanes())?;
    stats.quant_ops += x.len() as u64;
    stats.pack_ops += packed.words.len() as u64;
    let (mut acc, s) = kernels::matmul_packed(&packed, &l.weight)?;
    *stats += s;
    add_bias(&mut acc, l, a_scale);
    Ok(if last {
        LayerOut::Logits(output_layout(&acc, l))
    } else {
        LayerOut::Float(dequantize_output(&acc, l, a_scale))
    })
}

/// Integer logits of one input.
pub fn infer(model: &QuantizedModel, x: &[f32]) -> Result<Vec<i32>, EngineError> {
    infer_with_stats(model, x).map(|(l, _)| l)
}

pub fn infer_with_stats(model: &QuantizedModel, x: &[f32]) -> Result<(Vec<i32>, KernelStats), EngineError> {
    let mut stats = KernelStats::default();
    let mut cur = x.to_vec();
    let n = model.layers.len();
    for (i, l) in model.layers.iter().enumerate() {
        match run_layer(l, &cur, i + 1 == n, &mut stats)? {
            LayerOut::Float(v) => cur = v,
            LayerOut::Logits(v) => return Ok((v, stats)),
        }
    }
    unreachable!("a model has at least one layer")
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(v: &[i32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
