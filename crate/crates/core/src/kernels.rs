//! Bit-exact emulation of the ten mixed-precision `DotP` instructions, and
//! integer MatMul / Conv2D kernels in a scalar reference variant and a packed
//! word-parallel variant built on `dotp`.
//!
//! Matrices follow one convention throughout: activations are `M x K`,
//! weights are `N x K` (one row per output feature), outputs are `M x N`.

use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{LayerDesc, LayerKind};
use crate::quant::{self, QuantError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("no DotP instruction for rs1 {0}-bit x rs2 {1}-bit")]
    InvalidOp(u8, u8),
    #[error("32-bit accumulator overflow at output ({row}, {col})")]
    Overflow { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error(transparent)]
    Range(#[from] QuantError),
}

/// One of the ten `DotP.{bw}x{ba}` instructions. `rs1` holds the wider
/// operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DotPOp {
    rs1_bits: u8,
    rs2_bits: u8,
}

impl DotPOp {
    pub fn new(rs1_bits: u8, rs2_bits: u8) -> Result<Self, KernelError> {
        let ok = matches!(rs1_bits, 1 | 2 | 4 | 8) && matches!(rs2_bits, 1 | 2 | 4 | 8) && rs2_bits <= rs1_bits;
        if ok {
            Ok(DotPOp { rs1_bits, rs2_bits })
        } else {
            Err(KernelError::InvalidOp(rs1_bits, rs2_bits))
        }
    }

    /// Instruction for a `(weight, activation)` pair, wider operand in rs1.
    pub fn for_pair(bw: u8, ba: u8) -> Result<Self, KernelError> {
        Self::new(bw.max(ba), bw.min(ba))
    }

    pub fn all() -> Vec<DotPOp> {
        let mut v = Vec::with_capacity(10);
        for b1 in [8u8, 4, 2, 1] {
            for b2 in [8u8, 4, 2, 1] {
                if b2 <= b1 {
                    v.push(DotPOp {
                        rs1_bits: b1,
                        rs2_bits: b2,
                    });
                }
            }
        }
        v
    }

    pub fn rs1_bits(&self) -> u8 {
        self.rs1_bits
    }

    pub fn rs2_bits(&self) -> u8 {
        self.rs2_bits
    }

    pub fn lanes(&self) -> usize {
        32 / self.rs1_bits as usize
    }
}

impl fmt::Display for DotPOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DotP.{}x{}", self.rs1_bits, self.rs2_bits)
    }
}

/// Executes one `DotP` instruction. Lane `i` of rs1 sits at bit
/// `i * bw`, lane `i` of rs2 at bit `i * ba`; narrower rs2 lanes are
/// sign-extended, one-bit lanes decode `0 -> +1`, `1 -> -1`.
pub fn dotp(op: DotPOp, rs1: u32, rs2: u32) -> i32 {
    if op.rs1_bits == 1 {
        return 32 - 2 * (rs1 ^ rs2).count_ones() as i32;
    }
    let (b1, b2) = (op.rs1_bits as u32, op.rs2_bits as u32);
    let m1 = (1u32 << b1) - 1;
    let m2 = (1u32 << b2) - 1;
    let mut acc = 0i32;
    for i in 0..op.lanes() as u32 {
        let a = quant::decode((rs1 >> (i * b1)) & m1, op.rs1_bits);
        let b = quant::decode((rs2 >> (i * b2)) & m2, op.rs2_bits);
        acc += a * b;
    }
    acc
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelStats {
    pub dotp_count: u64,
    pub scalar_mac_count: u64,
    pub pack_ops: u64,
    pub quant_ops: u64,
}

impl AddAssign for KernelStats {
    fn add_assign(&mut self, o: Self) {
        self.dotp_count += o.dotp_count;
        self.scalar_mac_count += o.scalar_mac_count;
        self.pack_ops += o.pack_ops;
        self.quant_ops += o.quant_ops;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i32>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::Dims(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(IntMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.cols + c]
    }
}

/// Checks every element is representable at `bits` (full two's-complement
/// range; `{-1, +1}` for one bit).
pub fn check_range(data: &[i32], bits: u8) -> Result<(), KernelError> {
    for (i, &v) in data.iter().enumerate() {
        if quant::encode(v, bits).is_none() {
            return Err(QuantError::OutOfRange {
                index: i,
                value: v,
                bits,
            }
            .into());
        }
    }
    Ok(())
}

/// Scalar reference GEMM: `out[m][n] = sum_k a[m][k] * w[n][k]` with 32-bit
/// overflow detection.
pub fn matmul_ref(a: &IntMatrix, w: &IntMatrix, bw: u8, ba: u8) -> Result<(IntMatrix, KernelStats), KernelError> {
    if a.cols != w.cols {
        return Err(KernelError::Dims(format!(
            "activation K {} != weight K {}",
            a.cols, w.cols
        )));
    }
    check_range(&a.data, ba)?;
    check_range(&w.data, bw)?;
    let mut out = IntMatrix::zeros(a.rows, w.rows);
    for m in 0..a.rows {
        let ar = a.row(m);
        for n in 0..w.rows {
            let mut acc = 0i32;
            for (x, y) in ar.iter().zip(w.row(n)) {
                acc = x
                    .checked_mul(*y)
                    .and_then(|p| acc.checked_add(p))
                    .ok_or(KernelError::Overflow { row: m, col: n })?;
            }
            out.data[m * w.rows + n] = acc;
        }
    }
    let stats = KernelStats {
        scalar_mac_count: (a.rows * w.rows * a.cols) as u64,
        ..Default::default()
    };
    Ok((out, stats))
}

/// Rows packed `lanes` elements per word, each row padded to whole words
/// with zero fields (which decode to 0, or to +1 at one bit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMatrix {
    pub rows: usize,
    pub k: usize,
    pub bits: u8,
    pub lanes: usize,
    pub words_per_row: usize,
    pub words: Vec<u32>,
}

impl PackedMatrix {
    pub fn row(&self, r: usize) -> &[u32] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }
}

pub fn pack_matrix(m: &IntMatrix, bits: u8, lanes: usize) -> Result<PackedMatrix, KernelError> {
    let wpr = m.cols.div_ceil(lanes);
    let mut words = Vec::with_capacity(m.rows * wpr);
    for r in 0..m.rows {
        let mut row = quant::pack_lanes(m.row(r), bits, lanes)?;
        row.resize(wpr, 0);
        words.extend_from_slice(&row);
    }
    Ok(PackedMatrix {
        rows: m.rows,
        k: m.cols,
        bits,
        lanes,
        words_per_row: wpr,
        words,
    })
}

/// Packed GEMM on `dotp`. The operand with more bits goes to rs1 (and the
/// output keeps the `activation x weight` orientation either way). For
/// `DotP.1x1` the zero pad fields both decode to +1, so the pad count is
/// subtracted from each accumulator.
pub fn matmul_packed(a: &PackedMatrix, w: &PackedMatrix) -> Result<(IntMatrix, KernelStats), KernelError> {
    if a.k != w.k {
        return Err(KernelError::Dims(format!("activation K {} != weight K {}", a.k, w.k)));
    }
    let op = DotPOp::for_pair(w.bits, a.bits)?;
    if a.lanes != op.lanes() || w.lanes != op.lanes() {
        return Err(KernelError::Dims(format!(
            "{op} needs {} lanes, operands packed with {} / {}",
            op.lanes(),
            a.lanes,
            w.lanes
        )));
    }
    let wpr = a.words_per_row;
    let pad = (wpr * op.lanes() - a.k) as i32;
    let pad_correction = if op.rs1_bits() == 1 { pad } else { 0 };
    let weight_in_rs1 = w.bits >= a.bits;
    let mut out = IntMatrix::zeros(a.rows, w.rows);
    for m in 0..a.rows {
        let ar = a.row(m);
        for n in 0..w.rows {
            let wr = w.row(n);
            let mut acc = 0i32;
            for (&x, &y) in ar.iter().zip(wr) {
                let d = if weight_in_rs1 { dotp(op, y, x) } else { dotp(op, x, y) };
                acc = acc.checked_add(d).ok_or(KernelError::Overflow { row: m, col: n })?;
            }
            out.data[m * w.rows + n] = acc - pad_correction;
        }
    }
    let stats = KernelStats {
        dotp_count: (a.rows * w.rows * wpr) as u64,
        scalar_mac_count: (a.rows * w.rows * a.k) as u64,
        ..Default::default()
    };
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ref,
    Packed,
}

/// GEMM dispatch; the packed variant packs both operands first (counted in
/// `pack_ops` as words written).
pub fn matmul(
    a: &IntMatrix,
    w: &IntMatrix,
    bw: u8,
    ba: u8,
    variant: Variant,
) -> Result<(IntMatrix, KernelStats), KernelError> {
    match variant {
        Variant::Ref => matmul_ref(a, w, bw, ba),
        Variant::Packed => {
            let op = DotPOp::for_pair(bw, ba)?;
            let pa = pack_matrix(a, ba, op.lanes())?;
            let pw = pack_matrix(w, bw, op.lanes())?;
            let (out, mut stats) = matmul_packed(&pa, &pw)?;
            stats.pack_ops += (pa.words.len() + pw.words.len()) as u64;
            Ok((out, stats))
        }
    }
}

/// Quantized value used for spatial zero padding: 0, or +1 when the
/// activations are binary (0 is not representable there).
pub fn pad_value(ba: u8) -> i32 {
    if ba == 1 {
        1
    } else {
        0
    }
}

/// Lowers a `[C, H, W]` input to a `(OH*OW) x (C*KH*KW)` patch matrix, column
/// order `(c, ky, kx)` to match `[OC, C, KH, KW]` weights.
pub fn im2col(x: &[i32], layer: &LayerDesc, pad_fill: i32) -> Result<IntMatrix, KernelError> {
    if layer.kind != LayerKind::Conv2d {
        return Err(KernelError::Dims("im2col on a non-conv layer".into()));
    }
    let (c, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    if x.len() != c * h * w {
        return Err(KernelError::Dims(format!(
            "conv input has {} elements, expected {}",
            x.len(),
            c * h * w
        )));
    }
    let [kh, kw] = layer.kernel.unwrap();
    let (oh, ow) = (layer.out_shape[1], layer.out_shape[2]);
    let (s, p) = (layer.stride as isize, layer.pad as isize);
    let k = c * kh * kw;
    let mut m = IntMatrix::zeros(oh * ow, k);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut m.data[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            let mut col = 0;
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = oy as isize * s + ky as isize - p;
                        let ix = ox as isize * s + kx as isize - p;
                        row[col] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            x[ci * h * w + iy as usize * w + ix as usize]
                        } else {
                            pad_fill
                        };
                        col += 1;
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Conv2D via im2col and the selected GEMM variant. Input `[C, H, W]`,
/// weights `[OC, C, KH, KW]`, output `[OC, OH, OW]`.
pub fn conv2d(
    x: &[i32],
    w: &[i32],
    layer: &LayerDesc,
    bw: u8,
    ba: u8,
    variant: Variant,
) -> Result<(Vec<i32>, KernelStats), KernelError> {
    if w.len() != layer.weight_count {
        return Err(KernelError::Dims(format!(
            "conv weight has {} elements, expected {}",
            w.len(),
            layer.weight_count
        )));
    }
    let cols = im2col(x, layer, pad_value(ba))?;
    let wm = IntMatrix::new(layer.gemm_n(), layer.gemm_k(), w.to_vec())?;
    let (out, stats) = matmul(&cols, &wm, bw, ba, variant)?;
    Ok((transpose(&out), stats))
}

/// `M x N` (position-major) to `N x M` (channel-major).
pub fn transpose(m: &IntMatrix) -> Vec<i32> {
    let mut t = vec![0; m.data.len()];
    for r in 0..m.rows {
        for c in 0..m.cols {
            t[c * m.rows + r] = m.data[r * m.cols + c];
        }
    }
    t
}
