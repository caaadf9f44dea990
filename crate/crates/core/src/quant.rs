//! Symmetric per-tensor quantization, fake-quant with a straight-through
//! estimator, and sub-byte packing into little-endian 32-bit words.
//!
//! Integer range for `b >= 2` is `[-(2^(b-1)-1), 2^(b-1)-1]`; `-2^(b-1)` is
//! never produced by the quantizer. One-bit values are `{-1, +1}` with the
//! encoding `+1 -> 0`, `-1 -> 1`.
//!
//! All float math here is written so that an f32 instantiation performs the
//! exact same IEEE operations, in the same order, as the native runtime.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuantError {
    #[error("value {value} at index {index} does not fit in {bits} bits")]
    OutOfRange { index: usize, value: i32, bits: u8 },
    #[error("cannot pack {0}-bit elements (only 1, 2, 4, 8)")]
    UnpackableBits(u8),
    #[error("{lanes} lanes of {bits} bits do not fit in a 32-bit word")]
    BadLanes { bits: u8, lanes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams<F = f32> {
    pub bits: u8,
    pub scale: F,
}

/// Largest magnitude representable at `bits` (1 for binary).
pub fn qmax(bits: u8) -> i32 {
    if bits <= 1 {
        1
    } else {
        (1 << (bits - 1)) - 1
    }
}

/// Bits actually used for storage / compute: 5, 6 and 7 widen to 8.
pub fn storage_bits(bits: u8) -> u8 {
    match bits {
        1 | 2 | 4 | 8 => bits,
        _ => 8,
    }
}

/// Scale for symmetric quantization. For `bits >= 2` this is
/// `max|x| / qmax(bits)`; for one bit it is `mean|x|`. An all-zero (or empty)
/// tensor gets scale 1.
pub fn compute_scale<F: Float>(x: &[F], bits: u8) -> QuantParams<F> {
    let scale = if bits <= 1 {
        let mut sum = F::zero();
        for &v in x {
            sum = sum + v.abs();
        }
        if x.is_empty() {
            F::zero()
        } else {
            sum / F::from(x.len()).unwrap()
        }
    } else {
        let mut m = F::zero();
        for &v in x {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        m / F::from(qmax(bits)).unwrap()
    };
    let scale = if scale > F::zero() && scale.is_finite() {
        scale
    } else {
        F::one()
    };
    QuantParams { bits, scale }
}

pub fn quantize<F: Float>(x: &[F], p: &QuantParams<F>) -> Vec<i32> {
    if p.bits <= 1 {
        return x.iter().map(|&v| if v >= F::zero() { 1 } else { -1 }).collect();
    }
    let hi = qmax(p.bits);
    x.iter()
        .map(|&v| {
            // Float::round is half away from zero.
            let r = (v / p.scale).round();
            let r = r.max(F::from(-hi).unwrap()).min(F::from(hi).unwrap());
            r.to_i32().unwrap_or(0)
        })
        .collect()
}

pub fn dequantize<F: Float>(q: &[i32], p: &QuantParams<F>) -> Vec<F> {
    q.iter().map(|&v| F::from(v).unwrap() * p.scale).collect()
}

/// Forward value and backward mask of a fake-quant node.
#[derive(Debug, Clone)]
pub struct FakeQuant<F> {
    pub values: Vec<F>,
    pub params: QuantParams<F>,
    /// Coordinates whose gradient passes through (inside the clamp range).
    pub pass: Vec<bool>,
}

impl<F: Float> FakeQuant<F> {
    /// Straight-through estimator: copies `grad_out` where the input was in
    /// range, zero elsewhere. The scale is treated as a constant.
    pub fn backward(&self, grad_out: &[F]) -> Vec<F> {
        grad_out
            .iter()
            .zip(&self.pass)
            .map(|(&g, &p)| if p { g } else { F::zero() })
            .collect()
    }
}

pub fn fake_quant<F: Float>(x: &[F], bits: u8) -> FakeQuant<F> {
    let params = compute_scale(x, bits);
    let q = quantize(x, &params);
    let values = dequantize(&q, &params);
    let pass = if bits <= 1 {
        vec![true; x.len()]
    } else {
        // A small relative slack keeps the max element itself in range.
        let limit = params.scale * F::from(qmax(bits)).unwrap();
        let slack = limit * F::from(1e-6).unwrap();
        x.iter().map(|v| v.abs() <= limit + slack).collect()
    };
    FakeQuant { values, params, pass }
}

/// Elements packed into 32-bit words, element `i` at bit offset
/// `(i * bits) % 32` of word `i * bits / 32`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    pub bits: u8,
    pub len: usize,
    pub words: Vec<u32>,
}

/// Encodes one value as a `bits`-wide field.
pub fn encode(value: i32, bits: u8) -> Option<u32> {
    match bits {
        1 => match value {
            1 => Some(0),
            -1 => Some(1),
            _ => None,
        },
        2..=8 => {
            let lo = -(1 << (bits - 1));
            let hi = (1 << (bits - 1)) - 1;
            (lo..=hi)
                .contains(&value)
                .then(|| (value as u32) & ((1u32 << bits) - 1))
        }
        _ => None,
    }
}

/// Decodes a `bits`-wide field (already shifted down) to a signed value.
#[inline]
pub fn decode(field: u32, bits: u8) -> i32 {
    if bits == 1 {
        1 - 2 * (field & 1) as i32
    } else {
        let shift = 32 - bits as u32;
        ((field << shift) as i32) >> shift
    }
}

/// Packs `q` placing `lanes` fields of `bits` bits in each word, starting a
/// fresh word every `lanes` elements. With `lanes * bits == 32` this is the
/// dense layout of [`pack`]. Unused bits are zero.
pub fn pack_lanes(q: &[i32], bits: u8, lanes: usize) -> Result<Vec<u32>, QuantError> {
    if !matches!(bits, 1 | 2 | 4 | 8) {
        return Err(QuantError::UnpackableBits(bits));
    }
    if lanes == 0 || lanes * bits as usize > 32 {
        return Err(QuantError::BadLanes { bits, lanes });
    }
    let mut words = vec![0u32; q.len().div_ceil(lanes)];
    for (i, &v) in q.iter().enumerate() {
        let f = encode(v, bits).ok_or(QuantError::OutOfRange {
            index: i,
            value: v,
            bits,
        })?;
        words[i / lanes] |= f << ((i % lanes) * bits as usize);
    }
    Ok(words)
}

pub fn unpack_lanes(words: &[u32], bits: u8, lanes: usize, len: usize) -> Vec<i32> {
    let mask = if bits >= 32 { u32::MAX } else { (1u32 << bits) - 1 };
    (0..len)
        .map(|i| {
            let w = words[i / lanes];
            decode((w >> ((i % lanes) * bits as usize)) & mask, bits)
        })
        .collect()
}

pub fn pack(q: &[i32], bits: u8) -> Result<PackedTensor, QuantError> {
    if !matches!(bits, 1 | 2 | 4 | 8) {
        return Err(QuantError::UnpackableBits(bits));
    }
    let words = pack_lanes(q, bits, 32 / bits as usize)?;
    Ok(PackedTensor {
        bits,
        len: q.len(),
        words,
    })
}

pub fn unpack(p: &PackedTensor) -> Vec<i32> {
    unpack_lanes(&p.words, p.bits, 32 / p.bits as usize, p.len)
}

/// Largest magnitude stored for integer biases. Kept below 2^24 so every
/// stored value converts to f32 exactly.
pub const BIAS_QMAX: i32 = (1 << 23) - 1;

/// Quantizes a bias vector to 32-bit integers at its own scale.
pub fn quantize_bias(b: &[f32]) -> (f32, Vec<i32>) {
    let mut m = 0.0f32;
    for &v in b {
        m = m.max(v.abs());
    }
    let scale = if m > 0.0 { m / BIAS_QMAX as f32 } else { 1.0 };
    let q = b
        .iter()
        .map(|&v| (v / scale).round().clamp(-BIAS_QMAX as f32, BIAS_QMAX as f32) as i32)
        .collect();
    (scale, q)
}

/// Bound applied when folding a bias into the accumulator domain.
pub const FOLDED_BIAS_LIMIT: f32 = 1_073_741_824.0; // 2^30

/// Rescales integer biases into the `s_w * s_a` accumulator domain:
/// `round((q_b * s_b) / (s_w * s_a))`, clamped to ±2^30.
pub fn fold_bias(q_b: &[i32], bias_scale: f32, w_scale: f32, a_scale: f32) -> Vec<i32> {
    let prod = w_scale * a_scale;
    q_b.iter()
        .map(|&q| {
            let v = ((q as f32) * bias_scale) / prod;
            v.round().clamp(-FOLDED_BIAS_LIMIT, FOLDED_BIAS_LIMIT) as i32
        })
        .collect()
}
