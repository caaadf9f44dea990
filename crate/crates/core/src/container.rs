//! The `MICO` tensor container shared by weights, quantized weights, datasets
//! and input tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MICO" | version u32 | count u32 | tensor*
//! tensor := layer u32 | role u8 | rank u8 | dims u32[rank] | payload
//! ```
//!
//! Payload by role:
//!
//! | role | meaning                 | payload                                        |
//! |------|-------------------------|------------------------------------------------|
//! | 0    | float weight            | f32[n]                                         |
//! | 1    | float bias              | f32[n]                                         |
//! | 2    | packed quantized weight | bits u8, lanes u8, scale f32, u32[rows·wpr]    |
//! | 3    | integer bias            | bits u8 (=32), scale f32, i32[n]               |
//! | 4    | dataset tensor          | f32[n]                                         |
//! | 5    | input tensor            | f32[n]                                         |
//!
//! For role 2 the last dim is the packed (reduction) axis: `rows` is the
//! product of the leading dims and `wpr = ceil(last_dim / lanes)`.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MICO";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("unknown tensor role {0}")]
    BadRole(u8),
    #[error("truncated container")]
    Truncated,
    #[error("payload does not match dims for tensor {index}: {reason}")]
    Shape { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Weight = 0,
    Bias = 1,
    PackedWeight = 2,
    IntBias = 3,
    Dataset = 4,
    Input = 5,
}

impl Role {
    fn from_u8(v: u8) -> Result<Self, ContainerError> {
        Ok(match v {
            0 => Role::Weight,
            1 => Role::Bias,
            2 => Role::PackedWeight,
            3 => Role::IntBias,
            4 => Role::Dataset,
            5 => Role::Input,
            other => return Err(ContainerError::BadRole(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    Packed {
        bits: u8,
        lanes: u8,
        scale: f32,
        words: Vec<u32>,
    },
    IntBias {
        scale: f32,
        data: Vec<i32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub layer: u32,
    pub role: Role,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl Tensor {
    pub fn f32(layer: u32, role: Role, dims: Vec<u32>, data: Vec<f32>) -> Self {
        Tensor {
            layer,
            role,
            dims,
            payload: Payload::F32(data),
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.payload {
            Payload::F32(v) => Some(v),
            _ => None,
        }
    }

    /// Number of u32 words a packed tensor with these dims occupies.
    pub fn packed_word_count(dims: &[u32], lanes: u8) -> usize {
        let k = dims.last().copied().unwrap_or(0) as usize;
        let rows: usize = dims[..dims.len().saturating_sub(1)]
            .iter()
            .map(|&d| d as usize)
            .product();
        rows * k.div_ceil(lanes.max(1) as usize)
    }

    fn validate(&self, index: usize) -> Result<(), ContainerError> {
        let n = self.element_count();
        let bad = |reason: String| ContainerError::Shape { index, reason };
        match (&self.payload, self.role) {
            (Payload::F32(v), Role::Weight | Role::Bias | Role::Dataset | Role::Input) => {
                if v.len() != n {
                    return Err(bad(format!("{} floats for {} elements", v.len(), n)));
                }
            }
            (Payload::Packed { lanes, words, bits, .. }, Role::PackedWeight) => {
                if *lanes == 0 || *bits == 0 || *bits > 8 || (*lanes as u32) * (*bits as u32) > 32 {
                    return Err(bad(format!("invalid bits {bits} / lanes {lanes}")));
                }
                let want = Self::packed_word_count(&self.dims, *lanes);
                if words.len() != want {
                    return Err(bad(format!("{} words, expected {}", words.len(), want)));
                }
            }
            (Payload::IntBias { data, .. }, Role::IntBias) => {
                if data.len() != n {
                    return Err(bad(format!("{} ints for {} elements", data.len(), n)));
                }
            }
            _ => return Err(bad("payload kind does not match role".into())),
        }
        Ok(())
    }
}

/// An ordered set of tensors, serialized in the `MICO` container format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    pub fn find(&self, layer: u32, role: Role) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.layer == layer && t.role == role)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (i, t) in self.tensors.iter().enumerate() {
            t.validate(i)?;
            out.extend_from_slice(&t.layer.to_le_bytes());
            out.push(t.role as u8);
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Packed {
                    bits,
                    lanes,
                    scale,
                    words,
                } => {
                    out.push(*bits);
                    out.push(*lanes);
                    out.extend_from_slice(&scale.to_le_bytes());
                    words.iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes()));
                }
                Payload::IntBias { scale, data } => {
                    out.push(32);
                    out.extend_from_slice(&scale.to_le_bytes());
                    data.iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes()));
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ContainerError::BadVersion(version));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for index in 0..count {
            let layer = r.u32()?;
            let role = Role::from_u8(r.u8()?)?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().map(|&d| d as usize).product();
            let payload = match role {
                Role::Weight | Role::Bias | Role::Dataset | Role::Input => {
                    Payload::F32((0..n).map(|_| r.f32()).collect::<Result<_, _>>()?)
                }
                Role::PackedWeight => {
                    let bits = r.u8()?;
                    let lanes = r.u8()?;
                    let scale = r.f32()?;
                    if lanes == 0 {
                        return Err(ContainerError::Shape {
                            index,
                            reason: "zero lanes".into(),
                        });
                    }
                    let wc = Tensor::packed_word_count(&dims, lanes);
                    let words = (0..wc).map(|_| r.u32()).collect::<Result<_, _>>()?;
                    Payload::Packed {
                        bits,
                        lanes,
                        scale,
                        words,
                    }
                }
                Role::IntBias => {
                    let _bits = r.u8()?;
                    let scale = r.f32()?;
                    let data = (0..n).map(|_| r.u32().map(|v| v as i32)).collect::<Result<_, _>>()?;
                    Payload::IntBias { scale, data }
                }
            };
            let t = Tensor {
                layer,
                role,
                dims,
                payload,
            };
            t.validate(index)?;
            tensors.push(t);
        }
        Ok(Container { tensors })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ContainerError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ContainerError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::Truncated)?;
        if end > self.buf.len() {
            return Err(ContainerError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
