//! Deployment back-end: a static-arena kernel-call plan, a byte-level
//! reference executor for it, and C source emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, Payload, Role, Tensor};
use crate::engine::{self, EngineError, QuantizedModel};
use crate::kernels::{self, IntMatrix, KernelError, PackedMatrix};
use crate::model_ir::{BitPair, LayerKind, NetworkIR, QuantScheme};
use crate::quant;

pub const ARENA_ALIGN: usize = 4;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("plan has no kernel calls")]
    EmptyPlan,
    #[error("weights: {0}")]
    Weights(String),
    #[error("input has {got} elements, expected {want}")]
    Input { got: usize, want: usize },
    #[error("arena overflow: buffer {name} ends at {end}, arena is {arena} bytes")]
    Arena { name: String, end: usize, arena: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Elem {
    F32,
    I8,
    I32,
    U32,
}

impl Elem {
    pub fn size(self) -> usize {
        match self {
            Elem::I8 => 1,
            _ => 4,
        }
    }

    fn c_type(self) -> &'static str {
        match self {
            Elem::F32 => "float",
            Elem::I8 => "int8_t",
            Elem::I32 => "int32_t",
            Elem::U32 => "uint32_t",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub elem: Elem,
    pub len: usize,
    pub bytes: usize,
    /// Live from op `first` to op `last`, inclusive.
    pub first: usize,
    pub last: usize,
    pub offset: usize,
}

impl Buffer {
    pub fn end(&self) -> usize {
        self.offset + self.bytes
    }

    pub fn overlaps_in_time(&self, o: &Buffer) -> bool {
        self.first <= o.last && o.first <= self.last
    }

    pub fn overlaps_in_space(&self, o: &Buffer) -> bool {
        self.offset < o.end() && o.offset < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// One runtime call. Buffer fields index `DeployPlan::buffers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Quantize {
        layer: usize,
        src: usize,
        dst: usize,
        len: usize,
        bits: u8,
    },
    Im2col {
        layer: usize,
        src: usize,
        dst: usize,
        geom: ConvGeom,
        pad_value: i32,
    },
    Pack {
        layer: usize,
        src: usize,
        dst: usize,
        rows: usize,
        k: usize,
        bits: u8,
        lanes: usize,
    },
    MatMul {
        layer: usize,
        a: usize,
        dst: usize,
        rows: usize,
        k: usize,
        n: usize,
        abits: u8,
    },
    BiasAdd {
        layer: usize,
        acc: usize,
        rows: usize,
        n: usize,
    },
    Dequantize {
        layer: usize,
        src: usize,
        dst: usize,
        rows: usize,
        n: usize,
        relu: bool,
        transpose: bool,
    },
    Output {
        layer: usize,
        src: usize,
        dst: usize,
        rows: usize,
        n: usize,
        transpose: bool,
    },
}

impl Op {
    fn reads(&self) -> Vec<usize> {
        match *self {
            Op::Quantize { src, .. }
            | Op::Im2col { src, .. }
            | Op::Pack { src, .. }
            | Op::Dequantize { src, .. }
            | Op::Output { src, .. } => vec![src],
            Op::MatMul { a, .. } => vec![a],
            Op::BiasAdd { acc, .. } => vec![acc],
        }
    }

    fn writes(&self) -> Option<usize> {
        match *self {
            Op::Quantize { dst, .. }
            | Op::Im2col { dst, .. }
            | Op::Pack { dst, .. }
            | Op::MatMul { dst, .. }
            | Op::Dequantize { dst, .. }
            | Op::Output { dst, .. } => Some(dst),
            Op::BiasAdd { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub index: usize,
    pub kind: LayerKind,
    pub requested: BitPair,
    pub wbits: u8,
    pub abits: u8,
    pub lanes: usize,
    pub rows: usize,
    pub k: usize,
    pub n: usize,
    pub widened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployPlan {
    pub network: String,
    pub layers: Vec<LayerPlan>,
    pub ops: Vec<Op>,
    pub buffers: Vec<Buffer>,
    pub arena_bytes: usize,
    pub input: usize,
    pub output: usize,
    pub notes: Vec<String>,
}

impl DeployPlan {
    pub fn input_len(&self) -> usize {
        self.buffers[self.input].len
    }

    pub fn output_len(&self) -> usize {
        self.buffers[self.output].len
    }

    /// Largest sum of bytes live at any single op.
    pub fn peak_live_bytes(&self) -> usize {
        (0..self.ops.len())
            .map(|t| {
                self.buffers
                    .iter()
                    .filter(|b| b.first <= t && t <= b.last)
                    .map(|b| b.bytes)
                    .sum()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn check_arena(&self) -> Result<(), CodegenError> {
        for (i, a) in self.buffers.iter().enumerate() {
            if a.end() > self.arena_bytes {
                return Err(CodegenError::Arena {
                    name: a.name.clone(),
                    end: a.end(),
                    arena: self.arena_bytes,
                });
            }
            for b in &self.buffers[i + 1..] {
                if a.overlaps_in_time(b) && a.overlaps_in_space(b) {
                    return Err(CodegenError::Arena {
                        name: format!("{}/{}", a.name, b.name),
                        end: a.end().max(b.end()),
                        arena: self.arena_bytes,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn kernel_calls(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, Op::MatMul { .. })).count()
    }
}

struct Builder {
    buffers: Vec<Buffer>,
    ops: Vec<Op>,
}

impl Builder {
    fn buffer(&mut self, name: String, elem: Elem, len: usize) -> usize {
        self.buffers.push(Buffer {
            name,
            elem,
            len,
            bytes: (len * elem.size()).div_ceil(ARENA_ALIGN) * ARENA_ALIGN,
            first: usize::MAX,
            last: 0,
            offset: 0,
        });
        self.buffers.len() - 1
    }

    fn op(&mut self, op: Op) {
        let t = self.ops.len();
        for b in op.reads().into_iter().chain(op.writes()) {
            let buf = &mut self.buffers[b];
            buf.first = buf.first.min(t);
            buf.last = buf.last.max(t);
        }
        self.ops.push(op);
    }
}

/// Greedy interval first-fit: largest buffers first, each at the lowest
/// aligned offset free for its whole lifetime.
pub fn allocate(buffers: &mut [Buffer]) -> usize {
    let mut order: Vec<usize> = (0..buffers.len()).collect();
    order.sort_by(|&a, &b| {
        buffers[b]
            .bytes
            .cmp(&buffers[a].bytes)
            .then(buffers[a].first.cmp(&buffers[b].first))
            .then(a.cmp(&b))
    });
    let mut placed: Vec<usize> = Vec::new();
    let mut arena = 0;
    for i in order {
        let mut busy: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&p| buffers[p].overlaps_in_time(&buffers[i]))
            .map(|&p| (buffers[p].offset, buffers[p].end()))
            .collect();
        busy.sort_unstable();
        let mut off = 0;
        for (s, e) in busy {
            if off + buffers[i].bytes <= s {
                break;
            }
            off = off.max(e);
        }
        buffers[i].offset = off;
        arena = arena.max(buffers[i].end());
        placed.push(i);
    }
    arena
}

pub fn build_plan(model: &QuantizedModel) -> Result<DeployPlan, CodegenError> {
    if model.layers.is_empty() {
        return Err(CodegenError::EmptyPlan);
    }
    let mut b = Builder {
        buffers: Vec::new(),
        ops: Vec::new(),
    };
    let first = &model.layers[0].desc;
    let input = b.buffer("input".into(), Elem::F32, first.activation_count);
    let mut cur = input;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut notes = Vec::new();
    let mut output = input;
    let n_layers = model.layers.len();
    for (i, l) in model.layers.iter().enumerate() {
        let d = &l.desc;
        let (rows, k, n) = (d.gemm_rows(), d.gemm_k(), d.gemm_n());
        let lanes = l.op.lanes();
        if l.widened() {
            notes.push(format!(
                "layer {i}: W{}A{} computed as W{}A{}",
                l.pair.w, l.pair.a, l.wbits, l.abits
            ));
        }
        layers.push(LayerPlan {
            index: i,
            kind: d.kind,
            requested: l.pair,
            wbits: l.wbits,
            abits: l.abits,
            lanes,
            rows,
            k,
            n,
            widened: l.widened(),
        });
        let q = b.buffer(format!("q{i}"), Elem::I8, d.activation_count);
        b.op(Op::Quantize {
            layer: i,
            src: cur,
            dst: q,
            len: d.activation_count,
            bits: l.pair.a,
        });
        let gemm_in = match d.kind {
            LayerKind::Linear => q,
            LayerKind::Conv2d => {
                let [kh, kw] = d.kernel.expect("conv layers carry a kernel");
                let geom = ConvGeom {
                    c: d.in_shape[0],
                    h: d.in_shape[1],
                    w: d.in_shape[2],
                    kh,
                    kw,
                    stride: d.stride,
                    pad: d.pad,
                    oh: d.out_shape[1],
                    ow: d.out_shape[2],
                };
                let col = b.buffer(format!("col{i}"), Elem::I8, rows * k);
                b.op(Op::Im2col {
                    layer: i,
                    src: q,
                    dst: col,
                    geom,
                    pad_value: kernels::pad_value(l.abits),
                });
                col
            }
        };
        let pk = b.buffer(format!("pk{i}"), Elem::U32, rows * k.div_ceil(lanes));
        b.op(Op::Pack {
            layer: i,
            src: gemm_in,
            dst: pk,
            rows,
            k,
            bits: l.abits,
            lanes,
        });
        let acc = b.buffer(format!("acc{i}"), Elem::I32, rows * n);
        b.op(Op::MatMul {
            layer: i,
            a: pk,
            dst: acc,
            rows,
            k,
            n,
            abits: l.abits,
        });
        b.op(Op::BiasAdd { layer: i, acc, rows, n });
        let transpose = d.kind == LayerKind::Conv2d;
        if i + 1 == n_layers {
            let out = b.buffer("logits".into(), Elem::I32, rows * n);
            b.op(Op::Output {
                layer: i,
                src: acc,
                dst: out,
                rows,
                n,
                transpose,
            });
            output = out;
        } else {
            let y = b.buffer(format!("act{i}"), Elem::F32, rows * n);
            b.op(Op::Dequantize {
                layer: i,
                src: acc,
                dst: y,
                rows,
                n,
                relu: d.relu,
                transpose,
            });
            cur = y;
        }
    }
    // The caller fills the input before the first op and reads the logits after the last.
    let last = b.ops.len() - 1;
    b.buffers[input].first = 0;
    b.buffers[output].last = last;
    let arena_bytes = allocate(&mut b.buffers);
    let plan = DeployPlan {
        network: model.name.clone(),
        layers,
        ops: b.ops,
        buffers: b.buffers,
        arena_bytes,
        input,
        output,
        notes,
    };
    plan.check_arena()?;
    Ok(plan)
}

/// Quantized weights: per layer a role-2 packed `[N, K]` weight (with its
/// scale) and a role-3 integer bias.
pub fn weights_container(model: &QuantizedModel) -> Container {
    let mut c = Container::new();
    for (i, l) in model.layers.iter().enumerate() {
        c.push(Tensor {
            layer: i as u32,
            role: Role::PackedWeight,
            dims: vec![l.weight.rows as u32, l.weight.k as u32],
            payload: Payload::Packed {
                bits: l.wbits,
                lanes: l.weight.lanes as u8,
                scale: l.w_scale,
                words: l.weight.words.clone(),
            },
        });
        c.push(Tensor {
            layer: i as u32,
            role: Role::IntBias,
            dims: vec![l.bias.len() as u32],
            payload: Payload::IntBias {
                scale: l.bias_scale,
                data: l.bias.clone(),
            },
        });
    }
    c
}

struct LayerWeightsView {
    weight: PackedMatrix,
    w_scale: f32,
    bias: Vec<i32>,
    bias_scale: f32,
}

fn layer_weights(c: &Container, lp: &LayerPlan) -> Result<LayerWeightsView, CodegenError> {
    let li = lp.index as u32;
    let w = c
        .find(li, Role::PackedWeight)
        .ok_or_else(|| CodegenError::Weights(format!("layer {li}: no packed weight")))?;
    let b = c
        .find(li, Role::IntBias)
        .ok_or_else(|| CodegenError::Weights(format!("layer {li}: no integer bias")))?;
    let (
        Payload::Packed {
            bits,
            lanes,
            scale,
            words,
        },
        Payload::IntBias { scale: bs, data },
    ) = (&w.payload, &b.payload)
    else {
        return Err(CodegenError::Weights(format!("layer {li}: payload kinds")));
    };
    if w.dims != [lp.n as u32, lp.k as u32] || *bits != lp.wbits || *lanes as usize != lp.lanes || data.len() != lp.n {
        return Err(CodegenError::Weights(format!(
            "layer {li}: tensor does not match the plan"
        )));
    }
    Ok(LayerWeightsView {
        weight: PackedMatrix {
            rows: lp.n,
            k: lp.k,
            bits: *bits,
            lanes: lp.lanes,
            words_per_row: lp.k.div_ceil(lp.lanes),
            words: words.clone(),
        },
        w_scale: *scale,
        bias: data.clone(),
        bias_scale: *bs,
    })
}

struct Arena {
    bytes: Vec<u8>,
}

impl Arena {
    fn word(&self, off: usize) -> [u8; 4] {
        self.bytes[off..off + 4].try_into().expect("4 bytes")
    }

    fn f32s(&self, b: &Buffer) -> Vec<f32> {
        (0..b.len)
            .map(|i| f32::from_le_bytes(self.word(b.offset + 4 * i)))
            .collect()
    }

    fn i32s(&self, b: &Buffer) -> Vec<i32> {
        (0..b.len)
            .map(|i| i32::from_le_bytes(self.word(b.offset + 4 * i)))
            .collect()
    }

    fn u32s(&self, b: &Buffer) -> Vec<u32> {
        (0..b.len)
            .map(|i| u32::from_le_bytes(self.word(b.offset + 4 * i)))
            .collect()
    }

    fn i8s(&self, b: &Buffer) -> Vec<i32> {
        self.bytes[b.offset..b.offset + b.len]
            .iter()
            .map(|&v| v as i8 as i32)
            .collect()
    }

    fn put_words(&mut self, b: &Buffer, words: impl Iterator<Item = [u8; 4]>) {
        for (i, w) in words.enumerate().take(b.len) {
            self.bytes[b.offset + 4 * i..b.offset + 4 * i + 4].copy_from_slice(&w);
        }
    }

    fn put_i8s(&mut self, b: &Buffer, v: &[i32]) {
        for (i, &x) in v.iter().enumerate().take(b.len) {
            self.bytes[b.offset + i] = x as i8 as u8;
        }
    }
}

/// Runs the plan over a byte arena, reading weights from the container.
/// Produces the same integer logits as [`engine::infer`].
pub fn execute(plan: &DeployPlan, weights: &Container, x: &[f32]) -> Result<Vec<i32>, CodegenError> {
    if plan.ops.is_empty() {
        return Err(CodegenError::EmptyPlan);
    }
    if x.len() != plan.input_len() {
        return Err(CodegenError::Input {
            got: x.len(),
            want: plan.input_len(),
        });
    }
    let views = plan
        .layers
        .iter()
        .map(|lp| layer_weights(weights, lp))
        .collect::<Result<Vec<_>, _>>()?;
    let mut a_scale = vec![1.0f32; plan.layers.len()];
    let mut arena = Arena {
        bytes: vec![0; plan.arena_bytes],
    };
    let buf = |i: usize| &plan.buffers[i];
    arena.put_words(buf(plan.input), x.iter().map(|v| v.to_le_bytes()));
    for op in &plan.ops {
        match *op {
            Op::Quantize {
                layer, src, dst, bits, ..
            } => {
                let v = arena.f32s(buf(src));
                let p = quant::compute_scale(&v, bits);
                a_scale[layer] = p.scale;
                arena.put_i8s(buf(dst), &quant::quantize(&v, &p));
            }
            Op::Im2col {
                layer,
                src,
                dst,
                pad_value,
                ..
            } => {
                let q = arena.i8s(buf(src));
                let desc = conv_desc(&plan.layers[layer], op)?;
                let m = kernels::im2col(&q, &desc, pad_value)?;
                arena.put_i8s(buf(dst), &m.data);
            }
            Op::Pack {
                src,
                dst,
                rows,
                k,
                bits,
                lanes,
                ..
            } => {
                let m = IntMatrix::new(rows, k, arena.i8s(buf(src)))?;
                let p = kernels::pack_matrix(&m, bits, lanes)?;
                arena.put_words(buf(dst), p.words.iter().map(|w| w.to_le_bytes()));
            }
            Op::MatMul {
                layer,
                a,
                dst,
                rows,
                k,
                abits,
                ..
            } => {
                let lp = &plan.layers[layer];
                let packed = PackedMatrix {
                    rows,
                    k,
                    bits: abits,
                    lanes: lp.lanes,
                    words_per_row: k.div_ceil(lp.lanes),
                    words: arena.u32s(buf(a)),
                };
                let (acc, _) = kernels::matmul_packed(&packed, &views[layer].weight)?;
                arena.put_words(buf(dst), acc.data.iter().map(|v| v.to_le_bytes()));
            }
            Op::BiasAdd { layer, acc, rows, n } => {
                let v = &views[layer];
                let folded = quant::fold_bias(&v.bias, v.bias_scale, v.w_scale, a_scale[layer]);
                let mut data = arena.i32s(buf(acc));
                for r in 0..rows {
                    for (x, &b) in data[r * n..(r + 1) * n].iter_mut().zip(&folded) {
                        *x = x.saturating_add(b);
                    }
                }
                arena.put_words(buf(acc), data.iter().map(|v| v.to_le_bytes()));
            }
            Op::Dequantize {
                layer,
                src,
                dst,
                rows,
                n,
                relu,
                transpose,
            } => {
                let ints = layout(arena.i32s(buf(src)), rows, n, transpose)?;
                let s = views[layer].w_scale * a_scale[layer];
                let y = ints.into_iter().map(|v| {
                    let y = v as f32 * s;
                    if relu && y < 0.0 {
                        0.0f32
                    } else {
                        y
                    }
                });
                arena.put_words(buf(dst), y.map(|v| v.to_le_bytes()));
            }
            Op::Output {
                src,
                dst,
                rows,
                n,
                transpose,
                ..
            } => {
                let ints = layout(arena.i32s(buf(src)), rows, n, transpose)?;
                arena.put_words(buf(dst), ints.iter().map(|v| v.to_le_bytes()));
            }
        }
    }
    Ok(arena.i32s(buf(plan.output)))
}

fn layout(data: Vec<i32>, rows: usize, n: usize, transpose: bool) -> Result<Vec<i32>, CodegenError> {
    if transpose {
        Ok(kernels::transpose(&IntMatrix::new(rows, n, data)?))
    } else {
        Ok(data)
    }
}

fn conv_desc(lp: &LayerPlan, op: &Op) -> Result<crate::model_ir::LayerDesc, CodegenError> {
    let Op::Im2col { geom: g, .. } = op else {
        unreachable!("called for im2col ops only")
    };
    Ok(
        crate::model_ir::LayerDesc::conv2d(lp.index, [g.c, g.h, g.w], lp.n, [g.kh, g.kw], g.stride, g.pad)
            .map_err(EngineError::from)?,
    )
}

/// Quantizes and plans in one step.
pub fn prepare(network: &NetworkIR, scheme: &QuantScheme) -> Result<(QuantizedModel, DeployPlan), CodegenError> {
    let model = engine::quantize_model(network, scheme)?;
    let plan = build_plan(&model)?;
    Ok((model, plan))
}

pub const RUNTIME_HEADER: &str = include_str!("mico_rt.h");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedFile {
    pub name: String,
    /// Absent for the manifest itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenManifest {
    pub network: String,
    pub scheme: QuantScheme,
    pub arena_bytes: usize,
    pub kernel_calls: usize,
    pub widening: Vec<String>,
    pub files: Vec<EmittedFile>,
}

fn emit_model_h(plan: &DeployPlan) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "/* Generated for network {}. */", plan.network);
    s.push_str("#ifndef MICO_MODEL_H\n#define MICO_MODEL_H\n\n#include <stddef.h>\n#include <stdint.h>\n\n");
    let _ = writeln!(s, "#define MICO_MODEL_LAYERS {}", plan.layers.len());
    let _ = writeln!(s, "#define MICO_MODEL_INPUT_LEN {}", plan.input_len());
    let _ = writeln!(s, "#define MICO_MODEL_OUTPUT_LEN {}", plan.output_len());
    let _ = writeln!(s, "#define MICO_ARENA_BYTES {}", plan.arena_bytes);
    s.push_str(
        "\n/* Binds the weights blob (weights.bin contents); the blob must outlive the model. */\n\
         int mico_model_init(const uint8_t *blob, size_t len);\n\
         /* One inference: MICO_MODEL_INPUT_LEN floats in, MICO_MODEL_OUTPUT_LEN integer logits out. */\n\
         int mico_model_run(const float *input, int32_t *logits);\n\n#endif\n",
    );
    s
}

fn emit_model_c(plan: &DeployPlan) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "/* Generated for network {}. */", plan.network);
    s.push_str("#include <string.h>\n\n#include \"mico_rt.h\"\n#include \"model.h\"\n\n");
    s.push_str("static uint32_t arena[(MICO_ARENA_BYTES + 3) / 4];\n");
    s.push_str("#define BUF(type, off) ((type *)((uint8_t *)arena + (off)))\n\n");
    s.push_str("static rt_weights weights;\nstatic const rt_tensor *w[MICO_MODEL_LAYERS];\nstatic const rt_tensor *b[MICO_MODEL_LAYERS];\n\n");
    for b in &plan.buffers {
        let _ = writeln!(
            s,
            "/* {:<7} {:>5} x {:<8} @ {:>7}  ops {}..{} */",
            b.name,
            b.len,
            b.elem.c_type(),
            b.offset,
            b.first,
            b.last
        );
    }
    for o in &plan.ops {
        if let Op::Im2col { layer, geom: g, .. } = o {
            let _ = writeln!(
                s,
                "static const rt_conv_geom geom{layer} = {{{}, {}, {}, {}, {}, {}, {}, {}, {}}};",
                g.c, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.oh, g.ow
            );
        }
    }
    s.push_str("\nint mico_model_init(const uint8_t *blob, size_t len)\n{\n");
    s.push_str("    int rc = rt_load_weights(blob, len, &weights);\n    if (rc != RT_OK)\n        return rc;\n");
    s.push_str("    for (uint32_t i = 0; i < MICO_MODEL_LAYERS; i++) {\n");
    s.push_str("        w[i] = rt_find(&weights, i, RT_ROLE_PACKED_WEIGHT);\n");
    s.push_str("        b[i] = rt_find(&weights, i, RT_ROLE_INT_BIAS);\n");
    s.push_str("        if (!w[i] || !b[i])\n            return RT_ERR_MISSING;\n    }\n    return RT_OK;\n}\n\n");
    s.push_str("int mico_model_run(const float *input, int32_t *logits)\n{\n");
    s.push_str("    float s_a[MICO_MODEL_LAYERS];\n    int rc;\n\n");
    let bf = |i: usize| {
        let b = &plan.buffers[i];
        format!("BUF({}, {})", b.elem.c_type(), b.offset)
    };
    let _ = writeln!(
        s,
        "    memcpy({}, input, MICO_MODEL_INPUT_LEN * sizeof(float));",
        bf(plan.input)
    );
    let mut layer = usize::MAX;
    for op in &plan.ops {
        let l = match *op {
            Op::Quantize { layer, .. }
            | Op::Im2col { layer, .. }
            | Op::Pack { layer, .. }
            | Op::MatMul { layer, .. }
            | Op::BiasAdd { layer, .. }
            | Op::Dequantize { layer, .. }
            | Op::Output { layer, .. } => layer,
        };
        if l != layer {
            layer = l;
            let lp = &plan.layers[l];
            let _ = writeln!(
                s,
                "\n    /* layer {l}: {:?} W{}A{}{} */",
                lp.kind,
                lp.wbits,
                lp.abits,
                if lp.widened {
                    format!(" (requested W{}A{})", lp.requested.w, lp.requested.a)
                } else {
                    String::new()
                }
            );
        }
        let line = match *op {
            Op::Quantize {
                layer,
                src,
                dst,
                len,
                bits,
            } => format!("rt_quantize({}, {len}, {bits}, {}, &s_a[{layer}]);", bf(src), bf(dst)),
            Op::Im2col {
                layer,
                src,
                dst,
                pad_value,
                ..
            } => format!("rt_im2col({}, &geom{layer}, {pad_value}, {});", bf(src), bf(dst)),
            Op::Pack {
                src,
                dst,
                rows,
                k,
                bits,
                lanes,
                ..
            } => format!("rt_pack({}, {rows}, {k}, {bits}, {lanes}, {});", bf(src), bf(dst)),
            Op::MatMul {
                layer,
                a,
                dst,
                rows,
                k,
                abits,
                ..
            } => format!(
                "rc = rt_matmul({}, {rows}, {k}, {abits}, w[{layer}], {});\n    if (rc != RT_OK)\n        return rc;",
                bf(a),
                bf(dst)
            ),
            Op::BiasAdd { layer, acc, rows, n } => format!(
                "rt_bias_add({}, {rows}, {n}, b[{layer}], w[{layer}]->scale, s_a[{layer}]);",
                bf(acc)
            ),
            Op::Dequantize {
                layer,
                src,
                dst,
                rows,
                n,
                relu,
                transpose,
            } => format!(
                "rt_dequantize({}, {rows}, {n}, w[{layer}]->scale * s_a[{layer}], {}, {}, {});",
                bf(src),
                relu as u8,
                transpose as u8,
                bf(dst)
            ),
            Op::Output {
                src,
                dst,
                rows,
                n,
                transpose,
                ..
            } => format!("rt_output({}, {rows}, {n}, {}, {});", bf(src), transpose as u8, bf(dst)),
        };
        let _ = writeln!(s, "    {line}");
    }
    let _ = writeln!(
        s,
        "\n    memcpy(logits, {}, MICO_MODEL_OUTPUT_LEN * sizeof(int32_t));\n    return RT_OK;\n}}",
        bf(plan.output)
    );
    s
}

fn emit_main_c(plan: &DeployPlan, weights_bytes: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "/* Generated harness for network {}. */", plan.network);
    s.push_str("#include <stdio.h>\n\n#include \"mico_rt.h\"\n#include \"model.h\"\n\n");
    let _ = writeln!(s, "#define WEIGHTS_BYTES {weights_bytes}");
    s.push_str("#ifndef MICO_INPUT_MAX\n#define MICO_INPUT_MAX (4u << 20)\n#endif\n\n");
    s.push_str(
        r#"static uint8_t weights_blob[WEIGHTS_BYTES];
static uint8_t input_blob[MICO_INPUT_MAX];
static float row[MICO_MODEL_INPUT_LEN];
static int32_t logits[MICO_MODEL_OUTPUT_LEN];

static long read_file(const char *path, uint8_t *dst, size_t cap)
{
    FILE *f = fopen(path, "rb");
    if (!f)
        return -1;
    size_t n = fread(dst, 1, cap, f);
    int more = fgetc(f) != EOF;
    fclose(f);
    return more ? -2 : (long)n;
}

int main(int argc, char **argv)
{
    const char *wpath = argc > 1 ? argv[1] : "weights.bin";
    const char *ipath = argc > 2 ? argv[2] : "input.bin";
    long wn = read_file(wpath, weights_blob, sizeof weights_blob);
    if (wn < 0 || mico_model_init(weights_blob, (size_t)wn) != RT_OK) {
        fprintf(stderr, "cannot load weights from %s\n", wpath);
        return 1;
    }
    long in = read_file(ipath, input_blob, sizeof input_blob);
    rt_weights inputs;
    if (in < 0 || rt_load_weights(input_blob, (size_t)in, &inputs) != RT_OK) {
        fprintf(stderr, "cannot load inputs from %s\n", ipath);
        return 1;
    }
    const rt_tensor *x = rt_find(&inputs, 0, RT_ROLE_INPUT);
    if (!x || x->rank != 2 || x->dims[1] != MICO_MODEL_INPUT_LEN) {
        fprintf(stderr, "input tensor must be [n, %d]\n", MICO_MODEL_INPUT_LEN);
        return 1;
    }
    for (uint32_t r = 0; r < x->dims[0]; r++) {
        rt_tensor_f32(x, r * MICO_MODEL_INPUT_LEN, MICO_MODEL_INPUT_LEN, row);
        if (mico_model_run(row, logits) != RT_OK) {
            fprintf(stderr, "inference failed on row %u\n", (unsigned)r);
            return 1;
        }
        for (int i = 0; i < MICO_MODEL_OUTPUT_LEN; i++)
            printf("%ld\n", (long)logits[i]);
    }
    return 0;
}
"#,
    );
    s
}

fn write(dir: &Path, name: &str, data: &[u8], files: &mut Vec<EmittedFile>) -> Result<(), CodegenError> {
    let path = dir.join(name);
    std::fs::write(&path, data).map_err(|source| CodegenError::Io { path, source })?;
    files.push(EmittedFile {
        name: name.to_string(),
        bytes: Some(data.len()),
    });
    Ok(())
}

/// Writes `model.c`, `model.h`, `main.c`, `mico_rt.h`, `weights.bin`,
/// `plan.json` and `manifest.json` into `out_dir`.
pub fn emit_source(plan: &DeployPlan, model: &QuantizedModel, out_dir: &Path) -> Result<CodegenManifest, CodegenError> {
    if plan.ops.is_empty() {
        return Err(CodegenError::EmptyPlan);
    }
    plan.check_arena()?;
    std::fs::create_dir_all(out_dir).map_err(|source| CodegenError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let weights = weights_container(model).to_bytes()?;
    let mut files = Vec::new();
    write(out_dir, "mico_rt.h", RUNTIME_HEADER.as_bytes(), &mut files)?;
    write(out_dir, "model.h", emit_model_h(plan).as_bytes(), &mut files)?;
    write(out_dir, "model.c", emit_model_c(plan).as_bytes(), &mut files)?;
    write(
        out_dir,
        "main.c",
        emit_main_c(plan, weights.len()).as_bytes(),
        &mut files,
    )?;
    write(out_dir, "weights.bin", &weights, &mut files)?;
    let plan_json = serde_json::to_string_pretty(plan)?;
    write(out_dir, "plan.json", plan_json.as_bytes(), &mut files)?;
    let mut manifest = CodegenManifest {
        network: plan.network.clone(),
        scheme: QuantScheme::new(plan.layers.iter().map(|l| l.requested).collect()),
        arena_bytes: plan.arena_bytes,
        kernel_calls: plan.kernel_calls(),
        widening: plan.notes.clone(),
        files,
    };
    manifest.files.push(EmittedFile {
        name: "manifest.json".into(),
        bytes: None,
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, text.as_bytes()).map_err(|source| CodegenError::Io { path, source })?;
    Ok(manifest)
}
