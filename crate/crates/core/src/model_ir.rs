//! Network intermediate representation, bitwidth schemes and per-layer
//! statistics.
//!
//! Networks are straight-line sequences of `Conv2D` / `Linear` layers. The
//! batch dimension is fixed to 1; a `Linear` layer may carry leading "row"
//! dimensions (tokens), in which case it is a general MatMul.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, Role, Tensor};

#[derive(Debug, Error)]
pub enum IrError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed network json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("layer {index}: {reason}")]
    Shape { index: usize, reason: String },
    #[error("layer {index}: stored macs {stored} but shapes give {computed}")]
    MacsMismatch { index: usize, stored: u64, computed: u64 },
    #[error("empty network")]
    Empty,
    #[error("bitwidth {0} is not in the configured set {1}")]
    BitsNotInSet(u8, BitwidthSet),
    #[error("scheme has {got} layers, network has {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "Conv2D", alias = "conv2d")]
    Conv2d,
    #[serde(rename = "Linear", alias = "linear")]
    Linear,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv2d => "Conv2D",
            LayerKind::Linear => "Linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub index: usize,
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// `[k_h, k_w]`, Conv2D only.
    pub kernel: Option<[usize; 2]>,
    pub stride: usize,
    pub pad: usize,
    pub relu: bool,
    pub macs: u64,
    pub weight_count: usize,
    pub activation_count: usize,
}

impl LayerDesc {
    /// Builds and validates a Linear layer. `in_shape = [..rows, in]`,
    /// `out_shape = [..rows, out]`.
    pub fn linear(index: usize, in_shape: Vec<usize>, out_shape: Vec<usize>) -> Result<Self, IrError> {
        Self::build(index, LayerKind::Linear, in_shape, out_shape, None, 1, 0, true)
    }

    /// Builds and validates a Conv2D layer over `[C, H, W]` input.
    pub fn conv2d(
        index: usize,
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        pad: usize,
    ) -> Result<Self, IrError> {
        let [c, h, w] = in_shape;
        let oh = conv_out(h, kernel[0], stride, pad);
        let ow = conv_out(w, kernel[1], stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(IrError::Shape {
                    index,
                    reason: "kernel larger than padded input".into(),
                })
            }
        };
        Self::build(
            index,
            LayerKind::Conv2d,
            vec![c, h, w],
            vec![out_channels, oh, ow],
            Some(kernel),
            stride,
            pad,
            true,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        index: usize,
        kind: LayerKind,
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
        kernel: Option<[usize; 2]>,
        stride: usize,
        pad: usize,
        relu: bool,
    ) -> Result<Self, IrError> {
        let bad = |reason: &str| IrError::Shape {
            index,
            reason: reason.to_string(),
        };
        if in_shape.iter().chain(&out_shape).any(|&d| d == 0) {
            return Err(bad("zero-sized dimension"));
        }
        let (macs, weight_count) = match kind {
            LayerKind::Linear => {
                if in_shape.is_empty() || in_shape.len() != out_shape.len() {
                    return Err(bad("linear in/out ranks must match"));
                }
                let r = in_shape.len() - 1;
                if in_shape[..r] != out_shape[..r] {
                    return Err(bad("linear leading (row) dims must match"));
                }
                if kernel.is_some() {
                    return Err(bad("linear layer cannot have a kernel"));
                }
                let rows: usize = in_shape[..r].iter().product();
                let (fin, fout) = (in_shape[r], out_shape[r]);
                ((rows * fin * fout) as u64, fin * fout)
            }
            LayerKind::Conv2d => {
                let k = kernel.ok_or_else(|| bad("conv2d needs a kernel"))?;
                if in_shape.len() != 3 || out_shape.len() != 3 {
                    return Err(bad("conv2d shapes must be [C, H, W]"));
                }
                if stride == 0 || k[0] == 0 || k[1] == 0 {
                    return Err(bad("zero stride or kernel"));
                }
                let oh = conv_out(in_shape[1], k[0], stride, pad);
                let ow = conv_out(in_shape[2], k[1], stride, pad);
                if oh != Some(out_shape[1]) || ow != Some(out_shape[2]) {
                    return Err(bad("conv2d output spatial dims inconsistent with kernel/stride/pad"));
                }
                let (ic, oc) = (in_shape[0], out_shape[0]);
                let macs = out_shape[1] * out_shape[2] * oc * ic * k[0] * k[1];
                (macs as u64, oc * ic * k[0] * k[1])
            }
        };
        let activation_count = in_shape.iter().product();
        Ok(LayerDesc {
            index,
            kind,
            in_shape,
            out_shape,
            kernel,
            stride,
            pad,
            relu,
            macs,
            weight_count,
            activation_count,
        })
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    /// Rows of the lowered MatMul (output positions).
    pub fn gemm_rows(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.in_shape[..self.in_shape.len() - 1].iter().product(),
            LayerKind::Conv2d => self.out_shape[1] * self.out_shape[2],
        }
    }

    /// Reduction length of the lowered MatMul.
    pub fn gemm_k(&self) -> usize {
        match self.kind {
            LayerKind::Linear => *self.in_shape.last().unwrap(),
            LayerKind::Conv2d => {
                let k = self.kernel.unwrap();
                self.in_shape[0] * k[0] * k[1]
            }
        }
    }

    /// Output features / channels of the lowered MatMul.
    pub fn gemm_n(&self) -> usize {
        match self.kind {
            LayerKind::Linear => *self.out_shape.last().unwrap(),
            LayerKind::Conv2d => self.out_shape[0],
        }
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Linear => vec![self.gemm_n(), self.gemm_k()],
            LayerKind::Conv2d => {
                let k = self.kernel.unwrap();
                vec![self.out_shape[0], self.in_shape[0], k[0], k[1]]
            }
        }
    }

    pub fn bias_len(&self) -> usize {
        self.gemm_n()
    }

    pub fn out_elements(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Elements produced by im2col (0 for Linear).
    pub fn patch_elements(&self) -> usize {
        match self.kind {
            LayerKind::Linear => 0,
            LayerKind::Conv2d => self.gemm_rows() * self.gemm_k(),
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if k > padded || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Allowed bitwidths, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct BitwidthSet(Vec<u8>);

impl BitwidthSet {
    pub fn new(bits: &[u8]) -> Result<Self, String> {
        let mut v = bits.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err("empty bitwidth set".into());
        }
        if let Some(b) = v.iter().find(|&&b| b == 0 || b > 8) {
            return Err(format!("bitwidth {b} outside 1..=8"));
        }
        Ok(BitwidthSet(v))
    }

    /// `{4, 5, 6, 7, 8}`.
    pub fn ptq() -> Self {
        BitwidthSet(vec![4, 5, 6, 7, 8])
    }

    /// `{1, 2, 4, 8}`.
    pub fn qat() -> Self {
        BitwidthSet(vec![1, 2, 4, 8])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn contains(&self, b: u8) -> bool {
        self.0.binary_search(&b).is_ok()
    }

    pub fn max(&self) -> u8 {
        *self.0.last().unwrap()
    }

    pub fn min(&self) -> u8 {
        self.0[0]
    }

    /// Every `(w, a)` pair, in lexicographic order.
    pub fn pairs(&self) -> Vec<BitPair> {
        self.0
            .iter()
            .flat_map(|&w| self.0.iter().map(move |&a| BitPair::new(w, a)))
            .collect()
    }

    /// Next lower / higher bitwidth in the set.
    pub fn step_down(&self, b: u8) -> Option<u8> {
        self.0.iter().rev().copied().find(|&x| x < b)
    }

    pub fn step_up(&self, b: u8) -> Option<u8> {
        self.0.iter().copied().find(|&x| x > b)
    }
}

impl TryFrom<Vec<u8>> for BitwidthSet {
    type Error = String;
    fn try_from(v: Vec<u8>) -> Result<Self, String> {
        BitwidthSet::new(&v)
    }
}

impl From<BitwidthSet> for Vec<u8> {
    fn from(s: BitwidthSet) -> Vec<u8> {
        s.0
    }
}

impl fmt::Display for BitwidthSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(|b| b.to_string()).collect();
        write!(f, "{{{}}}", s.join(","))
    }
}

/// A `(weight bits, activation bits)` pair for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(u8, u8)", into = "(u8, u8)")]
pub struct BitPair {
    pub w: u8,
    pub a: u8,
}

impl BitPair {
    pub const fn new(w: u8, a: u8) -> Self {
        BitPair { w, a }
    }
    pub const fn uniform(b: u8) -> Self {
        BitPair { w: b, a: b }
    }
}

impl From<(u8, u8)> for BitPair {
    fn from((w, a): (u8, u8)) -> Self {
        BitPair { w, a }
    }
}

impl From<BitPair> for (u8, u8) {
    fn from(p: BitPair) -> Self {
        (p.w, p.a)
    }
}

impl fmt::Display for BitPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}A{}", self.w, self.a)
    }
}

/// Layer-wise bitwidth assignment: the search variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantScheme {
    pub pairs: Vec<BitPair>,
}

impl QuantScheme {
    pub fn new(pairs: Vec<BitPair>) -> Self {
        QuantScheme { pairs }
    }

    pub fn uniform(layers: usize, b: u8) -> Self {
        QuantScheme {
            pairs: vec![BitPair::uniform(b); layers],
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks the scheme against a network length and a bitwidth set.
    pub fn validate(&self, layers: usize, set: &BitwidthSet) -> Result<(), IrError> {
        if self.pairs.len() != layers {
            return Err(IrError::LengthMismatch {
                got: self.pairs.len(),
                want: layers,
            });
        }
        for p in &self.pairs {
            for b in [p.w, p.a] {
                if !set.contains(b) {
                    return Err(IrError::BitsNotInSet(b, set.clone()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.pairs.iter().map(|p| p.to_string()).collect();
        write!(f, "[{}]", s.join(" "))
    }
}

/// Float weights and biases, one entry per layer, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    pub layers: Vec<LayerWeights>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerWeights {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl WeightStore {
    pub fn check(&self, layers: &[LayerDesc]) -> Result<(), IrError> {
        if self.layers.len() != layers.len() {
            return Err(IrError::Weights(format!(
                "{} weight entries for {} layers",
                self.layers.len(),
                layers.len()
            )));
        }
        for (w, l) in self.layers.iter().zip(layers) {
            if w.weight.len() != l.weight_count || w.bias.len() != l.bias_len() {
                return Err(IrError::Weights(format!(
                    "layer {}: weight {} / bias {} elements, expected {} / {}",
                    l.index,
                    w.weight.len(),
                    w.bias.len(),
                    l.weight_count,
                    l.bias_len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_container(&self, layers: &[LayerDesc]) -> Container {
        let mut c = Container::new();
        for (w, l) in self.layers.iter().zip(layers) {
            let dims = l.weight_dims().iter().map(|&d| d as u32).collect();
            c.push(Tensor::f32(l.index as u32, Role::Weight, dims, w.weight.clone()));
            c.push(Tensor::f32(
                l.index as u32,
                Role::Bias,
                vec![l.bias_len() as u32],
                w.bias.clone(),
            ));
        }
        c
    }

    pub fn from_container(c: &Container, layers: &[LayerDesc]) -> Result<Self, IrError> {
        let mut out = Vec::with_capacity(layers.len());
        for l in layers {
            let get = |role| {
                c.find(l.index as u32, role)
                    .and_then(Tensor::as_f32)
                    .map(<[f32]>::to_vec)
                    .ok_or_else(|| IrError::Weights(format!("missing {role:?} for layer {}", l.index)))
            };
            let w = c.find(l.index as u32, Role::Weight).map(|t| &t.dims);
            let want: Vec<u32> = l.weight_dims().iter().map(|&d| d as u32).collect();
            if w != Some(&want) {
                return Err(IrError::Weights(format!(
                    "layer {} weight dims {:?} do not match {:?}",
                    l.index, w, want
                )));
            }
            out.push(LayerWeights {
                weight: get(Role::Weight)?,
                bias: get(Role::Bias)?,
            });
        }
        let ws = WeightStore { layers: out };
        ws.check(layers)?;
        Ok(ws)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkIR {
    pub name: String,
    pub layers: Vec<LayerDesc>,
    pub weights: Option<WeightStore>,
    pub meta: NetworkMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub float_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_epochs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_file: Option<String>,
    /// Directory the JSON was loaded from; relative file names resolve here.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl NetworkIR {
    /// Builds a network from layer descriptors, enforcing sequential
    /// connectivity and fixing up indices.
    pub fn new(name: impl Into<String>, mut layers: Vec<LayerDesc>) -> Result<Self, IrError> {
        if layers.is_empty() {
            return Err(IrError::Empty);
        }
        for (i, l) in layers.iter_mut().enumerate() {
            l.index = i;
        }
        for w in layers.windows(2) {
            if w[0].out_elements() != w[1].activation_count {
                return Err(IrError::Shape {
                    index: w[1].index,
                    reason: format!(
                        "input {:?} does not follow previous output {:?} (non-sequential graph?)",
                        w[1].in_shape, w[0].out_shape
                    ),
                });
            }
        }
        Ok(NetworkIR {
            name: name.into(),
            layers,
            weights: None,
            meta: NetworkMeta::default(),
        })
    }

    pub fn with_weights(mut self, weights: WeightStore) -> Result<Self, IrError> {
        weights.check(&self.layers)?;
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].activation_count
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().out_elements()
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        match &self.meta.base_dir {
            Some(d) => d.join(file),
            None => PathBuf::from(file),
        }
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            name: self.name.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    kind: l.kind,
                    in_shape: l.in_shape.clone(),
                    out_shape: l.out_shape.clone(),
                    kernel: l.kernel,
                    stride: (l.kind == LayerKind::Conv2d).then_some(l.stride),
                    pad: (l.kind == LayerKind::Conv2d).then_some(l.pad),
                    activation: Some(if l.relu { Activation::Relu } else { Activation::None }),
                    macs: Some(l.macs),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn from_file(file: NetworkFile) -> Result<Self, IrError> {
        let n = file.layers.len();
        if n == 0 {
            return Err(IrError::Empty);
        }
        let mut layers = Vec::with_capacity(n);
        for (i, spec) in file.layers.into_iter().enumerate() {
            let relu = match spec.activation {
                Some(Activation::Relu) => true,
                Some(Activation::None) => false,
                None => i + 1 != n,
            };
            let l = LayerDesc::build(
                i,
                spec.kind,
                spec.in_shape,
                spec.out_shape,
                spec.kernel,
                spec.stride.unwrap_or(1),
                spec.pad.unwrap_or(0),
                relu,
            )?;
            if let Some(stored) = spec.macs {
                if stored != l.macs {
                    return Err(IrError::MacsMismatch {
                        index: i,
                        stored,
                        computed: l.macs,
                    });
                }
            }
            layers.push(l);
        }
        let mut ir = NetworkIR::new(file.name, layers)?;
        ir.meta = file.meta;
        Ok(ir)
    }

    /// Saves the JSON description and, when weights are present and a
    /// `weights_file` is named, the weight container next to it.
    pub fn save(&self, path: &Path) -> Result<(), IrError> {
        let json = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, json + "\n").map_err(|source| IrError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if let (Some(w), Some(file)) = (&self.weights, &self.meta.weights_file) {
            let dir = path.parent().unwrap_or(Path::new("."));
            w.to_container(&self.layers).save(&dir.join(file))?;
        }
        Ok(())
    }
}

/// On-disk JSON shape of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    #[serde(flatten)]
    pub meta: NetworkMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macs: Option<u64>,
}

/// Loads a network JSON file (and its weights container, if named).
pub fn load_network(path: &Path) -> Result<NetworkIR, IrError> {
    let text = std::fs::read_to_string(path).map_err(|source| IrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: NetworkFile = serde_json::from_str(&text)?;
    let mut ir = NetworkIR::from_file(file)?;
    ir.meta.base_dir = path.parent().map(Path::to_path_buf);
    if let Some(wf) = ir.meta.weights_file.clone() {
        let c = Container::load(&ir.resolve(&wf))?;
        let ws = WeightStore::from_container(&c, &ir.layers)?;
        ir.weights = Some(ws);
    }
    Ok(ir)
}

/// LeNet5-scale CNN: two Conv2D and three Linear layers, about 0.38M MACs.
pub fn lenet5() -> NetworkIR {
    let layers = vec![
        LayerDesc::conv2d(0, [1, 28, 28], 6, [5, 5], 1, 2),
        LayerDesc::conv2d(1, [6, 28, 28], 16, [5, 5], 3, 0),
        LayerDesc::linear(2, vec![16 * 8 * 8], vec![96]),
        LayerDesc::linear(3, vec![96], vec![64]),
        LayerDesc::linear(4, vec![64], vec![10]).map(|l| l.with_relu(false)),
    ];
    let layers = layers
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .expect("static shapes");
    NetworkIR::new("lenet5", layers).expect("static shapes")
}

pub fn scheme_uniform(network: &NetworkIR, b: u8, set: &BitwidthSet) -> Result<QuantScheme, IrError> {
    if network.is_empty() {
        return Err(IrError::Empty);
    }
    if !set.contains(b) {
        return Err(IrError::BitsNotInSet(b, set.clone()));
    }
    Ok(QuantScheme::uniform(network.len(), b))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lenet_like() -> NetworkIR {
        lenet5()
    }

    #[test]
    fn lenet_style_has_five_layers() {
        let n = lenet_like();
        assert_eq!(n.len(), 5);
        assert_eq!(n.layers.iter().filter(|l| l.kind == LayerKind::Conv2d).count(), 2);
    }

    #[test]
    fn linear_macs() {
        let l = LayerDesc::linear(0, vec![10], vec![20]).unwrap();
        assert_eq!(l.macs, 200);
        assert_eq!(l.weight_count, 200);
        assert_eq!(l.activation_count, 10);
        let rows = LayerDesc::linear(0, vec![64, 64], vec![64, 64]).unwrap();
        assert_eq!(rows.macs, 64 * 64 * 64);
        assert_eq!(rows.gemm_rows(), 64);
    }

    #[test]
    fn conv_macs() {
        let l = LayerDesc::conv2d(0, [1, 8, 8], 4, [3, 3], 1, 0).unwrap();
        assert_eq!(l.out_shape, vec![4, 6, 6]);
        assert_eq!(l.macs, 1296);
        assert_eq!(l.weight_count, 36);
        assert_eq!(l.patch_elements(), 36 * 9);
    }

    #[test]
    fn uniform_schemes() {
        let n = lenet_like();
        let s = scheme_uniform(&n, 8, &BitwidthSet::qat()).unwrap();
        assert_eq!(s.pairs, vec![BitPair::uniform(8); 5]);
        let s = scheme_uniform(&n, 1, &BitwidthSet::qat()).unwrap();
        assert_eq!(s.pairs, vec![BitPair::uniform(1); 5]);
        assert!(matches!(
            scheme_uniform(&n, 3, &BitwidthSet::qat()),
            Err(IrError::BitsNotInSet(3, _))
        ));
    }

    #[test]
    fn empty_network_rejected() {
        assert!(matches!(NetworkIR::new("x", vec![]), Err(IrError::Empty)));
        let f = NetworkFile {
            name: "x".into(),
            layers: vec![],
            meta: NetworkMeta::default(),
        };
        assert!(matches!(NetworkIR::from_file(f), Err(IrError::Empty)));
    }

    #[test]
    fn non_sequential_shapes_rejected() {
        let a = LayerDesc::linear(0, vec![8], vec![16]).unwrap();
        let b = LayerDesc::linear(1, vec![12], vec![4]).unwrap();
        assert!(matches!(NetworkIR::new("x", vec![a, b]), Err(IrError::Shape { .. })));
    }

    #[test]
    fn json_errors() {
        let bad = r#"{"name":"x","layers":[{"kind":"Pool","in_shape":[1],"out_shape":[1]}]}"#;
        assert!(serde_json::from_str::<NetworkFile>(bad).is_err());
        let branch = r#"{"name":"x","layers":[{"kind":"Linear","in_shape":[4],"out_shape":[4],"inputs":[0]}]}"#;
        assert!(serde_json::from_str::<NetworkFile>(branch).is_err());
        let macs = r#"{"name":"x","layers":[{"kind":"Linear","in_shape":[10],"out_shape":[20],"macs":7}]}"#;
        let f: NetworkFile = serde_json::from_str(macs).unwrap();
        assert!(matches!(
            NetworkIR::from_file(f),
            Err(IrError::MacsMismatch { computed: 200, .. })
        ));
    }

    #[test]
    fn save_load_round_trip_with_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut n = lenet_like();
        let ws = WeightStore {
            layers: n
                .layers
                .iter()
                .map(|l| LayerWeights {
                    weight: (0..l.weight_count).map(|i| (i as f32 * 0.37).sin()).collect(),
                    bias: (0..l.bias_len()).map(|i| i as f32 * 0.01).collect(),
                })
                .collect(),
        };
        n = n.with_weights(ws).unwrap();
        n.meta.weights_file = Some("w.bin".into());
        n.meta.float_accuracy = Some(0.99);
        let p = dir.path().join("net.json");
        n.save(&p).unwrap();
        let back = load_network(&p).unwrap();
        assert_eq!(back.layers, n.layers);
        assert_eq!(back.weights, n.weights);
        assert_eq!(back.meta.float_accuracy, Some(0.99));
    }

    #[test]
    fn bitwidth_set_steps() {
        let s = BitwidthSet::qat();
        assert_eq!(s.step_down(4), Some(2));
        assert_eq!(s.step_down(1), None);
        assert_eq!(s.step_up(2), Some(4));
        assert_eq!(s.pairs().len(), 16);
        assert_eq!(BitwidthSet::ptq().pairs().len(), 25);
        assert!(BitwidthSet::new(&[0, 4]).is_err());
    }
}
