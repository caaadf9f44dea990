//! Parametric cycle-count simulators: a bit-serial systolic array and a
//! family of SIMD CPUs with packed dot-product instructions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{BitPair, BitwidthSet, LayerDesc, LayerKind, NetworkIR, QuantScheme};
use crate::proxy::{BenchDims, BenchRecord, CostModel, HardwareProfile, ProxyError};
use crate::quant::storage_bits;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("unsupported bitwidth {0}")]
    Bits(u8),
    #[error("invalid hardware config: {0}")]
    Config(String),
    #[error("benchmark plan is empty")]
    EmptyPlan,
    #[error("invalid benchmark plan: {0}")]
    Plan(String),
    #[error("scheme has {got} layers, network has {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CpuVariant {
    Tiny,
    Small,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystolicConfig {
    pub pe_rows: u32,
    pub pe_cols: u32,
    pub dma_cost_per_word: f64,
    pub fixed_layer_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuConfig {
    pub variant: CpuVariant,
    pub load_cost: f64,
    /// 0 means no data cache: every layer pays `cache_penalty`.
    pub dcache_bytes: u64,
    pub cache_penalty: f64,
    pub issue_width: u32,
    pub quant_cost: f64,
    pub im2col_cost: f64,
    pub fixed_layer_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "archetype", rename_all = "kebab-case")]
pub enum Arch {
    Systolic(SystolicConfig),
    SimdCpu(CpuConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwConfig {
    pub id: String,
    #[serde(flatten)]
    pub arch: Arch,
}

impl HwConfig {
    pub fn systolic() -> Self {
        HwConfig {
            id: "systolic-32x16".into(),
            arch: Arch::Systolic(SystolicConfig {
                pe_rows: 32,
                pe_cols: 16,
                dma_cost_per_word: 0.05,
                fixed_layer_cost: 500.0,
            }),
        }
    }

    pub fn cpu(variant: CpuVariant) -> Self {
        let (id, cfg) = match variant {
            CpuVariant::Tiny => (
                "cpu-tiny",
                CpuConfig {
                    variant,
                    load_cost: 0.35,
                    dcache_bytes: 0,
                    cache_penalty: 2.0,
                    issue_width: 1,
                    quant_cost: 1.0,
                    im2col_cost: 1.0,
                    fixed_layer_cost: 200.0,
                },
            ),
            CpuVariant::Small => (
                "cpu-small",
                CpuConfig {
                    variant,
                    load_cost: 0.5,
                    dcache_bytes: 4096,
                    cache_penalty: 3.0,
                    issue_width: 1,
                    quant_cost: 1.0,
                    im2col_cost: 0.5,
                    fixed_layer_cost: 150.0,
                },
            ),
            CpuVariant::High => (
                "cpu-high",
                CpuConfig {
                    variant,
                    load_cost: 0.25,
                    dcache_bytes: 16384,
                    cache_penalty: 4.0,
                    issue_width: 2,
                    quant_cost: 0.5,
                    im2col_cost: 0.25,
                    fixed_layer_cost: 100.0,
                },
            ),
        };
        HwConfig {
            id: id.into(),
            arch: Arch::SimdCpu(cfg),
        }
    }

    pub fn validate(&self) -> Result<(), HwError> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HwError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.arch {
            Arch::Systolic(s) => {
                if s.pe_rows == 0 || s.pe_cols == 0 {
                    return Err(HwError::Config("empty PE array".into()));
                }
                pos("dma_cost_per_word", s.dma_cost_per_word)?;
                pos("fixed_layer_cost", s.fixed_layer_cost)
            }
            Arch::SimdCpu(c) => {
                if c.issue_width == 0 {
                    return Err(HwError::Config("issue_width must be >= 1".into()));
                }
                pos("load_cost", c.load_cost)?;
                pos("cache_penalty", c.cache_penalty)?;
                pos("quant_cost", c.quant_cost)?;
                pos("im2col_cost", c.im2col_cost)?;
                pos("fixed_layer_cost", c.fixed_layer_cost)
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self, HwError> {
        let text = std::fs::read_to_string(path).map_err(|source| HwError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: HwConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cycles for one layer.
    pub fn layer_cycles(&self, layer: &LayerDesc, p: BitPair) -> Result<u64, HwError> {
        Ok(self.breakdown(layer, p)?.total().ceil() as u64)
    }

    /// Per-term cycle contributions for one layer.
    pub fn breakdown(&self, layer: &LayerDesc, p: BitPair) -> Result<CycleBreakdown, HwError> {
        for b in [p.w, p.a] {
            if !(1..=8).contains(&b) {
                return Err(HwError::Bits(b));
            }
        }
        let macs = layer.macs as f64;
        Ok(match &self.arch {
            Arch::SimdCpu(c) => {
                let (bw, ba) = (storage_bits(p.w) as u64, storage_bits(p.a) as u64);
                let lanes = 32 / bw.max(ba);
                let weight_bytes = (layer.weight_count as u64 * bw).div_ceil(8);
                let penalty = if weight_bytes > c.dcache_bytes {
                    c.cache_penalty
                } else {
                    1.0
                };
                CycleBreakdown {
                    compute: layer.macs.div_ceil(lanes).div_ceil(c.issue_width as u64) as f64,
                    memory: c.load_cost * ((ba + bw) as f64 * macs) / 32.0 * penalty,
                    quant: c.quant_cost * layer.activation_count as f64,
                    im2col: match layer.kind {
                        LayerKind::Conv2d => c.im2col_cost * layer.patch_elements() as f64,
                        LayerKind::Linear => 0.0,
                    },
                    fixed: c.fixed_layer_cost,
                }
            }
            Arch::Systolic(s) => {
                let eff = |b: u8| match b {
                    1 => 2u64,
                    5..=7 => 8,
                    b => b as u64,
                };
                let (bw, ba) = (eff(p.w), eff(p.a));
                let pes = s.pe_rows as u64 * s.pe_cols as u64 * 64;
                let words = ((ba + bw) as f64 * macs + 32.0 * layer.out_elements() as f64) / 32.0;
                CycleBreakdown {
                    compute: (layer.macs * bw * ba).div_ceil(pes) as f64,
                    memory: s.dma_cost_per_word * words,
                    quant: 0.0,
                    im2col: 0.0,
                    fixed: s.fixed_layer_cost,
                }
            }
        })
    }

    /// Non-SIMD baseline on the CPU archetype: one MAC per cycle per issue
    /// slot, byte loads, no quantization or packing work.
    pub fn scalar_cycles(&self, layer: &LayerDesc) -> Result<u64, HwError> {
        let Arch::SimdCpu(c) = &self.arch else {
            return Err(HwError::Config("scalar baseline is defined for simd-cpu only".into()));
        };
        let macs = layer.macs as f64;
        let mac = layer.macs.div_ceil(c.issue_width as u64) as f64;
        let penalty = if layer.weight_count as u64 > c.dcache_bytes {
            c.cache_penalty
        } else {
            1.0
        };
        let loads = c.load_cost * 16.0 * macs / 32.0 * penalty;
        Ok((mac + loads + c.fixed_layer_cost).ceil() as u64)
    }
}

/// Total simulated cycles of a scheme.
pub fn simulate(network: &NetworkIR, scheme: &QuantScheme, hw: &HwConfig) -> Result<u64, HwError> {
    if scheme.len() != network.len() {
        return Err(HwError::LengthMismatch {
            got: scheme.len(),
            want: network.len(),
        });
    }
    network
        .layers
        .iter()
        .zip(&scheme.pairs)
        .map(|(l, &p)| hw.layer_cycles(l, p))
        .sum()
}

impl CostModel for HwConfig {
    fn layer_cost(&self, layer: &LayerDesc, p: BitPair) -> Result<f64, ProxyError> {
        self.layer_cycles(layer, p)
            .map(|c| c as f64)
            .map_err(|e| ProxyError::Record(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleBreakdown {
    pub compute: f64,
    pub memory: f64,
    pub quant: f64,
    pub im2col: f64,
    pub fixed: f64,
}

impl CycleBreakdown {
    pub fn total(&self) -> f64 {
        self.compute + self.memory + self.quant + self.im2col + self.fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatMulSize {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSize {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oc: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub bits: BitwidthSet,
    #[serde(default)]
    pub matmul: Vec<MatMulSize>,
    #[serde(default)]
    pub conv2d: Vec<ConvSize>,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        BenchmarkPlan {
            bits: BitwidthSet::qat(),
            matmul: vec![
                MatMulSize { m: 32, k: 32, n: 32 },
                MatMulSize { m: 64, k: 64, n: 64 },
                MatMulSize { m: 64, k: 128, n: 96 },
            ],
            conv2d: vec![
                ConvSize {
                    c: 3,
                    h: 16,
                    w: 16,
                    oc: 8,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
                ConvSize {
                    c: 8,
                    h: 16,
                    w: 16,
                    oc: 16,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
                ConvSize {
                    c: 16,
                    h: 8,
                    w: 8,
                    oc: 32,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
            ],
        }
    }
}

impl BenchmarkPlan {
    pub fn load(path: &Path) -> Result<Self, HwError> {
        let text = std::fs::read_to_string(path).map_err(|source| HwError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    fn sizes(&self) -> Vec<Vec<BenchDims>> {
        let mm = self
            .matmul
            .iter()
            .map(|s| BenchDims::MatMul { m: s.m, k: s.k, n: s.n })
            .collect();
        let cv = self
            .conv2d
            .iter()
            .map(|s| BenchDims::Conv2d {
                c: s.c,
                h: s.h,
                w: s.w,
                oc: s.oc,
                k: s.k,
                stride: s.stride,
                pad: s.pad,
            })
            .collect();
        vec![mm, cv]
    }
}

/// Unordered bitwidth combinations `(hi, lo)`, as in the DotP instruction table.
pub fn pair_combos(bits: &BitwidthSet) -> Vec<BitPair> {
    let b = bits.bits();
    let mut v = Vec::new();
    for &hi in b.iter().rev() {
        for &lo in b.iter().rev().filter(|&&lo| lo <= hi) {
            v.push(BitPair::new(hi, lo));
        }
    }
    v
}

/// One record per (kernel, bitwidth combination, size). Mixed combinations
/// alternate orientation between sizes so both `WxAy` and `WyAx` get
/// measured.
pub fn run_kernel_benchmarks(hw: &HwConfig, plan: &BenchmarkPlan) -> Result<HardwareProfile, HwError> {
    hw.validate()?;
    if plan.matmul.is_empty() && plan.conv2d.is_empty() {
        return Err(HwError::EmptyPlan);
    }
    let mut records = Vec::new();
    for sizes in plan.sizes() {
        for combo in pair_combos(&plan.bits) {
            for (si, dims) in sizes.iter().enumerate() {
                let p = if si % 2 == 1 {
                    BitPair::new(combo.a, combo.w)
                } else {
                    combo
                };
                let layer = dims.layer().map_err(|e| HwError::Plan(e.to_string()))?;
                records.push(BenchRecord {
                    kernel: dims.kernel(),
                    bw: p.w,
                    ba: p.a,
                    dims: *dims,
                    cycles: hw.layer_cycles(&layer, p)?,
                });
            }
        }
    }
    Ok(HardwareProfile {
        hardware_id: hw.id.clone(),
        records,
    })
}
