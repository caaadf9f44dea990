//! Latency proxies: plain BOPs and the fitted composite model over
//! BMACs / ALoads / WLoads, with linear (OLS) and tree variants.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{BitPair, BitwidthSet, LayerDesc, LayerKind, NetworkIR, QuantScheme};
use crate::rng;
use crate::stats;
use crate::surrogate::{self, Forest, ForestConfig, SurrogateError};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("scheme has {got} layers, network has {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("{kernel}: need at least {need} benchmark records, got {got}")]
    TooFewRecords {
        kernel: KernelKind,
        need: usize,
        got: usize,
    },
    #[error("proxy has no parameters for {0} layers")]
    Unfitted(KernelKind),
    #[error("need at least 2 schemes with non-constant latency")]
    Degenerate,
    #[error("invalid benchmark record: {0}")]
    Record(String),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Kernel families that get separate proxy sub-models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    MatMul,
    #[serde(rename = "Conv2D")]
    Conv2d,
}

impl From<LayerKind> for KernelKind {
    fn from(k: LayerKind) -> Self {
        match k {
            LayerKind::Linear => KernelKind::MatMul,
            LayerKind::Conv2d => KernelKind::Conv2d,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::MatMul => "MatMul",
            KernelKind::Conv2d => "Conv2D",
        })
    }
}

/// Per-layer features of the composite proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostFeatures {
    pub bmacs: u64,
    pub aloads: u64,
    pub wloads: u64,
}

impl CostFeatures {
    pub fn new(macs: u64, p: BitPair) -> Self {
        CostFeatures {
            bmacs: p.w.max(p.a) as u64 * macs,
            aloads: p.a as u64 * macs,
            wloads: p.w as u64 * macs,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.bmacs as f64, self.aloads as f64, self.wloads as f64]
    }
}

fn check_len(network: &NetworkIR, scheme: &QuantScheme) -> Result<(), ProxyError> {
    if scheme.len() != network.len() {
        return Err(ProxyError::LengthMismatch {
            got: scheme.len(),
            want: network.len(),
        });
    }
    Ok(())
}

pub fn layer_bops(macs: u64, p: BitPair) -> u64 {
    p.w as u64 * p.a as u64 * macs
}

/// Total bit operations of a scheme.
pub fn bops(network: &NetworkIR, scheme: &QuantScheme) -> Result<u64, ProxyError> {
    check_len(network, scheme)?;
    Ok(network
        .layers
        .iter()
        .zip(&scheme.pairs)
        .map(|(l, &p)| layer_bops(l.macs, p))
        .sum())
}

pub fn cost_features(network: &NetworkIR, scheme: &QuantScheme) -> Result<Vec<CostFeatures>, ProxyError> {
    check_len(network, scheme)?;
    Ok(network
        .layers
        .iter()
        .zip(&scheme.pairs)
        .map(|(l, &p)| CostFeatures::new(l.macs, p))
        .collect())
}

/// Anything that prices a single layer at a bitwidth pair.
pub trait CostModel: Sync {
    fn layer_cost(&self, layer: &LayerDesc, p: BitPair) -> Result<f64, ProxyError>;

    fn scheme_cost(&self, network: &NetworkIR, scheme: &QuantScheme) -> Result<f64, ProxyError> {
        check_len(network, scheme)?;
        network
            .layers
            .iter()
            .zip(&scheme.pairs)
            .map(|(l, &p)| self.layer_cost(l, p))
            .sum()
    }
}

/// The hardware-agnostic BOPs proxy.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bops;

impl CostModel for Bops {
    fn layer_cost(&self, layer: &LayerDesc, p: BitPair) -> Result<f64, ProxyError> {
        Ok(layer_bops(layer.macs, p) as f64)
    }
}

/// Per-layer, per-pair costs precomputed for fast search-time lookups.
#[derive(Debug, Clone)]
pub struct CostTable {
    bits: BitwidthSet,
    costs: Vec<Vec<f64>>,
}

impl CostTable {
    pub fn build(network: &NetworkIR, bits: &BitwidthSet, model: &dyn CostModel) -> Result<Self, ProxyError> {
        let pairs = bits.pairs();
        let costs = network
            .layers
            .iter()
            .map(|l| pairs.iter().map(|&p| model.layer_cost(l, p)).collect())
            .collect::<Result<_, _>>()?;
        Ok(CostTable {
            bits: bits.clone(),
            costs,
        })
    }

    fn slot(&self, p: BitPair) -> usize {
        let b = self.bits.bits();
        let i = b.binary_search(&p.w).expect("bitwidth outside table");
        let j = b.binary_search(&p.a).expect("bitwidth outside table");
        i * b.len() + j
    }

    pub fn layers(&self) -> usize {
        self.costs.len()
    }

    pub fn bits(&self) -> &BitwidthSet {
        &self.bits
    }

    pub fn layer(&self, layer: usize, p: BitPair) -> f64 {
        self.costs[layer][self.slot(p)]
    }

    /// Sum of per-layer costs. Panics if the scheme uses bits outside the table.
    pub fn cost(&self, scheme: &QuantScheme) -> f64 {
        scheme.pairs.iter().enumerate().map(|(i, &p)| self.layer(i, p)).sum()
    }
}

/// Linear model `beta_m*BMACs + beta_a*ALoads + beta_w*WLoads + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub beta_m: f64,
    pub beta_a: f64,
    pub beta_w: f64,
    pub c: f64,
}

impl LinearParams {
    pub fn eval(&self, f: &CostFeatures) -> f64 {
        let [m, a, w] = f.as_array();
        self.beta_m * m + self.beta_a * a + self.beta_w * w + self.c
    }

    pub fn is_monotone(&self) -> bool {
        self.beta_m >= 0.0 && self.beta_a >= 0.0 && self.beta_w >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyKind {
    /// Raw BOPs, no fitting.
    Bops,
    /// A fitted line on per-layer BOPs.
    BopsLinear,
    LinearCbops,
    /// Linear model plus a forest on its residuals.
    TreeCbops,
}

impl std::str::FromStr for ProxyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bops" => Ok(ProxyKind::Bops),
            "bops-linear" => Ok(ProxyKind::BopsLinear),
            "linear" | "linear-cbops" => Ok(ProxyKind::LinearCbops),
            "tree" | "tree-cbops" => Ok(ProxyKind::TreeCbops),
            _ => Err(format!("unknown proxy kind '{s}' (bops, bops-linear, linear, tree)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum KernelParams {
    BopsLine { slope: f64, intercept: f64 },
    Linear(LinearParams),
    Tree { linear: LinearParams, residual: Forest },
}

impl KernelParams {
    pub fn eval(&self, macs: u64, p: BitPair) -> Result<f64, ProxyError> {
        let f = CostFeatures::new(macs, p);
        let v = match self {
            KernelParams::BopsLine { slope, intercept } => slope * layer_bops(macs, p) as f64 + intercept,
            KernelParams::Linear(lp) => lp.eval(&f),
            KernelParams::Tree { linear, residual } => linear.eval(&f) + residual.predict_row(&f.as_array())?,
        };
        Ok(v.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFitReport {
    pub n_train: usize,
    pub n_test: usize,
    /// Holdout R², absent when the holdout targets have zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    /// Set when the design matrix was rank-deficient and ridge was used.
    pub ridge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub kind: ProxyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardware_id: Option<String>,
    #[serde(default)]
    pub kernels: BTreeMap<KernelKind, KernelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<ForestConfig>,
    #[serde(default)]
    pub fit_report: BTreeMap<KernelKind, KernelFitReport>,
}

impl ProxyModel {
    pub fn bops() -> Self {
        ProxyModel {
            kind: ProxyKind::Bops,
            hardware_id: None,
            kernels: BTreeMap::new(),
            forest: None,
            fit_report: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProxyError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProxyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProxyError> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|source| ProxyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl CostModel for ProxyModel {
    fn layer_cost(&self, layer: &LayerDesc, p: BitPair) -> Result<f64, ProxyError> {
        if self.kind == ProxyKind::Bops {
            return Ok(layer_bops(layer.macs, p) as f64);
        }
        let k = KernelKind::from(layer.kind);
        self.kernels.get(&k).ok_or(ProxyError::Unfitted(k))?.eval(layer.macs, p)
    }
}

/// Sum of per-layer predictions, each clamped at zero.
pub fn predict_latency(model: &ProxyModel, network: &NetworkIR, scheme: &QuantScheme) -> Result<f64, ProxyError> {
    model.scheme_cost(network, scheme)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchDims {
    MatMul {
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        c: usize,
        h: usize,
        w: usize,
        oc: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
}

impl BenchDims {
    pub fn kernel(&self) -> KernelKind {
        match self {
            BenchDims::MatMul { .. } => KernelKind::MatMul,
            BenchDims::Conv2d { .. } => KernelKind::Conv2d,
        }
    }

    /// Single-layer stand-in for the benchmark.
    pub fn layer(&self) -> Result<LayerDesc, ProxyError> {
        let r = match *self {
            BenchDims::MatMul { m, k, n } => LayerDesc::linear(0, vec![m, k], vec![m, n]),
            BenchDims::Conv2d {
                c,
                h,
                w,
                oc,
                k,
                stride,
                pad,
            } => LayerDesc::conv2d(0, [c, h, w], oc, [k, k], stride, pad),
        };
        r.map_err(|e| ProxyError::Record(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kernel: KernelKind,
    pub bw: u8,
    pub ba: u8,
    pub dims: BenchDims,
    pub cycles: u64,
}

impl BenchRecord {
    pub fn pair(&self) -> BitPair {
        BitPair::new(self.bw, self.ba)
    }

    pub fn features(&self) -> Result<CostFeatures, ProxyError> {
        if self.dims.kernel() != self.kernel {
            return Err(ProxyError::Record(format!(
                "{} record carries {} dims",
                self.kernel,
                self.dims.kernel()
            )));
        }
        Ok(CostFeatures::new(self.dims.layer()?.macs, self.pair()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub hardware_id: String,
    pub records: Vec<BenchRecord>,
}

impl HardwareProfile {
    pub fn load(path: &Path) -> Result<Self, ProxyError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProxyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProxyError> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|source| ProxyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub const MIN_RECORDS_PER_KERNEL: usize = 8;
pub const HOLDOUT_FRACTION: f64 = 0.2;
pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Least-squares solution of `x * beta ≈ y` (x has full column count `d`).
/// Columns are scaled to unit max-abs before a thin QR; a rank-deficient
/// design falls back to ridge on the scaled columns.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let d = x.ncols();
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            let m = x.column(j).amax();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).unscale_mut(*s);
    }
    let qr = xs.clone().qr();
    let r = qr.r();
    let diag_max = (0..d).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let full_rank = x.nrows() >= d && (0..d).all(|i| r[(i, i)].abs() > 1e-10 * diag_max.max(1e-300));
    let beta_s = if full_rank {
        let qty = qr.q().transpose() * y;
        r.solve_upper_triangular(&qty).expect("nonsingular triangular factor")
    } else {
        let xtx = xs.transpose() * &xs + DMatrix::identity(d, d) * RIDGE_LAMBDA;
        let xty = xs.transpose() * y;
        xtx.cholesky().expect("ridge system is positive definite").solve(&xty)
    };
    let beta = DVector::from_iterator(d, beta_s.iter().zip(&scales).map(|(b, s)| b / s));
    (beta, !full_rank)
}

fn fit_linear(rows: &[([f64; 3], f64)]) -> (LinearParams, bool) {
    let n = rows.len();
    let x = DMatrix::from_fn(n, 4, |i, j| if j < 3 { rows[i].0[j] } else { 1.0 });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.1));
    let (b, ridge) = least_squares(&x, &y);
    (
        LinearParams {
            beta_m: b[0],
            beta_a: b[1],
            beta_w: b[2],
            c: b[3],
        },
        ridge,
    )
}

fn fit_bops_line(rows: &[(f64, f64)]) -> (f64, f64) {
    let n = rows.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { rows[i].0 } else { 1.0 });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.1));
    let (b, _) = least_squares(&x, &y);
    (b[0], b[1])
}

struct Sample {
    macs: u64,
    pair: BitPair,
    feats: CostFeatures,
    cycles: f64,
}

fn fit_kernel(kind: ProxyKind, data: &[&Sample], forest: &ForestConfig) -> Result<(KernelParams, bool), ProxyError> {
    Ok(match kind {
        ProxyKind::Bops => unreachable!("bops needs no fit"),
        ProxyKind::BopsLinear => {
            let rows: Vec<(f64, f64)> = data
                .iter()
                .map(|s| (layer_bops(s.macs, s.pair) as f64, s.cycles))
                .collect();
            let (slope, intercept) = fit_bops_line(&rows);
            (KernelParams::BopsLine { slope, intercept }, false)
        }
        ProxyKind::LinearCbops => {
            let rows: Vec<([f64; 3], f64)> = data.iter().map(|s| (s.feats.as_array(), s.cycles)).collect();
            let (lp, ridge) = fit_linear(&rows);
            (KernelParams::Linear(lp), ridge)
        }
        ProxyKind::TreeCbops => {
            let rows: Vec<([f64; 3], f64)> = data.iter().map(|s| (s.feats.as_array(), s.cycles)).collect();
            let (lp, ridge) = fit_linear(&rows);
            let x: Vec<Vec<f64>> = rows.iter().map(|r| r.0.to_vec()).collect();
            let y: Vec<f64> = rows.iter().zip(data).map(|(r, s)| r.1 - lp.eval(&s.feats)).collect();
            let residual = surrogate::fit_matrix(&x, &y, forest)?;
            (KernelParams::Tree { linear: lp, residual }, ridge)
        }
    })
}

/// Fits one sub-model per kernel kind present in the profile. The report
/// comes from a seeded 80/20 split; the stored parameters are refit on all
/// records.
pub fn fit_proxy(profile: &HardwareProfile, kind: ProxyKind, forest: &ForestConfig) -> Result<ProxyModel, ProxyError> {
    let mut model = ProxyModel {
        kind,
        hardware_id: Some(profile.hardware_id.clone()),
        kernels: BTreeMap::new(),
        forest: (kind == ProxyKind::TreeCbops).then(|| forest.clone()),
        fit_report: BTreeMap::new(),
    };
    if kind == ProxyKind::Bops {
        return Ok(model);
    }
    let mut by_kernel: BTreeMap<KernelKind, Vec<Sample>> = BTreeMap::new();
    for r in &profile.records {
        if r.cycles == 0 {
            return Err(ProxyError::Record("cycles must be positive".into()));
        }
        let feats = r.features()?;
        let macs = r.dims.layer()?.macs;
        by_kernel.entry(r.kernel).or_default().push(Sample {
            macs,
            pair: r.pair(),
            feats,
            cycles: r.cycles as f64,
        });
    }
    if by_kernel.is_empty() {
        return Err(ProxyError::TooFewRecords {
            kernel: KernelKind::MatMul,
            need: MIN_RECORDS_PER_KERNEL,
            got: 0,
        });
    }
    for (k, samples) in &by_kernel {
        if samples.len() < MIN_RECORDS_PER_KERNEL {
            return Err(ProxyError::TooFewRecords {
                kernel: *k,
                need: MIN_RECORDS_PER_KERNEL,
                got: samples.len(),
            });
        }
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut rng::stream(forest.seed, 0x5eed_0000 + *k as u64));
        let n_test = ((samples.len() as f64 * HOLDOUT_FRACTION).round() as usize).max(1);
        let (test_idx, train_idx) = idx.split_at(n_test);
        let train: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
        let (held, _) = fit_kernel(kind, &train, forest)?;
        let y: Vec<f64> = test_idx.iter().map(|&i| samples[i].cycles).collect();
        let pred: Vec<f64> = test_idx
            .iter()
            .map(|&i| held.eval(samples[i].macs, samples[i].pair))
            .collect::<Result<_, _>>()?;
        let all: Vec<&Sample> = samples.iter().collect();
        let (params, ridge) = fit_kernel(kind, &all, forest)?;
        model.fit_report.insert(
            *k,
            KernelFitReport {
                n_train: train.len(),
                n_test,
                r2: stats::r2(&y, &pred),
                rmse: stats::rmse(&y, &pred),
                ridge,
            },
        );
        model.kernels.insert(*k, params);
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r2: f64,
    pub rank_corr: f64,
}

/// R² and Spearman correlation of predicted vs measured scheme latency.
pub fn correlation_report(
    model: &dyn CostModel,
    network: &NetworkIR,
    schemes: &[QuantScheme],
    simulator: &dyn CostModel,
) -> Result<Correlation, ProxyError> {
    if schemes.len() < 2 {
        return Err(ProxyError::Degenerate);
    }
    let mut pred = Vec::with_capacity(schemes.len());
    let mut meas = Vec::with_capacity(schemes.len());
    for s in schemes {
        pred.push(model.scheme_cost(network, s)?);
        meas.push(simulator.scheme_cost(network, s)?);
    }
    correlation(&pred, &meas)
}

pub fn correlation(pred: &[f64], meas: &[f64]) -> Result<Correlation, ProxyError> {
    let r2 = stats::r2(meas, pred).ok_or(ProxyError::Degenerate)?;
    let rank_corr = stats::spearman(pred, meas).ok_or(ProxyError::Degenerate)?;
    Ok(Correlation { r2, rank_corr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::LayerDesc;

    fn one_layer(macs_in: usize, macs_out: usize) -> NetworkIR {
        NetworkIR::new("t", vec![LayerDesc::linear(0, vec![macs_in], vec![macs_out]).unwrap()]).unwrap()
    }

    #[test]
    fn bops_examples() {
        let net = one_layer(10, 10);
        let s = QuantScheme::new(vec![BitPair::new(4, 8)]);
        assert_eq!(bops(&net, &s).unwrap(), 3200);
        assert!(bops(&net, &QuantScheme::uniform(2, 8)).is_err());
    }

    #[test]
    fn feature_examples() {
        assert_eq!(
            CostFeatures::new(100, BitPair::new(4, 8)),
            CostFeatures {
                bmacs: 800,
                aloads: 800,
                wloads: 400
            }
        );
        assert_eq!(
            CostFeatures::new(100, BitPair::new(1, 2)),
            CostFeatures {
                bmacs: 200,
                aloads: 200,
                wloads: 100
            }
        );
        let f = CostFeatures::new(7, BitPair::uniform(8));
        assert!(f.bmacs == 56 && f.aloads == 56 && f.wloads == 56);
    }

    #[test]
    fn bops_kind_is_bops() {
        let net = one_layer(10, 10);
        let s = QuantScheme::new(vec![BitPair::new(2, 4)]);
        let m = ProxyModel::bops();
        assert_eq!(predict_latency(&m, &net, &s).unwrap(), bops(&net, &s).unwrap() as f64);
    }

    #[test]
    fn unfitted_kernel() {
        let mut m = ProxyModel::bops();
        m.kind = ProxyKind::LinearCbops;
        let net = one_layer(4, 4);
        assert!(matches!(
            predict_latency(&m, &net, &QuantScheme::uniform(1, 8)),
            Err(ProxyError::Unfitted(KernelKind::MatMul))
        ));
    }

    #[test]
    fn cost_table_matches_model() {
        let c1 = LayerDesc::conv2d(0, [1, 8, 8], 4, [3, 3], 1, 0).unwrap();
        let f1 = LayerDesc::linear(1, vec![144], vec![10]).unwrap();
        let net = NetworkIR::new("t", vec![c1, f1]).unwrap();
        let t = CostTable::build(&net, &BitwidthSet::qat(), &Bops).unwrap();
        let s = QuantScheme::new(vec![BitPair::new(2, 8), BitPair::new(1, 4)]);
        assert_eq!(t.cost(&s), bops(&net, &s).unwrap() as f64);
    }

    #[test]
    fn ridge_fallback_on_collinear_design() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => i as f64,
            1 => 2.0 * i as f64,
            _ => 1.0,
        });
        let y = DVector::from_fn(6, |i, _| 3.0 * i as f64 + 1.0);
        let (b, ridge) = least_squares(&x, &y);
        assert!(ridge);
        let pred = &x * &b;
        assert!((pred - y).amax() < 1e-4);
    }
}
