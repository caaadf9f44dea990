//! Dense MLP trainer in f64 with optional fake-quant (STE) in the forward
//! pass.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::EvalError;
use crate::model_ir::{LayerKind, LayerWeights, NetworkIR, QuantScheme, WeightStore};
use crate::quant::{fake_quant, FakeQuant};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fin: usize,
    pub fout: usize,
    /// Row-major `[fout, fin]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub relu: bool,
}

/// Fake-quant widths for one layer; `None` keeps that tensor in float.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerQuant {
    pub w: Option<u8>,
    pub a: Option<u8>,
}

pub fn scheme_quant(s: &QuantScheme) -> Vec<LayerQuant> {
    s.pairs
        .iter()
        .map(|p| LayerQuant {
            w: Some(p.w),
            a: Some(p.a),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// He-uniform initialisation; ReLU on all but the last layer.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x1417);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fin, fout) = (sizes[i], sizes[i + 1]);
                let lim = (6.0 / fin as f64).sqrt();
                Dense {
                    fin,
                    fout,
                    w: (0..fin * fout).map(|_| r.random_range(-lim..lim)).collect(),
                    b: vec![0.0; fout],
                    relu: i + 1 < n,
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Linear-only networks with single-row inputs.
    pub fn from_network(net: &NetworkIR) -> Result<Self, EvalError> {
        let ws = net.weights.as_ref().ok_or(EvalError::MissingWeights)?;
        let layers = net
            .layers
            .iter()
            .zip(&ws.layers)
            .map(|(l, lw)| {
                if l.kind != LayerKind::Linear || l.gemm_rows() != 1 {
                    return Err(EvalError::Unsupported(format!(
                        "retraining supports single-row Linear layers only (layer {} is {})",
                        l.index, l.kind
                    )));
                }
                Ok(Dense {
                    fin: l.gemm_k(),
                    fout: l.gemm_n(),
                    w: lw.weight.iter().map(|&v| v as f64).collect(),
                    b: lw.bias.iter().map(|&v| v as f64).collect(),
                    relu: l.relu,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Mlp { layers })
    }

    pub fn weight_store(&self) -> WeightStore {
        WeightStore {
            layers: self
                .layers
                .iter()
                .map(|d| LayerWeights {
                    weight: d.w.iter().map(|&v| v as f32).collect(),
                    bias: d.b.iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|d| d.w.len() + d.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for d in &self.layers {
            cur = affine(d, &d.w, &cur);
        }
        cur
    }

    /// Mean softmax cross-entropy and its gradient over a batch.
    pub fn loss_grad(&self, xs: &[&[f64]], ys: &[u32], quant: &[LayerQuant]) -> (f64, Grads) {
        let nl = self.layers.len();
        let q = |i: usize| quant.get(i).copied().unwrap_or_default();
        let wq: Vec<Option<FakeQuant<f64>>> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, d)| q(i).w.map(|b| fake_quant(&d.w, b)))
            .collect();
        let weights: Vec<&[f64]> = self
            .layers
            .iter()
            .zip(&wq)
            .map(|(d, f)| f.as_ref().map_or(&d.w[..], |f| &f.values[..]))
            .collect();
        let mut gw: Vec<Vec<f64>> = self.layers.iter().map(|d| vec![0.0; d.w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.layers.iter().map(|d| vec![0.0; d.b.len()]).collect();
        let mut loss = 0.0;
        let inv = 1.0 / xs.len() as f64;
        for (&x, &y) in xs.iter().zip(ys) {
            // Forward, caching each layer's (possibly quantized) input and
            // activation-quant node.
            let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(nl);
            let mut aq: Vec<Option<FakeQuant<f64>>> = Vec::with_capacity(nl);
            let mut pre: Vec<Vec<f64>> = Vec::with_capacity(nl);
            let mut cur = x.to_vec();
            for (i, d) in self.layers.iter().enumerate() {
                let f = q(i).a.map(|b| fake_quant(&cur, b));
                let input = f.as_ref().map_or(cur.clone(), |f| f.values.clone());
                let z = linear(d, weights[i], &input);
                cur = if d.relu {
                    z.iter().map(|&v| v.max(0.0)).collect()
                } else {
                    z.clone()
                };
                inputs.push(input);
                aq.push(f);
                pre.push(z);
            }
            let m = cur.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = cur.iter().map(|&v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss += (sum.ln() + m - cur[y as usize]) * inv;
            let mut delta: Vec<f64> = exps.iter().map(|&e| e / sum * inv).collect();
            delta[y as usize] -= inv;
            for i in (0..nl).rev() {
                let d = &self.layers[i];
                if d.relu {
                    for (g, &z) in delta.iter_mut().zip(&pre[i]) {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                for o in 0..d.fout {
                    gb[i][o] += delta[o];
                    let row = &mut gw[i][o * d.fin..(o + 1) * d.fin];
                    for (g, &a) in row.iter_mut().zip(&inputs[i]) {
                        *g += delta[o] * a;
                    }
                }
                if i > 0 {
                    let mut din = vec![0.0; d.fin];
                    for o in 0..d.fout {
                        let row = &weights[i][o * d.fin..(o + 1) * d.fin];
                        for (g, &w) in din.iter_mut().zip(row) {
                            *g += delta[o] * w;
                        }
                    }
                    delta = match &aq[i] {
                        Some(f) => f.backward(&din),
                        None => din,
                    };
                }
            }
        }
        for (g, f) in gw.iter_mut().zip(&wq) {
            if let Some(f) = f {
                *g = f.backward(g);
            }
        }
        (loss, Grads { w: gw, b: gb })
    }

    /// SGD with momentum; returns the mean loss of each epoch.
    pub fn train(&mut self, data: &Dataset, epochs: u32, sgd: &SgdConfig, quant: &[LayerQuant], seed: u64) -> Vec<f64> {
        let xs: Vec<Vec<f64>> = (0..data.train_len())
            .map(|i| data.train_row(i).iter().map(|&v| v as f64).collect())
            .collect();
        let mut vw: Vec<Vec<f64>> = self.layers.iter().map(|d| vec![0.0; d.w.len()]).collect();
        let mut vb: Vec<Vec<f64>> = self.layers.iter().map(|d| vec![0.0; d.b.len()]).collect();
        let mut history = Vec::with_capacity(epochs as usize);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for e in 0..epochs {
            order.shuffle(&mut rng::stream(seed, e as u64));
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(sgd.batch.max(1)) {
                let bx: Vec<&[f64]> = chunk.iter().map(|&i| &xs[i][..]).collect();
                let by: Vec<u32> = chunk.iter().map(|&i| data.train_y[i]).collect();
                let (loss, g) = self.loss_grad(&bx, &by, quant);
                total += loss;
                batches += 1;
                for (i, d) in self.layers.iter_mut().enumerate() {
                    step(&mut d.w, &mut vw[i], &g.w[i], sgd);
                    step(&mut d.b, &mut vb[i], &g.b[i], sgd);
                }
            }
            history.push(total / batches as f64);
        }
        history
    }

    /// Float top-1 accuracy on the test split.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let correct = (0..data.test_len())
            .filter(|&i| {
                let x: Vec<f64> = data.test_row(i).iter().map(|&v| v as f64).collect();
                let out = self.forward(&x);
                let mut best = 0;
                for (j, &v) in out.iter().enumerate() {
                    if v > out[best] {
                        best = j;
                    }
                }
                best as u32 == data.test_y[i]
            })
            .count();
        correct as f64 / data.test_len() as f64
    }
}

fn step(p: &mut [f64], v: &mut [f64], g: &[f64], sgd: &SgdConfig) {
    for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = sgd.momentum * *v + g;
        *p -= sgd.lr * *v;
    }
}

fn linear(d: &Dense, w: &[f64], x: &[f64]) -> Vec<f64> {
    (0..d.fout)
        .map(|o| {
            let row = &w[o * d.fin..(o + 1) * d.fin];
            row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + d.b[o]
        })
        .collect()
}

fn affine(d: &Dense, w: &[f64], x: &[f64]) -> Vec<f64> {
    let z = linear(d, w, x);
    if d.relu {
        z.into_iter().map(|v| v.max(0.0)).collect()
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let ys = (0..n).map(|_| r.random_range(0..4)).collect();
        (xs, ys)
    }

    fn param(m: &mut Mlp, layer: usize, weight: bool, j: usize) -> &mut f64 {
        if weight {
            &mut m.layers[layer].w[j]
        } else {
            &mut m.layers[layer].b[j]
        }
    }

    fn loss_at(m: &Mlp, xs: &[&[f64]], ys: &[u32]) -> f64 {
        m.loss_grad(xs, ys, &[]).0
    }

    #[test]
    fn float_gradients_match_central_differences() {
        let mut m = Mlp::init(&[16, 32, 4], 3);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for d in &mut m.layers {
            d.b.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
        }
        let (xs, ys) = batch(8, 16, 2);
        let xr: Vec<&[f64]> = xs.iter().map(|v| &v[..]).collect();
        let (_, g) = m.loss_grad(&xr, &ys, &[]);
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let li = r.random_range(0..2);
            let is_w = r.random_bool(0.8);
            let len = if is_w {
                m.layers[li].w.len()
            } else {
                m.layers[li].b.len()
            };
            let j = r.random_range(0..len);
            let mut p = m.clone();
            *param(&mut p, li, is_w, j) += eps;
            let lp = loss_at(&p, &xr, &ys);
            *param(&mut p, li, is_w, j) -= 2.0 * eps;
            let lm = loss_at(&p, &xr, &ys);
            let fd = (lp - lm) / (2.0 * eps);
            let an = if is_w { g.w[li][j] } else { g.b[li][j] };
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn training_reduces_loss() {
        let data = Dataset::gaussian_clusters(&Default::default());
        let mut m = Mlp::init(&[16, 32, 4], 0);
        let h = m.train(&data, 5, &SgdConfig::default(), &[], 1);
        assert!(h[4] < h[0]);
    }
}
