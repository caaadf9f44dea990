//! Random-forest regression built from CART trees.
//!
//! Used as the scheme -> accuracy predictor during search, and as the
//! nonlinear part of tree-based latency proxies.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::QuantScheme;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("feature rows have inconsistent lengths")]
    RaggedFeatures,
    #[error("expected {want} features, got {got}")]
    FeatureMismatch { want: usize, got: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Fraction of features examined per split (at least one).
    pub feature_subset: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            feature_subset: 1.0 / 3.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.n_trees == 0 {
            return Err(SurrogateError::Config("n_trees must be >= 1".into()));
        }
        if !(self.feature_subset > 0.0 && self.feature_subset <= 1.0) {
            return Err(SurrogateError::Config("feature_subset must be in (0, 1]".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(SurrogateError::Config("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }

    fn features_per_split(&self, d: usize) -> usize {
        ((self.feature_subset * d as f64).floor() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        count: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, count } => Some((*value, *count)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

/// Scheme features: `(w_1, a_1, ..., w_L, a_L)` as raw bit counts.
pub fn encode_scheme(scheme: &QuantScheme) -> Vec<f64> {
    scheme.pairs.iter().flat_map(|p| [p.w as f64, p.a as f64]).collect()
}

/// Fits a forest on `(scheme, accuracy)` samples.
pub fn fit(samples: &[(QuantScheme, f64)], cfg: &ForestConfig) -> Result<Forest, SurrogateError> {
    let x: Vec<Vec<f64>> = samples.iter().map(|(s, _)| encode_scheme(s)).collect();
    let y: Vec<f64> = samples.iter().map(|(_, a)| *a).collect();
    fit_matrix(&x, &y, cfg)
}

/// Fits a forest on a dense feature matrix.
pub fn fit_matrix(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Forest, SurrogateError> {
    cfg.validate()?;
    if x.len() < 2 || y.len() != x.len() {
        return Err(SurrogateError::TooFewSamples(x.len().min(y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(SurrogateError::RaggedFeatures);
    }
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(cfg.seed, t as u64);
            let n = x.len();
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y,
                cfg,
                d,
                rng: &mut rng,
                nodes: Vec::new(),
            };
            b.build(rows, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest {
        n_features: d,
        config: cfg.clone(),
        trees,
    })
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    d: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        let value = if pure {
            self.y[rows[0]]
        } else {
            rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64
        };
        self.nodes.push(Node::Leaf { value, count: n });
        let depth_hit = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_hit || n < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&row| self.x[row][best.feature] <= best.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Best variance-reduction split over a random feature subset; if no
    /// examined feature admits a valid split the remaining features are
    /// tried in shuffled order. Ties: lowest feature, then lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let mut order: Vec<usize> = (0..self.d).collect();
        order.shuffle(self.rng);
        let m = self.cfg.features_per_split(self.d);
        let mut first: Vec<usize> = order[..m].to_vec();
        first.sort_unstable();
        if let Some(c) = self.scan(rows, &first) {
            return Some(c);
        }
        for &f in &order[m..] {
            if let Some(c) = self.scan(rows, &[f]) {
                return Some(c);
            }
        }
        None
    }

    fn scan(&self, rows: &[usize], features: &[usize]) -> Option<Candidate> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let base = total * total / n as f64;
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in features {
            pts.clear();
            pts.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += pts[i].1;
                let nl = i + 1;
                let nr = n - nl;
                if pts[i].0 == pts[i + 1].0 || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - base;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold: 0.5 * (pts[i].0 + pts[i + 1].0),
                    });
                }
            }
        }
        best
    }
}

impl Forest {
    fn check(&self, x: &[f64]) -> Result<(), SurrogateError> {
        if x.len() != self.n_features {
            return Err(SurrogateError::FeatureMismatch {
                want: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Mean and population standard deviation over tree outputs.
    pub fn predict_with_spread_row(&self, x: &[f64]) -> Result<(f64, f64), SurrogateError> {
        self.check(x)?;
        let outs: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let m = outs.iter().sum::<f64>() / outs.len() as f64;
        let var = outs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / outs.len() as f64;
        Ok((m, var.sqrt()))
    }

    pub fn predict(&self, scheme: &QuantScheme) -> Result<f64, SurrogateError> {
        self.predict_row(&encode_scheme(scheme))
    }

    pub fn predict_with_spread(&self, scheme: &QuantScheme) -> Result<(f64, f64), SurrogateError> {
        self.predict_with_spread_row(&encode_scheme(scheme))
    }
}
