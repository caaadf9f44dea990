//! Deterministic synthetic accuracy surface over bitwidth schemes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model_ir::QuantScheme;
use crate::rng;

/// `g(b) = 1 - 2^-b`, the diminishing-returns curve.
pub fn g(b: u8) -> f64 {
    1.0 - (-(b as f64)).exp2()
}

/// Precision deficit relative to 8 bits.
fn deficit(b: u8) -> f64 {
    g(8) - g(b)
}

/// Extra penalty below 4 bits.
pub fn cliff(b: u8) -> f64 {
    (4.0 - b as f64).max(0.0) / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub acc_max: f64,
    pub w_sens: Vec<f64>,
    pub a_sens: Vec<f64>,
    pub w_cliff: Vec<f64>,
    pub a_cliff: Vec<f64>,
    /// Penalty on the product of two layers' weight deficits.
    pub interactions: Vec<Interaction>,
    pub seed: u64,
}

impl SyntheticOracle {
    /// Random sensitivities for `layers` layers; the first and last layers
    /// are about twice as sensitive as the rest.
    pub fn new(layers: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x0AC1E);
        let scale = 0.3 / layers.max(1) as f64;
        let end = |i: usize| if i == 0 || i + 1 == layers { 2.0 } else { 1.0 };
        let mut draw = |lo: f64, hi: f64, i: usize| r.random_range(lo..hi) * scale * end(i);
        let mut w_sens = Vec::with_capacity(layers);
        let mut a_sens = Vec::with_capacity(layers);
        let mut w_cliff = Vec::with_capacity(layers);
        let mut a_cliff = Vec::with_capacity(layers);
        for i in 0..layers {
            w_sens.push(draw(0.3, 1.2, i));
            a_sens.push(draw(0.3, 1.2, i));
            w_cliff.push(draw(0.1, 0.5, i));
            a_cliff.push(draw(0.1, 0.5, i));
        }
        let interactions = (0..layers.saturating_sub(1))
            .map(|i| Interaction {
                i,
                j: i + 1,
                weight: r.random_range(0.0..1.0) * scale,
            })
            .collect();
        SyntheticOracle {
            acc_max: 0.95,
            w_sens,
            a_sens,
            w_cliff,
            a_cliff,
            interactions,
            seed,
        }
    }

    pub fn layers(&self) -> usize {
        self.w_sens.len()
    }

    pub fn accuracy(&self, scheme: &QuantScheme) -> Result<f64, EvalError> {
        if scheme.len() != self.layers() {
            return Err(EvalError::LengthMismatch {
                got: scheme.len(),
                want: self.layers(),
            });
        }
        let mut acc = self.acc_max;
        for (i, p) in scheme.pairs.iter().enumerate() {
            acc -= self.w_sens[i] * deficit(p.w) + self.a_sens[i] * deficit(p.a);
            acc -= self.w_cliff[i] * cliff(p.w) + self.a_cliff[i] * cliff(p.a);
        }
        for t in &self.interactions {
            acc -= t.weight * deficit(scheme.pairs[t.i].w) * deficit(scheme.pairs[t.j].w);
        }
        Ok(acc.clamp(0.0, 1.0))
    }
}

pub fn oracle_accuracy(oracle: &SyntheticOracle, scheme: &QuantScheme) -> Result<f64, EvalError> {
    oracle.accuracy(scheme)
}
