//! Accuracy evaluators: the synthetic oracle, integer PTQ validation and
//! short fake-quant retraining.

pub mod data;
pub mod mlp;
pub mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, EngineError};
use crate::model_ir::{IrError, LayerDesc, NetworkIR, QuantScheme};
use crate::rng;

pub use data::{ClusterConfig, Dataset};
pub use mlp::{LayerQuant, Mlp, SgdConfig};
pub use oracle::{oracle_accuracy, SyntheticOracle};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scheme has {got} layers, expected {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("network has no trained weights")]
    MissingWeights,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Maps a scheme to an accuracy in `[0, 1]`.
pub trait Evaluator: Sync {
    fn evaluate(&self, scheme: &QuantScheme) -> Result<f64, EvalError>;
}

#[derive(Debug, Clone)]
pub struct OracleEvaluator {
    pub oracle: SyntheticOracle,
}

impl Evaluator for OracleEvaluator {
    fn evaluate(&self, scheme: &QuantScheme) -> Result<f64, EvalError> {
        self.oracle.accuracy(scheme)
    }
}

/// Top-1 test accuracy of the integer-quantized network.
pub fn ptq_evaluate(network: &NetworkIR, data: &Dataset, scheme: &QuantScheme) -> Result<f64, EvalError> {
    let model = engine::quantize_model(network, scheme)?;
    if network.input_len() != data.dim {
        return Err(EvalError::Dataset(format!(
            "network takes {} inputs, dataset rows have {}",
            network.input_len(),
            data.dim
        )));
    }
    let hits: Vec<bool> = (0..data.test_len())
        .into_par_iter()
        .map(|i| {
            let logits = engine::infer(&model, data.test_row(i))?;
            Ok(engine::argmax(&logits) as u32 == data.test_y[i])
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.test_len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QatBudget {
    /// About 1/20 of pretraining.
    Short,
    /// About 1/10 of pretraining.
    Final,
}

/// Retraining epochs: pretraining epochs / 20 (short) or / 10 (final),
/// rounded up, at least one.
pub fn qat_epochs(pretrain_epochs: u32, budget: QatBudget) -> u32 {
    let div = match budget {
        QatBudget::Short => 20,
        QatBudget::Final => 10,
    };
    pretrain_epochs.div_ceil(div).max(1)
}

pub const DEFAULT_PRETRAIN_EPOCHS: u32 = 40;

/// Seed for one scheme's retraining run.
pub fn scheme_seed(seed: u64, scheme: &QuantScheme) -> u64 {
    let bytes: Vec<u8> = scheme.pairs.iter().flat_map(|p| [p.w, p.a]).collect();
    rng::derive(seed, rng::fnv1a(&bytes))
}

/// Fine-tunes a copy of the weights with fake-quant at the scheme's
/// bitwidths, then validates on the integer path. Returns the accuracy and
/// the per-epoch training loss.
pub fn qat_train(
    network: &NetworkIR,
    data: &Dataset,
    scheme: &QuantScheme,
    budget: QatBudget,
    sgd: &SgdConfig,
    seed: u64,
) -> Result<(f64, Vec<f64>, NetworkIR), EvalError> {
    if scheme.len() != network.len() {
        return Err(EvalError::LengthMismatch {
            got: scheme.len(),
            want: network.len(),
        });
    }
    let mut mlp = Mlp::from_network(network)?;
    let pre = network.meta.pretrain_epochs.unwrap_or(DEFAULT_PRETRAIN_EPOCHS);
    let epochs = qat_epochs(pre, budget);
    let history = mlp.train(data, epochs, sgd, &mlp::scheme_quant(scheme), scheme_seed(seed, scheme));
    let mut tuned = network.clone();
    tuned.weights = Some(mlp.weight_store());
    let acc = ptq_evaluate(&tuned, data, scheme)?;
    Ok((acc, history, tuned))
}

pub fn qat_evaluate(
    network: &NetworkIR,
    data: &Dataset,
    scheme: &QuantScheme,
    budget: QatBudget,
    sgd: &SgdConfig,
    seed: u64,
) -> Result<f64, EvalError> {
    qat_train(network, data, scheme, budget, sgd, seed).map(|r| r.0)
}

pub struct PtqEvaluator<'a> {
    pub network: &'a NetworkIR,
    pub data: &'a Dataset,
}

impl Evaluator for PtqEvaluator<'_> {
    fn evaluate(&self, scheme: &QuantScheme) -> Result<f64, EvalError> {
        ptq_evaluate(self.network, self.data, scheme)
    }
}

pub struct QatEvaluator<'a> {
    pub network: &'a NetworkIR,
    pub data: &'a Dataset,
    pub budget: QatBudget,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Evaluator for QatEvaluator<'_> {
    fn evaluate(&self, scheme: &QuantScheme) -> Result<f64, EvalError> {
        qat_evaluate(self.network, self.data, scheme, self.budget, &self.sgd, self.seed)
    }
}

/// Bundled tiny MLP (16 -> 32 -> 4) and its dataset.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub network: NetworkIR,
    pub data: Dataset,
}

pub fn tiny_mlp_fixture(seed: u64) -> Fixture {
    let data = Dataset::gaussian_clusters(&ClusterConfig {
        seed,
        ..Default::default()
    });
    let mut mlp = Mlp::init(&[data.dim, 32, data.classes], seed);
    mlp.train(&data, DEFAULT_PRETRAIN_EPOCHS, &SgdConfig::default(), &[], seed);
    let l0 = LayerDesc::linear(0, vec![data.dim], vec![32]).expect("static shape");
    let l1 = LayerDesc::linear(1, vec![32], vec![data.classes])
        .expect("static shape")
        .with_relu(false);
    let mut network = NetworkIR::new("tiny_mlp", vec![l0, l1])
        .expect("static shape")
        .with_weights(mlp.weight_store())
        .expect("shapes from the same sizes");
    network.meta.dataset = Some("gaussian-clusters".into());
    network.meta.float_accuracy = Some(mlp.accuracy(&data));
    network.meta.pretrain_epochs = Some(DEFAULT_PRETRAIN_EPOCHS);
    Fixture { network, data }
}

pub const FIXTURE_SEED: u64 = 2024;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::BitPair;

    #[test]
    fn epoch_rounding() {
        assert_eq!(qat_epochs(40, QatBudget::Short), 2);
        assert_eq!(qat_epochs(40, QatBudget::Final), 4);
        assert_eq!(qat_epochs(5, QatBudget::Short), 1);
        assert_eq!(qat_epochs(0, QatBudget::Final), 1);
    }

    #[test]
    fn scheme_seed_depends_on_scheme() {
        let a = QuantScheme::uniform(2, 8);
        let b = QuantScheme::new(vec![BitPair::new(8, 4), BitPair::uniform(8)]);
        assert_ne!(scheme_seed(1, &a), scheme_seed(1, &b));
        assert_eq!(scheme_seed(1, &a), scheme_seed(1, &a));
    }
}
