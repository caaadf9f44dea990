//! The search loop: initial sampling, surrogate fitting, banded proposal,
//! evaluation and budget accounting.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalError, Evaluator};
use crate::model_ir::{NetworkIR, QuantScheme};
use crate::proxy::{CostModel, CostTable, ProxyError};
use crate::rng;
use crate::sampler::{self, SamplerConfig, SamplerError};
use crate::surrogate::{self, ForestConfig};

const TAG_INIT: u64 = 0x1417;
const TAG_GA: u64 = 0x6A;
const TAG_FOREST: u64 = 0xF0;
const TAG_RANDOM: u64 = 0x5EA;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error("evaluation of sample {index} failed: {source}")]
    Evaluator {
        index: usize,
        source: EvalError,
        partial: Box<SearchState>,
    },
    #[error("surrogate: {0}")]
    Surrogate(#[from] surrogate::SurrogateError),
}

impl ExploreError {
    /// State reached before an evaluator failure.
    pub fn partial(&self) -> Option<&SearchState> {
        match self {
            ExploreError::Evaluator { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ptq,
    Qat,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Bops,
    Proxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limit {
    /// Fraction of the uniform top-bitwidth cost.
    Ratio(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub limit: Limit,
}

impl Constraint {
    pub fn bops_ratio(r: f64) -> Self {
        Constraint {
            kind: ConstraintKind::Bops,
            limit: Limit::Ratio(r),
        }
    }

    pub fn resolve(&self, table: &CostTable) -> f64 {
        match self.limit {
            Limit::Ratio(r) => r * table.cost(&QuantScheme::uniform(table.layers(), table.bits().max())),
            Limit::Absolute(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialDesign {
    Orthogonal,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: Mode,
    pub constraint: Constraint,
    /// Total evaluations, initial samples included.
    pub budget: usize,
    pub initial: InitialDesign,
    /// Restrict proposals to the moving band below the constraint.
    pub banded: bool,
    pub sampler: SamplerConfig,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(mode: Mode, constraint: Constraint, seed: u64) -> Self {
        SearchConfig {
            mode,
            constraint,
            budget: 48,
            initial: InitialDesign::Orthogonal,
            banded: true,
            sampler: SamplerConfig::default(),
            forest: ForestConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.budget <= self.sampler.n_init {
            return Err(ExploreError::Config(format!(
                "budget {} must exceed the {} initial samples",
                self.budget, self.sampler.n_init
            )));
        }
        match self.constraint.limit {
            Limit::Ratio(r) if !(r > 0.0 && r <= 1.0) => {
                return Err(ExploreError::Config(format!("ratio {r} outside (0, 1]")));
            }
            Limit::Absolute(c) if !(c.is_finite() && c > 0.0) => {
                return Err(ExploreError::Config(format!(
                    "absolute constraint {c} must be positive"
                )));
            }
            _ => {}
        }
        self.sampler.validate()?;
        self.forest.validate()?;
        Ok(())
    }

    fn sampler_cfg(&self) -> SamplerConfig {
        SamplerConfig {
            seed: rng::derive(self.seed, TAG_INIT),
            ..self.sampler.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scheme: QuantScheme,
    pub accuracy: f64,
    pub cost: f64,
    pub feasible: bool,
    /// 0 for initial samples, then the 1-based search iteration.
    pub iteration: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchState {
    pub samples: Vec<Sample>,
    /// Index of the most accurate feasible sample.
    pub best: Option<usize>,
    pub iteration: usize,
    /// Best feasible accuracy after the initial set and after each iteration.
    pub trace: Vec<f64>,
}

impl SearchState {
    fn push(&mut self, s: Sample) {
        let i = self.samples.len();
        let better = match self.best {
            None => s.feasible,
            Some(b) => s.feasible && s.accuracy > self.samples[b].accuracy,
        };
        self.samples.push(s);
        if better {
            self.best = Some(i);
        }
    }

    fn record_trace(&mut self) {
        if let Some(b) = self.best {
            self.trace.push(self.samples[b].accuracy);
        }
    }

    pub fn best_sample(&self) -> Option<&Sample> {
        self.best.map(|b| &self.samples[b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub config: SearchConfig,
    pub network: String,
    pub constraint_value: f64,
    pub best_scheme: QuantScheme,
    pub best_accuracy: f64,
    pub best_cost: f64,
    pub samples: Vec<Sample>,
    pub trace: Vec<f64>,
}

impl SearchResult {
    pub fn new(config: &SearchConfig, network: &NetworkIR, constraint: f64, state: &SearchState) -> Option<Self> {
        let best = state.best_sample()?;
        Some(SearchResult {
            config: config.clone(),
            network: network.name.clone(),
            constraint_value: constraint,
            best_scheme: best.scheme.clone(),
            best_accuracy: best.accuracy,
            best_cost: best.cost,
            samples: state.samples.clone(),
            trace: state.trace.clone(),
        })
    }
}

fn evaluate_into(
    state: &mut SearchState,
    evaluator: &dyn Evaluator,
    sample: (QuantScheme, f64, usize, Option<f64>, bool),
    constraint: f64,
) -> Result<(), ExploreError> {
    let (scheme, cost, iteration, predicted, fallback) = sample;
    match evaluator.evaluate(&scheme) {
        Ok(accuracy) => {
            state.push(Sample {
                scheme,
                accuracy,
                cost,
                feasible: cost <= constraint,
                iteration,
                predicted,
                fallback,
            });
            Ok(())
        }
        Err(source) => Err(ExploreError::Evaluator {
            index: state.samples.len(),
            source,
            partial: Box::new(state.clone()),
        }),
    }
}

/// Runs the search and returns the final state; its `best` is the returned
/// scheme. The cost model is tabulated once per layer and bit pair.
pub fn explore(
    network: &NetworkIR,
    cfg: &SearchConfig,
    evaluator: &dyn Evaluator,
    cost_fn: &dyn CostModel,
) -> Result<(SearchState, f64), ExploreError> {
    cfg.validate()?;
    let table = CostTable::build(network, &cfg.sampler.bits, cost_fn)?;
    let constraint = cfg.constraint.resolve(&table);
    let scfg = cfg.sampler_cfg();
    sampler::check_feasible(&table, constraint, &scfg)?;
    let l = network.len();

    let initial = match cfg.initial {
        InitialDesign::Orthogonal => sampler::initial_samples(l, &scfg)?.schemes,
        InitialDesign::Random => {
            let mut r = rng::stream(scfg.seed, TAG_RANDOM);
            sampler::random_samples(l, scfg.n_init, &scfg.bits, &mut r)
        }
    };
    let mut state = SearchState::default();
    let mut seen: HashSet<QuantScheme> = HashSet::new();
    for s in initial {
        if seen.insert(s.clone()) {
            let cost = table.cost(&s);
            evaluate_into(&mut state, evaluator, (s, cost, 0, None, false), constraint)?;
        }
    }
    state.record_trace();

    let iterations = cfg.budget - state.samples.len();
    let mut ga_rng = rng::stream(cfg.seed, TAG_GA);
    for t in 0..iterations {
        let data: Vec<(QuantScheme, f64)> = state.samples.iter().map(|s| (s.scheme.clone(), s.accuracy)).collect();
        let fcfg = ForestConfig {
            seed: rng::derive(cfg.forest.seed ^ cfg.seed, TAG_FOREST + t as u64),
            ..cfg.forest.clone()
        };
        let forest = surrogate::fit(&data, &fcfg)?;
        let band = if cfg.banded {
            sampler::band(t, iterations.saturating_sub(1), constraint, &scfg)?
        } else {
            (0.0, constraint)
        };
        let p = match sampler::propose(&forest, &table, band, &scfg, &seen, &mut ga_rng) {
            Ok(p) => p,
            Err(SamplerError::Exhausted) => break,
            Err(e) => return Err(e.into()),
        };
        seen.insert(p.scheme.clone());
        evaluate_into(
            &mut state,
            evaluator,
            (p.scheme, p.cost, t + 1, Some(p.predicted), p.fallback),
            constraint,
        )?;
        state.iteration = t + 1;
        state.record_trace();
    }
    Ok((state, constraint))
}

/// Baseline: uniformly random feasible schemes, `budget` of them.
pub fn random_search(
    network: &NetworkIR,
    cfg: &SearchConfig,
    evaluator: &dyn Evaluator,
    cost_fn: &dyn CostModel,
) -> Result<(SearchState, f64), ExploreError> {
    cfg.validate()?;
    let table = CostTable::build(network, &cfg.sampler.bits, cost_fn)?;
    let constraint = cfg.constraint.resolve(&table);
    let scfg = cfg.sampler_cfg();
    sampler::check_feasible(&table, constraint, &scfg)?;
    let l = network.len();
    let pinned = vec![false; l];
    let mut r = rng::stream(cfg.seed, TAG_RANDOM ^ 0xFF);
    let mut state = SearchState::default();
    let mut seen = HashSet::new();
    let max_tries = 1000 * cfg.budget;
    let mut tries = 0;
    while state.samples.len() < cfg.budget && tries < max_tries {
        tries += 1;
        let mut s = sampler::random_scheme(l, &scfg.bits, &mut r);
        if table.cost(&s) > constraint {
            let late = tries > max_tries / 2;
            if !(late && sampler::repair(&mut s, &table, 0.0, constraint, &pinned)) {
                continue;
            }
        }
        if seen.insert(s.clone()) {
            let cost = table.cost(&s);
            let it = state.samples.len();
            evaluate_into(&mut state, evaluator, (s, cost, it, None, false), constraint)?;
            state.iteration = it;
            state.record_trace();
        }
    }
    Ok((state, constraint))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "rf-only")]
    RfOnly,
    #[serde(rename = "+orthogonal")]
    Orthogonal,
    #[serde(rename = "+near-constraint")]
    NearConstraint,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::RfOnly, Variant::Orthogonal, Variant::NearConstraint];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RfOnly => "rf-only",
            Variant::Orthogonal => "+orthogonal",
            Variant::NearConstraint => "+near-constraint",
        }
    }

    pub fn apply(self, cfg: &SearchConfig) -> SearchConfig {
        let (initial, banded) = match self {
            Variant::RfOnly => (InitialDesign::Random, false),
            Variant::Orthogonal => (InitialDesign::Orthogonal, false),
            Variant::NearConstraint => (InitialDesign::Orthogonal, true),
        };
        SearchConfig {
            initial,
            banded,
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_seed: Vec<f64>,
    pub mean_best: f64,
}

/// Runs every variant on the same seeds and reports mean best accuracy.
pub fn ablation_run(
    network: &NetworkIR,
    cfg: &SearchConfig,
    evaluator: &dyn Evaluator,
    cost_fn: &dyn CostModel,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>, ExploreError> {
    if variants.is_empty() {
        return Err(ExploreError::Config("no ablation variants".into()));
    }
    if seeds.is_empty() {
        return Err(ExploreError::Config("no seeds".into()));
    }
    variants
        .iter()
        .map(|&v| {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let c = SearchConfig { seed, ..v.apply(cfg) };
                    let (state, _) = explore(network, &c, evaluator, cost_fn)?;
                    Ok(state.best_sample().map_or(0.0, |s| s.accuracy))
                })
                .collect::<Result<Vec<f64>, ExploreError>>()?;
            let mean_best = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            Ok(AblationRow {
                variant: v,
                per_seed,
                mean_best,
            })
        })
        .collect()
}
