//! Scheme generators: layer-wise orthogonal initial sampling and a genetic
//! sampler that proposes candidates inside a cost band.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{BitPair, BitwidthSet, QuantScheme};
use crate::proxy::CostTable;
use crate::rng;
use crate::surrogate::{Forest, SurrogateError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("n_init must be >= 3, got {0}")]
    TooFewInitial(usize),
    #[error("network has no layers")]
    NoLayers,
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("constraint {constraint} is infeasible: cheapest scheme costs {min_cost}")]
    Infeasible { constraint: f64, min_cost: f64 },
    #[error("band iteration {t} outside schedule of length {total}")]
    BadIteration { t: usize, total: usize },
    #[error("no unevaluated feasible scheme found")]
    Exhausted,
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    /// Per-gene mutation probability; `None` means `1 / L`.
    pub mutation_rate: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 64,
            generations: 20,
            tournament: 3,
            mutation_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_init: usize,
    pub bits: BitwidthSet,
    pub protect_ends: bool,
    pub band_start_frac: f64,
    pub band_end_frac: f64,
    pub ga: GaConfig,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_init: 16,
            bits: BitwidthSet::qat(),
            protect_ends: true,
            band_start_frac: 0.8,
            band_end_frac: 0.5,
            ga: GaConfig::default(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.n_init < 3 {
            return Err(SamplerError::TooFewInitial(self.n_init));
        }
        if !(0.0 < self.band_end_frac && self.band_end_frac <= self.band_start_frac && self.band_start_frac <= 1.0) {
            return Err(SamplerError::Config(format!(
                "need 0 < band_end_frac ({}) <= band_start_frac ({}) <= 1",
                self.band_end_frac, self.band_start_frac
            )));
        }
        if self.ga.population < 2 || self.ga.tournament == 0 {
            return Err(SamplerError::Config(
                "population >= 2 and tournament >= 1 required".into(),
            ));
        }
        Ok(())
    }

    /// Layers held at `(b_max, b_max)` during proposal.
    pub fn pinned(&self, layers: usize) -> Vec<bool> {
        let mut p = vec![false; layers];
        if self.protect_ends && layers > 0 {
            p[0] = true;
            p[layers - 1] = true;
        }
        p
    }
}

const TAG_PERM: u64 = 1;

/// Initial schemes plus, for each, the layers it modified (empty for the
/// two extremes).
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSet {
    pub schemes: Vec<QuantScheme>,
    pub blocks: Vec<Vec<usize>>,
    pub block_size: usize,
}

/// Block size `N_m = max(ceil(L / (N_init - 2)), 1)`.
pub fn block_size(layers: usize, n_init: usize) -> usize {
    layers.div_ceil(n_init - 2).max(1)
}

/// Orthogonal initial sampling: the two uniform extremes, then `N_init - 2`
/// schemes that each re-draw a disjoint block of randomly permuted layers.
pub fn initial_samples(layers: usize, cfg: &SamplerConfig) -> Result<InitialSet, SamplerError> {
    if cfg.n_init < 3 {
        return Err(SamplerError::TooFewInitial(cfg.n_init));
    }
    if layers == 0 {
        return Err(SamplerError::NoLayers);
    }
    let bits = &cfg.bits;
    let top = BitPair::uniform(bits.max());
    let others: Vec<BitPair> = bits.pairs().into_iter().filter(|&p| p != top).collect();
    let mut rng = rng::stream(cfg.seed, TAG_PERM);
    let mut perm: Vec<usize> = (0..layers).collect();
    perm.shuffle(&mut rng);
    let nm = block_size(layers, cfg.n_init);

    let mut schemes = vec![
        QuantScheme::uniform(layers, bits.max()),
        QuantScheme::uniform(layers, bits.min()),
    ];
    let mut blocks = vec![Vec::new(), Vec::new()];
    for i in 0..cfg.n_init - 2 {
        let start = (i * nm).min(layers);
        let end = (start + nm).min(layers);
        let mut s = QuantScheme::uniform(layers, bits.max());
        let block: Vec<usize> = perm[start..end].to_vec();
        for &l in &block {
            if !others.is_empty() {
                s.pairs[l] = others[rng.random_range(0..others.len())];
            }
        }
        schemes.push(s);
        blocks.push(block);
    }
    Ok(InitialSet {
        schemes,
        blocks,
        block_size: nm,
    })
}

/// Uniformly random schemes (the non-orthogonal initial design).
pub fn random_samples(layers: usize, n: usize, bits: &BitwidthSet, rng: &mut ChaCha8Rng) -> Vec<QuantScheme> {
    (0..n).map(|_| random_scheme(layers, bits, rng)).collect()
}

pub fn random_scheme(layers: usize, bits: &BitwidthSet, rng: &mut ChaCha8Rng) -> QuantScheme {
    let pairs = bits.pairs();
    QuantScheme::new((0..layers).map(|_| pairs[rng.random_range(0..pairs.len())]).collect())
}

/// Cost band for iteration `t` of `total`: the lower edge moves linearly
/// from `band_start_frac * C` to `band_end_frac * C`.
pub fn band(t: usize, total: usize, constraint: f64, cfg: &SamplerConfig) -> Result<(f64, f64), SamplerError> {
    if t > total {
        return Err(SamplerError::BadIteration { t, total });
    }
    let frac = if total == 0 {
        cfg.band_start_frac
    } else {
        cfg.band_start_frac - (cfg.band_start_frac - cfg.band_end_frac) * t as f64 / total as f64
    };
    Ok((frac * constraint, constraint))
}

/// Cheapest reachable scheme given the pinned layers.
pub fn min_scheme(layers: usize, cfg: &SamplerConfig) -> QuantScheme {
    let mut s = QuantScheme::uniform(layers, cfg.bits.min());
    for (i, pin) in cfg.pinned(layers).into_iter().enumerate() {
        if pin {
            s.pairs[i] = BitPair::uniform(cfg.bits.max());
        }
    }
    s
}

pub fn check_feasible(table: &CostTable, constraint: f64, cfg: &SamplerConfig) -> Result<(), SamplerError> {
    let min_cost = table.cost(&min_scheme(table.layers(), cfg));
    if min_cost > constraint {
        return Err(SamplerError::Infeasible { constraint, min_cost });
    }
    Ok(())
}

/// Greedy repair toward `[lo, hi]`. Too expensive: lower the larger
/// bitwidth of the costliest adjustable layer. Too cheap: raise the smaller
/// bitwidth of the cheapest layer whose raise stays under `hi`. At most
/// `4L` steps; returns whether the result lies in the band.
pub fn repair(s: &mut QuantScheme, table: &CostTable, lo: f64, hi: f64, pinned: &[bool]) -> bool {
    let bits = table.bits();
    let l = s.len();
    for _ in 0..4 * l {
        let cost = table.cost(s);
        if cost > hi {
            let mut order: Vec<usize> = (0..l).filter(|&i| !pinned[i]).collect();
            order.sort_by(|&a, &b| {
                table
                    .layer(b, s.pairs[b])
                    .total_cmp(&table.layer(a, s.pairs[a]))
                    .then(a.cmp(&b))
            });
            let step = order
                .into_iter()
                .find_map(|i| step_down(s.pairs[i], bits).map(|p| (i, p)));
            match step {
                Some((i, p)) => s.pairs[i] = p,
                None => return false,
            }
        } else if cost < lo {
            let mut order: Vec<usize> = (0..l).filter(|&i| !pinned[i]).collect();
            order.sort_by(|&a, &b| {
                table
                    .layer(a, s.pairs[a])
                    .total_cmp(&table.layer(b, s.pairs[b]))
                    .then(a.cmp(&b))
            });
            let step = order.into_iter().find_map(|i| {
                let p = step_up(s.pairs[i], bits)?;
                let next = cost - table.layer(i, s.pairs[i]) + table.layer(i, p);
                (next <= hi).then_some((i, p))
            });
            match step {
                Some((i, p)) => s.pairs[i] = p,
                None => return false,
            }
        } else {
            return true;
        }
    }
    let c = table.cost(s);
    lo <= c && c <= hi
}

fn step_down(p: BitPair, bits: &BitwidthSet) -> Option<BitPair> {
    if p.w >= p.a {
        bits.step_down(p.w)
            .map(|w| BitPair::new(w, p.a))
            .or_else(|| bits.step_down(p.a).map(|a| BitPair::new(p.w, a)))
    } else {
        bits.step_down(p.a)
            .map(|a| BitPair::new(p.w, a))
            .or_else(|| bits.step_down(p.w).map(|w| BitPair::new(w, p.a)))
    }
}

fn step_up(p: BitPair, bits: &BitwidthSet) -> Option<BitPair> {
    if p.a <= p.w {
        bits.step_up(p.a)
            .map(|a| BitPair::new(p.w, a))
            .or_else(|| bits.step_up(p.w).map(|w| BitPair::new(w, p.a)))
    } else {
        bits.step_up(p.w)
            .map(|w| BitPair::new(w, p.a))
            .or_else(|| bits.step_up(p.a).map(|a| BitPair::new(p.w, a)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub scheme: QuantScheme,
    pub predicted: f64,
    pub cost: f64,
    /// Set when the GA produced nothing new and a random scheme was drawn.
    pub fallback: bool,
}

/// Scores a scheme; higher is better.
pub trait Predictor: Sync {
    fn score(&self, s: &QuantScheme) -> Result<f64, SurrogateError>;
}

impl Predictor for Forest {
    fn score(&self, s: &QuantScheme) -> Result<f64, SurrogateError> {
        self.predict(s)
    }
}

struct Individual {
    scheme: QuantScheme,
    feasible: bool,
}

/// Genetic search for the unevaluated in-band scheme with the best
/// predicted score.
pub fn propose(
    predictor: &dyn Predictor,
    table: &CostTable,
    band: (f64, f64),
    cfg: &SamplerConfig,
    evaluated: &HashSet<QuantScheme>,
    rng: &mut ChaCha8Rng,
) -> Result<Proposal, SamplerError> {
    let l = table.layers();
    if l == 0 {
        return Err(SamplerError::NoLayers);
    }
    cfg.validate()?;
    let (lo, hi) = band;
    check_feasible(table, hi, cfg)?;
    let pinned = cfg.pinned(l);
    let top = BitPair::uniform(cfg.bits.max());
    let pairs = cfg.bits.pairs();
    let mutation = cfg.ga.mutation_rate.unwrap_or(1.0 / l as f64);

    let fresh = |rng: &mut ChaCha8Rng| -> Individual {
        let mut s = random_scheme(l, &cfg.bits, rng);
        for (i, &p) in pinned.iter().enumerate() {
            if p {
                s.pairs[i] = top;
            }
        }
        let feasible = repair(&mut s, table, lo, hi, &pinned);
        Individual { scheme: s, feasible }
    };
    let settle = |mut s: QuantScheme, rng: &mut ChaCha8Rng| -> Individual {
        if repair(&mut s, table, lo, hi, &pinned) {
            return Individual {
                scheme: s,
                feasible: true,
            };
        }
        fresh(rng)
    };

    let mut scores: HashMap<QuantScheme, f64> = HashMap::new();
    let mut score_all = |pop: &[Individual]| -> Result<Vec<f64>, SamplerError> {
        let missing: Vec<&QuantScheme> = pop
            .iter()
            .filter(|ind| ind.feasible && !scores.contains_key(&ind.scheme))
            .map(|ind| &ind.scheme)
            .collect();
        let new: Vec<(QuantScheme, f64)> = missing
            .par_iter()
            .map(|s| predictor.score(s).map(|v| ((*s).clone(), v)))
            .collect::<Result<_, _>>()?;
        scores.extend(new);
        Ok(pop
            .iter()
            .map(|ind| {
                if ind.feasible {
                    scores[&ind.scheme]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    };

    let mut pop: Vec<Individual> = (0..cfg.ga.population).map(|_| fresh(rng)).collect();
    let mut fit = score_all(&pop)?;
    for _ in 0..cfg.ga.generations {
        let mut next = Vec::with_capacity(pop.len());
        while next.len() < pop.len() {
            let pa = tournament(&fit, cfg.ga.tournament, rng);
            let pb = tournament(&fit, cfg.ga.tournament, rng);
            let mut child = QuantScheme::new(
                (0..l)
                    .map(|i| {
                        if rng.random_bool(0.5) {
                            pop[pa].scheme.pairs[i]
                        } else {
                            pop[pb].scheme.pairs[i]
                        }
                    })
                    .collect(),
            );
            for (i, &pin) in pinned.iter().enumerate() {
                if !pin && rng.random_bool(mutation.min(1.0)) {
                    child.pairs[i] = pairs[rng.random_range(0..pairs.len())];
                }
            }
            next.push(settle(child, rng));
        }
        pop = next;
        fit = score_all(&pop)?;
    }

    let best = scores
        .iter()
        .filter(|(s, _)| !evaluated.contains(*s))
        .map(|(s, &v)| (s, v, table.cost(s)))
        .filter(|&(_, _, c)| lo <= c && c <= hi)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.total_cmp(&a.2)).then(b.0.cmp(a.0)));
    if let Some((s, predicted, cost)) = best {
        return Ok(Proposal {
            scheme: s.clone(),
            predicted,
            cost,
            fallback: false,
        });
    }
    fallback(predictor, table, band, cfg, evaluated, rng)
}

fn fallback(
    predictor: &dyn Predictor,
    table: &CostTable,
    (lo, hi): (f64, f64),
    cfg: &SamplerConfig,
    evaluated: &HashSet<QuantScheme>,
    rng: &mut ChaCha8Rng,
) -> Result<Proposal, SamplerError> {
    let l = table.layers();
    let pinned = cfg.pinned(l);
    let top = BitPair::uniform(cfg.bits.max());
    for (band_lo, tries) in [(lo, 256), (0.0, 4096)] {
        for _ in 0..tries {
            let mut s = random_scheme(l, &cfg.bits, rng);
            for (i, &p) in pinned.iter().enumerate() {
                if p {
                    s.pairs[i] = top;
                }
            }
            if repair(&mut s, table, band_lo, hi, &pinned) && !evaluated.contains(&s) {
                let cost = table.cost(&s);
                return Ok(Proposal {
                    predicted: predictor.score(&s)?,
                    scheme: s,
                    cost,
                    fallback: true,
                });
            }
        }
    }
    Err(SamplerError::Exhausted)
}

fn tournament(fit: &[f64], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..k {
        let c = rng.random_range(0..fit.len());
        if fit[c] > fit[best] || (fit[c] == fit[best] && c < best) {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{LayerDesc, NetworkIR};
    use crate::proxy::Bops;

    fn chain(l: usize) -> NetworkIR {
        let layers = (0..l)
            .map(|i| LayerDesc::linear(i, vec![8 + 4 * i], vec![8 + 4 * (i + 1)]).unwrap())
            .collect();
        NetworkIR::new("chain", layers).unwrap()
    }

    #[test]
    fn l4_n4_blocks() {
        let cfg = SamplerConfig {
            n_init: 4,
            ..Default::default()
        };
        let set = initial_samples(4, &cfg).unwrap();
        assert_eq!(set.block_size, 2);
        assert_eq!(set.schemes[0], QuantScheme::uniform(4, 8));
        assert_eq!(set.schemes[1], QuantScheme::uniform(4, 1));
        let mut all: Vec<usize> = set.blocks[2].iter().chain(&set.blocks[3]).copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        for i in 2..4 {
            for l in 0..4 {
                let modified = set.blocks[i].contains(&l);
                assert_eq!(set.schemes[i].pairs[l] != BitPair::uniform(8), modified);
            }
        }
    }

    #[test]
    fn clamped_blocks_are_unmodified() {
        let cfg = SamplerConfig {
            n_init: 10,
            ..Default::default()
        };
        let set = initial_samples(2, &cfg).unwrap();
        assert_eq!(set.block_size, 1);
        for i in 4..10 {
            assert!(set.blocks[i].is_empty());
            assert_eq!(set.schemes[i], QuantScheme::uniform(2, 8));
        }
    }

    #[test]
    fn too_few_initial() {
        let cfg = SamplerConfig {
            n_init: 2,
            ..Default::default()
        };
        assert!(matches!(initial_samples(3, &cfg), Err(SamplerError::TooFewInitial(2))));
    }

    #[test]
    fn band_schedule() {
        let cfg = SamplerConfig::default();
        let (lo, hi) = band(0, 10, 100.0, &cfg).unwrap();
        assert!((lo - 80.0).abs() < 1e-12 && hi == 100.0);
        assert!((band(10, 10, 100.0, &cfg).unwrap().0 - 50.0).abs() < 1e-12);
        assert!((band(5, 10, 100.0, &cfg).unwrap().0 - 65.0).abs() < 1e-12);
        assert!(band(1, 0, 100.0, &cfg).is_err());
    }

    #[test]
    fn repair_lands_in_band() {
        let net = chain(6);
        let bits = BitwidthSet::qat();
        let table = CostTable::build(&net, &bits, &Bops).unwrap();
        let c = table.cost(&QuantScheme::uniform(6, 8));
        let pinned = vec![false; 6];
        let mut rng = rng::stream(3, 3);
        for _ in 0..200 {
            let mut s = random_scheme(6, &bits, &mut rng);
            let (lo, hi) = (0.3 * c, 0.4 * c);
            if repair(&mut s, &table, lo, hi, &pinned) {
                let v = table.cost(&s);
                assert!(lo <= v && v <= hi);
            }
        }
    }

    struct TotalBits;
    impl Predictor for TotalBits {
        fn score(&self, s: &QuantScheme) -> Result<f64, SurrogateError> {
            Ok(s.pairs.iter().map(|p| (p.w + p.a) as f64).sum())
        }
    }

    #[test]
    fn protect_ends_pins() {
        let net = chain(5);
        let cfg = SamplerConfig::default();
        let table = CostTable::build(&net, &cfg.bits, &Bops).unwrap();
        let c = 0.5 * table.cost(&QuantScheme::uniform(5, 8));
        let mut rng = rng::stream(1, 1);
        let mut seen = HashSet::new();
        for t in 0..5 {
            let b = band(t, 4, c, &cfg).unwrap();
            let p = propose(&TotalBits, &table, b, &cfg, &seen, &mut rng).unwrap();
            assert_eq!(p.scheme.pairs[0], BitPair::uniform(8));
            assert_eq!(p.scheme.pairs[4], BitPair::uniform(8));
            assert!(b.0 <= p.cost && p.cost <= b.1);
            assert!(seen.insert(p.scheme));
        }
    }

    #[test]
    fn infeasible_constraint() {
        let net = chain(3);
        let cfg = SamplerConfig::default();
        let table = CostTable::build(&net, &cfg.bits, &Bops).unwrap();
        let mut rng = rng::stream(0, 0);
        let r = propose(&TotalBits, &table, (0.0, 1.0), &cfg, &HashSet::new(), &mut rng);
        assert!(matches!(r, Err(SamplerError::Infeasible { .. })));
    }
}
