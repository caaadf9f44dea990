use std::collections::HashSet;

use mico_core::eval::oracle::SyntheticOracle;
use mico_core::eval::{self, OracleEvaluator, QatBudget};
use mico_core::explorer::{self, Constraint, Limit, Mode, SearchConfig};
use mico_core::hwsim::{self, BenchmarkPlan, CpuVariant, HwConfig};
use mico_core::model_ir::{BitPair, BitwidthSet, LayerDesc, NetworkIR, QuantScheme};
use mico_core::proxy::{self, Bops, CostTable, ProxyKind};
use mico_core::rng;
use mico_core::sampler::{self, Predictor, SamplerConfig};
use mico_core::surrogate::{self, ForestConfig, SurrogateError};

fn chain(widths: &[usize]) -> NetworkIR {
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|i| {
            LayerDesc::linear(i, vec![widths[i]], vec![widths[i + 1]])
                .unwrap()
                .with_relu(i + 1 < n)
        })
        .collect();
    NetworkIR::new("chain", layers).unwrap()
}

fn all_schemes(layers: usize, bits: &BitwidthSet) -> Vec<QuantScheme> {
    let pairs = bits.pairs();
    (0..pairs.len().pow(layers as u32))
        .map(|mut code| {
            let mut v = Vec::with_capacity(layers);
            for _ in 0..layers {
                v.push(pairs[code % pairs.len()]);
                code /= pairs.len();
            }
            QuantScheme::new(v)
        })
        .collect()
}

fn total_bits(s: &QuantScheme) -> f64 {
    s.pairs.iter().map(|p| (p.w + p.a) as f64).sum()
}

struct TotalBits;

impl Predictor for TotalBits {
    fn score(&self, s: &QuantScheme) -> Result<f64, SurrogateError> {
        Ok(total_bits(s))
    }
}

#[test]
fn proposal_matches_exhaustive_argmax() {
    let net = chain(&[32, 16, 64, 8]);
    let bits = BitwidthSet::new(&[1, 8]).unwrap();
    let table = CostTable::build(&net, &bits, &Bops).unwrap();
    let cfg = SamplerConfig {
        n_init: 4,
        bits: bits.clone(),
        protect_ends: false,
        ..Default::default()
    };
    let schemes = all_schemes(3, &bits);
    assert_eq!(schemes.len(), 64);

    // A forest fitted on every scheme reproduces total bits where the
    // predictor is exact on its training points.
    let data: Vec<(QuantScheme, f64)> = schemes.iter().map(|s| (s.clone(), total_bits(s))).collect();
    let forest = surrogate::fit(
        &data,
        &ForestConfig {
            n_trees: 1,
            bootstrap: false,
            feature_subset: 1.0,
            ..Default::default()
        },
    )
    .unwrap();
    for s in &schemes {
        assert_eq!(forest.predict(s).unwrap(), total_bits(s));
    }

    for ratio in [0.1, 0.3, 0.5, 0.8, 1.0] {
        let c = ratio * table.cost(&QuantScheme::uniform(3, 8));
        let best = schemes
            .iter()
            .filter(|s| table.cost(s) <= c)
            .map(total_bits)
            .fold(f64::NEG_INFINITY, f64::max);
        let predictors: [&dyn Predictor; 2] = [&TotalBits, &forest];
        for p in predictors {
            let mut r = rng::stream(7, 1);
            let got = sampler::propose(p, &table, (0.0, c), &cfg, &HashSet::new(), &mut r).unwrap();
            assert!(got.cost <= c);
            assert_eq!(total_bits(&got.scheme), best, "ratio {ratio}");
        }
    }
}

#[test]
fn oracle_monotone_exhaustive() {
    let bits = BitwidthSet::qat();
    for layers in 1..=4 {
        let oracle = SyntheticOracle::new(layers, 40 + layers as u64);
        for s in all_schemes(layers, &bits) {
            let base = oracle.accuracy(&s).unwrap();
            for i in 0..layers {
                let p = s.pairs[i];
                let ups = [
                    bits.step_up(p.w).map(|w| BitPair::new(w, p.a)),
                    bits.step_up(p.a).map(|a| BitPair::new(p.w, a)),
                ];
                for up in ups.into_iter().flatten() {
                    let mut t = s.clone();
                    t.pairs[i] = up;
                    assert!(oracle.accuracy(&t).unwrap() >= base, "{t:?} below {s:?}");
                }
            }
        }
    }
}

#[test]
fn ptq_is_thread_count_invariant() {
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let schemes = [
        QuantScheme::uniform(2, 8),
        QuantScheme::new(vec![BitPair::new(4, 2), BitPair::new(1, 8)]),
        QuantScheme::uniform(2, 1),
    ];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            schemes
                .iter()
                .map(|s| eval::ptq_evaluate(&fx.network, &fx.data, s).unwrap())
                .collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn qat_loss_decreases_on_average() {
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let s = QuantScheme::uniform(2, 2);
    let mut first = 0.0;
    let mut last = 0.0;
    for seed in 0..3 {
        let (_, history, _) =
            eval::qat_train(&fx.network, &fx.data, &s, QatBudget::Short, &Default::default(), seed).unwrap();
        assert_eq!(history.len(), 2);
        first += history[0];
        last += history[history.len() - 1];
    }
    assert!(last <= first, "mean loss {first} -> {last}");
}

#[test]
fn fixture_invariants() {
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let float = fx.network.meta.float_accuracy.unwrap();
    assert!(float >= 0.9, "float accuracy {float}");
    let at = |b| eval::ptq_evaluate(&fx.network, &fx.data, &QuantScheme::uniform(2, b)).unwrap();
    let (w8, w1) = (at(8), at(1));
    assert!((float - w8).abs() <= 0.02, "W8A8 {w8} vs float {float}");
    assert!(w1 <= w8);
    let q8 = eval::qat_evaluate(
        &fx.network,
        &fx.data,
        &QuantScheme::uniform(2, 8),
        QatBudget::Short,
        &Default::default(),
        eval::FIXTURE_SEED,
    )
    .unwrap();
    assert!((q8 - w8).abs() <= 0.02, "QAT W8A8 {q8} vs PTQ {w8}");
}

#[test]
fn base_bops_and_ratio_constraint() {
    // 390 x 1000 Linear: 390000 MACs.
    let net = chain(&[390, 1000]);
    let base = proxy::bops(&net, &QuantScheme::uniform(1, 8)).unwrap();
    assert_eq!(base, 24_960_000);
    let table = CostTable::build(&net, &BitwidthSet::qat(), &Bops).unwrap();
    assert_eq!(Constraint::bops_ratio(0.6).resolve(&table), 0.6 * base as f64);
}

#[test]
fn search_beats_random_on_small_oracle() {
    let net = chain(&[16, 64, 32, 128, 48]);
    let (mut full, mut random) = (0.0, 0.0);
    for seed in 0..10u64 {
        let ev = OracleEvaluator {
            oracle: SyntheticOracle::new(4, 100 + seed),
        };
        let mut cfg = SearchConfig::new(Mode::Oracle, Constraint::bops_ratio(0.6), seed);
        cfg.sampler.protect_ends = false;
        full += explorer::explore(&net, &cfg, &ev, &Bops)
            .unwrap()
            .0
            .best_sample()
            .unwrap()
            .accuracy;
        random += explorer::random_search(&net, &cfg, &ev, &Bops)
            .unwrap()
            .0
            .best_sample()
            .unwrap()
            .accuracy;
    }
    assert!(full >= random, "{full} < {random}");
}

#[test]
fn search_under_fitted_proxy_constraint() {
    let net = mico_core::model_ir::lenet5();
    let hw = HwConfig::cpu(CpuVariant::Small);
    let profile = hwsim::run_kernel_benchmarks(&hw, &BenchmarkPlan::default()).unwrap();
    let model = proxy::fit_proxy(&profile, ProxyKind::TreeCbops, &ForestConfig::default()).unwrap();
    let ev = OracleEvaluator {
        oracle: SyntheticOracle::new(net.len(), 3),
    };
    let mut cfg = SearchConfig::new(Mode::Oracle, Constraint::bops_ratio(0.7), 3);
    cfg.constraint.kind = explorer::ConstraintKind::Proxy;
    cfg.budget = 24;
    let (state, c) = explorer::explore(&net, &cfg, &ev, &model).unwrap();
    let uniform = proxy::predict_latency(&model, &net, &QuantScheme::uniform(5, 8)).unwrap();
    assert!((c - 0.7 * uniform).abs() <= 1e-9 * uniform);
    let best = state.best_sample().unwrap();
    assert!(proxy::predict_latency(&model, &net, &best.scheme).unwrap() <= c);

    cfg.constraint.limit = Limit::Absolute(c);
    let (again, c2) = explorer::explore(&net, &cfg, &ev, &model).unwrap();
    assert_eq!(c2, c);
    assert_eq!(again.best_sample().unwrap().scheme, best.scheme);
}

#[test]
fn tree_proxy_beats_bops_feature_on_cpu_profiles() {
    for v in [CpuVariant::Tiny, CpuVariant::Small, CpuVariant::High] {
        let profile = hwsim::run_kernel_benchmarks(&HwConfig::cpu(v), &BenchmarkPlan::default()).unwrap();
        let tree = proxy::fit_proxy(&profile, ProxyKind::TreeCbops, &ForestConfig::default()).unwrap();
        let line = proxy::fit_proxy(&profile, ProxyKind::BopsLinear, &ForestConfig::default()).unwrap();
        for (kind, rep) in &tree.fit_report {
            let (t, b) = (rep.r2.unwrap(), line.fit_report[kind].r2.unwrap());
            assert!(t > b, "{v:?} {kind}: tree {t} <= bops {b}");
        }
    }
}
