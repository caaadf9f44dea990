//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mico_core::eval::mlp::Mlp;
use mico_core::eval::oracle::SyntheticOracle;
use mico_core::eval::{self, OracleEvaluator, QatBudget};
use mico_core::explorer::{self, Constraint, ConstraintKind, InitialDesign, Limit, Mode, SearchConfig, Variant};
use mico_core::hwsim::{self, BenchmarkPlan, CpuVariant, HwConfig};
use mico_core::kernels::{self, DotPOp, IntMatrix};
use mico_core::model_ir::{lenet5, BitPair, BitwidthSet, LayerDesc, NetworkIR, QuantScheme};
use mico_core::proxy::{
    self, BenchDims, BenchRecord, Bops, CostModel, HardwareProfile, KernelKind, KernelParams, ProxyKind,
};
use mico_core::sampler::{self, SamplerConfig};
use mico_core::stats;
use mico_core::surrogate::ForestConfig;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn operand(r: &mut ChaCha8Rng, bits: u8) -> i32 {
    if bits == 1 {
        if r.random_bool(0.5) {
            1
        } else {
            -1
        }
    } else {
        let h = 1i32 << (bits - 1);
        r.random_range(-h..h)
    }
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, bits: u8) -> IntMatrix {
    let data = (0..rows * cols).map(|_| operand(r, bits)).collect();
    IntMatrix::new(rows, cols, data).unwrap()
}

fn big_matmul(a: &IntMatrix, w: &IntMatrix) -> Vec<BigInt> {
    let mut out = Vec::with_capacity(a.rows * w.rows);
    for m in 0..a.rows {
        for n in 0..w.rows {
            let mut acc = BigInt::from(0);
            for k in 0..a.cols {
                acc += BigInt::from(a.get(m, k)) * BigInt::from(w.get(n, k));
            }
            out.push(acc);
        }
    }
    out
}

/// Direct convolution, output `[OC, OH, OW]`.
#[allow(clippy::too_many_arguments)]
fn big_conv(
    x: &[i32],
    w: &[i32],
    (c, h, wd): (usize, usize, usize),
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
    pad_fill: i32,
) -> Vec<BigInt> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(oc * oh * ow);
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = BigInt::from(0);
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            let v = if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                pad_fill
                            } else {
                                x[ci * h * wd + iy as usize * wd + ix as usize]
                            };
                            acc += BigInt::from(v) * BigInt::from(w[((o * c + ci) * k + ky) * k + kx]);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn as_big(v: &[i32]) -> Vec<BigInt> {
    v.iter().map(|&x| BigInt::from(x)).collect()
}

#[test]
fn criterion_01_kernel_bit_exactness() {
    let start = std::time::Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for op in DotPOp::all() {
        // Both operand orientations share the instruction.
        let orient = [(op.rs1_bits(), op.rs2_bits()), (op.rs2_bits(), op.rs1_bits())];
        for i in 0..200 {
            let (bw, ba) = orient[i % 2];
            let (m, k, n) = (r.random_range(1..6), r.random_range(1..80), r.random_range(1..6));
            let a = random_matrix(&mut r, m, k, ba);
            let w = random_matrix(&mut r, n, k, bw);
            let oracle = big_matmul(&a, &w);
            let (reference, _) = kernels::matmul(&a, &w, bw, ba, kernels::Variant::Ref).unwrap();
            let (packed, _) = kernels::matmul(&a, &w, bw, ba, kernels::Variant::Packed).unwrap();
            if as_big(&reference.data) != oracle || as_big(&packed.data) != oracle {
                mismatches += 1;
            }
            checked += 1;
        }
        for i in 0..50 {
            let (bw, ba) = orient[i % 2];
            let c = r.random_range(1..4);
            let k = r.random_range(1..4);
            let (h, wd) = (r.random_range(k..k + 6), r.random_range(k..k + 6));
            let (oc, stride, pad) = (r.random_range(1..5), r.random_range(1..3), r.random_range(0..2));
            let layer = LayerDesc::conv2d(0, [c, h, wd], oc, [k, k], stride, pad).unwrap();
            let x: Vec<i32> = (0..c * h * wd).map(|_| operand(&mut r, ba)).collect();
            let w: Vec<i32> = (0..oc * c * k * k).map(|_| operand(&mut r, bw)).collect();
            // Binary activations cannot hold 0, so padding reads +1.
            let fill = if ba == 1 { 1 } else { 0 };
            let oracle = big_conv(&x, &w, (c, h, wd), oc, k, stride, pad, fill);
            let (reference, _) = kernels::conv2d(&x, &w, &layer, bw, ba, kernels::Variant::Ref).unwrap();
            let (packed, _) = kernels::conv2d(&x, &w, &layer, bw, ba, kernels::Variant::Packed).unwrap();
            if as_big(&reference) != oracle || as_big(&packed) != oracle {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && checked == 2500 && secs < 60.0;
    report(
        1,
        pass,
        format!("{checked} instances, {mismatches} mismatches, {secs:.1}s"),
    );
    assert!(pass);
}

/// Lane `i` of a `bits`-wide field word, decoded independently of the
/// crate: one-bit fields map 0 to +1 and 1 to -1.
fn lane(word: u32, bits: u32, i: u32) -> i64 {
    let raw = (word >> (i * bits)) & ((1u32 << bits) - 1);
    if bits == 1 {
        if raw == 0 {
            1
        } else {
            -1
        }
    } else if raw >= 1 << (bits - 1) {
        raw as i64 - (1i64 << bits)
    } else {
        raw as i64
    }
}

fn brute_dotp(b1: u32, b2: u32, rs1: u32, rs2: u32) -> i64 {
    (0..32 / b1).map(|i| lane(rs1, b1, i) * lane(rs2, b2, i)).sum()
}

fn boundary_words(bits: u32) -> Vec<u32> {
    let lanes = 32 / bits;
    let fill = |f: u32| (0..lanes).fold(0u32, |w, i| w | (f << (i * bits)));
    let max = (1u32 << (bits - 1)) - 1;
    let min = 1u32 << (bits - 1);
    let mask = (1u32 << bits) - 1;
    let mut v = vec![0, u32::MAX, fill(max), fill(min), fill(mask), 0x5555_5555, 0xAAAA_AAAA];
    for i in 0..lanes {
        v.push(min << (i * bits));
        v.push(max << (i * bits));
        v.push(mask << (i * bits));
    }
    v
}

#[test]
fn criterion_02_dotp_semantics() {
    let mut r = ChaCha8Rng::seed_from_u64(202);
    let mut cases = 0u64;
    let mut wrong = 0u64;
    let mut focus = 0u64;
    for op in DotPOp::all() {
        let (b1, b2) = (op.rs1_bits() as u32, op.rs2_bits() as u32);
        // rs2 fields of a narrower operand only occupy the low lanes * b2 bits.
        let used = if (32 / b1) * b2 >= 32 {
            u32::MAX
        } else {
            (1u32 << ((32 / b1) * b2)) - 1
        };
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for &a in &boundary_words(b1) {
            for &b in &boundary_words(b2) {
                pairs.push((a, b & used));
            }
        }
        let is_focus = matches!((b1, b2), (2, 2) | (2, 1) | (1, 1));
        let n_random = if is_focus { 20_000 } else { 2_000 };
        for _ in 0..n_random {
            pairs.push((r.random(), r.random::<u32>() & used));
        }
        for (a, b) in pairs {
            if kernels::dotp(op, a, b) as i64 != brute_dotp(b1, b2, a, b) {
                wrong += 1;
            }
            cases += 1;
            if is_focus {
                focus += 1;
            }
        }
    }
    let word = |vals: [i32; 4], bits: u32| {
        vals.iter().enumerate().fold(0u32, |w, (i, &v)| {
            w | ((v as u32 & ((1 << bits) - 1)) << (i as u32 * bits))
        })
    };
    let worked = kernels::dotp(
        DotPOp::new(8, 4).unwrap(),
        word([-128, 127, 1, 0], 8),
        word([-8, 7, -1, 3], 4),
    );
    let pass = wrong == 0 && focus >= 30_000 && worked == 1912;
    report(
        2,
        pass,
        format!("{cases} cases ({focus} on 2x2/2x1/1x1), {wrong} wrong, 8x4 example = {worked}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_initial_sampling_properties() {
    let mut r = ChaCha8Rng::seed_from_u64(303);
    let mut failures = Vec::new();
    for draw in 0..1000 {
        let layers = r.random_range(1..=64);
        let n_init = r.random_range(3..=32);
        let bits = if draw % 2 == 0 {
            BitwidthSet::qat()
        } else {
            BitwidthSet::ptq()
        };
        let cfg = SamplerConfig {
            n_init,
            bits: bits.clone(),
            seed: r.random(),
            ..Default::default()
        };
        let set = sampler::initial_samples(layers, &cfg).unwrap();
        let top = QuantScheme::uniform(layers, bits.max());
        let bottom = QuantScheme::uniform(layers, bits.min());
        let mut ok = set.schemes.len() == n_init && set.schemes.contains(&top) && set.schemes.contains(&bottom);
        let nm = layers.div_ceil(n_init - 2).max(1);
        ok &= set.block_size == nm;
        let mut seen = HashSet::new();
        for (s, block) in set.schemes.iter().zip(&set.blocks) {
            ok &= s.validate(layers, &bits).is_ok();
            for &l in block {
                ok &= seen.insert(l);
            }
            // Layers outside the block keep the top bitwidth.
            if !block.is_empty() {
                ok &= (0..layers)
                    .filter(|l| !block.contains(l))
                    .all(|l| s.pairs[l] == top.pairs[l]);
            }
        }
        if (n_init - 2) * nm >= layers {
            ok &= seen.len() == layers;
        }
        if !ok {
            failures.push((layers, n_init));
        }
    }
    let pass = failures.is_empty();
    report(
        3,
        pass,
        format!(
            "1000 draws, {} violations {:?}",
            failures.len(),
            &failures[..failures.len().min(5)]
        ),
    );
    assert!(pass);
}

const WIDTHS: [usize; 13] = [16, 64, 32, 128, 48, 96, 24, 80, 40, 72, 56, 88, 32];

fn chain(layers: usize) -> NetworkIR {
    let ls = (0..layers)
        .map(|i| {
            LayerDesc::linear(i, vec![WIDTHS[i]], vec![WIDTHS[i + 1]])
                .unwrap()
                .with_relu(i + 1 < layers)
        })
        .collect();
    NetworkIR::new(format!("chain{layers}"), ls).unwrap()
}

fn oracle_eval(layers: usize, seed: u64) -> OracleEvaluator {
    OracleEvaluator {
        oracle: SyntheticOracle::new(layers, seed),
    }
}

#[test]
fn criterion_04_constraint_guarantee() {
    let mut r = ChaCha8Rng::seed_from_u64(404);
    let mut held = 0;
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let layers = r.random_range(4..=10);
        let protect = seed % 2 == 0;
        let ratio = if protect {
            r.random_range(0.75..0.95)
        } else {
            r.random_range(0.2..0.9)
        };
        let net = chain(layers);
        let mut cfg = SearchConfig::new(Mode::Oracle, Constraint::bops_ratio(ratio), seed);
        cfg.budget = 28;
        cfg.sampler.n_init = 12;
        cfg.sampler.protect_ends = protect;
        let (state, c) = explorer::explore(&net, &cfg, &oracle_eval(layers, 1000 + seed), &Bops).unwrap();
        let best = state.best_sample().unwrap();
        let cost = Bops.scheme_cost(&net, &best.scheme).unwrap();
        worst = worst.max(cost / c);
        if cost <= c {
            held += 1;
        }
    }
    let pass = held == 50;
    report(4, pass, format!("{held}/50 within constraint, max cost/C = {worst:.4}"));
    assert!(pass);
}

/// Holdout R² of a proxy's per-scheme predictions against simulated cycles
/// after a least-squares calibration line fitted on the first 51 schemes.
fn scheme_r2(model: &proxy::ProxyModel, net: &NetworkIR, schemes: &[QuantScheme], meas: &[f64]) -> f64 {
    let pred: Vec<f64> = schemes
        .iter()
        .map(|s| proxy::predict_latency(model, net, s).unwrap())
        .collect();
    let (a, b) = stats::fit_line(&pred[..51], &meas[..51]).unwrap();
    let cal: Vec<f64> = pred[51..].iter().map(|p| a * p + b).collect();
    stats::r2(&meas[51..], &cal).unwrap()
}

#[test]
fn criterion_05_proxy_superiority() {
    let start = std::time::Instant::now();
    let net = lenet5();
    let mut r = mico_core::rng::stream(5, 5);
    let schemes = sampler::random_samples(net.len(), 64, &BitwidthSet::qat(), &mut r);
    let mut lines = Vec::new();
    let mut pass = true;
    for variant in [CpuVariant::Tiny, CpuVariant::Small, CpuVariant::High] {
        let hw = HwConfig::cpu(variant);
        let profile = hwsim::run_kernel_benchmarks(&hw, &BenchmarkPlan::default()).unwrap();
        let meas: Vec<f64> = schemes
            .iter()
            .map(|s| hwsim::simulate(&net, s, &hw).unwrap() as f64)
            .collect();
        let fit = |kind| proxy::fit_proxy(&profile, kind, &ForestConfig::default()).unwrap();
        let bops = scheme_r2(&fit(ProxyKind::BopsLinear), &net, &schemes, &meas);
        let lin = scheme_r2(&fit(ProxyKind::LinearCbops), &net, &schemes, &meas);
        let tree = scheme_r2(&fit(ProxyKind::TreeCbops), &net, &schemes, &meas);
        let gap = lin.max(tree) - bops;
        pass &= gap >= 0.1;
        lines.push(format!("{}: bops {bops:.3} linear {lin:.3} tree {tree:.3}", hw.id));
    }
    let hw = HwConfig::systolic();
    let profile = hwsim::run_kernel_benchmarks(&hw, &BenchmarkPlan::default()).unwrap();
    let meas: Vec<f64> = schemes
        .iter()
        .map(|s| hwsim::simulate(&net, s, &hw).unwrap() as f64)
        .collect();
    let lin = scheme_r2(
        &proxy::fit_proxy(&profile, ProxyKind::LinearCbops, &ForestConfig::default()).unwrap(),
        &net,
        &schemes,
        &meas,
    );
    pass &= lin >= 0.95;
    lines.push(format!("{}: linear {lin:.3}", hw.id));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(5, pass, format!("{} ({secs:.1}s)", lines.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_06_end_to_end_speedup() {
    let net = lenet5();
    let bits = BitwidthSet::qat();
    let base = QuantScheme::uniform(net.len(), 8);
    let mut lines = Vec::new();
    let mut pass = true;
    for variant in [CpuVariant::Tiny, CpuVariant::Small, CpuVariant::High] {
        let hw = HwConfig::cpu(variant);
        let profile = hwsim::run_kernel_benchmarks(&hw, &BenchmarkPlan::default()).unwrap();
        let model = proxy::fit_proxy(&profile, ProxyKind::LinearCbops, &ForestConfig::default()).unwrap();
        let uniform = hwsim::simulate(&net, &base, &hw).unwrap() as f64;
        let (mut cb, mut bo) = (0.0, 0.0);
        for seed in 0..5u64 {
            let ev = oracle_eval(net.len(), 300 + seed);
            let mut cfg = SearchConfig::new(Mode::Oracle, Constraint::bops_ratio(0.8), seed);
            cfg.sampler.bits = bits.clone();
            let (s, _) = explorer::explore(&net, &cfg, &ev, &Bops).unwrap();
            bo += hwsim::simulate(&net, &s.best_sample().unwrap().scheme, &hw).unwrap() as f64 / uniform;
            cfg.constraint = Constraint {
                kind: ConstraintKind::Proxy,
                limit: Limit::Ratio(0.8),
            };
            let (s, _) = explorer::explore(&net, &cfg, &ev, &model).unwrap();
            cb += hwsim::simulate(&net, &s.best_sample().unwrap().scheme, &hw).unwrap() as f64 / uniform;
        }
        let (cb, bo) = (cb / 5.0, bo / 5.0);
        pass &= cb <= bo && cb <= 0.9;
        lines.push(format!("{}: cbops {cb:.3}x bops {bo:.3}x", hw.id));
    }
    report(
        6,
        pass,
        format!("latency vs uniform 8-bit, mean of 5 seeds: {}", lines.join("; ")),
    );
    assert!(pass);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Best oracle accuracy over every scheme whose BOPs fit under `c`.
fn exhaustive_best(net: &NetworkIR, oracle: &SyntheticOracle, bits: &BitwidthSet, c: f64) -> f64 {
    let pairs = bits.pairs();
    let l = net.len();
    let total = pairs.len().pow(l as u32);
    let mut best = f64::NEG_INFINITY;
    for mut code in 0..total {
        let mut s = Vec::with_capacity(l);
        for _ in 0..l {
            s.push(pairs[code % pairs.len()]);
            code /= pairs.len();
        }
        let s = QuantScheme::new(s);
        let cost: f64 = net
            .layers
            .iter()
            .zip(&s.pairs)
            .map(|(layer, p)| (layer.macs * p.w as u64 * p.a as u64) as f64)
            .sum();
        if cost <= c {
            best = best.max(oracle.accuracy(&s).unwrap());
        }
    }
    best
}

#[test]
fn criterion_07_search_efficiency() {
    let seeds: Vec<u64> = (0..10).collect();
    // The oracle carries no extra end-layer sensitivity beyond its draws,
    // so the search runs over all layers.
    let config = |layers: usize, ratio: f64, seed: u64| {
        let mut cfg = SearchConfig::new(Mode::Oracle, Constraint::bops_ratio(ratio), seed);
        cfg.sampler.protect_ends = false;
        cfg.budget = 48;
        cfg.sampler.n_init = 16;
        (chain(layers), cfg)
    };

    let (mut full, mut random, mut rf_only) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &seeds {
        let (net, cfg) = config(8, 0.5, seed);
        let ev = oracle_eval(8, 100 + seed);
        let best = |r: (explorer::SearchState, f64)| r.0.best_sample().unwrap().accuracy;
        full.push(best(explorer::explore(&net, &cfg, &ev, &Bops).unwrap()));
        random.push(best(explorer::random_search(&net, &cfg, &ev, &Bops).unwrap()));
        let rf = Variant::RfOnly.apply(&cfg);
        assert_eq!(rf.initial, InitialDesign::Random);
        rf_only.push(best(explorer::explore(&net, &rf, &ev, &Bops).unwrap()));
    }
    let (mf, mr, mo) = (mean(&full), mean(&random), mean(&rf_only));

    let mut regret = Vec::new();
    for &seed in &seeds {
        let (net, cfg) = config(4, 0.6, seed);
        let ev = oracle_eval(4, 100 + seed);
        let (state, c) = explorer::explore(&net, &cfg, &ev, &Bops).unwrap();
        let opt = exhaustive_best(&net, &ev.oracle, &cfg.sampler.bits, c);
        regret.push(opt - state.best_sample().unwrap().accuracy);
    }
    let mreg = mean(&regret);
    let pass = mf >= mr && mf >= mo && mreg <= 0.02;
    report(
        7,
        pass,
        format!("L=8 mean best: full {mf:.4} random {mr:.4} rf-only {mo:.4}; L=4 mean regret {mreg:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_qat_ptq_gap() {
    let start = std::time::Instant::now();
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let sgd = Default::default();
    let at = |w: u8, a: u8| QuantScheme::new(vec![BitPair::new(w, a); fx.network.len()]);
    let ptq = |s: &QuantScheme| eval::ptq_evaluate(&fx.network, &fx.data, s).unwrap();
    let qat = |s: &QuantScheme| {
        eval::qat_evaluate(&fx.network, &fx.data, s, QatBudget::Short, &sgd, eval::FIXTURE_SEED).unwrap()
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for (w, a) in [(2, 2), (1, 2)] {
        let (p, q) = (ptq(&at(w, a)), qat(&at(w, a)));
        pass &= q >= p;
        lines.push(format!("W{w}A{a} qat {q:.3} ptq {p:.3}"));
    }
    let (p, q) = (ptq(&at(4, 8)), qat(&at(4, 8)));
    pass &= (q - p).abs() <= 0.03;
    lines.push(format!("W4A8 qat {q:.3} ptq {p:.3}"));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    report(8, pass, format!("{} ({secs:.1}s)", lines.join("; ")));
    assert!(pass);
}

fn float_loss(mlp: &Mlp, xs: &[&[f64]], ys: &[u32]) -> f64 {
    mlp.loss_grad(xs, ys, &[]).0
}

#[test]
fn criterion_09_numerical_checks() {
    let mut r = ChaCha8Rng::seed_from_u64(909);

    // Gradients against central differences.
    let mlp = Mlp::init(&[16, 32, 4], 9);
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..16).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let xs: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
    let ys: Vec<u32> = (0..8).map(|_| r.random_range(0..4)).collect();
    let (_, grads) = mlp.loss_grad(&xs, &ys, &[]);
    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    for _ in 0..100 {
        let l = r.random_range(0..mlp.layers.len());
        let bias = r.random_bool(0.2);
        let len = if bias {
            mlp.layers[l].b.len()
        } else {
            mlp.layers[l].w.len()
        };
        let i = r.random_range(0..len);
        let shifted = |delta: f64| {
            let mut m = mlp.clone();
            if bias {
                m.layers[l].b[i] += delta;
            } else {
                m.layers[l].w[i] += delta;
            }
            float_loss(&m, &xs, &ys)
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let g = if bias { grads.b[l][i] } else { grads.w[l][i] };
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        worst_grad = worst_grad.max(rel);
    }

    // Residuals of the least-squares solve are orthogonal to the columns.
    let (n, d) = (60, 4);
    let x = DMatrix::from_fn(n, d, |i, j| {
        if j == d - 1 {
            1.0
        } else {
            r.random_range(0.0..1e6) * (i + 1) as f64
        }
    });
    let y = DVector::from_fn(n, |_, _| r.random_range(0.0..1e7));
    let (beta, _) = proxy::least_squares(&x, &y);
    let resid = &y - &x * &beta;
    let mut worst_orth = 0.0f64;
    for j in 0..d {
        let col = x.column(j);
        worst_orth = worst_orth.max(col.dot(&resid).abs() / (col.norm() * y.norm()));
    }

    // Noiseless linear profile: 2*BMACs + 1*ALoads + 0.5*WLoads + 100.
    let mut records = Vec::new();
    let pairs = BitwidthSet::qat().pairs();
    for (mi, &(m, k, n)) in [(1, 64, 32), (4, 128, 64), (16, 96, 48), (8, 256, 128), (2, 512, 10)]
        .iter()
        .enumerate()
    {
        for &p in pairs.iter().skip(mi % 3).step_by(3) {
            let macs = (m * k * n) as u64;
            let cycles = 2 * p.w.max(p.a) as u64 * macs + p.a as u64 * macs + p.w as u64 * macs / 2 + 100;
            records.push(BenchRecord {
                kernel: KernelKind::MatMul,
                bw: p.w,
                ba: p.a,
                dims: BenchDims::MatMul { m, k, n },
                cycles,
            });
        }
    }
    let profile = HardwareProfile {
        hardware_id: "noiseless".into(),
        records,
    };
    let model = proxy::fit_proxy(&profile, ProxyKind::LinearCbops, &ForestConfig::default()).unwrap();
    let KernelParams::Linear(lp) = &model.kernels[&KernelKind::MatMul] else {
        panic!("linear kernel params expected");
    };
    let worst_coef = [(lp.beta_m, 2.0), (lp.beta_a, 1.0), (lp.beta_w, 0.5), (lp.c, 100.0)]
        .iter()
        .map(|(got, want)| ((got - want) / want).abs())
        .fold(0.0, f64::max);

    let pass = worst_grad <= 1e-4 && worst_orth <= 1e-8 && worst_coef <= 1e-6;
    report(
        9,
        pass,
        format!(
            "grad rel err {worst_grad:.2e} (100 coords), residual orthogonality {worst_orth:.2e}, coefficient rel err {worst_coef:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_speedup_envelope() {
    let layer = LayerDesc::linear(0, vec![64, 64], vec![64, 64]).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for variant in [CpuVariant::Tiny, CpuVariant::Small, CpuVariant::High] {
        let hw = HwConfig::cpu(variant);
        let scalar = hw.scalar_cycles(&layer).unwrap() as f64;
        let s8 = scalar / hw.layer_cycles(&layer, BitPair::uniform(8)).unwrap() as f64;
        let s1 = scalar / hw.layer_cycles(&layer, BitPair::uniform(1)).unwrap() as f64;
        pass &= (2.0..=4.0).contains(&s8) && (8.0..=32.0).contains(&s1);
        lines.push(format!("{}: W8A8 {s8:.2}x W1A1 {s1:.2}x", hw.id));
    }
    report(10, pass, lines.join("; "));
    assert!(pass);
}
