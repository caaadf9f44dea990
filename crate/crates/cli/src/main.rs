//! `mico`: profile hardware, fit latency proxies, search bitwidth schemes,
//! generate deployment code and summarize runs.

mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mico_core::codegen;
use mico_core::container::Container;
use mico_core::eval::{
    self, Dataset, Evaluator, OracleEvaluator, PtqEvaluator, QatBudget, QatEvaluator, SgdConfig, SyntheticOracle,
};
use mico_core::explorer::{self, Constraint, ConstraintKind, ExploreError, Limit, Mode, SearchConfig, SearchResult};
use mico_core::hwsim::{self, BenchmarkPlan, CpuVariant, HwConfig};
use mico_core::model_ir::{self, BitwidthSet, NetworkIR};
use mico_core::proxy::{self, Bops, CostModel, HardwareProfile, ProxyKind, ProxyModel};
use mico_core::sampler::SamplerError;
use mico_core::surrogate::ForestConfig;

use error::CliError;
use manifest::{sidecar, write_artifact, write_json, Run};

const SEED_ENV: &str = "MICO_SEED";

#[derive(Debug, Parser)]
#[command(name = "mico", version, about = "Mixed-precision quantization search and deployment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run kernel benchmarks on a simulated hardware target.
    Profile(ProfileArgs),
    /// Fit a latency proxy to a hardware profile.
    Fit(FitArgs),
    /// Search a bitwidth scheme under a cost constraint.
    Explore(ExploreArgs),
    /// Emit C source, weights and a buffer plan for a search result.
    Codegen(CodegenArgs),
    /// Summarize result files into CSV tables.
    Report(ReportArgs),
    /// Write the bundled networks, datasets and hardware configs.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args, Serialize)]
struct ProfileArgs {
    #[arg(long)]
    hw: PathBuf,
    /// Benchmark plan; the default plan when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum FitKind {
    Bops,
    BopsLinear,
    Linear,
    Tree,
}

impl From<FitKind> for ProxyKind {
    fn from(k: FitKind) -> Self {
        match k {
            FitKind::Bops => ProxyKind::Bops,
            FitKind::BopsLinear => ProxyKind::BopsLinear,
            FitKind::Linear => ProxyKind::LinearCbops,
            FitKind::Tree => ProxyKind::TreeCbops,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    kind: FitKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum ModeArg {
    Ptq,
    Qat,
    Oracle,
}

#[derive(Debug, Args, Serialize)]
struct ExploreArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Comma-separated bitwidths; defaults to 4-8 for ptq, 1,2,4,8 otherwise.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
    /// Constraint as a fraction of the uniform top-bitwidth cost.
    #[arg(long, conflicts_with = "constraint_abs")]
    constraint_ratio: Option<f64>,
    #[arg(long)]
    constraint_abs: Option<f64>,
    /// `bops` or a fitted proxy JSON file.
    #[arg(long, default_value = "bops")]
    proxy: String,
    #[arg(long, default_value_t = 48)]
    budget: usize,
    #[arg(long, default_value_t = 16)]
    n_init: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Search every layer freely instead of pinning the first and last.
    #[arg(long)]
    free_ends: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CodegenArgs {
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = eval::FIXTURE_SEED)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mico: {e}");
            e.code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Profile(a) => cmd_profile(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Explore(a) => cmd_explore(&a),
        Command::Codegen(a) => cmd_codegen(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Fixture(a) => cmd_fixture(&a),
    }
}

fn cmd_profile(a: &ProfileArgs) -> Result<(), CliError> {
    let mut run = Run::start("profile", a, None)?;
    let hw = HwConfig::load(&a.hw).map_err(CliError::validation)?;
    run.input(&a.hw);
    let plan = match &a.plan {
        Some(p) => {
            run.input(p);
            BenchmarkPlan::load(p).map_err(CliError::validation)?
        }
        None => BenchmarkPlan::default(),
    };
    let profile = hwsim::run_kernel_benchmarks(&hw, &plan).map_err(CliError::validation)?;
    write_artifact(&a.out, &profile)?;
    run.output(&a.out);
    run.finish(&sidecar(&a.out))?;
    println!("{}: {} records for {}", a.out.display(), profile.records.len(), hw.id);
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let mut run = Run::start("fit", a, Some(a.seed))?;
    let profile = HardwareProfile::load(&a.profile).map_err(CliError::validation)?;
    run.input(&a.profile);
    let forest = ForestConfig {
        seed: a.seed,
        ..Default::default()
    };
    let model = proxy::fit_proxy(&profile, a.kind.into(), &forest).map_err(CliError::validation)?;
    write_artifact(&a.out, &model)?;
    run.output(&a.out);
    run.finish(&sidecar(&a.out))?;
    for (k, r) in &model.fit_report {
        let r2 = r.r2.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{k}: holdout R2 {r2}, RMSE {:.2} ({} train / {} test)",
            r.rmse, r.n_train, r.n_test
        );
    }
    Ok(())
}

fn load_dataset(net: &NetworkIR) -> Result<Dataset, CliError> {
    let file = net
        .meta
        .dataset_file
        .as_ref()
        .ok_or_else(|| CliError::Validation(format!("network {} names no dataset_file", net.name)))?;
    let c = Container::load(&net.resolve(file)).map_err(CliError::validation)?;
    Dataset::from_container(&c).map_err(CliError::validation)
}

fn cmd_explore(a: &ExploreArgs) -> Result<(), CliError> {
    let mut run = Run::start("explore", a, Some(a.seed))?;
    let net = model_ir::load_network(&a.network).map_err(CliError::validation)?;
    run.input(&a.network);
    let mode = match a.mode {
        ModeArg::Ptq => Mode::Ptq,
        ModeArg::Qat => Mode::Qat,
        ModeArg::Oracle => Mode::Oracle,
    };
    let bits = match &a.bits {
        Some(b) => BitwidthSet::new(b).map_err(CliError::Validation)?,
        None if mode == Mode::Ptq => BitwidthSet::ptq(),
        None => BitwidthSet::qat(),
    };
    let limit = match (a.constraint_ratio, a.constraint_abs) {
        (Some(r), None) => Limit::Ratio(r),
        (None, Some(c)) => Limit::Absolute(c),
        _ => return Err(CliError::Usage("give --constraint-ratio or --constraint-abs".into())),
    };
    let (kind, cost): (ConstraintKind, Box<dyn CostModel>) = if a.proxy == "bops" {
        (ConstraintKind::Bops, Box::new(Bops))
    } else {
        let p = PathBuf::from(&a.proxy);
        let m = ProxyModel::load(&p).map_err(CliError::validation)?;
        run.input(&p);
        (ConstraintKind::Proxy, Box::new(m))
    };
    let mut cfg = SearchConfig::new(mode, Constraint { kind, limit }, a.seed);
    cfg.budget = a.budget;
    cfg.sampler.n_init = a.n_init;
    cfg.sampler.bits = bits;
    cfg.sampler.protect_ends = !a.free_ends;
    cfg.forest.seed = a.seed;
    cfg.validate().map_err(CliError::validation)?;

    let data;
    let evaluator: Box<dyn Evaluator + '_> = match mode {
        Mode::Oracle => Box::new(OracleEvaluator {
            oracle: SyntheticOracle::new(net.len(), a.seed),
        }),
        Mode::Ptq | Mode::Qat => {
            if net.weights.is_none() {
                return Err(CliError::Validation(format!(
                    "network {} has no weights_file",
                    net.name
                )));
            }
            data = load_dataset(&net)?;
            if let Some(f) = &net.meta.dataset_file {
                run.input(&net.resolve(f));
            }
            if mode == Mode::Ptq {
                Box::new(PtqEvaluator {
                    network: &net,
                    data: &data,
                })
            } else {
                Box::new(QatEvaluator {
                    network: &net,
                    data: &data,
                    budget: QatBudget::Short,
                    sgd: SgdConfig::default(),
                    seed: a.seed,
                })
            }
        }
    };
    let (state, constraint) = match explorer::explore(&net, &cfg, evaluator.as_ref(), cost.as_ref()) {
        Ok(r) => r,
        Err(ExploreError::Sampler(e @ SamplerError::Infeasible { .. })) => return Err(CliError::validation(e)),
        Err(e @ (ExploreError::Config(_) | ExploreError::Proxy(_))) => return Err(CliError::validation(e)),
        Err(e) => {
            if let Some(partial) = e.partial() {
                let path = a.out.with_extension("partial.json");
                write_artifact(&path, partial)?;
                run.output(&path);
                run.finish(&sidecar(&path))?;
            }
            return Err(CliError::runtime(e));
        }
    };
    let result = SearchResult::new(&cfg, &net, constraint, &state)
        .ok_or_else(|| CliError::Runtime("search ended without a feasible sample".into()))?;
    write_artifact(&a.out, &result)?;
    run.output(&a.out);
    run.finish(&sidecar(&a.out))?;
    println!(
        "best {} accuracy {:.4} cost {:.1} <= {:.1} ({} samples)",
        result.best_scheme,
        result.best_accuracy,
        result.best_cost,
        result.constraint_value,
        result.samples.len()
    );
    Ok(())
}

fn cmd_codegen(a: &CodegenArgs) -> Result<(), CliError> {
    let mut run = Run::start("codegen", a, None)?;
    let text =
        std::fs::read_to_string(&a.result).map_err(|e| CliError::Validation(format!("{}: {e}", a.result.display())))?;
    let result: SearchResult = serde_json::from_str(&text).map_err(CliError::validation)?;
    run.input(&a.result);
    let net = model_ir::load_network(&a.network).map_err(CliError::validation)?;
    run.input(&a.network);
    if net.weights.is_none() {
        return Err(CliError::Validation(format!("network {} has no weights", net.name)));
    }
    let (model, plan) = codegen::prepare(&net, &result.best_scheme).map_err(CliError::validation)?;
    let manifest = codegen::emit_source(&plan, &model, &a.out).map_err(CliError::runtime)?;
    for f in &manifest.files {
        run.output(&a.out.join(&f.name));
    }
    run.finish(&a.out.join("run.manifest.json"))?;
    println!(
        "{}: {} files, arena {} bytes, {} kernel calls",
        a.out.display(),
        manifest.files.len(),
        manifest.arena_bytes,
        manifest.kernel_calls
    );
    for n in &manifest.widening {
        println!("note: {n}");
    }
    Ok(())
}

fn scheme_label(r: &SearchResult) -> String {
    r.best_scheme
        .pairs
        .iter()
        .map(|p| format!("W{}A{}", p.w, p.a))
        .collect::<Vec<_>>()
        .join("-")
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let mut run = Run::start("report", a, None)?;
    let entries = std::fs::read_dir(&a.runs).map_err(|e| CliError::Validation(format!("{}: {e}", a.runs.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    files.sort();
    let mut results = Vec::new();
    for p in files {
        let Ok(text) = std::fs::read_to_string(&p) else {
            continue;
        };
        if let Ok(r) = serde_json::from_str::<SearchResult>(&text) {
            run.input(&p);
            results.push((p, r));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let summary = a.out.join("summary.csv");
    let traces = a.out.join("traces.csv");
    let csv_err = |e: csv::Error| CliError::runtime(e);
    let mut w = csv::Writer::from_path(&summary).map_err(csv_err)?;
    w.write_record([
        "file",
        "network",
        "mode",
        "constraint_kind",
        "constraint",
        "budget",
        "seed",
        "samples",
        "best_accuracy",
        "best_cost",
        "best_scheme",
    ])
    .map_err(csv_err)?;
    let mut t = csv::Writer::from_path(&traces).map_err(csv_err)?;
    t.write_record(["file", "step", "best_accuracy"]).map_err(csv_err)?;
    for (p, r) in &results {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.write_record([
            name.clone(),
            r.network.clone(),
            tag(&r.config.mode),
            tag(&r.config.constraint.kind),
            format!("{}", r.constraint_value),
            r.config.budget.to_string(),
            r.config.seed.to_string(),
            r.samples.len().to_string(),
            format!("{}", r.best_accuracy),
            format!("{}", r.best_cost),
            scheme_label(r),
        ])
        .map_err(csv_err)?;
        for (i, v) in r.trace.iter().enumerate() {
            t.write_record([name.clone(), i.to_string(), format!("{v}")])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(CliError::runtime)?;
    t.flush().map_err(CliError::runtime)?;
    run.output(&summary);
    run.output(&traces);
    run.finish(&a.out.join("report.manifest.json"))?;
    println!("{}: {} runs", summary.display(), results.len());
    Ok(())
}

/// Serde name of a unit enum value.
fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    }
}

/// Hardware configs shipped with the fixtures.
fn builtin_hardware() -> Vec<HwConfig> {
    vec![
        HwConfig::cpu(CpuVariant::Tiny),
        HwConfig::cpu(CpuVariant::Small),
        HwConfig::cpu(CpuVariant::High),
        HwConfig::systolic(),
    ]
}

fn cmd_fixture(a: &FixtureArgs) -> Result<(), CliError> {
    let mut run = Run::start("fixture", a, Some(a.seed))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let fx = eval::tiny_mlp_fixture(a.seed);
    let mut net = fx.network;
    net.meta.weights_file = Some("tiny_mlp.weights.bin".into());
    net.meta.dataset_file = Some("tiny_mlp.data.bin".into());
    let path = a.out.join("tiny_mlp.json");
    net.save(&path).map_err(CliError::runtime)?;
    run.output(&path);
    run.output(&a.out.join("tiny_mlp.weights.bin"));
    let save = |c: Container, name: &str| -> Result<PathBuf, CliError> {
        let p = a.out.join(name);
        c.save(&p).map_err(CliError::runtime)?;
        Ok(p)
    };
    run.output(&save(fx.data.to_container(), "tiny_mlp.data.bin")?);
    run.output(&save(fx.data.inputs_container(100), "tiny_mlp.inputs.bin")?);
    let lenet = a.out.join("lenet5.json");
    model_ir::lenet5().save(&lenet).map_err(CliError::runtime)?;
    run.output(&lenet);
    for hw in builtin_hardware() {
        let p = a.out.join(format!("{}.json", hw.id));
        write_json(&p, &hw)?;
        run.output(&p);
    }
    let plan = a.out.join("bench_plan.json");
    write_json(&plan, &BenchmarkPlan::default())?;
    run.output(&plan);
    run.finish(&a.out.join("fixture.manifest.json"))?;
    println!(
        "{}: tiny MLP float accuracy {:.4}",
        a.out.display(),
        net.meta.float_accuracy.unwrap_or(0.0)
    );
    Ok(())
}
