use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use mico_core::codegen::{self, CodegenManifest, RUNTIME_HEADER};
use mico_core::container::{Container, Role};
use mico_core::engine;
use mico_core::eval;
use mico_core::model_ir::{BitPair, QuantScheme};

const RUNTIME_API: [&str; 13] = [
    "rt_load_weights",
    "rt_find",
    "rt_tensor_f32",
    "rt_dotp",
    "rt_quantize",
    "rt_dequantize",
    "rt_pack",
    "rt_unpack",
    "rt_im2col",
    "rt_matmul",
    "rt_conv2d",
    "rt_bias_add",
    "rt_output",
];

fn mixed() -> QuantScheme {
    QuantScheme::new(vec![BitPair::new(5, 6), BitPair::new(2, 4)])
}

fn emit(dir: &Path, scheme: &QuantScheme) -> CodegenManifest {
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let (model, plan) = codegen::prepare(&fx.network, scheme).unwrap();
    codegen::emit_source(&plan, &model, dir).unwrap()
}

fn called(src: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = src;
    while let Some(i) = rest.find("rt_") {
        let tail = &rest[i..];
        let end = tail
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(tail.len());
        let before = if i == 0 { ' ' } else { rest[..i].chars().last().unwrap() };
        if tail[end..].starts_with('(') && !(before.is_ascii_alphanumeric() || before == '_') {
            out.insert(tail[..end].to_string());
        }
        rest = &tail[end..];
    }
    out
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = emit(a.path(), &mixed());
    let mb = emit(b.path(), &mixed());
    assert_eq!(ma, mb);
    for f in &ma.files {
        let x = std::fs::read(a.path().join(&f.name)).unwrap();
        let y = std::fs::read(b.path().join(&f.name)).unwrap();
        assert_eq!(x, y, "{} differs", f.name);
    }
}

#[test]
fn manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = emit(dir.path(), &mixed());
    let listed: BTreeSet<String> = m.files.iter().map(|f| f.name.clone()).collect();
    let present: BTreeSet<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(listed, present);
    for f in &m.files {
        if let Some(n) = f.bytes {
            assert_eq!(
                std::fs::metadata(dir.path().join(&f.name)).unwrap().len() as usize,
                n,
                "{}",
                f.name
            );
        }
    }
    let on_disk: CodegenManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
    assert_eq!(m.widening, vec!["layer 0: W5A6 computed as W8A8".to_string()]);
}

#[test]
fn header_declares_the_runtime_api() {
    let declared = called(RUNTIME_HEADER);
    for name in RUNTIME_API {
        assert!(declared.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    emit(dir.path(), &mixed());
    for file in ["model.c", "main.c"] {
        let src = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let used = called(&src);
        assert!(!used.is_empty());
        for name in used {
            assert!(declared.contains(&name), "{file} calls undeclared {name}");
        }
    }
}

#[test]
fn weights_bin_round_trips() {
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let dir = tempfile::tempdir().unwrap();
    let (model, plan) = codegen::prepare(&fx.network, &mixed()).unwrap();
    codegen::emit_source(&plan, &model, dir.path()).unwrap();
    let bytes = std::fs::read(dir.path().join("weights.bin")).unwrap();
    let loaded = Container::from_bytes(&bytes).unwrap();
    assert_eq!(loaded, codegen::weights_container(&model));
    for layer in 0..fx.network.len() as u32 {
        assert!(loaded.find(layer, Role::PackedWeight).is_some());
        assert!(loaded.find(layer, Role::IntBias).is_some());
    }
}

#[test]
fn executor_matches_engine_on_fixture_inputs() {
    let fx = eval::tiny_mlp_fixture(eval::FIXTURE_SEED);
    let inputs = fx.data.inputs_container(100);
    let rows = inputs.find(0, Role::Input).unwrap().as_f32().unwrap().to_vec();
    let dim = fx.network.input_len();
    assert_eq!(rows.len(), 100 * dim);
    for scheme in [
        mixed(),
        QuantScheme::uniform(2, 8),
        QuantScheme::uniform(2, 1),
        QuantScheme::new(vec![BitPair::new(1, 8), BitPair::new(8, 2)]),
    ] {
        let (model, plan) = codegen::prepare(&fx.network, &scheme).unwrap();
        let weights = Container::from_bytes(&codegen::weights_container(&model).to_bytes().unwrap()).unwrap();
        for x in rows.chunks(dim) {
            let want = engine::infer(&model, x).unwrap();
            let got = codegen::execute(&plan, &weights, x).unwrap();
            assert_eq!(got, want, "{scheme:?}");
        }
    }
}

#[test]
fn generated_c_parses_when_a_compiler_is_present() {
    let Ok(out) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    if !out.status.success() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    emit(dir.path(), &mixed());
    let status = Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-fsyntax-only",
            "model.c",
            "main.c",
        ])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
}
