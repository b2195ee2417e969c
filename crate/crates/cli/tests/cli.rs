use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchgen::mesh::{load_mesh, primitives, save_mesh, Mesh};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchgen"))
        .args(args)
        .output()
        .expect("spawn patchgen")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sphere_file(dir: &Path) -> PathBuf {
    let p = dir.join("sphere.obj");
    save_mesh(&primitives::uv_sphere([0.0; 3], 1.0, 32, 16), &p).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn preprocess_empty_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    save_mesh(&primitives::cube([0.0; 3], 1.0), input.join("cube.obj")).unwrap();
    let out = bin(&["preprocess", "--input", s(&input), "--output", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preprocess_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    sphere_file(&input);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--seed", "4", "preprocess", "--input", s(&input), "--output", s(&a)]);
    ok(&["--seed", "4", "preprocess", "--input", s(&input), "--output", s(&b)]);
    let ma = std::fs::read(a.join("sphere.obj")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("sphere.obj")).unwrap());
    assert!(a.join("config.json").is_file());
}

#[test]
fn ground_truth_pipeline_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = sphere_file(dir.path());
    let out = dir.path().join("run");
    ok(&["pipeline", "--input", s(&input), "--output", s(&out), "--ground-truth-tokens", "--n-patches", "3"]);
    let m = load_mesh(out.join("mesh.obj")).unwrap();
    assert_eq!(m.face_count(), load_mesh(&input).unwrap().face_count());
    let metrics = json(&out.join("metrics.json"));
    assert!(metrics["cd_l1_surface"].as_f64().unwrap() < 0.01);
    assert_eq!(json(&out.join("config.json"))["segmentation"]["n_patches"], 3);
}

#[test]
fn tokenize_then_assemble_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = sphere_file(dir.path());
    let toks = dir.path().join("toks");
    ok(&["tokenize", "--input", s(&input), "--output", s(&toks), "--n-patches", "4"]);
    assert!(toks.join("patch_0003.mmtk").is_file());
    let plans = toks.join("plans.json");
    let asm = dir.path().join("asm");
    ok(&["assemble", "--plans", s(&plans), "--tokens-dir", s(&toks), "--output", s(&asm)]);
    let glued = load_mesh(asm.join("mesh.obj")).unwrap();
    assert_eq!(glued.face_count(), load_mesh(&input).unwrap().face_count());

    let one = dir.path().join("p0.obj");
    ok(&["detokenize", "--tokens", s(&toks.join("patch_0000.mmtk")), "--plans", s(&plans), "--output", s(&one)]);
    let diag = json(&dir.path().join("p0.obj.diagnostics.json"));
    assert_eq!(diag["terminated"], true);
    assert_eq!(diag["discarded_tokens"], 0);
}

#[test]
fn eval_of_identical_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let input = sphere_file(dir.path());
    let out = ok(&["eval", "--generated", s(&input), "--reference", s(&input)]);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["cd_l1"], 0.0);
    assert_eq!(r["f1"], 1.0);
    assert_eq!(r["nc"], 1.0);
}

#[test]
fn labels_mode_uses_the_label_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = sphere_file(dir.path());
    let mesh = load_mesh(&input).unwrap();
    let labels: String = (0..mesh.face_count())
        .map(|f| format!("{}\n", if mesh.face_centroid(f)[0] < 0.0 { 7 } else { 2 }))
        .collect();
    let lp = dir.path().join("sphere.labels");
    std::fs::write(&lp, labels).unwrap();
    let out = dir.path().join("seg");
    ok(&["segment", "--input", s(&input), "--output", s(&out), "--mode", "labels", "--labels", s(&lp)]);
    let seg = json(&out.join("segmentation.json"));
    assert_eq!(seg["patches"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let input = sphere_file(dir.path());
    let out = bin(&[
        "pipeline",
        "--input",
        s(&input),
        "--output",
        s(&dir.path().join("run")),
        "--checkpoint",
        s(&dir.path().join("nope.mmck")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let bad = bin(&["eval", "--generated", s(&input)]);
    assert_eq!(bad.status.code(), Some(1));
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "quantization": { "resolution": 64 },
        "model": {
            "layers": 1, "hidden_dim": 16, "heads": 2, "gru_hidden": 8,
            "vocab_size": 67, "window": 256, "point_hidden": 8, "ff_mult": 2
        },
        "train": { "epochs": 2, "batch_size": 2, "global_samples": 256, "local_samples": 256 },
        "generation": { "max_tokens": 64 },
        "boundary": { "k": 4 }
    });
    let p = dir.join("tiny.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn small_mesh(dir: &Path) -> PathBuf {
    let p = dir.join("small.obj");
    let m: Mesh = primitives::grid_box([0.0; 3], [1.0, 0.5, 0.5], 2);
    save_mesh(&m, &p).unwrap();
    p
}

#[test]
fn train_then_generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let input = small_mesh(dir.path());
    let train = dir.path().join("train");
    ok(&["--config", s(&cfg), "train-toy", "--input", s(&input), "--output", s(&train), "--single-mesh", "--n-patches", "2"]);
    let log = std::fs::read_to_string(train.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 2);
    let ck = train.join("model.mmck");
    assert!(ck.is_file());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--config", s(&cfg), "--seed", "5", "generate", "--checkpoint", s(&ck), "--input", s(&input),
            "--output", s(&out), "--n-patches", "2",
        ]);
        std::fs::read(out.join("mesh.obj")).unwrap()
    };
    assert_eq!(run("g1"), run("g2"));
}
