//! Subcommand bodies. Each returns `Ok` or a coded failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use patchgen::assembly::{assemble, PatchPlan};
use patchgen::mesh::{load_mesh, normalize_mesh, save_mesh, Mesh};
use patchgen::metrics::{evaluate, write_csv, MetricsReport};
use patchgen::pipeline::{run_on_segmentation, segment, GroundTruthSource, PatchSource, PipelineOutput};
use patchgen::preprocess::preprocess_dir;
use patchgen::quantizer::{detokenize_patch, PatchFrame};
use patchgen::tokenfile::{read_token_file, write_token_file};
use patchgen_model::checkpoint::{load_checkpoint, save_checkpoint};
use patchgen_model::single_mesh::{train_on_meshes, ModelSource, ToyTrainConfig};
use patchgen_model::Model;

use crate::config::PipelineConfig;
use crate::Coded;

pub const PLANS_FILE: &str = "plans.json";
pub const CHECKPOINT_FILE: &str = "model.mmck";

pub fn token_file_name(step: usize) -> String {
    format!("patch_{step:04}.mmtk")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<Mesh> {
    load_mesh(path).with_context(|| format!("loading {}", path.display()))
}

pub fn preprocess(cfg: &PipelineConfig, input: &Path, output: &Path) -> anyhow::Result<()> {
    if !input.is_dir() {
        bail!("{} is not a directory", input.display());
    }
    cfg.write_resolved(output)?;
    let entries = preprocess_dir(input, output, &cfg.preprocess)?;
    let accepted = entries.iter().filter(|e| e.accepted).count();
    println!("{accepted} of {} meshes accepted", entries.len());
    if accepted == 0 {
        return Err(Coded::empty("no mesh was accepted"));
    }
    Ok(())
}

pub fn segment_cmd(cfg: &PipelineConfig, input: &Path, output: &Path) -> anyhow::Result<()> {
    let (mesh, _) = normalize_mesh(&load(input)?)?;
    let seg = segment(&mesh, &cfg.segmentation)?;
    seg.validate(&mesh).map_err(Coded::invariant)?;
    cfg.write_resolved(output)?;
    seg.save_json(output.join("segmentation.json"))?;
    println!("{} patches", seg.patches.len());
    Ok(())
}

fn ground_truth_run(cfg: &PipelineConfig, input: &Path, evaluate_output: bool) -> anyhow::Result<PipelineOutput> {
    let (mesh, tf) = normalize_mesh(&load(input)?)?;
    let seg = segment(&mesh, &cfg.segmentation)?;
    Ok(run_on_segmentation(mesh, tf, seg, &cfg.settings(), &mut GroundTruthSource, evaluate_output)?)
}

/// Writes one token file per patch (in generation order) plus the frames
/// and boundaries needed to assemble them.
pub fn tokenize(cfg: &PipelineConfig, input: &Path, output: &Path) -> anyhow::Result<()> {
    let out = ground_truth_run(cfg, input, false)?;
    cfg.write_resolved(output)?;
    let vocab = cfg.quantization.resolution as usize + 3;
    for (step, ts) in out.tokens.iter().enumerate() {
        write_token_file(output.join(token_file_name(step)), ts, vocab)?;
    }
    write_json(&output.join(PLANS_FILE), &out.plans)?;
    out.segmentation.save_json(output.join("segmentation.json"))?;
    println!("{} patches tokenized", out.plans.len());
    Ok(())
}

pub fn detokenize(tokens: &Path, plans: Option<&Path>, step: usize, output: &Path) -> anyhow::Result<()> {
    let (ts, vocab) = read_token_file(tokens)?;
    let frame = match plans {
        Some(p) => {
            let plans: Vec<PatchPlan> = read_json(p)?;
            plans
                .get(step)
                .with_context(|| format!("no plan for step {step}"))?
                .frame
        }
        None => PatchFrame::new([0.0; 3], 1.0, (vocab - 3) as u32)?,
    };
    let (qp, diag) = detokenize_patch(&ts, frame);
    let (positions, faces) = qp.to_positions();
    let mesh = Mesh::new(positions, faces)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_mesh(&mesh, output)?;
    let mut diag_path = output.as_os_str().to_owned();
    diag_path.push(".diagnostics.json");
    write_json(Path::new(&diag_path), &diag)?;
    println!("{} faces, {} tokens discarded", diag.faces_parsed, diag.discarded_tokens);
    if mesh.is_empty() {
        return Err(Coded::empty("no face decoded"));
    }
    Ok(())
}

pub fn assemble_cmd(plans: &Path, tokens_dir: &Path, output: &Path) -> anyhow::Result<()> {
    let plans: Vec<PatchPlan> = read_json(plans)?;
    let tokens = (0..plans.len())
        .map(|i| Ok(read_token_file(tokens_dir.join(token_file_name(i)))?.0))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (mesh, state) = assemble(&plans, &tokens).map_err(Coded::classify)?;
    fs::create_dir_all(output)?;
    save_mesh(&mesh, output.join("mesh.obj"))?;
    write_json(&output.join("assembly.json"), &state)?;
    println!("{} faces assembled", mesh.face_count());
    if mesh.is_empty() {
        return Err(Coded::empty("assembled mesh is empty"));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: f64,
    epoch_mean_loss: Vec<f64>,
    last_seg_seeds: Vec<u64>,
}

pub fn train_toy(cfg: &PipelineConfig, inputs: &[PathBuf], single_mesh: bool, output: &Path) -> anyhow::Result<()> {
    if inputs.is_empty() {
        bail!("no input mesh given");
    }
    if single_mesh && inputs.len() != 1 {
        bail!("--single-mesh takes exactly one mesh, got {}", inputs.len());
    }
    cfg.check_model(&cfg.model)?;
    let meshes = inputs.iter().map(|p| load(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let mut data = cfg.data();
    if !single_mesh {
        // a fixed segmentation per mesh; single-mesh runs re-segment each epoch
        data.seg_seed_pool = 1;
    }
    let tc = ToyTrainConfig {
        model: cfg.model.clone(),
        optim: cfg.train.optim,
        data,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.model.seed,
    };
    cfg.write_resolved(output)?;
    let mut log = std::io::BufWriter::new(fs::File::create(output.join("train_log.jsonl"))?);
    let outcome = train_on_meshes(&meshes, &tc, Some(&mut log)).map_err(|e| match e {
        patchgen_model::ModelError::NonFiniteLoss { .. } => Coded::invariant(e),
        other => other.into(),
    })?;
    log.flush()?;
    let steps_per_epoch = outcome.history.len() / tc.epochs;
    let epoch_mean_loss = outcome
        .history
        .chunks(steps_per_epoch.max(1))
        .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64)
        .collect();
    let summary = TrainSummary {
        steps: outcome.history.len(),
        final_loss: outcome.history.last().map_or(f64::NAN, |s| s.loss),
        epoch_mean_loss,
        last_seg_seeds: outcome.last_seg_seeds.clone(),
    };
    write_json(&output.join("train_summary.json"), &summary)?;
    let meta = serde_json::json!({ "steps": summary.steps, "final_loss": summary.final_loss });
    save_checkpoint(output.join(CHECKPOINT_FILE), &outcome.model, meta)?;
    println!("{} steps, final loss {:.5}", summary.steps, summary.final_loss);
    Ok(())
}

fn load_model(cfg: &PipelineConfig, path: &Path) -> anyhow::Result<Model> {
    if !path.is_file() {
        bail!("checkpoint {} not found", path.display());
    }
    let (model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.check_model(&model.config)?;
    Ok(model)
}

fn model_run(cfg: &PipelineConfig, model: &Model, input: &Path, evaluate_output: bool) -> anyhow::Result<PipelineOutput> {
    let (mesh, tf) = normalize_mesh(&load(input)?)?;
    let seg = segment(&mesh, &cfg.segmentation)?;
    let mut source = ModelSource::new(model, &mesh, &cfg.data(), cfg.segmentation.seed, cfg.generation)?;
    let out = run_on_segmentation(mesh, tf, seg, &cfg.settings(), &mut source as &mut dyn PatchSource, evaluate_output)
        .map_err(Coded::classify)?;
    for r in source.records.iter().filter(|r| r.truncated) {
        log::warn!("patch {} truncated at {} tokens", r.patch_id, r.tokens);
    }
    Ok(out)
}

fn finish_run(out: &PipelineOutput, output: &Path) -> anyhow::Result<()> {
    out.write_to(output)?;
    if let Some(m) = &out.metrics {
        if !m.is_finite() {
            return Err(Coded::invariant(anyhow::anyhow!("non-finite metrics")));
        }
        println!("cd_l1 {:.6} hd {:.6} f1 {:.4}", m.cd_l1, m.hd, m.f1);
    }
    println!("{} faces from {} patches", out.mesh.face_count(), out.plans.len());
    if out.mesh.is_empty() {
        return Err(Coded::empty("output mesh is empty"));
    }
    Ok(())
}

/// Conditions on the input mesh's clouds and segmentation and samples
/// every patch from a checkpoint.
pub fn generate_cmd(cfg: &PipelineConfig, checkpoint: &Path, input: &Path, output: &Path) -> anyhow::Result<()> {
    let model = load_model(cfg, checkpoint)?;
    let out = model_run(cfg, &model, input, false)?;
    cfg.write_resolved(output)?;
    finish_run(&out, output)
}

pub fn pipeline(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    ground_truth: bool,
    checkpoint: Option<&Path>,
    evaluate_output: bool,
) -> anyhow::Result<()> {
    let out = match (ground_truth, checkpoint) {
        (true, None) => ground_truth_run(cfg, input, evaluate_output)?,
        (false, Some(c)) => {
            let model = load_model(cfg, c)?;
            model_run(cfg, &model, input, evaluate_output)?
        }
        (true, Some(_)) => bail!("--ground-truth-tokens and --checkpoint are exclusive"),
        (false, None) => bail!("pipeline needs --checkpoint or --ground-truth-tokens"),
    };
    cfg.write_resolved(output)?;
    finish_run(&out, output)
}

fn eval_pair(cfg: &PipelineConfig, generated: &Path, reference: &Path) -> anyhow::Result<MetricsReport> {
    let r = evaluate(&load(generated)?, &load(reference)?, &cfg.metrics)?;
    if !r.is_finite() {
        return Err(Coded::invariant(anyhow::anyhow!("non-finite metrics")));
    }
    Ok(r)
}

fn obj_names(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut v: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".obj"))
        .collect();
    v.sort();
    Ok(v)
}

/// Scores one pair, or every same-named pair of two directories (CSV with
/// a trailing mean row).
pub fn eval(cfg: &PipelineConfig, generated: &Path, reference: &Path, output: Option<&Path>) -> anyhow::Result<()> {
    if generated.is_dir() {
        if !reference.is_dir() {
            bail!("{} is a directory but {} is not", generated.display(), reference.display());
        }
        let mut rows = Vec::new();
        for name in obj_names(generated)? {
            let r = reference.join(&name);
            if !r.is_file() {
                log::warn!("no reference for {name}");
                continue;
            }
            rows.push((name.clone(), name.clone(), eval_pair(cfg, &generated.join(&name), &r)?));
        }
        if rows.is_empty() {
            return Err(Coded::empty("no matching mesh pairs"));
        }
        let dir = output.unwrap_or(Path::new("."));
        cfg.write_resolved(dir)?;
        write_csv(dir.join("metrics.csv"), &rows)?;
        println!("{} pairs scored", rows.len());
        return Ok(());
    }
    let r = eval_pair(cfg, generated, reference)?;
    match output {
        Some(dir) => {
            cfg.write_resolved(dir)?;
            write_json(&dir.join("metrics.json"), &r)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&r)?),
    }
    Ok(())
}
