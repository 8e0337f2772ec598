//! Command implementations. Each writes its artifacts plus a provenance
//! record and refuses to overwrite existing outputs without `--force`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use serde::Serialize;
use wavesel::convnet::{read_checkpoint, write_checkpoint, Params};
use wavesel::dataio::{load_dataset, load_image, load_stack, synth_dataset, Dataset, DatasetManifest, ManifestEntry};
use wavesel::explain::{extract_embeddings, grad_cam, render_cam, write_embeddings_csv};
use wavesel::metrics::{det_curve, metrics_report};
use wavesel::sparsity::{select_subbands, SelectionResult, SparsityMode};
use wavesel::trainer::{
    config_text, evaluate, score_split, sweep_lambda, train_phase1, train_phase2, RunReport, SweepEntry, TrainConfig,
    TrainReport,
};
use wavesel::wavelet::{build_filters, decompose, SubbandPath, WaveletFamily, FULL_CHANNELS};
use wavesel::Error;

use crate::config::RunConfig;
use crate::provenance::Provenance;

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    /// Missing or inconsistent artifact, or an output that already exists.
    Precondition(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Precondition(m) => write!(f, "precondition failed: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Precondition(_) => 3,
            CliError::Lib(e) => match e {
                Error::Config(_) => 2,
                Error::NonFinite(_) | Error::Diverged { .. } => 4,
                _ => 3,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn precondition<T>(msg: String) -> CliResult<T> {
    Err(CliError::Precondition(msg))
}

/// Creates `dir`, refusing a non-empty existing directory unless forced.
fn prepare_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return precondition(format!("{} exists and is not a directory", dir.display()));
        }
        if !force && fs::read_dir(dir)?.next().is_some() {
            return precondition(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            ));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn prepare_file(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return precondition(format!("{} already exists; pass --force to overwrite", path.display()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return precondition(format!("{what} {} does not exist", path.display()));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_manifest(path: &Path) -> CliResult<DatasetManifest> {
    require_file(path, "manifest")?;
    Ok(DatasetManifest::read_jsonl(path)?)
}

fn manifest_inputs(path: &Path, manifest: &DatasetManifest) -> Vec<PathBuf> {
    let base = base_dir(path);
    std::iter::once(path.to_path_buf())
        .chain(manifest.entries.iter().map(|e| base.join(&e.path)))
        .collect()
}

fn load_training_data(cfg: &RunConfig, path: &Path) -> CliResult<(DatasetManifest, Dataset)> {
    let manifest = read_manifest(path)?;
    manifest.validate_for_training()?;
    let data = load_dataset(&manifest, &base_dir(path), &build_filters(cfg.family), cfg.image_size())?;
    if data.channels() != FULL_CHANNELS {
        return precondition(format!(
            "manifest {} yields {}-channel stacks, expected {FULL_CHANNELS}",
            path.display(),
            data.channels()
        ));
    }
    Ok((manifest, data))
}

fn checkpoint_meta(cfg: &RunConfig, phase: u8, train: &TrainConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("family".to_string(), cfg.family.to_string()),
        ("phase".to_string(), phase.to_string()),
        ("lambda".to_string(), train.lambda.to_string()),
        ("mode".to_string(), train.mode.to_string()),
        ("seed".to_string(), train.seed.to_string()),
    ])
}

fn save_checkpoint(path: &Path, params: &Params<f32>, meta: &BTreeMap<String, String>) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, meta, &mut w)?;
    w.flush()?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<(Params<f32>, BTreeMap<String, String>, WaveletFamily)> {
    require_file(path, "checkpoint")?;
    let (params, meta) = read_checkpoint(BufReader::new(File::open(path)?), path)?;
    let family = match meta.get("family") {
        Some(f) => f.parse()?,
        None => WaveletFamily::Haar,
    };
    Ok((params, meta, family))
}

/// Saves the last good parameters of a diverged run before reporting it.
fn keep_last_good(err: Error, dir: &Path, name: &str, meta: &BTreeMap<String, String>) -> CliError {
    if let Error::Diverged { last_good, .. } = &err {
        let path = dir.join(name);
        if let Err(e) = save_checkpoint(&path, last_good, meta) {
            eprintln!("warning: could not save {}: {e}", path.display());
        } else {
            eprintln!("last good parameters written to {}", path.display());
        }
    }
    CliError::Lib(err)
}

fn write_run(dir: &Path, cfg: &RunConfig, train: &TrainConfig, report: &RunReport) -> CliResult<()> {
    let extra = BTreeMap::from([
        ("family".to_string(), cfg.family.to_string()),
        ("image_size".to_string(), cfg.image_size().to_string()),
    ]);
    fs::write(dir.join("config.txt"), config_text(train, &extra))?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(())
}

fn provenance(cfg: &RunConfig, command: &str) -> Provenance {
    Provenance::new(command, cfg.train.seed, cfg.entries())
}

pub fn cmd_synth(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let out = cfg.require(&cfg.out, "out")?;
    prepare_dir(out, force)?;
    let (manifest, summary) = synth_dataset(&cfg.synth, out)?;
    provenance(cfg, "synth").write(&out.join("provenance-synth.json"))?;
    println!(
        "wrote {} images ({} entries) to {}; clamped fraction {:.6}",
        summary.images,
        manifest.entries.len(),
        out.display(),
        summary.clamped_fraction
    );
    Ok(())
}

pub fn cmd_decompose(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let out = cfg.require(&cfg.out, "out")?;
    let manifest = read_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    prepare_dir(out, force)?;
    fs::create_dir_all(out.join("stacks"))?;
    let spec = build_filters(cfg.family);
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let stack = load_stack(&base.join(&e.path), &spec, cfg.image_size())?;
        let stem = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let rel = PathBuf::from("stacks").join(format!("{i:05}_{stem}.sbs"));
        let mut w = BufWriter::new(File::create(out.join(&rel))?);
        stack.write_to(&mut w)?;
        w.flush()?;
        entries.push(ManifestEntry {
            path: rel,
            label: e.label,
            split: e.split,
        });
    }
    let stacks = DatasetManifest {
        name: "manifest".into(),
        entries,
    };
    stacks.write_jsonl(&out.join("manifest.jsonl"))?;
    let mut prov = provenance(cfg, "decompose");
    prov.hash_inputs(manifest_inputs(manifest_path, &manifest))?;
    prov.write(&out.join("provenance-decompose.json"))?;
    println!("decomposed {} entries into {}", stacks.entries.len(), out.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let out = cfg.require(&cfg.out, "out")?;
    let (manifest, data) = load_training_data(cfg, manifest_path)?;
    prepare_dir(out, force)?;
    let meta = checkpoint_meta(cfg, 1, &cfg.train);
    let report = train_phase1(&data, &cfg.train).map_err(|e| keep_last_good(e, out, "phase1-last-good.ckpt", &meta))?;
    save_checkpoint(&out.join("phase1.ckpt"), &report.final_params, &meta)?;
    write_run(out, cfg, &cfg.train, &RunReport::new(1, &report, None))?;
    let mut prov = provenance(cfg, "train");
    prov.hash_inputs(manifest_inputs(manifest_path, &manifest))?;
    prov.write(&out.join("provenance-train.json"))?;
    print_phase(1, &report);
    Ok(())
}

fn print_phase(phase: u8, report: &TrainReport) {
    let last = report.loss_history.last().expect("at least one epoch");
    println!(
        "phase {phase}: lambda {} final loss {:.6} (classification {:.6}, penalty {:.6}), val auc {:.4}",
        report.config.lambda, last.total, last.classification, last.penalty, report.val_auc
    );
}

#[derive(Serialize)]
struct SweepFile<'a> {
    entries: &'a [SweepEntry],
    best_lambda: f64,
}

pub fn cmd_sweep(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let out = cfg.require(&cfg.out, "out")?;
    let (manifest, data) = load_training_data(cfg, manifest_path)?;
    prepare_dir(out, force)?;
    let outcome = sweep_lambda(&data, &cfg.grid, &cfg.train)?;
    for e in &outcome.entries {
        match (e.val_auc, e.selected, &e.error) {
            (Some(a), Some(s), _) => println!("lambda {}: val auc {a:.4}, {s} selected", e.lambda),
            (_, _, Some(err)) => println!("lambda {}: failed ({err})", e.lambda),
            _ => {}
        }
    }
    let best_cfg = outcome.best_report.config.clone();
    let meta = checkpoint_meta(cfg, 1, &best_cfg);
    save_checkpoint(&out.join("phase1.ckpt"), &outcome.best_report.final_params, &meta)?;
    write_run(out, cfg, &best_cfg, &RunReport::new(1, &outcome.best_report, None))?;
    write_json(&out.join("selection.json"), &outcome.best_selection)?;
    write_json(
        &out.join("sweep.json"),
        &SweepFile {
            entries: &outcome.entries,
            best_lambda: outcome.best_lambda,
        },
    )?;
    let mut prov = provenance(cfg, "sweep");
    prov.hash_inputs(manifest_inputs(manifest_path, &manifest))?;
    prov.write(&out.join("provenance-sweep.json"))?;
    println!(
        "best lambda {} ({} of {FULL_CHANNELS} sub-bands selected)",
        outcome.best_lambda,
        outcome.best_selection.selected.len()
    );
    Ok(())
}

pub fn cmd_select(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let run = cfg.require(&cfg.run, "run")?;
    let ckpt = run.join("phase1.ckpt");
    let (params, meta, _) = load_checkpoint(&ckpt)?;
    let out = run.join("selection.json");
    prepare_file(&out, force)?;
    let paths: Vec<SubbandPath> = match &params.config.selected {
        Some(sel) => sel.iter().map(|&c| SubbandPath::from_channel(c)).collect::<Option<_>>(),
        None if params.config.in_channels == FULL_CHANNELS => Some(SubbandPath::all()),
        None => None,
    }
    .ok_or_else(|| CliError::Precondition(format!("{} does not describe a sub-band model", ckpt.display())))?;
    let lambda: f64 = meta.get("lambda").and_then(|v| v.parse().ok()).unwrap_or(0.0);
    let mode: SparsityMode = match meta.get("mode") {
        Some(m) => m.parse()?,
        None => SparsityMode::Proximal,
    };
    let sel = select_subbands(params.conv1().weights.view(), lambda, cfg.train.threshold, mode, &paths)?;
    write_json(&out, &sel)?;
    let mut prov = provenance(cfg, "select");
    prov.hash_inputs([ckpt])?;
    prov.write(&run.join("provenance-select.json"))?;
    let names: Vec<String> = sel.paths.iter().map(|p| p.to_string()).collect();
    println!("selected {} of {}: {}", sel.selected.len(), paths.len(), names.join(" "));
    Ok(())
}

fn read_selection(path: &Path) -> CliResult<SelectionResult> {
    require_file(path, "selection")?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Lib(Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    })
}

pub fn cmd_retrain(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let selection_path = cfg.require(&cfg.selection, "selection")?;
    let out = cfg.require(&cfg.out, "out")?;
    let selection = read_selection(selection_path)?;
    let (manifest, data) = load_training_data(cfg, manifest_path)?;
    if selection.norms.len() != data.channels()
        || selection.selected.iter().any(|&c| c >= data.channels())
        || selection.selected.iter().zip(&selection.paths).any(|(&c, p)| data.paths[c] != *p)
    {
        return precondition(format!(
            "selection {} does not match the {}-channel stacks of {}",
            selection_path.display(),
            data.channels(),
            manifest_path.display()
        ));
    }
    prepare_dir(out, force)?;
    let train = TrainConfig {
        lambda: 0.0,
        ..cfg.train.clone()
    };
    let meta = checkpoint_meta(cfg, 2, &train);
    let (report, reduced) =
        train_phase2(&data, &selection, &train).map_err(|e| keep_last_good(e, out, "phase2-last-good.ckpt", &meta))?;
    let test = if reduced.indices(wavesel::dataio::Split::Test).is_empty() {
        None
    } else {
        Some(evaluate(&report.final_params, &reduced, wavesel::dataio::Split::Test)?)
    };
    save_checkpoint(&out.join("phase2.ckpt"), &report.final_params, &meta)?;
    write_run(out, cfg, &train, &RunReport::new(2, &report, test.clone()))?;
    write_json(&out.join("selection.json"), &selection)?;
    let mut prov = provenance(cfg, "retrain");
    let mut inputs = manifest_inputs(manifest_path, &manifest);
    inputs.insert(0, selection_path.to_path_buf());
    prov.hash_inputs(inputs)?;
    prov.write(&out.join("provenance-retrain.json"))?;
    print_phase(2, &report);
    if let Some(m) = test {
        println!("test: d-eer {}%, bpcer5 {}%, bpcer10 {}%, auc {:.4}", m.d_eer_pct, m.bpcer5_pct, m.bpcer10_pct, m.auc);
    }
    Ok(())
}

/// Loads a manifest's stacks restricted to the checkpoint's input channels.
fn model_data(params: &Params<f32>, family: WaveletFamily, manifest_path: &Path) -> CliResult<(DatasetManifest, Dataset)> {
    let manifest = read_manifest(manifest_path)?;
    let data = load_dataset(
        &manifest,
        &base_dir(manifest_path),
        &build_filters(family),
        params.config.image_size,
    )?;
    let data = match &params.config.selected {
        Some(sel) => {
            if data.channels() != FULL_CHANNELS {
                return precondition(format!(
                    "checkpoint selects sub-bands of a {FULL_CHANNELS}-channel stack, manifest yields {}",
                    data.channels()
                ));
            }
            data.select_channels(sel)?
        }
        None => data,
    };
    if data.channels() != params.config.in_channels {
        return precondition(format!(
            "checkpoint expects {} channels, manifest yields {}",
            params.config.in_channels,
            data.channels()
        ));
    }
    Ok((manifest, data))
}

pub fn cmd_eval(cfg: &RunConfig, embeddings: bool, force: bool) -> CliResult<()> {
    let ckpt = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let out = cfg.require(&cfg.out, "out")?;
    let (params, _, family) = load_checkpoint(ckpt)?;
    let (manifest, data) = model_data(&params, family, manifest_path)?;
    let scores = score_split(&params, &data, cfg.split)?;
    let report = metrics_report(&scores)?;
    prepare_dir(out, force)?;
    write_json(&out.join("metrics.json"), &report)?;

    let idx = data.indices(cfg.split);
    let logits_scores: Vec<String> = idx
        .iter()
        .zip(&scores.entries)
        .map(|(&i, s)| format!("{},{},{}", data.sources[i].display(), data.labels[i] as u8, s.score))
        .collect();
    fs::write(out.join("scores.csv"), format!("path,label,score\n{}\n", logits_scores.join("\n")))?;
    let mut det = BufWriter::new(File::create(out.join("det.csv"))?);
    det_curve(&scores)?.write_csv(&mut det)?;
    det.flush()?;

    if embeddings {
        let views: Vec<_> = idx.iter().map(|&i| data.stacks[i].view()).collect();
        let batch = ndarray::stack(Axis(0), &views).map_err(|e| Error::Internal(e.to_string()))?;
        let emb = extract_embeddings(&params, batch.view())?;
        let labels: Vec<_> = idx.iter().map(|&i| data.labels[i]).collect();
        let mut w = BufWriter::new(File::create(out.join("embeddings.csv"))?);
        write_embeddings_csv(&labels, emb.view(), &mut w)?;
        w.flush()?;
    }
    let mut prov = provenance(cfg, "eval");
    let mut inputs = manifest_inputs(manifest_path, &manifest);
    inputs.insert(0, ckpt.to_path_buf());
    prov.hash_inputs(inputs)?;
    prov.write(&out.join("provenance-eval.json"))?;
    println!(
        "{}: d-eer {}%, bpcer5 {}%, bpcer10 {}%, auc {:.4} ({} bona fide, {} morph)",
        cfg.split, report.d_eer_pct, report.bpcer5_pct, report.bpcer10_pct, report.auc, report.n_bonafide, report.n_morph
    );
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_export_det(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let ckpt = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let out = cfg.require(&cfg.out, "out")?;
    let (params, _, family) = load_checkpoint(ckpt)?;
    let (manifest, data) = model_data(&params, family, manifest_path)?;
    let curve = det_curve(&score_split(&params, &data, cfg.split)?)?;
    prepare_file(out, force)?;
    let mut w = BufWriter::new(File::create(out)?);
    curve.write_csv(&mut w)?;
    w.flush()?;
    let mut prov = provenance(cfg, "export-det");
    let mut inputs = manifest_inputs(manifest_path, &manifest);
    inputs.insert(0, ckpt.to_path_buf());
    prov.hash_inputs(inputs)?;
    prov.write(&sidecar(out, ".provenance.json"))?;
    println!("wrote {} DET points to {}", curve.points.len(), out.display());
    Ok(())
}

pub fn cmd_gradcam(cfg: &RunConfig, force: bool) -> CliResult<()> {
    let ckpt = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let image = cfg.require(&cfg.image, "image")?;
    let out = cfg.require(&cfg.out, "out")?;
    let (params, _, family) = load_checkpoint(ckpt)?;
    let base = load_image(image, params.config.image_size)?;
    let stack = decompose(base.view(), &build_filters(family))?;
    let input: Array3<f64> = match &params.config.selected {
        Some(sel) => stack.select(sel)?.data,
        None => stack.data,
    };
    if input.len_of(Axis(0)) != params.config.in_channels {
        return precondition(format!(
            "checkpoint expects {} channels, image yields {}",
            params.config.in_channels,
            input.len_of(Axis(0))
        ));
    }
    // stacks are stored in f32; round the same way before the f64 pass
    let input = input.mapv(|v| v as f32 as f64);
    let (cam, inter) = grad_cam(&params.cast::<f64>(), input.view(), cfg.target)?;
    prepare_file(out, force)?;
    render_cam(&cam, base.view(), out)?;
    let mut prov = provenance(cfg, "gradcam");
    prov.hash_inputs([ckpt.to_path_buf(), image.to_path_buf()])?;
    prov.write(&sidecar(out, ".provenance.json"))?;
    let peak = cam.values.iter().cloned().fold(0.0, f64::max);
    println!(
        "grad-cam {}x{} (peak {peak:.6}, {} feature maps) written to {}",
        cam.values.nrows(),
        cam.values.ncols(),
        inter.alpha.len(),
        out.display()
    );
    Ok(())
}
