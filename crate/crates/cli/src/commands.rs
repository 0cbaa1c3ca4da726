use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sketch_diffusion::denoiser::train::{scaled_threshold, train_with_callback, Optimizer};
use sketch_diffusion::denoiser::{load_checkpoint, save_checkpoint, Denoiser, OracleDenoiser, TrainConfig};
use sketch_diffusion::joint::{DiffusionConfig, JointProcess};
use sketch_diffusion::schedule::{curves_to_csv, schedule_curves};
use sketch_diffusion::sketch::{
    dedup, duplicate_fixture, encode_sketch, gen_synthetic, load_jsonl, normalize_sketch, render_svg, save_jsonl,
    SketchRecord, SvgOptions,
};
use sketch_diffusion::verify::{run_check, suite_checks, Suite};

use crate::manifest::{manifest_path, write_manifest, ManifestBuilder};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable inputs, failed runs. Exit code 1.
    Validation(String),
    /// At least one verification check failed. Exit code 2.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Verification(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Verification(m) => f.write_str(m),
        }
    }
}

impl From<sketch_diffusion::Error> for CliError {
    fn from(e: sketch_diffusion::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn with_path<T, E: std::fmt::Display>(r: Result<T, E>, path: &Path) -> CliResult<T> {
    r.map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        with_path(fs::create_dir_all(dir), dir)?;
    }
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// File name for a record id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn svg_file_name(id: &str) -> String {
    let stem: String =
        id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    format!("{}.svg", if stem.is_empty() { "sketch".into() } else { stem })
}

/// Render every record into `dir`; returns the written paths and warnings.
fn render_all(records: &[SketchRecord], dir: &Path, opts: &SvgOptions) -> CliResult<(Vec<PathBuf>, Vec<String>)> {
    with_path(fs::create_dir_all(dir), dir)?;
    let mut paths = Vec::new();
    let mut warnings = Vec::new();
    for rec in records {
        let out = render_svg(rec, opts);
        for w in out.warnings {
            eprintln!("warning: {}: {w}", rec.id);
            warnings.push(format!("{}: {w}", rec.id));
        }
        let path = dir.join(svg_file_name(&rec.id));
        with_path(fs::write(&path, out.svg), &path)?;
        paths.push(path);
    }
    Ok((paths, warnings))
}

pub fn gen_data(count: usize, seed: u64, duplicates: usize, out: &Path) -> CliResult {
    if count == 0 {
        return Err(invalid("--count must be positive"));
    }
    let m = ManifestBuilder::start("gen-data");
    let records = if duplicates > 0 { duplicate_fixture(count, duplicates, seed) } else { gen_synthetic(count, seed) };
    ensure_parent(out)?;
    with_path(save_jsonl(out, &records), out)?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    let manifest = m.finish(
        json!({ "count": count, "duplicates": duplicates }),
        Some(seed),
        vec![],
        vec![out.to_path_buf()],
        json!({ "records": records.len() }),
    );
    write_manifest(&manifest_path(out, false), &manifest)?;
    Ok(())
}

pub fn preprocess(input: &Path, out: &Path) -> CliResult {
    let m = ManifestBuilder::start("preprocess");
    let records = with_path(load_jsonl(input), input)?;
    let read = records.len();
    let mut normalized = Vec::with_capacity(read);
    let mut skipped = Vec::new();
    for rec in &records {
        match normalize_sketch(rec) {
            Ok(n) => normalized.push(n),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", rec.id);
                skipped.push(rec.id.clone());
            }
        }
    }
    let (kept, dropped) = dedup(normalized);
    ensure_parent(out)?;
    with_path(save_jsonl(out, &kept), out)?;
    println!("{read} records read, {} skipped, {dropped} duplicates removed, {} unique", skipped.len(), kept.len());
    let manifest = m.finish(
        json!({}),
        None,
        vec![input.to_path_buf()],
        vec![out.to_path_buf()],
        json!({ "read": read, "skipped": skipped, "duplicates": dropped, "unique": kept.len() }),
    );
    write_manifest(&manifest_path(out, false), &manifest)?;
    Ok(())
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
    pub optimizer: Option<String>,
}

/// Defaults, then the TOML file, then flags. The squared-error boost
/// threshold follows the step count unless the file sets it explicitly.
pub fn build_train_config(config: Option<&Path>, o: &TrainOverrides) -> CliResult<TrainConfig> {
    let (mut cfg, threshold_given) = match config {
        Some(path) => {
            let text = with_path(fs::read_to_string(path), path)?;
            let table: toml::Table = with_path(toml::from_str(&text), path)?;
            let given = table.contains_key("mse_boost_threshold");
            (with_path(toml::from_str::<TrainConfig>(&text), path)?, given)
        }
        None => (TrainConfig::default(), false),
    };
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.steps {
        cfg.diffusion.steps = v;
    }
    if let Some(name) = &o.optimizer {
        cfg.optimizer = match name.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            other => return Err(invalid(format!("unknown optimizer {other:?}, expected sgd or adam"))),
        };
    }
    if !threshold_given {
        cfg.mse_boost_threshold = scaled_threshold(cfg.diffusion.steps);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(data: &Path, config: Option<&Path>, overrides: &TrainOverrides, out: &Path) -> CliResult {
    let m = ManifestBuilder::start("train");
    let cfg = build_train_config(config, overrides)?;
    let records = with_path(load_jsonl(data), data)?;
    let k = cfg.diffusion.smoothing_k;
    let corpus = records
        .iter()
        .map(|r| encode_sketch(r, k).map(|s| s.into_array()).map_err(|e| invalid(format!("{}: {e}", r.id))))
        .collect::<CliResult<Vec<_>>>()?;
    let every = (cfg.epochs / 20).max(1);
    let outcome = train_with_callback(&corpus, &cfg, |epoch, _, loss| {
        if epoch == 1 || epoch % every == 0 || epoch == cfg.epochs {
            eprintln!("epoch {epoch:>5}  loss {loss:.5}");
        }
    })?;
    ensure_parent(out)?;
    with_path(save_checkpoint(out, &outcome.params, &cfg, outcome.history.len(), outcome.diverged.clone()), out)?;
    let manifest = m.finish(
        to_value(&cfg),
        Some(cfg.seed),
        vec![data.to_path_buf()],
        vec![out.to_path_buf()],
        json!({ "loss_history": outcome.history, "diverged": outcome.diverged }),
    );
    write_manifest(&manifest_path(out, false), &manifest)?;
    match outcome.diverged {
        Some(msg) => Err(invalid(format!("training diverged ({msg}); last finite parameters saved to {}", out.display()))),
        None => Ok(()),
    }
}

pub enum SampleSource<'a> {
    Checkpoint(&'a Path),
    Oracle { id: &'a str, data: &'a Path, steps: usize },
}

pub fn sample(
    source: SampleSource<'_>,
    count: usize,
    seed: u64,
    out: Option<&Path>,
    svg_dir: Option<&Path>,
) -> CliResult {
    if out.is_none() && svg_dir.is_none() {
        return Err(invalid("nothing to write: pass --out and/or --svg-dir"));
    }
    let m = ManifestBuilder::start("sample");
    let (den, diffusion, inputs, source_cfg): (Box<dyn Denoiser>, DiffusionConfig, Vec<PathBuf>, Value) = match source {
        SampleSource::Checkpoint(path) => {
            let (header, params) = with_path(load_checkpoint(path), path)?;
            let d = header.config.diffusion.clone();
            (Box::new(params), d, vec![path.to_path_buf()], json!({ "checkpoint": path, "train": header.config }))
        }
        SampleSource::Oracle { id, data, steps } => {
            let records = with_path(load_jsonl(data), data)?;
            let rec = records
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| invalid(format!("no sketch with id {id:?} in {}", data.display())))?;
            let d = DiffusionConfig::with_steps(steps);
            let x0 = encode_sketch(rec, d.smoothing_k)?.into_array();
            (Box::new(OracleDenoiser::new(x0.view())), d, vec![data.to_path_buf()], json!({ "oracle": id }))
        }
    };
    let proc = JointProcess::new(diffusion.clone())?;
    let samples = (0..count as u64).map(|i| proc.sample_sketch(den.as_ref(), seed + i)).collect::<Result<Vec<_>, _>>()?;

    let mut outputs = Vec::new();
    if let Some(path) = out {
        ensure_parent(path)?;
        with_path(save_jsonl(path, &samples), path)?;
        outputs.push(path.to_path_buf());
    }
    let mut warnings = Vec::new();
    if let Some(dir) = svg_dir {
        let (paths, w) = render_all(&samples, dir, &SvgOptions::default())?;
        outputs.extend(paths);
        warnings = w;
    }
    eprintln!("drew {} samples", samples.len());
    let manifest = m.finish(
        json!({ "source": source_cfg, "diffusion": diffusion, "count": count }),
        Some(seed),
        inputs,
        outputs,
        json!({ "primitives": samples.iter().map(|s| s.primitives.len()).collect::<Vec<_>>(), "warnings": warnings }),
    );
    let mpath = match out {
        Some(path) => manifest_path(path, false),
        None => manifest_path(svg_dir.expect("checked above"), true),
    };
    write_manifest(&mpath, &manifest)?;
    Ok(())
}

pub fn render(input: &Path, out: &Path, palette_seed: u64) -> CliResult {
    let m = ManifestBuilder::start("render");
    let records = with_path(load_jsonl(input), input)?;
    let opts = SvgOptions { palette_seed, ..SvgOptions::default() };
    let (paths, warnings) = render_all(&records, out, &opts)?;
    eprintln!("rendered {} sketches into {}", paths.len(), out.display());
    let manifest =
        m.finish(json!({ "palette_seed": palette_seed }), None, vec![input.to_path_buf()], paths, json!({ "warnings": warnings }));
    write_manifest(&manifest_path(out, true), &manifest)?;
    Ok(())
}

pub fn curves(steps: usize, classes: usize, k: f64, trials: usize, seed: u64, out: &Path) -> CliResult {
    let m = ManifestBuilder::start("curves");
    let rows = schedule_curves(steps, classes, k, trials, seed)?;
    ensure_parent(out)?;
    with_path(fs::write(out, curves_to_csv(&rows)), out)?;
    let gap = |f: fn(&sketch_diffusion::schedule::CurveRow) -> f64| {
        rows.iter().map(|r| (f(r) - r.target).abs()).fold(0.0, f64::max)
    };
    let (raw_gap, aug_gap) = (gap(|r| r.retention_raw), gap(|r| r.retention_augmented));
    eprintln!("max |retention - target|: raw {raw_gap:.4}, augmented {aug_gap:.4}");
    let manifest = m.finish(
        json!({ "T": steps, "D": classes, "k": k, "trials": trials }),
        Some(seed),
        vec![],
        vec![out.to_path_buf()],
        json!({ "raw_max_gap": raw_gap, "augmented_max_gap": aug_gap }),
    );
    write_manifest(&manifest_path(out, false), &manifest)?;
    Ok(())
}

pub fn verify(suite: Suite, checks: &[u8]) -> CliResult {
    let ids = if checks.is_empty() { suite_checks(suite) } else { checks.to_vec() };
    let mut failed = Vec::new();
    for id in ids {
        let o = run_check(id)?;
        println!("{}", o.line());
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failed checks: {failed:?}")))
    }
}
