//! The `duncan` command line: simulate, train, correct, evaluate, report.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! for runtime failures (including evaluations with unmatched pairs).

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::correction::{Corrector, compare_volumes};
use crate::data::{
    DatasetManifest, Domain, ManifestEntry, Severity, Split, VolumeFormat, load_volume, volume_stem, write_volume,
};
use crate::error::{Error, Result};
use crate::losses::WeightPreset;
use crate::metrics::{EvalOptions, SegmentationSpec, SetReport, summarize};
use crate::motion::generate_in_silico;
use crate::phantom::{PhantomSpec, generate_phantom};
use crate::report::{render_bar_chart, render_panel, save_png};
use crate::train::{CHECKPOINT_FILE, TrainOutputs, train};
use config::RunConfig;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "duncan", version, about = "Unsupervised MRI motion-artifact correction")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt clean volumes with simulated motion.
    Simulate {
        /// Severity levels to generate; overrides the config.
        #[arg(long)]
        severity: Vec<Severity>,
    },
    /// Train a model on a dataset manifest.
    Train {
        #[arg(long)]
        preset: Option<WeightPreset>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Correct the corrupted test volumes of a manifest.
    Correct {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score test volumes against references, per severity level.
    Evaluate,
    /// Render bar charts and comparison panels.
    Report,
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Parse `args` and run; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

struct Context {
    config: RunConfig,
    seed: u64,
    force: bool,
    out: PathBuf,
}

impl Context {
    /// Refuse to overwrite `path` unless forced; with force, clear it.
    fn claim(&self, path: &Path) -> Result<(), Failure> {
        if !path.exists() {
            return Ok(());
        }
        if !self.force {
            return Err(usage(format!("{} exists, use --force to overwrite", path.display())));
        }
        let removed = if path.is_dir() {
            std::fs::remove_dir_all(path)
        } else {
            std::fs::remove_file(path)
        };
        removed.map_err(|e| Error::io(path, e).into())
    }

    fn dataset_manifest(&self) -> Result<PathBuf, Failure> {
        let ds = self.config.section(&self.config.dataset, "dataset")?;
        Ok(self.config.resolve(&ds.manifest))
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli
        .output_dir
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|p| config.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let ctx = Context {
        config,
        seed,
        force: cli.force,
        out,
    };
    match &cli.command {
        Command::Simulate { severity } => simulate(&ctx, severity),
        Command::Train { preset, steps, resume } => cmd_train(&ctx, *preset, *steps, *resume),
        Command::Correct { checkpoint } => correct(&ctx, checkpoint.as_deref()),
        Command::Evaluate => evaluate(&ctx),
        Command::Report => report(&ctx),
    }
}

fn parse_format(s: &str) -> Result<VolumeFormat> {
    VolumeFormat::from_path(Path::new(&format!("x.{}", s.trim_start_matches('.'))))
}

/// Directory name for one severity, e.g. `IS_T1_MIN`.
pub fn severity_dir(modality: crate::data::Modality, level: Severity) -> String {
    format!("IS_{modality}_{}", level.short_tag())
}

fn simulate(ctx: &Context, cli_levels: &[Severity]) -> Result<(), Failure> {
    let sim = ctx.config.section(&ctx.config.simulate, "simulate")?;
    let levels = if cli_levels.is_empty() { &sim.severities } else { cli_levels };
    if levels.is_empty() || levels.contains(&Severity::None) {
        return Err(usage("simulate needs artifact severities (minor, moderate, heavy)"));
    }
    if !(0.0..1.0).contains(&sim.test_fraction) {
        return Err(usage("test_fraction must lie in [0, 1)"));
    }
    let format = sim.format.as_deref().map(parse_format).transpose()?;
    let (clean, clean_dir, modality) = match (&sim.manifest, &sim.phantoms) {
        (Some(path), None) => {
            let m = DatasetManifest::load(&ctx.config.resolve(path))?;
            let first = m
                .entries
                .first()
                .ok_or_else(|| usage("clean manifest lists no volumes"))?;
            let modality = first.modality.unwrap_or(crate::data::Modality::T1);
            (m, None, modality)
        }
        (None, Some(set)) => {
            let dir = ctx.out.join("clean");
            ctx.claim(&dir)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut m = DatasetManifest::new(".");
            let n_test = (set.count as f64 * sim.test_fraction).ceil() as usize;
            for i in 0..set.count {
                let mut spec = PhantomSpec::new(set.slices, set.rows, set.cols, crate::motion::derive_seed(ctx.seed, "phantom", i));
                spec.modality = set.modality;
                let mut v = generate_phantom(&spec)?;
                v.id = format!("phantom_{i:04}");
                let name = format!("{}.{}", v.id, format.unwrap_or(VolumeFormat::Raw).extension());
                write_volume(&v, &dir.join(&name))?;
                m.entries.push(ManifestEntry {
                    path: name.into(),
                    domain: Domain::Free,
                    severity: Severity::None,
                    split: if i >= set.count - n_test { Split::Test } else { Split::Train },
                    modality: Some(set.modality),
                });
            }
            m.save(&dir.join("manifest.toml"))?;
            m.root = dir.clone();
            (m, Some(dir), set.modality)
        }
        _ => return Err(usage("[simulate] needs exactly one of `manifest` or `phantoms`")),
    };
    for &level in levels {
        let dir = ctx.out.join(severity_dir(modality, level));
        ctx.claim(&dir)?;
        let profile = sim.profile(level)?.with_seed(ctx.seed);
        let mut corrupted = generate_in_silico(&clean, &profile, &dir, format)?;
        corrupted.root = PathBuf::from(".");
        corrupted.save(&dir.join("manifest.toml"))?;
        training_manifest(&clean, clean_dir.as_deref(), &corrupted)?.save(&dir.join("dataset.toml"))?;
        eprintln!("{level}: {} volumes -> {}", corrupted.entries.len(), dir.display());
    }
    Ok(())
}

/// Unpaired training set from paired clean/corrupted lists: in the train
/// split, even-indexed volumes contribute their clean copy and odd-indexed
/// ones their corrupted copy; the test split keeps both copies.
fn training_manifest(clean: &DatasetManifest, clean_dir: Option<&Path>, corrupted: &DatasetManifest) -> Result<DatasetManifest> {
    let mut out = DatasetManifest::new(".");
    let clean_path = |e: &ManifestEntry| -> PathBuf {
        match clean_dir {
            Some(_) => Path::new("..").join("clean").join(&e.path),
            None => std::path::absolute(clean.resolve(&e.path)).unwrap_or_else(|_| clean.resolve(&e.path)),
        }
    };
    for (i, (c, k)) in clean.entries.iter().zip(&corrupted.entries).enumerate() {
        let keep_clean = c.split == Split::Test || i % 2 == 0;
        let keep_corrupted = c.split == Split::Test || i % 2 == 1;
        if keep_clean {
            out.entries.push(ManifestEntry {
                path: clean_path(c),
                ..c.clone()
            });
        }
        if keep_corrupted {
            out.entries.push(k.clone());
        }
    }
    Ok(out)
}

fn cmd_train(ctx: &Context, preset: Option<WeightPreset>, steps: Option<u64>, resume: bool) -> Result<(), Failure> {
    let mut config = ctx.config.train.clone().unwrap_or_default();
    config.seed = ctx.seed;
    if let Some(p) = preset {
        config.weight_preset = p;
        config.weights = None;
    }
    if let Some(s) = steps {
        config.total_steps = s;
    }
    let manifest = DatasetManifest::load(&ctx.dataset_manifest()?)?;
    let outputs = TrainOutputs::in_dir(&ctx.out);
    if !resume {
        ctx.claim(&outputs.checkpoint)?;
        ctx.claim(&outputs.log)?;
    }
    let state = train(&manifest, &config, &ctx.out, resume)?;
    if let Some(last) = state.history.last() {
        eprintln!("step {}: total loss {:.4}", last.step, last.report.total);
    }
    eprintln!("checkpoint -> {}", outputs.checkpoint.display());
    Ok(())
}

fn correct(ctx: &Context, flag: Option<&Path>) -> Result<(), Failure> {
    let section = ctx.config.correct.clone();
    let checkpoint = flag
        .map(Path::to_path_buf)
        .or_else(|| section.as_ref().and_then(|c| c.checkpoint.as_ref()).map(|p| ctx.config.resolve(p)))
        .ok_or_else(|| usage("no checkpoint given (--checkpoint or [correct] checkpoint)"))?;
    if !checkpoint.exists() {
        return Err(Error::io(&checkpoint, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")).into());
    }
    let manifest_path = match section.as_ref().and_then(|c| c.manifest.as_ref()) {
        Some(p) => ctx.config.resolve(p),
        None => ctx.dataset_manifest()?,
    };
    let manifest = DatasetManifest::load(&manifest_path)?;
    let suffix = section.as_ref().map_or_else(|| "_corrected".to_string(), |c| c.suffix.clone());
    let mut corrector = Corrector::from_checkpoint(&checkpoint)?;
    if let Some(c) = &section {
        corrector.reassembly = c.reassembly;
    }
    let mut wanted: Vec<&ManifestEntry> = manifest.entries_for(Split::Test, Domain::Corrupted).collect();
    if wanted.is_empty() {
        wanted = manifest.entries.iter().filter(|e| e.domain == Domain::Corrupted).collect();
    }
    if wanted.is_empty() {
        return Err(usage(format!("{} lists no corrupted volumes", manifest_path.display())));
    }
    let mut listing = DatasetManifest::new(".");
    for entry in wanted {
        let src = manifest.resolve(&entry.path);
        let rel = if entry.path.is_absolute() {
            PathBuf::from(entry.path.file_name().unwrap_or_default())
        } else {
            entry.path.clone()
        };
        let fmt = VolumeFormat::from_path(&src)?;
        let name = format!("{}{suffix}.{}", volume_stem(&src), fmt.extension());
        let rel_out = rel.with_file_name(name);
        let dst = ctx.out.join(&rel_out);
        ctx.claim(&dst)?;
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let corrected = corrector.correct_volume(&load_volume(&src)?)?;
        write_volume(&corrected, &dst)?;
        listing.entries.push(ManifestEntry {
            path: rel_out,
            domain: Domain::Free,
            severity: Severity::None,
            split: entry.split,
            modality: entry.modality,
        });
        eprintln!("{} -> {}", src.display(), dst.display());
    }
    listing.save(&ctx.out.join("corrected_manifest.toml"))?;
    Ok(())
}

/// A pair that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exception {
    pub severity: Severity,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub severity: Severity,
    pub report: Option<SetReport>,
}

/// Everything the evaluate subcommand produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub seed: u64,
    pub groups: Vec<GroupReport>,
    pub exceptions: Vec<Exception>,
}

impl Evaluation {
    /// `severity,metric,mean,sem,n` records, then a `# exceptions` block of
    /// `severity,id,reason` records.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("severity,metric,mean,sem,n\n");
        for g in &self.groups {
            if let Some(r) = &g.report {
                for (metric, a) in &r.summary {
                    out.push_str(&format!("{},{metric},{},{},{}\n", g.severity, a.mean, a.sem, a.n));
                }
            }
        }
        out.push_str("# exceptions\nseverity,id,reason\n");
        for e in &self.exceptions {
            out.push_str(&format!("{},{},{}\n", e.severity, e.id, e.reason.replace(',', ";")));
        }
        out
    }
}

/// Volumes by stem from a directory, or from a manifest file. A manifest
/// given as reference contributes its artifact-free test volumes (all of
/// its artifact-free volumes if it has no test split).
fn volume_files(dir: &Path, reference: bool) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if dir.is_file() {
        let m = DatasetManifest::load(dir)?;
        let mut picked: Vec<&ManifestEntry> = if reference {
            m.entries_for(Split::Test, Domain::Free).collect()
        } else {
            m.entries.iter().collect()
        };
        if picked.is_empty() && reference {
            picked = m.entries.iter().filter(|e| e.domain == Domain::Free).collect();
        }
        for e in picked {
            let path = m.resolve(&e.path);
            out.insert(volume_stem(&path), path);
        }
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if VolumeFormat::from_path(&path).is_ok() {
            out.insert(volume_stem(&path), path);
        }
    }
    Ok(out)
}

pub fn evaluate_groups(config: &config::EvaluateConfig, resolve: impl Fn(&Path) -> PathBuf, seed: u64) -> Result<Evaluation> {
    let opts = EvalOptions {
        data_range: None,
        segmentation: config.segmentation_threshold.map(|threshold| SegmentationSpec { threshold }),
    };
    let mut groups = Vec::new();
    let mut exceptions = Vec::new();
    for g in &config.groups {
        let refs = volume_files(&resolve(&g.reference), true)?;
        let tests = volume_files(&resolve(&g.test), false)?;
        let mut matched = BTreeMap::new();
        for (stem, path) in &tests {
            match stem.strip_suffix(g.test_suffix.as_str()) {
                Some(id) if refs.contains_key(id) => {
                    matched.insert(id.to_string(), path.clone());
                }
                _ => exceptions.push(Exception {
                    severity: g.severity,
                    id: stem.clone(),
                    reason: "no matching reference".into(),
                }),
            }
        }
        let mut pairs = Vec::new();
        for (id, ref_path) in &refs {
            let Some(test_path) = matched.get(id) else {
                exceptions.push(Exception {
                    severity: g.severity,
                    id: id.clone(),
                    reason: "missing test volume".into(),
                });
                continue;
            };
            let scored = load_volume(ref_path)
                .and_then(|r| load_volume(test_path).and_then(|t| compare_volumes(&r, &t, &opts)));
            match scored {
                Ok(report) => pairs.push((id.clone(), report)),
                Err(e) => exceptions.push(Exception {
                    severity: g.severity,
                    id: id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        let report = if pairs.is_empty() { None } else { Some(summarize(pairs)?) };
        groups.push(GroupReport {
            severity: g.severity,
            report,
        });
    }
    Ok(Evaluation {
        seed,
        groups,
        exceptions,
    })
}

fn evaluate(ctx: &Context) -> Result<(), Failure> {
    let cfg = ctx.config.section(&ctx.config.evaluate, "evaluate")?;
    let eval = evaluate_groups(cfg, |p| ctx.config.resolve(p), ctx.seed)?;
    let json_path = ctx.out.join("evaluation.json");
    ctx.claim(&json_path)?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    for g in &eval.groups {
        if let Some(r) = &g.report {
            let path = ctx.out.join(format!("metrics_{}.csv", g.severity));
            crate::io_util::write_atomic(&path, r.to_csv().as_bytes())?;
        }
    }
    crate::io_util::write_atomic(&ctx.out.join("summary.csv"), eval.summary_csv().as_bytes())?;
    crate::io_util::write_atomic(&json_path, serde_json::to_string_pretty(&eval).map_err(Error::from)?.as_bytes())?;
    if eval.exceptions.is_empty() {
        Ok(())
    } else {
        for e in &eval.exceptions {
            eprintln!("exception: {} {}: {}", e.severity, e.id, e.reason);
        }
        Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{} pairs could not be evaluated", eval.exceptions.len()),
        })
    }
}

fn report(ctx: &Context) -> Result<(), Failure> {
    let cfg = ctx.config.section(&ctx.config.report, "report")?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    if let Some(path) = &cfg.evaluation {
        let path = ctx.config.resolve(path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let eval: Evaluation = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut by_metric: BTreeMap<String, Vec<crate::metrics::Aggregate>> = BTreeMap::new();
        for g in &eval.groups {
            if let Some(r) = &g.report {
                for (metric, a) in &r.summary {
                    by_metric.entry(metric.clone()).or_default().push(*a);
                }
            }
        }
        let order: Vec<String> = eval.groups.iter().map(|g| g.severity.to_string()).collect();
        for (metric, bars) in by_metric {
            let dst = ctx.out.join(format!("bars_{metric}.png"));
            ctx.claim(&dst)?;
            save_png(&render_bar_chart(&bars)?, &dst)?;
            eprintln!("{metric} ({}) -> {}", order.join(", "), dst.display());
        }
    }
    for (i, p) in cfg.panels.iter().enumerate() {
        let load = |q: &Path| load_volume(&ctx.config.resolve(q));
        let (a, b, c) = (load(&p.corrupted)?, load(&p.corrected)?, load(&p.reference)?);
        let slice = p.slice.unwrap_or(c.dims().0 / 2);
        if slice >= c.dims().0 {
            return Err(usage(format!("panel {i}: slice {slice} is out of range")));
        }
        let view = |v: &crate::data::Volume| v.slice(slice).mapv(f64::from);
        let img = render_panel(view(&a).view(), view(&b).view(), view(&c).view())?;
        let dst = ctx.out.join(format!("panel_{i}.png"));
        ctx.claim(&dst)?;
        save_png(&img, &dst)?;
    }
    Ok(())
}

/// Default checkpoint location inside a training output directory.
pub fn checkpoint_in(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}
