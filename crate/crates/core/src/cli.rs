//! The `vclab` command line.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for numerical
//! failures (a non-finite loss, or a theory tolerance breach).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use vclab_autodiff::Real;

use crate::checkpoint::Checkpoint;
use crate::config::{Formulation, Precision, Preset, TrainConfig};
use crate::error::{Result, VclabError};
use crate::eval::{dtw_mcd, modulation_spectrum, summarize, write_mcd_csv, write_spectrum_csv, write_summary_csv, McdRow};
use crate::features::{load_corpus, read_vcf1, save_corpus, synth_toy_corpus, write_vcf1, DomainCorpus, ToyOptions};
use crate::theory::{verify_theory, TheoryOptions};
use crate::trainer::Trainer;
use crate::util::{read_file, write_atomic};

pub const PRECISION_ENV: &str = "VCLAB_PRECISION";

#[derive(Debug, Parser)]
#[command(name = "vclab", version, about = "Adversarial multi-domain feature conversion lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a Gaussian-domain toy corpus.
    SynthData(SynthArgs),
    /// Train one formulation on a corpus.
    Train(TrainArgs),
    /// Convert one feature file to a target domain.
    Convert(ConvertArgs),
    /// DTW-aligned MCD and modulation spectra of converted utterances.
    Evaluate(EvaluateArgs),
    /// Check the optimal-classifier and equilibrium claims on tabular games.
    VerifyTheory(TheoryArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub domains: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub utts: usize,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame noise std.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Magnitude of the domain means.
    #[arg(long)]
    pub mean_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub formulation: Option<Formulation>,
    /// JSON object overriding configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub corpus: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    pub preset: Preset,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source domain of a CycleGAN pair (name or 1-based index).
    #[arg(long)]
    pub source: Option<String>,
    /// Target domain of a CycleGAN pair (name or 1-based index).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Repeat the run recorded in a run manifest.
    #[arg(long, conflicts_with_all = ["formulation", "config", "iters", "seed", "source", "target", "run_id"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Domain name or 1-based index.
    #[arg(long)]
    pub target_domain: String,
    /// Inferred from the feature statistics when omitted.
    #[arg(long)]
    pub source_domain: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// CSV with columns source_domain, target_domain, utterance_id, converted,
    /// reference; paths are relative to the CSV.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// 1-based coefficients whose modulation spectra are written.
    #[arg(long, value_delimiter = ',')]
    pub modspec: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub frame_shift_ms: f64,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 3)]
    pub domains: usize,
    #[arg(long, default_value_t = 8)]
    pub support: usize,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub step_size: f64,
    #[arg(long, default_value_t = 1000)]
    pub perturbations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to repeat a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&read_file(path)?)
            .map_err(|e| VclabError::Format { what: "run manifest", detail: e.to_string() })
    }
}

/// Output layout of a training run.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}

pub fn losses_path(out: &Path) -> PathBuf {
    out.join("losses.csv")
}

pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("final.vcck")
}

pub fn step_checkpoint_path(out: &Path, step: usize) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:08}.vcck"))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::SynthData(a) => synth_data(&a).map(|_| 0),
        Command::Train(a) => train(&a).map(|_| 0),
        Command::Convert(a) => convert(&a).map(|_| 0),
        Command::Evaluate(a) => evaluate(&a).map(|_| 0),
        Command::VerifyTheory(a) => theory(&a),
    }
}

fn env_precision() -> Result<Option<Precision>> {
    match std::env::var(PRECISION_ENV) {
        Ok(s) => s.parse().map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(VclabError::Config(format!("{PRECISION_ENV}: {e}"))),
    }
}

/// Resolves a domain given by name or 1-based index to a 0-based index.
pub fn resolve_domain(names: &[String], s: &str) -> Result<usize> {
    if let Some(k) = names.iter().position(|n| n == s) {
        return Ok(k);
    }
    match s.parse::<usize>() {
        Ok(k) if (1..=names.len()).contains(&k) => Ok(k - 1),
        Ok(k) => Err(VclabError::DomainOutOfRange { index: k, count: names.len() }),
        Err(_) => Err(VclabError::Invalid(format!("unknown domain `{s}`"))),
    }
}

pub fn synth_data(a: &SynthArgs) -> Result<PathBuf> {
    let mut opts = ToyOptions::default();
    if let Some(n) = a.noise {
        opts.noise = n;
    }
    if let Some(m) = a.mean_scale {
        opts.mean_scale = m;
    }
    let toy = synth_toy_corpus(a.domains, a.dim, a.utts, a.frames, a.seed, opts)?;
    let path = save_corpus(&toy.corpus, &a.out)?;
    println!("wrote {} utterances to {}", a.domains * a.utts, path.display());
    Ok(path)
}

fn build_manifest(a: &TrainArgs, corpus: &DomainCorpus) -> Result<RunManifest> {
    let formulation = a.formulation.ok_or_else(|| VclabError::Invalid("--formulation is required".into()))?;
    let mut config = match &a.config {
        Some(p) => {
            let json = String::from_utf8(read_file(p)?)
                .map_err(|e| VclabError::Format { what: "config file", detail: e.to_string() })?;
            TrainConfig::from_json(formulation, a.preset, &json)?
        }
        None => TrainConfig::defaults(formulation, a.preset),
    };
    if let Some(i) = a.iters {
        config.iterations = i;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(p) = env_precision()? {
        config.precision = p;
    }
    match (&a.source, &a.target) {
        (Some(s), Some(t)) => {
            config.domain_pair = Some((resolve_domain(&corpus.names, s)?, resolve_domain(&corpus.names, t)?));
        }
        (None, None) => {}
        _ => return Err(VclabError::Invalid("--source and --target go together".into())),
    }
    if config.formulation == Formulation::CycleGan && config.domain_pair.is_none() {
        return Err(VclabError::Invalid("cyclegan needs a --source/--target domain pair".into()));
    }
    config.validate()?;
    let run_id = a.run_id.clone().unwrap_or_else(|| format!("{}-seed{}", config.formulation.name(), config.seed));
    Ok(RunManifest {
        run_id,
        seed: config.seed,
        config,
        corpus: a.corpus.clone().unwrap_or_default(),
        out_dir: a.out.clone().unwrap_or_default(),
    })
}

pub fn train(a: &TrainArgs) -> Result<RunManifest> {
    let manifest = match &a.manifest {
        Some(p) => {
            let mut m = RunManifest::load(p)?;
            if let Some(c) = &a.corpus {
                m.corpus = c.clone();
            }
            if let Some(o) = &a.out {
                m.out_dir = o.clone();
            }
            m
        }
        None => {
            let path = a.corpus.as_ref().ok_or_else(|| VclabError::Invalid("--corpus is required".into()))?;
            build_manifest(a, &load_corpus(path)?)?
        }
    };
    let corpus = load_corpus(&manifest.corpus)?;
    write_atomic(&manifest_path(&manifest.out_dir), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    match manifest.config.precision {
        Precision::F32 => train_with::<f32>(&manifest, &corpus, a.resume.as_deref())?,
        Precision::F64 => train_with::<f64>(&manifest, &corpus, a.resume.as_deref())?,
    }
    Ok(manifest)
}

fn train_with<T: Real>(m: &RunManifest, corpus: &DomainCorpus, resume: Option<&Path>) -> Result<()> {
    let mut trainer = match resume {
        Some(p) => {
            let mut t = Checkpoint::load(p)?.resume::<T>(corpus)?;
            t.config.iterations = m.config.iterations;
            t
        }
        None => Trainer::<T>::new(m.config.clone(), corpus)?,
    };
    let out = m.out_dir.clone();
    trainer.run(|t| Checkpoint::capture(t).save(&step_checkpoint_path(&out, t.step)))?;
    Checkpoint::capture(&trainer).save(&final_checkpoint_path(&out))?;
    trainer.history.write_csv(&losses_path(&out))?;
    println!("{}: {} steps, outputs in {}", m.run_id, trainer.step, out.display());
    Ok(())
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let precision = env_precision()?.unwrap_or(ck.header.config.precision);
    let names = &ck.header.info.domain_names;
    let target = resolve_domain(names, &a.target_domain)?;
    let source = a.source_domain.as_deref().map(|s| resolve_domain(names, s)).transpose()?;
    let x = read_vcf1(&a.input, ck.header.info.frame_shift_ms)?;
    let conv = match precision {
        Precision::F32 => ck.model::<f32>()?.convert(&x, source, target)?,
        Precision::F64 => ck.model::<f64>()?.convert(&x, source, target)?,
    };
    write_vcf1(&a.out, &conv.sequence)?;
    println!("{} -> {}: {} frames to {}", names[conv.source], names[target], conv.sequence.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PairRow {
    source_domain: String,
    target_domain: String,
    utterance_id: String,
    converted: PathBuf,
    reference: PathBuf,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Vec<McdRow>> {
    let base = a.pairs.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let bytes = read_file(&a.pairs)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    let mut converted = Vec::new();
    let mut reference = Vec::new();
    for rec in reader.deserialize() {
        let p: PairRow = rec?;
        let c = read_vcf1(&base.join(&p.converted), a.frame_shift_ms)?;
        let r = read_vcf1(&base.join(&p.reference), a.frame_shift_ms)?;
        let d = dtw_mcd(&c, &r)?;
        rows.push(McdRow { source: p.source_domain, target: p.target_domain, utterance: p.utterance_id, mcd_db: d.mean_db });
        converted.push(c);
        reference.push(r);
    }
    if rows.is_empty() {
        return Err(VclabError::Invalid(format!("{} lists no pairs", a.pairs.display())));
    }
    write_mcd_csv(&a.out.join("mcd.csv"), &rows)?;
    let summary = summarize(&rows);
    write_summary_csv(&a.out.join("summary.csv"), &summary)?;
    for &q in &a.modspec {
        if q == 0 {
            return Err(VclabError::Invalid("--modspec coefficients are 1-based".into()));
        }
        write_spectrum_csv(&a.out.join(format!("modspec_q{q}_converted.csv")), &modulation_spectrum(&converted, q - 1)?)?;
        write_spectrum_csv(&a.out.join(format!("modspec_q{q}_reference.csv")), &modulation_spectrum(&reference, q - 1)?)?;
    }
    println!("source\ttarget\tmcd_db");
    for s in &summary {
        println!("{}\t{}\t{:.3} ± {:.3}", s.source, s.target, s.mean_mcd_db, s.ci95_db);
    }
    Ok(rows)
}

pub fn theory(a: &TheoryArgs) -> Result<i32> {
    let opts = TheoryOptions {
        domains: a.domains,
        support: a.support,
        seeds: (0..a.seeds).collect(),
        steps: a.steps,
        step_size: a.step_size,
        perturbations: a.perturbations,
        ..TheoryOptions::default()
    };
    let report = verify_theory(&opts)?;
    let mut summary = Vec::new();
    report.write_summary(&mut summary).map_err(|e| VclabError::io("summary", e))?;
    print!("{}", String::from_utf8_lossy(&summary));
    if let Some(out) = &a.out {
        write_atomic(&out.join("summary.tsv"), &summary)?;
        if let Some(first) = &report.first {
            first.write_csv(&out.join("trajectory.csv"))?;
        }
    }
    Ok(if report.passed() { 0 } else { 2 })
}
