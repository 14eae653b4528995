//! Command-line interface: argument definitions and subcommand execution.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use etscl_core::contrastive::{train_encoder, Encoder, EncoderConfig};
use etscl_core::evidence::fuse_all;
use etscl_core::frangi::{frangi_filter, FrangiParams, Polarity};
use etscl_core::loss::KlTarget;
use etscl_core::nn::{train_classifier, ClassifierConfig, EvidentialHeads};
use etscl_core::pipeline::{evaluate_represented, represent_dataset, Evaluation};
use etscl_core::synth::{generate, split, DatasetSpec};
use etscl_core::Modality;
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{CliError, Result};
use crate::report::{self, FusedJson, MassJson};
use crate::{pnm, CONFIG_FILE};

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "etscl", version, about = "Two-stage contrastive + evidential multi-modal classifier")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Directory receiving outputs and config.json.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic multi-modal dataset and split it into train.jsonl / test.jsonl.
    GenData(GenDataArgs),
    /// Multi-scale vesselness of a PGM/PPM image (green channel for color input).
    Frangi(FrangiArgs),
    /// Train one branch encoder with the supervised contrastive loss.
    TrainEmbed(TrainEmbedArgs),
    /// Train the three evidential heads on frozen encoder representations.
    TrainClassifier(TrainClassifierArgs),
    /// Score encoders + heads on a dataset.
    Evaluate(EvaluateArgs),
    /// Fuse belief masses read from a JSON array.
    Fuse(FuseArgs),
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Feature dimensions for cfp,oct,vessel.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [32, 64, 16])]
    pub dims: Vec<usize>,
    /// Class-mean separation for cfp,oct,vessel.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [2.0, 1.5, 1.0])]
    pub separability: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub conflict: f64,
    /// Class proportions; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityArg {
    Dark,
    Bright,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct FrangiArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0])]
    pub scales: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 15.0 / 255.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = PolarityArg::Dark)]
    pub polarity: PolarityArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityArg {
    Cfp,
    Oct,
    Vessel,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Cfp => Modality::Cfp,
            ModalityArg::Oct => Modality::Oct,
            ModalityArg::Vessel => Modality::Vessel,
        }
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct TrainEmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub modality: ModalityArg,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 14)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Standard deviation of the feature jitter that makes the two views.
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 128])]
    pub encoder_layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [128, 128])]
    pub projection_layers: Vec<usize>,
    /// Use raw projection outputs instead of unit-normalized ones.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KlTargetArg {
    Adjusted,
    Raw,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding encoder_{cfp,oct,vessel}.json.
    #[arg(long)]
    pub embed_ckpt_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub anneal: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Width of an optional hidden ReLU layer in each head.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, value_enum, default_value_t = KlTargetArg::Adjusted)]
    pub kl_target: KlTargetArg,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding encoder_{m}.json and head_{m}.json for every branch.
    #[arg(long)]
    pub ckpt_dir: PathBuf,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct FuseArgs {
    /// JSON array of {"b": [...], "u": x}, fused left to right.
    #[arg(long)]
    pub masses: PathBuf,
}

pub fn encoder_file(m: Modality) -> String {
    format!("encoder_{m}.json")
}

pub fn head_file(m: Modality) -> String {
    format!("head_{m}.json")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn validate(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => {
            if !(0.0..=1.0).contains(&a.conflict) {
                return Err(usage(format!("--conflict {} outside [0, 1]", a.conflict)));
            }
            if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
                return Err(usage(format!("--train-fraction {} outside (0, 1)", a.train_fraction)));
            }
            if a.n == 0 {
                return Err(usage("--n must be positive"));
            }
        }
        Command::Frangi(a) => {
            if a.scales.is_empty() || a.scales.iter().any(|s| !(*s > 0.0)) {
                return Err(usage("--scales must be positive"));
            }
            if !(a.beta > 0.0 && a.c > 0.0) {
                return Err(usage("--beta and --c must be positive"));
            }
        }
        Command::TrainEmbed(a) => {
            if !(a.tau > 0.0) || !(a.lr > 0.0) || a.batch < 2 || !(a.jitter >= 0.0) {
                return Err(usage("--tau and --lr must be positive, --batch at least 2, --jitter non-negative"));
            }
            if a.projection_layers.is_empty() {
                return Err(usage("--projection-layers needs at least one size"));
            }
        }
        Command::TrainClassifier(a) => {
            if !(a.lr > 0.0) || a.anneal == 0 || a.classes < 2 {
                return Err(usage("--lr and --anneal must be positive and --classes at least 2"));
            }
        }
        Command::Evaluate(_) | Command::Fuse(_) => {}
    }
    Ok(())
}

/// Runs one parsed command; human-readable results go to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    validate(cli)?;
    fs::create_dir_all(&cli.out_dir).map_err(|e| CliError::io(&cli.out_dir, e))?;
    let config = serde_json::to_string_pretty(cli).expect("config serializes");
    write_file(&cli.out_dir.join(CONFIG_FILE), config + "\n")?;
    let text = match &cli.command {
        Command::GenData(a) => gen_data(cli, a)?,
        Command::Frangi(a) => frangi(a)?,
        Command::TrainEmbed(a) => train_embed(cli, a)?,
        Command::TrainClassifier(a) => train_heads(cli, a)?,
        Command::Evaluate(a) => evaluate(cli, a)?,
        Command::Fuse(a) => fuse(a)?,
    };
    stdout.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<String> {
    let k = a.classes;
    let spec = DatasetSpec {
        n_samples: a.n,
        n_classes: k,
        dims: [a.dims[0], a.dims[1], a.dims[2]],
        separability: [a.separability[0], a.separability[1], a.separability[2]],
        conflict_rate: a.conflict,
        label_distribution: a.labels.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]),
        seed: cli.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let ds = generate(&spec)?;
    let (train, test) = split(&ds, a.train_fraction, cli.seed)?;
    write_dataset(&cli.out_dir.join("train.jsonl"), &train)?;
    write_dataset(&cli.out_dir.join("test.jsonl"), &test)?;
    Ok(format!("train {} test {}\n", train.len(), test.len()))
}

fn frangi(a: &FrangiArgs) -> Result<String> {
    let params = FrangiParams {
        scales: a.scales.clone(),
        beta: a.beta,
        c: a.c,
        polarity: match a.polarity {
            PolarityArg::Dark => Polarity::DarkOnBright,
            PolarityArg::Bright => Polarity::BrightOnDark,
        },
    };
    let input = pnm::read(&a.input)?.to_gray().map_err(|e| CliError::format(&a.input, 1, e.to_string()))?;
    let v = frangi_filter(&input, &params)?;
    pnm::write_gray(&a.output, &v)?;
    let peak = v.data().iter().copied().fold(0.0, f64::max);
    Ok(format!("{}x{} max {peak}\n", v.width(), v.height()))
}

fn train_embed(cli: &Cli, a: &TrainEmbedArgs) -> Result<String> {
    let m = Modality::from(a.modality);
    let ds = read_dataset(&a.data)?;
    let config = EncoderConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        tau: a.tau,
        jitter_sigma: a.jitter,
        seed: cli.seed,
        encoder_layers: a.encoder_layers.clone(),
        projection_layers: a.projection_layers.clone(),
        normalize: !a.no_normalize,
        stream_tag: m.name().into(),
    };
    let run = train_encoder(&ds.features(m), &ds.labels(), &config)?;
    checkpoint::write(&cli.out_dir.join(encoder_file(m)), &Checkpoint::from_encoder(&run.encoder, cli.seed, a.tau))?;
    write_file(&cli.out_dir.join(format!("embed_loss_{m}.csv")), report::embed_loss_csv(&run.epoch_losses))?;
    Ok(match (run.epoch_losses.first(), run.epoch_losses.last()) {
        (Some(f), Some(l)) => format!("{m}: loss {f} -> {l}\n"),
        _ => format!("{m}: initialized, no epochs run\n"),
    })
}

fn load_encoders(dir: &Path) -> Result<[Encoder; 3]> {
    let load = |m: Modality| checkpoint::read_encoder(&dir.join(encoder_file(m)), &format!("{m} encoder"));
    Ok([load(Modality::Cfp)?, load(Modality::Oct)?, load(Modality::Vessel)?])
}

fn train_heads(cli: &Cli, a: &TrainClassifierArgs) -> Result<String> {
    let ds = read_dataset(&a.data)?;
    let encoders = load_encoders(&a.embed_ckpt_dir)?;
    let reps = represent_dataset(&encoders, &ds)?;
    let config = ClassifierConfig {
        epochs: a.epochs,
        lr: a.lr,
        anneal_epochs: a.anneal,
        seed: cli.seed,
        hidden: a.hidden,
        kl_target: match a.kl_target {
            KlTargetArg::Adjusted => KlTarget::Adjusted,
            KlTargetArg::Raw => KlTarget::Raw,
        },
    };
    let run = train_classifier([&reps[0], &reps[1], &reps[2]], &ds.labels(), a.classes, &config)?;
    for m in Modality::ALL {
        let ck = Checkpoint::from_mlp(run.heads.head(m), cli.seed, None);
        checkpoint::write(&cli.out_dir.join(head_file(m)), &ck)?;
    }
    write_file(&cli.out_dir.join("classifier_loss.csv"), report::loss_report_csv(&run.history))?;
    Ok(match (run.history.first(), run.history.last()) {
        (Some(f), Some(l)) => format!("total loss {} -> {}\n", f.total, l.total),
        _ => "initialized, no epochs run\n".to_string(),
    })
}

#[derive(Debug, Serialize)]
struct SubsetJson {
    branches: Vec<&'static str>,
    accuracy: f64,
    kappa: Option<f64>,
    mean_uncertainty: f64,
}

#[derive(Debug, Serialize)]
struct MetricsJson {
    n: usize,
    accuracy: f64,
    kappa: Option<f64>,
    mean_uncertainty: f64,
    mean_uncertainty_clean: Option<f64>,
    mean_uncertainty_conflict: Option<f64>,
    subsets: Vec<SubsetJson>,
}

/// Branch combinations reported by `evaluate`, fused in the listed order.
pub const SUBSETS: [&[Modality]; 7] = [
    &[Modality::Cfp],
    &[Modality::Oct],
    &[Modality::Vessel],
    &[Modality::Cfp, Modality::Oct],
    &[Modality::Cfp, Modality::Vessel],
    &[Modality::Oct, Modality::Vessel],
    &[Modality::Cfp, Modality::Oct, Modality::Vessel],
];

fn metrics_json(ev: &Evaluation) -> Result<MetricsJson> {
    let all = ev.fused_metrics()?;
    let (clean, conflict) = ev.uncertainty_by_conflict();
    let mut subsets = Vec::with_capacity(SUBSETS.len());
    for s in SUBSETS {
        let m = ev.subset_metrics(s)?;
        subsets.push(SubsetJson {
            branches: s.iter().map(|b| b.name()).collect(),
            accuracy: m.accuracy,
            kappa: m.kappa,
            mean_uncertainty: m.mean_uncertainty,
        });
    }
    Ok(MetricsJson {
        n: ev.samples.len(),
        accuracy: all.accuracy,
        kappa: all.kappa,
        mean_uncertainty: all.mean_uncertainty,
        mean_uncertainty_clean: clean,
        mean_uncertainty_conflict: conflict,
        subsets,
    })
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<String> {
    let ds = read_dataset(&a.data)?;
    if ds.is_empty() {
        return Err(etscl_core::Error::EmptyDataset.into());
    }
    let encoders = load_encoders(&a.ckpt_dir)?;
    let load = |m: Modality| checkpoint::read_head(&a.ckpt_dir.join(head_file(m)), &format!("{m} head"));
    let heads = EvidentialHeads::new([load(Modality::Cfp)?, load(Modality::Oct)?, load(Modality::Vessel)?])?;
    let ev = evaluate_represented(&heads, &represent_dataset(&encoders, &ds)?, &ds)?;
    let metrics = metrics_json(&ev)?;
    write_file(&cli.out_dir.join("confusion.csv"), report::confusion_csv(&ev.fused_metrics()?.confusion))?;
    write_file(&cli.out_dir.join("predictions.jsonl"), report::predictions_jsonl(&ev.samples))?;
    write_file(
        &cli.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n",
    )?;
    let kappa = metrics.kappa.map_or_else(|| "undefined".to_string(), |k| k.to_string());
    Ok(format!("n,accuracy,kappa\n{},{},{kappa}\n", metrics.n, metrics.accuracy))
}

fn fuse(a: &FuseArgs) -> Result<String> {
    let text = fs::read_to_string(&a.masses).map_err(|e| CliError::io(&a.masses, e))?;
    let parsed: Vec<MassJson> =
        serde_json::from_str(&text).map_err(|e| CliError::format(&a.masses, e.line(), e.to_string()))?;
    let masses = parsed
        .iter()
        .enumerate()
        .map(|(i, m)| m.to_mass().map_err(|e| CliError::format(&a.masses, 1, format!("mass {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if masses.is_empty() {
        return Err(CliError::format(&a.masses, 1, "no masses to fuse"));
    }
    let fused = fuse_all(&masses)?;
    let pred = fused.to_opinion()?.predict().class_index;
    let json = MassJson::from(&fused);
    Ok(serde_json::to_string(&FusedJson { b: json.b, u: json.u, pred }).expect("mass serializes") + "\n")
}
