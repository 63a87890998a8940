use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mphil::encoder::{GraphInput, Preset};
use mphil::eval::evaluate;
use mphil::graphdata::{generate, Dataset, DatasetSpec, FeatureMode, Shift};
use mphil::trainer::{load_checkpoint, save_checkpoint, train, EpochRecord, TrainConfig, Variant};
use mphil::{Error, Result};

#[derive(Parser)]
#[command(name = "mphil", version, about = "Prototype-based graph classification under distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motif dataset as train/val/test JSONL files.
    Generate(GenerateArgs),
    /// Train a model; writes checkpoint.json and metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and print the report as JSON.
    Eval(EvalArgs),
    /// For each prototype, the samples of a split most similar to it (CSV).
    Prototypes(PrototypeArgs),
    /// Write the embedding of every graph in a split as CSV.
    ExportEmbeddings(ExportArgs),
    /// Train and test several variants on one dataset.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    SpmotifBinary,
    SpmotifTernary,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    Basis,
    Size,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Constant,
    Degree,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Synthetic,
    Molecular,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum VariantArg {
    Full,
    NoIpm,
    NoPs,
    NoProjector,
    SingleProto,
    NoUpdate,
    NoPrune,
    Erm,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoIpm => Variant::NoIpm,
            VariantArg::NoPs => Variant::NoPs,
            VariantArg::NoProjector => Variant::NoProjector,
            VariantArg::SingleProto => Variant::SingleProto,
            VariantArg::NoUpdate => Variant::NoUpdate,
            VariantArg::NoPrune => Variant::NoPrune,
            VariantArg::Erm => Variant::Erm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Probability that a training graph carries its class's base.
    #[arg(long)]
    bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "basis")]
    shift: ShiftArg,
    #[arg(long, value_enum, default_value = "constant")]
    features: FeatureArg,
    #[arg(long = "train", default_value_t = 2000)]
    train_count: usize,
    #[arg(long = "val", default_value_t = 500)]
    val_count: usize,
    #[arg(long = "test", default_value_t = 500)]
    test_count: usize,
}

#[derive(Args)]
struct Hyper {
    /// Prototypes per class.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// EMA rate for prototype updates.
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    /// Temperature.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Assignment weights kept per sample.
    #[arg(long, default_value_t = 2)]
    prune_n: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "synthetic")]
    preset: PresetArg,
}

impl Hyper {
    fn config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            k: self.k,
            beta: self.beta,
            alpha: self.alpha,
            tau: self.tau,
            prune_n: self.prune_n,
            seed: self.seed,
            preset: match self.preset {
                PresetArg::Synthetic => Preset::Synthetic,
                PresetArg::Molecular => Preset::Molecular,
            },
            variant,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Seed for pair subsampling in the separability statistics.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrototypeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Samples listed per prototype.
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
    /// Variants to run (comma separated); all of them by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    variant: Vec<VariantArg>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn metrics_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_metric\n");
    for r in log {
        writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_metric).unwrap();
    }
    s
}

fn run_generate(a: &GenerateArgs) -> Result<()> {
    let mut spec = match a.task {
        Task::SpmotifBinary => DatasetSpec::spmotif_binary(a.bias, a.seed),
        Task::SpmotifTernary => DatasetSpec::spmotif_ternary(a.bias, a.seed),
    };
    spec.shift = match a.shift {
        ShiftArg::Basis => Shift::Basis,
        ShiftArg::Size => Shift::Size,
    };
    spec.features = match a.features {
        FeatureArg::Constant => FeatureMode::Constant,
        FeatureArg::Degree => FeatureMode::DegreeOneHot,
        FeatureArg::Random => FeatureMode::Random,
    };
    spec.train_count = a.train_count;
    spec.val_count = a.val_count;
    spec.test_count = a.test_count;
    generate(&spec)?.save_dir(&a.out)
}

fn train_into(data: &Dataset, config: &TrainConfig, out: &Path) -> Result<mphil::trainer::TrainOutcome> {
    let outcome = train(config, data, &mut ())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_checkpoint(&out.join("checkpoint.json"), &outcome.best)?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&outcome.log))?;
    Ok(outcome)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let data = Dataset::load_dir(&a.data)?;
    let outcome = train_into(&data, &a.hyper.config(a.variant.into()), &a.out)?;
    eprintln!(
        "best epoch {} written to {}",
        outcome.best.epoch,
        a.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn load_split(data: &Path, split: SplitArg) -> Result<Vec<mphil::graphdata::Graph>> {
    mphil::graphdata::load_jsonl(&data.join(format!("{}.jsonl", split.name())))
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let graphs = load_split(&a.data, a.split)?;
    let report = evaluate(&ckpt, &graphs, a.split.name(), a.seed)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))? + "\n";
    if let Some(p) = &a.out {
        write_file(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn run_prototypes(a: &PrototypeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let bank = ckpt
        .model
        .bank
        .as_ref()
        .ok_or_else(|| Error::Invalid("this checkpoint has no prototypes".into()))?;
    let graphs = load_split(&a.data, a.split)?;
    let inputs: Vec<GraphInput> = graphs.iter().map(GraphInput::from).collect();
    let emb = ckpt.model.embeddings(&inputs)?;
    let table = bank.nearest_samples(&emb, a.top)?;
    let mut s = String::from("class,prototype,rank,sample,label,similarity\n");
    for (c, per_k) in table.iter().enumerate() {
        for (k, ids) in per_k.iter().enumerate() {
            let mu = bank.prototype(c, k);
            for (rank, &i) in ids.iter().enumerate() {
                let sim: f64 = emb.row(i).iter().zip(mu).map(|(a, b)| a * b).sum();
                writeln!(s, "{c},{k},{rank},{i},{},{sim}", graphs[i].label).unwrap();
            }
        }
    }
    emit(a.out.as_deref(), &s)
}

fn run_export(a: &ExportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let graphs = load_split(&a.data, a.split)?;
    let inputs: Vec<GraphInput> = graphs.iter().map(GraphInput::from).collect();
    let emb = ckpt.model.embeddings(&inputs)?;
    let mut s = String::from("index,label");
    for j in 0..emb.cols() {
        write!(s, ",z{j}").unwrap();
    }
    s.push('\n');
    for (i, g) in graphs.iter().enumerate() {
        write!(s, "{i},{}", g.label).unwrap();
        for v in emb.row(i) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    emit(a.out.as_deref(), &s)
}

fn run_ablate(a: &AblateArgs) -> Result<()> {
    let data = Dataset::load_dir(&a.data)?;
    let variants: Vec<Variant> = if a.variant.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variant.iter().map(|v| (*v).into()).collect()
    };
    let mut summary = String::from("variant,best_epoch,val_metric,test_accuracy,intra_class_W1,inter_class_W1\n");
    for v in variants {
        let dir = a.out.join(v.name());
        let outcome = train_into(&data, &a.hyper.config(v), &dir)?;
        let report = evaluate(&outcome.best, &data.test, "test", a.hyper.seed)?;
        let val = outcome.log[outcome.best.epoch - 1].val_metric;
        writeln!(
            summary,
            "{v},{},{val},{},{},{}",
            outcome.best.epoch, report.accuracy, report.intra_class_w1, report.inter_class_w1
        )
        .unwrap();
        eprintln!("{v}: test accuracy {:.4}", report.accuracy);
    }
    write_file(&a.out.join("ablation.csv"), &summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Prototypes(a) => run_prototypes(a),
        Command::ExportEmbeddings(a) => run_export(a),
        Command::Ablate(a) => run_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
