use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use fairinfl::config::{Generator, OneOrMany, RunConfig};
use fairinfl::data::{balance_resample, generate_synthetic, generate_tabular, load_csv, split, Dataset};
use fairinfl::influence::{aggregated_fairness_score, verify_first_order, LossAggregation};
use fairinfl::pipeline::{accuracy, fairness_violation, run_sweep, Pretrain};
use fairinfl::training::train;
use fairinfl::{Error, ModelSnapshot, Result, SurrogateSpec};

#[derive(Parser)]
#[command(name = "fairinfl", version, about = "Fairness influence scores, data pruning and retraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic (or loaded and balanced) dataset as CSV.
    Synth(Flags),
    /// Train a model and write its snapshot and per-epoch log.
    Train(Flags),
    /// Write the aggregated influence score of every training example.
    Score(Flags),
    /// Correlate predicted and actual counterfactual output changes.
    Verify(Flags),
    /// Run the prune-and-retrain sweep.
    Sweep(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Verify(_) => "verify",
            Command::Sweep(_) => "sweep",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Synth(f) | Command::Train(f) | Command::Score(f) | Command::Verify(f) | Command::Sweep(f) => f,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Gaussian,
    Tabular,
}

#[derive(Clone, Copy, ValueEnum)]
enum PretrainArg {
    Regularized,
    Erm,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossAggregationArg {
    Aggregated,
    SelfInfluence,
}

#[derive(Args, Default)]
struct Flags {
    /// TOML file whose keys mirror these flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (`feature_0..,label,group`). Without it a synthetic set is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fairness surrogate: dp, tpr, fpr, eo, cov or mine.
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size, 0 for full batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden width, 0 for an affine model.
    #[arg(long)]
    hidden: Option<usize>,
    /// One or more seeds. Single-run commands use the first.
    #[arg(long, num_args = 1..)]
    seed: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Comma-separated subset of random, by_fairness, by_accuracy.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Map {0,1} labels in the input CSV to {-1,+1}.
    #[arg(long)]
    coerce_labels: bool,
    /// Reverse the score ordering of the scored prune strategies.
    #[arg(long)]
    order_flip: bool,
    /// Resample every (group, label) cell to the largest cell size.
    #[arg(long)]
    balance: bool,
    #[arg(long)]
    generator: Option<GeneratorArg>,
    #[arg(long)]
    n_per_cell: Option<usize>,
    /// Feature count of the tabular generator.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Step size of the counterfactual update (defaults to --lr).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    loss_aggregation: Option<LossAggregationArg>,
    #[arg(long)]
    pretrain: Option<PretrainArg>,
    /// Snapshot JSON written by `train`; otherwise a model is trained first.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Number of (train, test) pairs for `verify`.
    #[arg(long)]
    pairs: Option<usize>,
    /// Minimum correlation for `verify` to succeed.
    #[arg(long)]
    threshold: Option<f64>,
}

fn resolve_config(flags: &Flags) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &flags.$field {
                c.$field = v.clone();
            }
        )*};
    }
    set!(surrogate, lambda, lr, epochs, batch, hidden, fractions, strategies, out, n_per_cell, dim, train_fraction, pairs, threshold);
    if flags.data.is_some() {
        c.data = flags.data.clone();
    }
    if flags.snapshot.is_some() {
        c.snapshot = flags.snapshot.clone();
    }
    if flags.eta.is_some() {
        c.eta = flags.eta;
    }
    if let Some(seeds) = &flags.seed {
        c.seed = if seeds.len() == 1 {
            OneOrMany::One(seeds[0])
        } else {
            OneOrMany::Many(seeds.clone())
        };
    }
    if let Some(g) = flags.generator {
        c.generator = match g {
            GeneratorArg::Gaussian => Generator::Gaussian,
            GeneratorArg::Tabular => Generator::Tabular,
        };
    }
    if let Some(p) = flags.pretrain {
        c.pretrain = match p {
            PretrainArg::Regularized => Pretrain::Regularized,
            PretrainArg::Erm => Pretrain::Erm,
        };
    }
    if let Some(a) = flags.loss_aggregation {
        c.loss_aggregation = match a {
            LossAggregationArg::Aggregated => LossAggregation::Aggregated,
            LossAggregationArg::SelfInfluence => LossAggregation::SelfInfluence,
        };
    }
    c.coerce_labels |= flags.coerce_labels;
    c.order_flip |= flags.order_flip;
    c.balance |= flags.balance;
    c.validate()?;
    Ok(c)
}

/// Tracks files written by this run so they can be removed on failure.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(p, contents)?;
        Ok(())
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn load_dataset(c: &RunConfig) -> Result<Dataset> {
    let seed = c.primary_seed();
    let data = match &c.data {
        Some(path) => load_csv(path, c.csv_options())?,
        None => match c.generator {
            Generator::Gaussian => generate_synthetic(&c.synthetic_params(), seed)?,
            Generator::Tabular => generate_tabular(&c.tabular_params(), seed)?,
        },
    };
    if c.balance {
        balance_resample(&data, seed)
    } else {
        Ok(data)
    }
}

fn surrogate(c: &RunConfig) -> Result<SurrogateSpec> {
    SurrogateSpec::new(c.surrogate_kind()?, c.lambda)
}

/// Loads `--snapshot` or trains a fresh model on the training split.
fn obtain_snapshot(c: &RunConfig, train_set: &Dataset) -> Result<ModelSnapshot> {
    match &c.snapshot {
        Some(path) => {
            let s: ModelSnapshot = serde_json::from_slice(&fs::read(path)?)?;
            if s.input_dim() != train_set.dim() {
                return Err(Error::Shape {
                    what: "snapshot input dimension",
                    expected: train_set.dim(),
                    got: s.input_dim(),
                });
            }
            Ok(s)
        }
        None => {
            let spec = surrogate(c)?;
            let reg = (c.pretrain == Pretrain::Regularized).then_some(&spec);
            Ok(train(train_set, None, &c.train_config(), reg)?.0)
        }
    }
}

#[derive(Serialize)]
struct FileDigest {
    file: String,
    sha256: String,
}

fn run(command: &Command, c: &RunConfig, out: &mut Outputs) -> Result<ExitCode> {
    let seed = c.primary_seed();
    let data = load_dataset(c)?;
    let mut status = ExitCode::SUCCESS;
    match command {
        Command::Synth(_) => {
            data.save_csv(&out.path("data.csv"))?;
            println!("wrote {} examples", data.len());
        }
        Command::Train(_) => {
            let (train_set, test_set) = split(&data, c.train_fraction, seed)?;
            let spec = surrogate(c)?;
            let (snapshot, log) = train(&train_set, Some(&test_set), &c.train_config(), Some(&spec))?;
            out.write("snapshot.json", serde_json::to_string_pretty(&snapshot)?.as_bytes())?;
            log.save_csv(&out.path("train_log.csv"))?;
            println!(
                "test accuracy {:.4}, dp violation {:.4}",
                accuracy(&snapshot, &test_set)?,
                fairness_violation(&snapshot, &test_set)?
            );
        }
        Command::Score(_) => {
            let (train_set, _) = split(&data, c.train_fraction, seed)?;
            let snapshot = obtain_snapshot(c, &train_set)?;
            let spec = surrogate(c)?.resolve(&snapshot, &train_set)?;
            let table = aggregated_fairness_score(&c.influence_config(train_set.len()), &snapshot, &spec, &train_set)?;
            table.save_csv(&out.path("influence.csv"))?;
            println!("scored {} training examples", table.len());
        }
        Command::Verify(_) => {
            let (train_set, test_set) = split(&data, c.train_fraction, seed)?;
            let snapshot = obtain_snapshot(c, &train_set)?;
            let spec = surrogate(c)?.resolve(&snapshot, &train_set)?;
            let report = verify_first_order(
                &c.influence_config(train_set.len()),
                &snapshot,
                Some(&spec),
                &train_set,
                &test_set,
                c.pairs,
                seed,
            )?;
            let passed = report.correlation >= c.threshold;
            let summary = json!({
                "correlation": report.correlation,
                "pairs": c.pairs,
                "threshold": c.threshold,
                "passed": passed,
            });
            out.write("verify.json", format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes())?;
            println!("first-order correlation {:.6} (threshold {})", report.correlation, c.threshold);
            if !passed {
                status = ExitCode::from(2);
            }
        }
        Command::Sweep(_) => {
            let report = run_sweep(&data, &c.sweep_config()?)?;
            let csv = out.path("sweep.csv");
            let json = out.path("sweep.json");
            report.save(&csv, &json)?;
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {} failed", report.rows.len(), failed);
        }
    }

    let mut config_file = c.clone();
    config_file.out = PathBuf::from(".");
    out.write("config.toml", config_file.to_toml_string().as_bytes())?;
    let mut artifacts = Vec::new();
    for f in &out.files {
        artifacts.push(FileDigest {
            file: f.file_name().expect("artifact has a file name").to_string_lossy().into_owned(),
            sha256: sha256_file(f)?,
        });
    }
    let mut inputs = Vec::new();
    for p in [&c.data, &c.snapshot].into_iter().flatten() {
        inputs.push(FileDigest {
            file: p.display().to_string(),
            sha256: sha256_file(p)?,
        });
    }
    let mut config_json = serde_json::to_value(c)?;
    if let Some(m) = config_json.as_object_mut() {
        m.remove("out");
    }
    let manifest = json!({
        "command": command.name(),
        "config_hash": c.hash(),
        "seeds": c.seeds(),
        "config": config_json,
        "inputs": inputs,
        "artifacts": artifacts,
    });
    out.write("manifest.json", format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes())?;
    Ok(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match resolve_config(cli.command.flags()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut out = match Outputs::new(&config.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match run(&cli.command, &config, &mut out) {
        Ok(code) => code,
        Err(e) => {
            out.discard();
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
