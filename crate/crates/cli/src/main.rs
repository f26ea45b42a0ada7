use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use flames_core::campaign::{
    ablate, ablation_csv, compare, load_corpus, run_campaign, Algorithm, CampaignConfig,
    CampaignError, CampaignReport, ModelSpec, ABLATION_KS,
};
use flames_core::costmodel::{sweep, sweep_csv, MemoryModelParams};
use flames_core::model::ModelError;
use flames_core::reward::{generate_bug_corpus, repair_vocab, write_corpus, CorpusError};
use flames_core::search::Policy;

#[derive(Parser)]
#[command(
    name = "flames",
    version,
    about = "Test-guided token search for program repair, with beam-search baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one repair algorithm over a bug corpus and write a JSON report.
    Repair(RepairArgs),
    /// Analytic memory model.
    #[command(subcommand)]
    Costmodel(CostmodelCommand),
    /// Bug corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Paired per-bug differences between two reports (first minus second).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tree search over every policy and expansion size; writes CSV.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_KS)]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CostmodelCommand {
    /// Beam-size sweep of the batched and sequential beam memory formulas.
    Sweep {
        #[arg(long)]
        alpha: u64,
        #[arg(long)]
        n_in: u64,
        #[arg(long)]
        n_out: u64,
        #[arg(long)]
        vocab: u64,
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Generate a seeded corpus of single-token bugs as JSON lines.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// table:<path>, ngram[:order[:delta]] or remote:<url>
    #[arg(long, default_value = "ngram")]
    model: String,
    #[arg(long, default_value_t = 200)]
    max_patches: usize,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long)]
    memory_cap: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    max_new_tokens: usize,
    /// Report every wall_ms as 0 so identical runs give identical bytes.
    #[arg(long)]
    deterministic: bool,
    /// Process bugs one at a time.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    algo: String,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    beam_size: usize,
    #[arg(long, default_value_t = 10)]
    expansion_k: usize,
    #[arg(long, default_value = "pucb-var")]
    policy: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Keep searching after the first plausible patch.
    #[arg(long)]
    collect_all: bool,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Config(_) | CampaignError::Pairing(_) => Failure::Config(e.to_string()),
            CampaignError::Model(ModelError::Io(_))
            | CampaignError::Io(_)
            | CampaignError::Corpus(_) => Failure::Io(e.to_string()),
            CampaignError::Model(_) => Failure::Config(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn base_config(common: &CommonArgs) -> Result<CampaignConfig, Failure> {
    let model: ModelSpec = common.model.parse().map_err(Failure::Config)?;
    Ok(CampaignConfig {
        model,
        corpus: common.corpus.clone(),
        max_patches: common.max_patches,
        timeout: Duration::from_secs(common.timeout_secs),
        memory_cap: common.memory_cap,
        seed: common.seed,
        max_new_tokens: common.max_new_tokens,
        record_timing: !common.deterministic,
        parallel: !common.serial,
        ..CampaignConfig::default()
    })
}

fn repair(args: &RepairArgs) -> Result<(), Failure> {
    let algorithm: Algorithm = args.algo.parse().map_err(Failure::Config)?;
    let policy: Policy = args.policy.parse().map_err(Failure::Config)?;
    let config = CampaignConfig {
        algorithm,
        beam_size: args.beam_size,
        expansion_k: args.expansion_k,
        policy,
        temperature: args.temperature,
        stop_on_plausible: !args.collect_all,
        ..base_config(&args.common)?
    };
    let report = run_campaign(&config)?;
    write_file(&args.out, &report.to_json())?;
    let a = &report.aggregates;
    eprintln!(
        "{}: {}/{} plausible, oom rate {:.2}, {} error(s)",
        algorithm.name(),
        a.plausible_count,
        a.bugs,
        a.oom_rate,
        a.error_count
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<CampaignReport, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    CampaignReport::from_json(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Repair(args) => repair(&args),
        Command::Costmodel(CostmodelCommand::Sweep {
            alpha,
            n_in,
            n_out,
            vocab,
            cap,
            out,
        }) => {
            if n_in == 0 || n_out == 0 || vocab == 0 {
                return Err(Failure::Config(
                    "n-in, n-out and vocab must be positive".into(),
                ));
            }
            let rows = sweep(&MemoryModelParams::new(alpha, 1, n_in, n_out, vocab), cap);
            write_file(&out, &sweep_csv(&rows))
        }
        Command::Corpus(CorpusCommand::Gen { seed, n, out }) => {
            let corpus = generate_bug_corpus(seed, n, &repair_vocab()).map_err(|e| match e {
                CorpusError::Io(_) => Failure::Io(e.to_string()),
                _ => Failure::Config(e.to_string()),
            })?;
            let file = fs::File::create(&out)
                .map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            write_corpus(&mut BufWriter::new(file), &corpus).map_err(|e| Failure::Io(e.to_string()))
        }
        Command::Compare { a, b, out } => {
            let summary = compare(&read_report(&a)?, &read_report(&b)?)?;
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            match out {
                Some(path) => write_file(&path, &json),
                None => {
                    println!("{json}");
                    Ok(())
                }
            }
        }
        Command::Ablate { common, ks, out } => {
            if ks.contains(&0) {
                return Err(Failure::Config("expansion sizes must be positive".into()));
            }
            let base = base_config(&common)?;
            let corpus = load_corpus(&base.corpus)?;
            let rows = ablate(&base, &corpus, &Policy::ALL, &ks)?;
            write_file(&out, &ablation_csv(&rows))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
