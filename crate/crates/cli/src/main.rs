use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use memo_core::babi;
use memo_core::diagnostics::{memo_two_hop_check, op_suite_check, two_hop_config};
use memo_core::harness::config::{resolve_data_path, PRESETS};
use memo_core::harness::metrics::MetricsWriter;
use memo_core::harness::{eval_record, format_report, EvalSplit, RunConfig, Trainer};
use memo_core::par::Exec;
use memo_core::store::{write_dataset, TokenRecord};
use memo_core::tasks::entry_seed;
use memo_core::tasks::graph::{self, GraphConfig};
use memo_core::tasks::pai::{self, PaiConfig, QueryKind, Split};
use memo_core::{Error, Result};

/// Largest acceptable error of the single-op gradient suite.
const OP_TOLERANCE: f64 = 1e-5;
/// Largest acceptable error of the two-hop episode gradient check.
const EPISODE_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "memo", version, about = "Train and evaluate memory networks with learned halting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing metrics.jsonl, last.ckpt and best.ckpt.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out data.
    Eval(EvalArgs),
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, default_value = "desk", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
    },
    /// Generate a paired-associative-inference dataset.
    GenPai(GenPaiArgs),
    /// Generate a shortest-path dataset.
    GenGraph(GenGraphArgs),
    /// Tokenize the bAbI corpus into dataset containers and a vocabulary file.
    IngestBabi(IngestArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Number of seeds to check.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with_all = ["preset", "resume"])]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS), conflicts_with = "resume")]
    preset: Option<String>,
    /// Continue from a checkpoint with its stored configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory. Defaults to the checkpoint's directory when resuming.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Override the number of epochs.
    #[arg(long, conflicts_with = "resume")]
    epochs: Option<u64>,
    /// Stop after this epoch; a later resume continues the same schedule.
    #[arg(long)]
    until_epoch: Option<u64>,
    /// Run batch entries on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Number of held-out items. Defaults to the configured amount.
    #[arg(long)]
    items: Option<usize>,
    /// Append the result to this metrics file.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaiSplitArg {
    Train,
    Valid,
    Test,
}

#[derive(clap::Args)]
struct GenPaiArgs {
    /// Items per sequence (3, 4 or 5).
    #[arg(long, default_value_t = 3)]
    seq_len: usize,
    /// Number of items; must be even so half are direct queries.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    d_emb: usize,
    /// Which class instances to draw from.
    #[arg(long, value_enum, default_value = "train")]
    split: PaiSplitArg,
}

#[derive(clap::Args)]
struct GenGraphArgs {
    #[arg(long)]
    n_nodes: usize,
    #[arg(long)]
    out_degree: usize,
    #[arg(long)]
    path_length: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct IngestArgs {
    /// Directory with qa*_train.txt and qa*_test.txt, relative to the data root.
    #[arg(long)]
    path: PathBuf,
    /// Output directory for train.bin, valid.bin, test.bin and vocab.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Serialize)]
struct PaiHeader<'a> {
    task: &'static str,
    config: &'a PaiConfig,
    split: &'static str,
    seed: u64,
    count: usize,
    /// Names of the per-record extra integers.
    extras: [&'static str; 3],
}

#[derive(Serialize)]
struct GraphHeader<'a> {
    task: &'static str,
    config: &'a GraphConfig,
    seed: u64,
    count: usize,
    extras: [&'static str; 1],
}

#[derive(Serialize)]
struct BabiHeader {
    task: &'static str,
    split: &'static str,
    vocab_size: usize,
    token_space: usize,
    count: usize,
    truncated_sentences: usize,
    dropped_sentences: usize,
    extras: [&'static str; 1],
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let (mut trainer, out) = if let Some(ckpt) = &args.resume {
        let t = Trainer::load(ckpt)?;
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
        (t, out)
    } else {
        let mut cfg = match (&args.config, &args.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::desk(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(e) = args.epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs/latest"));
        fs::create_dir_all(&out)?;
        fs::write(out.join("config.toml"), cfg.to_toml()?)?;
        (Trainer::new(cfg)?, out)
    };
    if args.sequential {
        trainer.cfg.exec = Exec::Sequential;
    }
    let summary = trainer.run(&out, args.until_epoch)?;
    println!("trained {} updates (step {})", summary.steps, trainer.step);
    if let Some(r) = summary.last_valid {
        print!("{}", format_report(&r));
    }
    if let Some(r) = summary.test {
        print!("{}", format_report(&r));
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let mut trainer = Trainer::load(&args.checkpoint)?;
    trainer.cfg.exec = exec(args.sequential);
    let split = match args.split {
        SplitArg::Valid => EvalSplit::Valid,
        SplitArg::Test => EvalSplit::Test,
    };
    let n = args.items.unwrap_or(trainer.cfg.eval_items);
    let report = trainer.evaluate(split, n)?;
    if let Some(path) = &args.metrics {
        let lr = trainer.schedule().lr_at(trainer.step);
        MetricsWriter::append(path)?.write(&eval_record(trainer.step, lr, &report))?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", format_report(&report));
    }
    Ok(())
}

fn gen_pai(args: GenPaiArgs) -> Result<()> {
    let cfg = PaiConfig::new(args.seq_len, args.classes, args.d_emb);
    cfg.validate()?;
    let (split, name) = match args.split {
        PaiSplitArg::Train => (Split::Train, "train"),
        PaiSplitArg::Valid => (Split::Valid, "valid"),
        PaiSplitArg::Test => (Split::Test, "test"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let entries = pai::sample_batch(&cfg, split, &mut rng, args.count)?;
    let records: Vec<TokenRecord> = entries
        .iter()
        .map(|e| {
            let (grid, query, targets) = pai::to_tokens(&cfg, &e.store, &e.query);
            let kind = match e.query.kind() {
                QueryKind::Direct => 0,
                QueryKind::Indirect => 1,
            };
            TokenRecord::from_example(
                &memo_core::input::Example {
                    memory: grid,
                    query: memo_core::input::QueryInput::Tokens(query),
                    targets,
                },
                vec![kind, e.query.distance() as u32, e.query.match_first as u32],
            )
        })
        .collect::<Result<_>>()?;
    let header = PaiHeader {
        task: "pai",
        config: &cfg,
        split: name,
        seed: args.seed,
        count: records.len(),
        extras: ["indirect", "distance", "match_first"],
    };
    write_output(&args.out, &header, &records)
}

fn gen_graph(args: GenGraphArgs) -> Result<()> {
    let cfg = GraphConfig::new(args.n_nodes, args.out_degree, args.path_length);
    cfg.validate()?;
    let records = (0..args.count)
        .map(|i| {
            let g = graph::generate_graph_seeded(&cfg, entry_seed(args.seed, i as u64))?;
            TokenRecord::from_example(&graph::encode_instance(&g, &cfg)?, vec![g.edges.len() as u32])
        })
        .collect::<Result<Vec<_>>>()?;
    let header = GraphHeader {
        task: "graph",
        config: &cfg,
        seed: args.seed,
        count: records.len(),
        extras: ["edges"],
    };
    write_output(&args.out, &header, &records)
}

fn write_output<H: Serialize>(out: &Path, header: &H, records: &[TokenRecord]) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_dataset(out, header, records)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn ingest_babi(args: IngestArgs) -> Result<()> {
    let corpus = babi::parse_babi(&resolve_data_path(&args.path))?;
    let (train, valid) = babi::split_validation(&corpus.train, args.validation_fraction, args.seed);
    fs::create_dir_all(&args.out)?;
    for (name, set) in [("train", &train), ("valid", &valid), ("test", &corpus.test)] {
        let records = set
            .iter()
            .map(|ex| TokenRecord::from_example(&babi::to_example(ex)?, vec![ex.task as u32]))
            .collect::<Result<Vec<_>>>()?;
        let header = BabiHeader {
            task: "babi",
            split: name,
            vocab_size: corpus.vocab_size(),
            token_space: corpus.token_space(),
            count: records.len(),
            truncated_sentences: corpus.truncated_sentences,
            dropped_sentences: corpus.dropped_sentences,
            extras: ["task"],
        };
        write_output(&args.out.join(format!("{name}.bin")), &header, &records)?;
    }
    let mut vocab = corpus.words.join("\n");
    vocab.push('\n');
    fs::write(args.out.join("vocab.txt"), vocab)?;
    println!("vocabulary: {} words", corpus.vocab_size());
    Ok(())
}

/// Returns whether every seed passed.
fn gradcheck(seeds: u64) -> Result<bool> {
    let cfg = two_hop_config();
    let mut ok = true;
    println!("{:>5} {:>12} {:>12}", "seed", "ops", "two-hop");
    for seed in 0..seeds {
        let ops = op_suite_check(seed)?;
        let episode = memo_two_hop_check(&cfg, seed)?;
        let pass = ops < OP_TOLERANCE && episode < EPISODE_TOLERANCE;
        ok &= pass;
        println!(
            "{seed:>5} {ops:>12.3e} {episode:>12.3e} {}",
            if pass { "ok" } else { "FAIL" }
        );
    }
    println!("tolerances: ops {OP_TOLERANCE:e}, two-hop {EPISODE_TOLERANCE:e}");
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Config { preset } => RunConfig::preset(&preset)
            .and_then(|c| c.to_toml())
            .map(|t| print!("{t}")),
        Command::GenPai(a) => gen_pai(a),
        Command::GenGraph(a) => gen_graph(a),
        Command::IngestBabi(a) => ingest_babi(a),
        Command::Gradcheck { seeds } => gradcheck(seeds).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(Error::Numeric("gradient check exceeded tolerance".into()))
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
