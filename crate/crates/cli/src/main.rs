use std::path::PathBuf;
use std::process::ExitCode;

use biaffine::data::write_gold_to;
use biaffine::harness::{
    evaluate, gradcheck_suite, parse_file, train_files, AnyModel, Config, HarnessError, EPS,
};
use biaffine::synth::{generate, SynthConfig};
use clap::{Parser, Subcommand};

/// Graph-based dependency parser with deep biaffine attention.
#[derive(Parser)]
#[command(name = "biaffine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save the best dev-LAS checkpoint.
    Train {
        /// Flat key = value configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse a CoNLL file.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Take each token's best head instead of decoding a tree.
        #[arg(long)]
        no_mst: bool,
    },
    /// Score predicted against gold CoNLL.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Score punctuation tokens too.
        #[arg(long)]
        include_punct: bool,
    },
    /// Run the 64-bit end-to-end gradient check.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Write a synthetic treebank in CoNLL format.
    Synth {
        #[arg(long, default_value_t = 1500)]
        sentences: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        tag_noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<Config, HarnessError> {
    let mut text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Io { path: p.display().to_string(), source: e })?,
        None => String::new(),
    };
    for kv in overrides {
        text.push('\n');
        text.push_str(kv);
    }
    Ok(Config::parse(&text)?)
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Train { config, train, dev, out, overrides } => {
            let config = load_config(config.as_ref(), &overrides)?;
            eprintln!("{} classifier, {} cell, seed {}", config.classifier.name(), config.cell.name(), config.seed);
            let summary = train_files(&config, train, dev, &out, &mut |e| {
                let dev = e.dev.map(|r| r.to_string()).unwrap_or_else(|| "no dev set".into());
                eprintln!(
                    "epoch {:>3}  step {:>6}  lr {:.2e}  loss {:.4}  train UAS {:.2}  dev {dev}",
                    e.epoch, e.step, e.learning_rate, e.train_loss, e.train_uas
                );
            })?;
            println!(
                "saved {} ({} parameters, {} steps, best epoch {})",
                out.display(),
                summary.parameters,
                summary.steps,
                summary.best_epoch.map_or("-".into(), |e| e.to_string())
            );
        }
        Command::Parse { model, input, output, no_mst } => {
            let m = AnyModel::load(&model)?;
            let n = parse_file(&m, input, &output, !no_mst)?;
            eprintln!("parsed {n} sentences with the {} classifier", m.config().classifier.name());
        }
        Command::Eval { gold, pred, include_punct } => {
            println!("{}", evaluate(gold, pred, !include_punct)?);
        }
        Command::Gradcheck { seeds } => {
            let report = gradcheck_suite(seeds)?;
            for (s, e) in report.seeds.iter().zip(&report.errors) {
                println!("seed {s:>3}  max relative error {e:.3e}");
            }
            println!("negative control (corrupted backward rule): {:.3e}", report.negative_control);
            let ok = report.max_error < 1e-4 && report.negative_control > 1e-2;
            println!("{} (eps {EPS:e})", if ok { "PASS" } else { "FAIL" });
            if !ok {
                return Err(HarnessError::Diverged { step: 0, message: "gradient check failed".into() });
            }
        }
        Command::Synth { sentences, seed, tag_noise, out } => {
            let data = generate(&SynthConfig { sentences, seed, tag_noise });
            let file = std::fs::File::create(&out).map_err(|e| HarnessError::Io { path: out.display().to_string(), source: e })?;
            let mut w = std::io::BufWriter::new(file);
            write_gold_to(&mut w, &data)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
