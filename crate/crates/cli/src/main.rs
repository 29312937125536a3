use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use clap::{Args, Parser, Subcommand};

use trisent::config::{ConfigError, PipelineConfig, CONFIG_KEYS};
use trisent::pipeline::{self, PipelineError, Summary};
use trisent::synth::{SynthSpec, SYNTH_KEYS};

#[derive(Parser, Debug)]
#[command(
    name = "trisent",
    version,
    about = "Sentiment indices and return-predictability experiments"
)]
#[command(after_long_help = key_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed from which all randomness derives.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated calendar years.
    #[arg(long, global = true, value_delimiter = ',')]
    years: Option<Vec<i32>>,
    /// Comma-separated stock ids.
    #[arg(long, global = true, value_delimiter = ',')]
    stocks: Option<Vec<String>>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Fit normalization and MSI on all dates instead of training dates.
    #[arg(long, global = true)]
    normalize_whole_sample: bool,
    /// Count posts flagged as spam in the BSI.
    #[arg(long, global = true)]
    include_spam: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted sentiment effects.
    /// `--config` here is a synth spec (keys listed under --help).
    Synth,
    /// Compute BSI, OSI and MSI for every selected stock.
    BuildIndices,
    /// Run the forecasting grid and write MSE reports.
    RunExperiment,
    /// Score predicted post polarities against gold labels.
    EvalClassifier {
        /// CSV with post_id,label (pos/neu/neg or abstain).
        #[arg(long)]
        predictions: PathBuf,
        /// CSV with post_id,label.
        #[arg(long)]
        gold: PathBuf,
    },
    /// Write each stock's aligned feature panel.
    DumpPanel,
}

fn key_help() -> String {
    let mut s = String::from("Config keys (run-experiment, build-indices, dump-panel, eval-classifier):\n");
    for (k, v) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<32} {v}\n"));
    }
    s.push_str("\nSynth spec keys (synth):\n");
    for (k, v) in SYNTH_KEYS {
        s.push_str(&format!("  {k:<32} {v}\n"));
    }
    s
}

fn read_config(path: Option<&Path>) -> Result<PipelineConfig, ConfigError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_overrides(cfg: &mut PipelineConfig, g: &Global) {
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(y) = &g.years {
        cfg.years = y.clone();
    }
    if let Some(s) = &g.stocks {
        cfg.stocks = s.clone();
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if g.normalize_whole_sample {
        cfg.panel.normalize_whole_sample = true;
    }
    if g.include_spam {
        cfg.bsi.include_spam = true;
    }
}

fn synth_spec(g: &Global) -> Result<SynthSpec, PipelineError> {
    let mut spec = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            })?;
            serde_json::from_str(trisent::output::strip_header(&text)).map_err(|source| ConfigError::Parse {
                path: p.clone(),
                source,
            })?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    if let Some(s) = &g.stocks {
        spec.stocks = s.clone();
    }
    if let Some(years) = &g.years {
        let (Some(first), Some(last)) = (years.iter().min(), years.iter().max()) else {
            return Err(PipelineError::Other("--years is empty".into()));
        };
        let mut d =
            NaiveDate::from_ymd_opt(*first, 1, 1).ok_or_else(|| PipelineError::Other(format!("bad year {first}")))?;
        let mut days = 0;
        let mut start = None;
        while d.year() <= *last {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                start.get_or_insert(d);
                days += 1;
            }
            d += Duration::days(1);
        }
        spec.start = start.expect("a year has weekdays");
        spec.days = days;
    }
    Ok(spec)
}

fn run(cli: &Cli) -> Result<Summary, PipelineError> {
    let g = &cli.global;
    if let Command::Synth = cli.command {
        let spec = synth_spec(g)?;
        let out = g.out.clone().unwrap_or_else(|| PathBuf::from("data"));
        return pipeline::synth(&spec, &out);
    }
    let mut cfg = read_config(g.config.as_deref())?;
    apply_overrides(&mut cfg, g);
    let out = cfg.out.clone();
    match &cli.command {
        Command::Synth => unreachable!(),
        Command::BuildIndices => pipeline::build_indices(&cfg, &out),
        Command::RunExperiment => pipeline::run_experiment(&cfg, &out).map(|r| r.summary),
        Command::DumpPanel => pipeline::dump_panel(&cfg, &out),
        Command::EvalClassifier { predictions, gold } => {
            pipeline::eval_classifier(predictions, gold, &cfg.header(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            for n in &summary.notes {
                eprintln!("note: {n}");
            }
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                PipelineError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
