use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use oboxkit_core::harness::{
    boundary_csv, boundary_experiment, convert_records, profile_command, run_rrc_probe, run_trials, BoxForm,
    ExperimentConfig, Geometry, RrcProbe, TrialLoss, TrialRecord, TrialRepr, DEFAULT_PROFILE_SIZES,
};
use oboxkit_core::losses::LossKind;
use oboxkit_core::Error;

#[derive(Parser)]
#[command(name = "oboxkit", version, about = "Oriented-box representation experiments and rotated convolution probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random draw; overrides a `seed` key in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config: a file path or an inline object.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a JSON array of boxes between obb, gbb and lgbb.
    Convert {
        #[arg(long, default_value = "obb")]
        from: String,
        #[arg(long, default_value = "lgbb")]
        to: String,
        /// Also convert back and report both directions.
        #[arg(long)]
        roundtrip: bool,
        /// Input file; stdin when absent.
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Encoding distance, loss and regression across the angle seam.
    Boundary {
        #[command(flatten)]
        common: Common,
    },
    /// Gradient magnitude against box size.
    Profile {
        /// Comma-separated box sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<f64>>,
        /// Comma-separated loss kinds (kld, hellinger, lgbb_smooth_l1).
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient-descent regression trials.
    Trial {
        #[arg(long, default_value = "lgbb")]
        repr: String,
        /// Defaults to the representation's natural loss.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long, default_value = "random")]
        geometry: String,
        #[command(flatten)]
        common: Common,
    },
    /// Structural probes of the rotated convolution block.
    Rrc {
        #[arg(value_parser = ["identity", "roundtrip", "ring", "flops"])]
        probe: String,
        #[command(flatten)]
        common: Common,
    },
}

/// A failed run: either bad input (exit 2) or a failed check (exit 1).
enum Failure {
    Usage(anyhow::Error),
    Check(Value),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.into())
    }
}

fn load_config(common: &Common) -> anyhow::Result<Value> {
    let Some(raw) = &common.config else {
        return Ok(json!({}));
    };
    let text = if raw.trim_start().starts_with('{') {
        raw.clone()
    } else {
        fs::read_to_string(raw).with_context(|| format!("reading config {raw}"))?
    };
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?;
    if !v.is_object() {
        return Err(Error::config("config", "expected a JSON object").into());
    }
    Ok(v)
}

fn experiment_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&load_config(common)?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(common: &Common, text: &str) -> anyhow::Result<()> {
    match &common.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn json_only(common: &Common, command: &str) -> anyhow::Result<()> {
    if common.format == Some(Format::Csv) {
        return Err(Error::config("format", format!("{command} writes JSON only")).into());
    }
    Ok(())
}

fn trial_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from("trial,repr_kind,loss_kind,steps,final_iou,converged\n");
    for (i, r) in records.iter().enumerate() {
        s += &format!("{i},{},{},{},{},{}\n", r.repr_kind, r.loss_kind.name(), r.steps, r.final_iou, r.converged);
    }
    s
}

fn pgm_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.with_extension("pgm"),
        None => PathBuf::from("ring.pgm"),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Convert { from, to, roundtrip, input, common } => {
            json_only(&common, "convert")?;
            let from: BoxForm = from.parse().map_err(|_| Error::config("from", format!("unknown box form `{from}`")))?;
            let to: BoxForm = to.parse().map_err(|_| Error::config("to", format!("unknown box form `{to}`")))?;
            let text = match &input {
                Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s).context("reading stdin")?;
                    s
                }
            };
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Decode(e.to_string()))?;
            emit(&common, &pretty(&convert_records(&v, from, to, roundtrip)?)?)?;
        }
        Command::Boundary { common } => {
            let rows = boundary_experiment(&experiment_config(&common)?)?;
            let text = match common.format {
                Some(Format::Json) => pretty(&rows)?,
                _ => boundary_csv(&rows)?,
            };
            emit(&common, &text)?;
        }
        Command::Profile { sizes, kinds, samples, common } => {
            let sizes = sizes.unwrap_or_else(|| DEFAULT_PROFILE_SIZES.to_vec());
            let kinds: Vec<LossKind> = match kinds {
                None => LossKind::ALL.to_vec(),
                Some(ks) => ks
                    .iter()
                    .map(|k| k.parse().map_err(|_| Error::config("kinds", format!("unknown loss kind `{k}`"))))
                    .collect::<Result<_, _>>()?,
            };
            let seed = common.seed.unwrap_or(experiment_config(&common)?.seed);
            let (rows, csv) = profile_command(&kinds, &sizes, samples, seed)?;
            let text = match common.format {
                Some(Format::Json) => pretty(&rows)?,
                _ => csv,
            };
            emit(&common, &text)?;
        }
        Command::Trial { repr, loss, geometry, common } => {
            let cfg = experiment_config(&common)?;
            let repr: TrialRepr = repr.parse().map_err(|_| Error::config("repr", format!("unknown representation `{repr}`")))?;
            let loss: TrialLoss = match loss {
                None => repr.default_loss(),
                Some(l) => l.parse().map_err(|_| Error::config("loss", format!("unknown loss `{l}`")))?,
            };
            let geometry: Geometry = geometry.parse()?;
            let records = run_trials(repr, loss, geometry, &cfg)?;
            let text = match common.format {
                Some(Format::Csv) => trial_csv(&records),
                _ => pretty(&records)?,
            };
            emit(&common, &text)?;
        }
        Command::Rrc { probe, common } => {
            json_only(&common, "rrc")?;
            let probe: RrcProbe = probe.parse()?;
            let mut cfg = json!({"C": 32, "K": 32, "M": 8});
            if let Value::Object(user) = load_config(&common)? {
                cfg.as_object_mut().expect("object").extend(user);
            }
            let seed = common.seed.or_else(|| cfg.get("seed").and_then(Value::as_u64)).unwrap_or(0);
            let outcome = run_rrc_probe(probe, &cfg, seed)?;
            emit(&common, &pretty(&outcome.report)?)?;
            if let Some(pgm) = &outcome.pgm {
                let path = pgm_path(common.out.as_deref());
                fs::write(&path, pgm).with_context(|| format!("writing {}", path.display()))?;
            }
            if !outcome.passed() {
                return Err(Failure::Check(json!({"probe": probe_name(probe), "failures": outcome.failures})));
            }
        }
    }
    Ok(())
}

fn probe_name(p: RrcProbe) -> &'static str {
    match p {
        RrcProbe::Identity => "identity",
        RrcProbe::Roundtrip => "roundtrip",
        RrcProbe::Ring => "ring",
        RrcProbe::Flops => "flops",
    }
}

fn usage_json(e: &anyhow::Error) -> Value {
    match e.downcast_ref::<Error>() {
        Some(Error::Config { field, reason }) => json!({"error": "config", "field": field, "reason": reason}),
        Some(other) => json!({"error": other.to_string()}),
        None => json!({"error": format!("{e:#}")}),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (body, code) = match f {
                Failure::Usage(e) => (usage_json(&e), 2),
                Failure::Check(v) => (v, 1),
            };
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}

