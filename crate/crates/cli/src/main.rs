use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierlog::evolve::{evolve_corpus, EvolutionConfig};
use hierlog::ingest::{ingest_dataset, invert_labels, label_counts, load_records, save_records, Dataset, IngestOptions, SequenceRecord};
use hierlog::mixer::{class_weight, compose_multi_project, composition, split, MixSpec, SplitSpec};
use hierlog::model::{HierCnn, ModelConfig};
use hierlog::synth::{generate, SynthConfig};
use hierlog::trainer::{
    evaluate, read_history_csv, render_table, train, write_history_csv, CheckpointSink, History, TestSet, TrainConfig,
};
use hierlog::{Error, Result, Scalar};
use hierlog_cli::{exit_code, rerun, run_experiment, ExperimentSpec, Manifest, Precision};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "hierlog", version, about = "Character-level hierarchical CNN log anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw corpus into labeled sequence records (JSONL).
    Ingest {
        #[arg(long)]
        dataset: Dataset,
        /// Log file or corpus directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        strip_headers: bool,
        /// Swap labels 0 and 1 (single-project Hadoop).
        #[arg(long)]
        invert_labels: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a planted-token corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0.2)]
        anomaly_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "hdfs")]
        dataset: Dataset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split records into train/test halves, optionally mixing datasets.
    Mix(MixArgs),
    /// Apply duplicate/remove/shuffle noise to records.
    Evolve {
        #[arg(long, alias = "in")]
        records: PathBuf,
        #[arg(long)]
        noise_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        shuffle_window_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on prepared records.
    Train {
        /// TOML with optional `seed`, `precision`, `[model]` and `[train]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, num_args = 1..)]
        test: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score records with a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, value_enum, default_value = "f32")]
        precision: PrecisionArg,
        /// Also write the metrics as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise per-epoch result CSVs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
    },
    /// Run a full experiment from a recipe or a previous manifest.
    Run {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        config: Option<PathBuf>,
        /// `key=value` patch applied to the recipe, e.g. `train.epochs=5`.
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory, overriding the recipe's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MixArgs {
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
    /// TOML with `[split]` and optionally `[mix]` (which implies
    /// --multi-project); replaces the flags below.
    #[arg(long, conflicts_with_all = ["train_fraction", "seed", "multi_project"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample each dataset's training half by its fraction and concatenate.
    #[arg(long)]
    multi_project: bool,
    #[arg(long, default_value_t = 0.40)]
    hdfs: f64,
    #[arg(long, default_value_t = 0.60)]
    bgl: f64,
    #[arg(long, default_value_t = 0.80)]
    hadoop: f64,
    #[arg(long, default_value_t = 0.90)]
    openstack: f64,
    #[arg(long, alias = "out")]
    out_dir: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct MixRecipe {
    split: SplitSpec,
    mix: Option<MixSpec>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct TrainRecipe {
    seed: u64,
    precision: Precision,
    model: ModelConfig,
    train: TrainConfig,
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<SequenceRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_records(p)?);
    }
    Ok(out)
}

fn ingest(dataset: Dataset, input: &Path, labels: Option<&Path>, strip: bool, invert: bool, out: &Path) -> Result<()> {
    let mut parsed = ingest_dataset(dataset, input, labels, IngestOptions { strip_headers: strip })?;
    if invert {
        invert_labels(&mut parsed.records);
    }
    save_records(out, &parsed.records)?;
    let (a, n) = label_counts(&parsed.records);
    println!(
        "{dataset}: {} sequences, {a} anomalous, {n} normal ({} unlabeled groups skipped, {} malformed lines)",
        parsed.records.len(),
        parsed.skipped,
        parsed.warnings
    );
    Ok(())
}

fn mix(args: &MixArgs) -> Result<()> {
    let records = load_all(&args.records)?;
    let recipe = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => MixRecipe {
            split: SplitSpec {
                train_fraction: args.train_fraction,
                seed: args.seed,
                stratified: true,
            },
            mix: args.multi_project.then(|| MixSpec {
                hdfs: args.hdfs,
                bgl: args.bgl,
                hadoop: args.hadoop,
                openstack: args.openstack,
            }),
        },
    };
    let (train, test) = split(&records, &recipe.split)?;
    let train = match &recipe.mix {
        Some(fractions) => {
            fractions.validate()?;
            compose_multi_project(&train, fractions, recipe.split.seed)?
        }
        None => train,
    };
    fs::create_dir_all(&args.out_dir)?;
    save_records(&args.out_dir.join("train.jsonl"), &train)?;
    save_records(&args.out_dir.join("test.jsonl"), &test)?;
    println!("train {} / test {}", train.len(), test.len());
    for (d, n, share) in composition(&train) {
        println!("  {d}: {n} ({:.2}%)", 100.0 * share);
    }
    Ok(())
}

fn train_cmd<T: Scalar>(recipe: &TrainRecipe, train_path: &Path, tests: &[PathBuf], out: &Path) -> Result<()> {
    let records = load_records(train_path)?;
    let mut test_sets = Vec::new();
    for p in tests {
        test_sets.extend(TestSet::by_dataset(&load_records(p)?));
    }
    let weight = class_weight(&records)?;
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let mut model = HierCnn::<T>::new(recipe.model.clone(), recipe.seed)?;
    let cfg = TrainConfig {
        seed: recipe.seed,
        ..recipe.train.clone()
    };
    let outcome = train(&mut model, &records, &cfg, weight, &test_sets, Some(CheckpointSink { dir: &ckpt }))?;
    write_history_csv(fs::File::create(out.join("results.csv"))?, &outcome.history)?;
    outcome.best.save(&out.join("model.hlog"))?;
    println!("best epoch {}; model written to {}", outcome.best_epoch, out.join("model.hlog").display());
    Ok(())
}

fn eval_cmd<T: Scalar>(model: &Path, tests: &[PathBuf], threshold: f64, batch: usize, out: Option<&Path>) -> Result<()> {
    let model = HierCnn::<T>::load(model)?;
    let mut sets = Vec::new();
    for p in tests {
        sets.extend(TestSet::by_dataset(&load_records(p)?));
    }
    let report = evaluate(&model, &sets, threshold, batch)?;
    print!("{}", render_table("evaluation", &report));
    if let Some(path) = out {
        let mut h = History::default();
        h.push_report(0, &report);
        write_history_csv(fs::File::create(path)?, &h)?;
    }
    Ok(())
}

fn report(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        let rows = read_history_csv(fs::File::open(p)?)?;
        println!("{}", p.display());
        println!("{:<12} {:>10} {:>9} {:>10} {:>9}", "dataset", "best epoch", "best f1", "last epoch", "last f1");
        let mut by: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for r in &rows {
            by.entry(r.dataset.as_str()).or_default().push(r);
        }
        for (d, rs) in by {
            let best = rs.iter().fold(rs[0], |b, r| if r.f1 > b.f1 { r } else { b });
            let last = rs.iter().max_by_key(|r| r.epoch).unwrap();
            println!("{d:<12} {:>10} {:>9.4} {:>10} {:>9.4}", best.epoch, best.f1, last.epoch, last.f1);
        }
    }
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e) as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            dataset,
            input,
            labels,
            strip_headers,
            invert_labels,
            out,
        } => ingest(dataset, &input, labels.as_deref(), strip_headers, invert_labels, &out),
        Command::Synth {
            count,
            anomaly_fraction,
            seed,
            dataset,
            out,
        } => generate(&SynthConfig {
            count,
            anomaly_fraction,
            seed,
            dataset,
            ..SynthConfig::default()
        })
        .and_then(|recs| save_records(&out, &recs)),
        Command::Mix(args) => mix(&args),
        Command::Evolve {
            records,
            noise_ratio,
            seed,
            shuffle_window_max,
            out,
        } => load_records(&records).and_then(|recs| {
            let cfg = EvolutionConfig {
                noise_ratio,
                seed,
                shuffle_window_max,
                ..EvolutionConfig::default()
            };
            let (evolved, stats) = evolve_corpus(&recs, &cfg)?;
            println!("evolved {} sequences, {} too short to edit", stats.evolved, stats.untouched);
            save_records(&out, &evolved)
        }),
        Command::Train { config, train, test, out } => {
            let recipe = match config {
                Some(p) => fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
                    .and_then(|t| toml::from_str::<TrainRecipe>(&t).map_err(|e| Error::Config(e.to_string()))),
                None => Ok(TrainRecipe::default()),
            };
            recipe.and_then(|r| {
                r.model.validate()?;
                match r.precision {
                    Precision::F32 => train_cmd::<f32>(&r, &train, &test, &out),
                    Precision::F64 => train_cmd::<f64>(&r, &train, &test, &out),
                }
            })
        }
        Command::Eval {
            model,
            test,
            threshold,
            batch_size,
            precision,
            out,
        } => match precision {
            PrecisionArg::F32 => eval_cmd::<f32>(&model, &test, threshold, batch_size, out.as_deref()),
            PrecisionArg::F64 => eval_cmd::<f64>(&model, &test, threshold, batch_size, out.as_deref()),
        },
        Command::Report { results } => report(&results),
        Command::Run {
            config,
            overrides,
            manifest,
            out,
        } => {
            let outcome = match (config, manifest) {
                (_, Some(m)) => match Manifest::load(&m) {
                    Ok(m) => rerun(&m, out.as_deref()),
                    Err(e) => return fail(&e),
                },
                (Some(c), None) => match ExperimentSpec::load(&c, &overrides) {
                    Ok(mut spec) => {
                        if let Some(o) = out {
                            spec.out_dir = o;
                        }
                        run_experiment(&spec)
                    }
                    Err(e) => return fail(&e),
                },
                (None, None) => unreachable!("clap requires one of --config, --manifest"),
            };
            match outcome {
                Ok(o) => {
                    if let Ok(text) = fs::read_to_string(o.out_dir.join("report.txt")) {
                        print!("{text}");
                    }
                    println!("artifacts in {}", o.out_dir.display());
                    Ok(())
                }
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(exit_code(&e.error) as u8);
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
