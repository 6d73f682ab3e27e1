//! ingest → split → mix → train → evolve → eval → report, as one run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hierlog::evolve::evolve_corpus;
use hierlog::ingest::{ingest_dataset, invert_labels, load_records, save_records, write_records, Dataset, IngestOptions, SequenceRecord};
use hierlog::mixer::{class_weight, compose_multi_project, composition, split};
use hierlog::model::HierCnn;
use hierlog::synth::{generate, SynthConfig};
use hierlog::trainer::{evaluate, render_table, train, write_history_csv, CheckpointSink, EvalReport, History, TestSet};
use hierlog::{Error, Result, Scalar};

use crate::manifest::{hash_path, sha256_hex, Artifact, InputHash, Manifest};
use crate::spec::{ExperimentKind, ExperimentSpec, InputSpec, Precision};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Setup,
    Ingest,
    Split,
    Mix,
    Train,
    Evolve,
    Eval,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Setup => "setup",
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Mix => "mix",
            Stage::Train => "train",
            Stage::Evolve => "evolve",
            Stage::Eval => "eval",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

/// Process exit status for a failed run: 2 configuration, 3 data,
/// 4 training divergence, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence(_) => 4,
        Error::Ingest(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) | Error::Training(_) => 3,
        _ => 1,
    }
}

pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub best_epoch: usize,
    pub history: History,
    /// Best checkpoint on the held-out test sets.
    pub report: EvalReport,
    /// The same checkpoint on the evolved test sets (robustness runs only).
    pub evolved_report: Option<EvalReport>,
}

/// Loads, hashes and (for single-project Hadoop) label-inverts one input.
pub fn load_input(input: &InputSpec, invert_hadoop: bool) -> Result<(Vec<SequenceRecord>, InputHash)> {
    let (mut records, path, sha256) = if let Some(p) = &input.path {
        let opts = IngestOptions {
            strip_headers: input.strip_headers,
        };
        let parsed = ingest_dataset(input.dataset, p, input.labels.as_deref(), opts)?;
        if parsed.skipped > 0 || parsed.warnings > 0 {
            log::warn!("{}: {} skipped groups, {} malformed lines", input.dataset, parsed.skipped, parsed.warnings);
        }
        let mut h = hash_path(p)?;
        if let Some(l) = &input.labels {
            h = sha256_hex(format!("{h}{}", hash_path(l)?).as_bytes());
        }
        (parsed.records, Some(p.clone()), h)
    } else if let Some(p) = &input.records {
        let recs = load_records(p)?;
        if let Some(r) = recs.iter().find(|r| r.dataset != input.dataset) {
            return Err(Error::Ingest(format!(
                "{} holds {} record {}, expected {}",
                p.display(),
                r.dataset,
                r.sequence_id,
                input.dataset
            )));
        }
        (recs, Some(p.clone()), hash_path(p)?)
    } else {
        let cfg = SynthConfig {
            dataset: input.dataset,
            ..input.synth.clone().unwrap_or_default()
        };
        let recs = generate(&cfg)?;
        let mut bytes = Vec::new();
        write_records(&mut bytes, &recs)?;
        (recs, None, sha256_hex(&bytes))
    };
    if records.is_empty() {
        return Err(Error::Ingest(format!("no {} sequences found", input.dataset)));
    }
    if invert_hadoop && input.dataset == Dataset::Hadoop {
        invert_labels(&mut records);
    }
    Ok((
        records,
        InputHash {
            dataset: input.dataset.to_string(),
            path,
            sha256,
        },
    ))
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    out: PathBuf,
    stage: Stage,
    manifest: Manifest,
}

impl Runner<'_> {
    fn enter(&mut self, stage: Stage) {
        log::info!("stage {stage}");
        self.stage = stage;
    }

    fn run<T: Scalar>(&mut self) -> Result<Outcome> {
        let spec = self.spec;
        self.enter(Stage::Ingest);
        let invert = spec.single_dataset() && spec.kind != ExperimentKind::MultiProject;
        let mut records = Vec::new();
        fs::create_dir_all(self.out.join("records"))?;
        for input in &spec.inputs {
            let (recs, hash) = load_input(input, invert)?;
            let (a, n) = hierlog::ingest::label_counts(&recs);
            log::info!("{}: {} sequences ({a} anomalous, {n} normal)", input.dataset, recs.len());
            save_records(&self.out.join("records").join(format!("{}.jsonl", input.dataset)), &recs)?;
            self.manifest.inputs.push(hash);
            records.extend(recs);
        }

        self.enter(Stage::Split);
        let (train_half, test) = split(&records, &spec.split)?;
        fs::create_dir_all(self.out.join("splits"))?;
        save_records(&self.out.join("splits/train.jsonl"), &train_half)?;
        save_records(&self.out.join("splits/test.jsonl"), &test)?;

        self.enter(Stage::Mix);
        let train_set = if spec.kind == ExperimentKind::MultiProject {
            compose_multi_project(&train_half, &spec.mix, spec.seed)?
        } else {
            train_half
        };
        save_records(&self.out.join("train.jsonl"), &train_set)?;
        let weight = class_weight(&train_set).map_err(|e| Error::Training(e.to_string()))?;
        let tests = TestSet::by_dataset(&test);

        self.enter(Stage::Train);
        let ckpt = self.out.join("checkpoints");
        fs::create_dir_all(&ckpt)?;
        let mut model = HierCnn::<T>::new(spec.model.clone(), spec.seed)?;
        let outcome = train(&mut model, &train_set, &spec.train, weight, &tests, Some(CheckpointSink { dir: &ckpt }))?;
        write_csv(&self.out.join("results.csv"), &outcome.history)?;
        self.manifest.best_epoch = Some(outcome.best_epoch);

        let evolved = match (&spec.kind, &spec.evolution) {
            (ExperimentKind::Robustness, Some(evo)) => {
                self.enter(Stage::Evolve);
                let (evolved, stats) = evolve_corpus(&test, evo)?;
                log::info!("evolved {} test sequences, {} too short to edit", stats.evolved, stats.untouched);
                fs::create_dir_all(self.out.join("evolved"))?;
                save_records(&self.out.join("evolved/test.jsonl"), &evolved)?;
                Some(TestSet::by_dataset(&evolved))
            }
            _ => None,
        };

        self.enter(Stage::Eval);
        let best = &outcome.best;
        let (threshold, bs) = (spec.train.threshold, spec.train.batch_size);
        let report = evaluate(best, &tests, threshold, bs)?;
        write_csv(&self.out.join("eval.csv"), &single_epoch(outcome.best_epoch, &report))?;
        let evolved_report = match &evolved {
            Some(sets) => {
                let r = evaluate(best, sets, threshold, bs)?;
                write_csv(&self.out.join("robustness.csv"), &single_epoch(outcome.best_epoch, &r))?;
                Some(r)
            }
            None => None,
        };

        self.enter(Stage::Report);
        let mut text = format!(
            "experiment: {:?}\nseed: {}\ntraining sequences: {}\npositive weight: {weight:.6}\nbest epoch: {}\n",
            spec.kind,
            spec.seed,
            train_set.len(),
            outcome.best_epoch
        );
        for (d, n, share) in composition(&train_set) {
            text.push_str(&format!("  {d}: {n} ({:.2}%)\n", 100.0 * share));
        }
        text.push('\n');
        text.push_str(&render_table("test", &report));
        if let Some(r) = &evolved_report {
            text.push('\n');
            text.push_str(&render_table("evolved test", r));
        }
        fs::write(self.out.join("report.txt"), &text)?;

        Ok(Outcome {
            out_dir: self.out.clone(),
            manifest: self.manifest.clone(),
            best_epoch: outcome.best_epoch,
            history: outcome.history,
            report,
            evolved_report,
        })
    }
}

fn single_epoch(epoch: usize, report: &EvalReport) -> History {
    let mut h = History::default();
    h.push_report(epoch, report);
    h
}

fn write_csv(path: &Path, history: &History) -> Result<()> {
    write_history_csv(fs::File::create(path)?, history)
}

fn list_artifacts(out: &Path) -> Result<Vec<Artifact>> {
    let mut found = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                found.push(Artifact {
                    path: p.strip_prefix(out).unwrap().to_string_lossy().replace('\\', "/"),
                    sha256: sha256_hex(&fs::read(&p)?),
                });
            }
        }
    }
    found.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(found)
}

/// Runs the experiment, writing every artifact and `manifest.json` under
/// `spec.out_dir`. On failure the artifacts written so far are kept and the
/// manifest names the failing stage.
pub fn run_experiment(spec: &ExperimentSpec) -> std::result::Result<Outcome, StageError> {
    let setup = |error| StageError {
        stage: Stage::Setup,
        error,
    };
    spec.validate().map_err(setup)?;
    let spec = spec.clone().seeded();
    fs::create_dir_all(&spec.out_dir).map_err(|e| setup(e.into()))?;
    let mut runner = Runner {
        spec: &spec,
        out: spec.out_dir.clone(),
        stage: Stage::Setup,
        manifest: Manifest::new(&spec),
    };
    let result = match spec.precision {
        Precision::F32 => runner.run::<f32>(),
        Precision::F64 => runner.run::<f64>(),
    };
    let mut manifest = runner.manifest.clone();
    let artifacts = list_artifacts(&runner.out);
    match result {
        Ok(mut outcome) => {
            manifest.status = "ok".into();
            manifest.artifacts = artifacts.map_err(|e| StageError {
                stage: Stage::Report,
                error: e,
            })?;
            manifest.save(&runner.out.join("manifest.json")).map_err(|e| StageError {
                stage: Stage::Report,
                error: e,
            })?;
            outcome.manifest = manifest;
            Ok(outcome)
        }
        Err(error) => {
            manifest.status = "failed".into();
            manifest.failed_stage = Some(runner.stage.to_string());
            manifest.error = Some(error.to_string());
            manifest.artifacts = artifacts.unwrap_or_default();
            if let Err(e) = manifest.save(&runner.out.join("manifest.json")) {
                log::error!("could not write manifest: {e}");
            }
            Err(StageError {
                stage: runner.stage,
                error,
            })
        }
    }
}

/// Re-runs the experiment recorded in `manifest`, refusing when an input no
/// longer hashes to the recorded value.
pub fn rerun(manifest: &Manifest, out_dir: Option<&Path>) -> std::result::Result<Outcome, StageError> {
    let mut spec = manifest.spec.clone();
    if let Some(o) = out_dir {
        spec.out_dir = o.to_path_buf();
    }
    for (input, recorded) in spec.inputs.iter().zip(&manifest.inputs) {
        let current = load_input(input, false).map(|(_, h)| h.sha256);
        match current {
            Ok(h) if h == recorded.sha256 => {}
            Ok(_) => {
                return Err(StageError {
                    stage: Stage::Ingest,
                    error: Error::Ingest(format!("input for {} changed since the manifest was written", input.dataset)),
                })
            }
            Err(error) => {
                return Err(StageError {
                    stage: Stage::Ingest,
                    error,
                })
            }
        }
    }
    run_experiment(&spec)
}
