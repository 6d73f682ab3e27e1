//! Experiment recipes: one TOML file, optionally patched with `--set`.

use std::path::{Path, PathBuf};

use hierlog::evolve::EvolutionConfig;
use hierlog::ingest::Dataset;
use hierlog::mixer::{MixSpec, SplitSpec};
use hierlog::model::ModelConfig;
use hierlog::synth::SynthConfig;
use hierlog::trainer::TrainConfig;
use hierlog::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable naming the root that relative input paths resolve
/// against.
pub const DATA_ENV: &str = "HIERLOG_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SingleProject,
    MultiProject,
    Robustness,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Where one dataset's sequences come from. Exactly one of `path`,
/// `records` and `synth` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub dataset: Dataset,
    /// Raw corpus file or directory, parsed by the dataset's ingester.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Pre-ingested JSONL records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub strip_headers: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub precision: Precision,
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub mix: MixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionConfig>,
}

/// Sets `key` (dotted path) in `table` to `value`, parsed as a TOML value
/// when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().unwrap();
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentSpec {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let noise_given = table
            .get("evolution")
            .and_then(|e| e.as_table())
            .is_some_and(|e| e.contains_key("noise_ratio"));
        let spec: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if spec.kind == ExperimentKind::Robustness && !noise_given {
            return Err(Error::Config("robustness experiments need evolution.noise_ratio".into()));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text, overrides)?;
        spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.inputs.is_empty() {
            return fail("experiment has no inputs".into());
        }
        for (i, input) in self.inputs.iter().enumerate() {
            let sources = [input.path.is_some(), input.records.is_some(), input.synth.is_some()];
            if sources.iter().filter(|&&s| s).count() != 1 {
                return fail(format!("input {i} must set exactly one of path, records, synth"));
            }
            if self.inputs[..i].iter().any(|o| o.dataset == input.dataset) {
                return fail(format!("dataset {} listed twice", input.dataset));
            }
        }
        match self.kind {
            ExperimentKind::SingleProject if self.inputs.len() != 1 => {
                return fail("single-project experiments take exactly one input".into());
            }
            ExperimentKind::Robustness if self.evolution.is_none() => {
                return fail("robustness experiments need an [evolution] section".into());
            }
            _ => {}
        }
        self.model.validate()?;
        self.train.validate()?;
        self.mix.validate()?;
        if let Some(e) = &self.evolution {
            e.validate()?;
        }
        Ok(())
    }

    /// Anchors relative input paths at `data_root`, then `$HIERLOG_DATA`,
    /// then `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let root = self
            .data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .unwrap_or_else(|| base.to_path_buf());
        for input in &mut self.inputs {
            for p in [&mut input.path, &mut input.labels, &mut input.records].into_iter().flatten() {
                if p.is_relative() {
                    *p = root.join(&*p);
                }
            }
        }
    }

    /// Whether training runs on one dataset (possibly with inverted labels)
    /// rather than on a mixture.
    pub fn single_dataset(&self) -> bool {
        self.inputs.len() == 1
    }

    /// Copies the global seed into every stage that draws random numbers.
    pub fn seeded(mut self) -> Self {
        self.train.seed = self.seed;
        self.split.seed = self.seed;
        if let Some(e) = &mut self.evolution {
            e.seed = self.seed;
        }
        self
    }
}
