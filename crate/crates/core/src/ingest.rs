//! Raw corpora → labeled event sequences.
//!
//! Each parser keeps log lines verbatim (no template mining, no
//! normalisation) and emits records sorted by `(dataset, sequence_id)`.
//! Window offsets are zero-padded inside `sequence_id`, so that order is also
//! offset order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Hdfs,
    Openstack,
    Hadoop,
    Bgl,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [Dataset::Hdfs, Dataset::Openstack, Dataset::Hadoop, Dataset::Bgl];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Hdfs => "hdfs",
            Dataset::Openstack => "openstack",
            Dataset::Hadoop => "hadoop",
            Dataset::Bgl => "bgl",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hdfs" => Ok(Dataset::Hdfs),
            "openstack" => Ok(Dataset::Openstack),
            "hadoop" => Ok(Dataset::Hadoop),
            "bgl" => Ok(Dataset::Bgl),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

/// One labeled log sequence. Field order matches the JSON-lines layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub dataset: Dataset,
    pub sequence_id: String,
    /// 0 = normal, 1 = anomaly.
    pub label: u8,
    pub events: Vec<String>,
}

impl SequenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::Ingest(format!("{}/{} has no events", self.dataset, self.sequence_id)));
        }
        if self.label > 1 {
            return Err(Error::Ingest(format!(
                "{}/{} has non-binary label {}",
                self.dataset, self.sequence_id, self.label
            )));
        }
        Ok(())
    }

    /// Identity used for leakage checks.
    pub fn key(&self) -> (Dataset, &str) {
        (self.dataset, &self.sequence_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_size: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub const HADOOP: WindowSpec = WindowSpec {
        window_size: 300,
        stride: 30,
    };
    pub const BGL: WindowSpec = WindowSpec {
        window_size: 300,
        stride: 50,
    };

    pub fn new(window_size: usize, stride: usize) -> Result<Self> {
        if stride == 0 || stride > window_size {
            return Err(Error::Config(format!(
                "window stride must be in 1..={window_size}, got {stride}"
            )));
        }
        Ok(Self { window_size, stride })
    }

    /// Start offsets of the windows over `n` events: every stride, plus a
    /// final window aligned to the tail when the strides leave it uncovered.
    pub fn offsets(&self, n: usize) -> Vec<usize> {
        if n <= self.window_size {
            return vec![0];
        }
        let last = n - self.window_size;
        let mut offsets: Vec<usize> = (0..=last).step_by(self.stride).collect();
        if *offsets.last().unwrap() != last {
            offsets.push(last);
        }
        offsets
    }
}

/// Slices `events` into windows per [`WindowSpec::offsets`].
pub fn sliding_window<'a, T>(events: &'a [T], spec: &WindowSpec) -> Vec<(usize, &'a [T])> {
    spec.offsets(events.len())
        .into_iter()
        .map(|o| (o, &events[o..(o + spec.window_size).min(events.len())]))
        .collect()
}

pub fn invert_labels(records: &mut [SequenceRecord]) {
    for r in records {
        r.label = 1 - r.label;
    }
}

/// Parser output plus the anomalies it tolerated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parsed {
    pub records: Vec<SequenceRecord>,
    /// Groups dropped because no label was known for them.
    pub skipped: usize,
    /// Lines kept despite being malformed.
    pub warnings: usize,
}

impl Parsed {
    pub fn counts(&self) -> (usize, usize) {
        label_counts(&self.records)
    }
}

/// `(anomalies, normals)`.
pub fn label_counts(records: &[SequenceRecord]) -> (usize, usize) {
    let anomalies = records.iter().filter(|r| r.label == 1).count();
    (anomalies, records.len() - anomalies)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Drop the leading header fields (timestamp, level, component, ...) of
    /// each line and keep only the message.
    pub strip_headers: bool,
}

/// Whitespace-separated header fields preceding the message.
fn header_fields(dataset: Dataset) -> usize {
    match dataset {
        // date time pid level component:
        Dataset::Hdfs => 5,
        // file date time pid level component
        Dataset::Openstack => 6,
        // date time level [thread] component:
        Dataset::Hadoop => 5,
        // epoch date node time node type component level (tag already removed)
        Dataset::Bgl => 8,
    }
}

fn strip_fields(line: &str, n: usize) -> &str {
    let mut rest = line;
    for _ in 0..n {
        let trimmed = rest.trim_start();
        match trimmed.find(char::is_whitespace) {
            Some(i) => rest = &trimmed[i..],
            None => return line,
        }
    }
    rest.trim_start()
}

fn prepare(line: String, dataset: Dataset, opts: IngestOptions) -> String {
    if opts.strip_headers {
        strip_fields(&line, header_fields(dataset)).to_string()
    } else {
        line
    }
}

/// Reads lines as lossy UTF-8 without their terminators.
fn lines<R: BufRead>(mut r: R) -> impl Iterator<Item = Result<String>> {
    let mut buf = Vec::new();
    std::iter::from_fn(move || {
        buf.clear();
        match r.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                while matches!(buf.last(), Some(b'\n' | b'\r')) {
                    buf.pop();
                }
                Some(Ok(String::from_utf8_lossy(&buf).into_owned()))
            }
            Err(e) => Some(Err(e.into())),
        }
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Ingest(format!("cannot open {}: {e}", path.display())))
}

fn sort_records(records: &mut [SequenceRecord]) {
    records.sort_by(|a, b| (a.dataset, &a.sequence_id).cmp(&(b.dataset, &b.sequence_id)));
}

fn block_regex() -> Regex {
    Regex::new(r"blk_-?\d+").unwrap()
}

/// Groups HDFS lines by every block id they mention; labels come from the
/// `BlockId,Label` CSV (`Normal` / `Anomaly`).
pub fn parse_hdfs<L: BufRead, B: BufRead>(log: L, labels: B, opts: IngestOptions) -> Result<Parsed> {
    let mut known: HashMap<String, u8> = HashMap::new();
    for line in lines(labels) {
        let line = line?;
        let mut parts = line.split(',');
        let (Some(id), Some(label)) = (parts.next(), parts.next()) else {
            continue;
        };
        let label = match label.trim() {
            "Anomaly" => 1,
            "Normal" => 0,
            "Label" => continue,
            other => return Err(Error::Ingest(format!("unknown HDFS label {other:?} for {id}"))),
        };
        known.insert(id.trim().to_string(), label);
    }

    let re = block_regex();
    let mut groups: HashMap<String, Vec<String>> = HashMap::new();
    for line in lines(log) {
        let line = line?;
        let mut seen: Vec<&str> = Vec::new();
        for m in re.find_iter(&line) {
            if !seen.contains(&m.as_str()) {
                seen.push(m.as_str());
            }
        }
        if seen.is_empty() {
            continue;
        }
        let ids: Vec<String> = seen.into_iter().map(str::to_string).collect();
        let event = prepare(line, Dataset::Hdfs, opts);
        for id in ids {
            groups.entry(id).or_default().push(event.clone());
        }
    }

    let mut out = Parsed::default();
    for (id, events) in groups {
        match known.get(&id) {
            Some(&label) => out.records.push(SequenceRecord {
                dataset: Dataset::Hdfs,
                sequence_id: id,
                label,
                events,
            }),
            None => {
                log::warn!("HDFS block {id} has no label; skipped");
                out.skipped += 1;
            }
        }
    }
    sort_records(&mut out.records);
    Ok(out)
}

const UUID: &str = r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}";

/// Groups OpenStack lines by the `[instance: <uuid>]` they mention. An
/// instance is anomalous iff its UUID appears in `abnormal`.
pub fn parse_openstack<R: BufRead, A: BufRead>(logs: Vec<R>, abnormal: A, opts: IngestOptions) -> Result<Parsed> {
    let any_uuid = Regex::new(UUID).unwrap();
    let mut bad: HashSet<String> = HashSet::new();
    for line in lines(abnormal) {
        let line = line?;
        for m in any_uuid.find_iter(&line) {
            bad.insert(m.as_str().to_string());
        }
    }
    let instance = Regex::new(&format!(r"\[instance: ({UUID})\]")).unwrap();
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for log in logs {
        for line in lines(log) {
            let line = line?;
            let Some(id) = instance.captures(&line).map(|c| c[1].to_string()) else {
                continue;
            };
            groups.entry(id).or_default().push(prepare(line, Dataset::Openstack, opts));
        }
    }
    let records = groups
        .into_iter()
        .map(|(id, events)| SequenceRecord {
            dataset: Dataset::Openstack,
            label: u8::from(bad.contains(&id)),
            sequence_id: id,
            events,
        })
        .collect();
    Ok(Parsed {
        records,
        ..Parsed::default()
    })
}

/// Anomaly classes of the Hadoop corpus; the three failure kinds share label 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HadoopRun {
    Normal,
    MachineDown,
    NetworkDisconnection,
    DiskFull,
}

impl HadoopRun {
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .trim()
            .trim_end_matches(':')
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
            .collect();
        match norm.as_str() {
            "normal" => Some(Self::Normal),
            "machine_down" => Some(Self::MachineDown),
            "network_disconnection" => Some(Self::NetworkDisconnection),
            "disk_full" => Some(Self::DiskFull),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        u8::from(self != Self::Normal)
    }
}

/// Reads the `abnormal_label.txt` layout: `Header:` lines naming a run type,
/// followed by `+ application_...` lines; `###` lines are comments.
pub fn parse_hadoop_labels<R: BufRead>(r: R) -> Result<HashMap<String, HadoopRun>> {
    let mut out = HashMap::new();
    let mut current = None;
    for line in lines(r) {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(app) = t.strip_prefix('+') {
            let kind = current.ok_or_else(|| Error::Ingest(format!("application {app} before any run type")))?;
            out.insert(app.trim().to_string(), kind);
        } else if t.ends_with(':') {
            current = Some(HadoopRun::parse(t).ok_or_else(|| Error::Ingest(format!("unknown Hadoop run type {t:?}")))?);
        } else {
            return Err(Error::Ingest(format!("unrecognised Hadoop label line {t:?}")));
        }
    }
    Ok(out)
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

fn rel_id(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// One sequence per log file, windowed by [`WindowSpec::HADOOP`].
///
/// With `labels`, top-level `application_*` directories are typed through
/// the label file; without it, top-level directories must themselves be run
/// types (`normal`, `machine_down`, `network_disconnection`, `disk_full`).
pub fn parse_hadoop(root: &Path, labels: Option<&Path>, opts: IngestOptions) -> Result<Parsed> {
    let table = labels.map(|p| parse_hadoop_labels(open(p)?)).transpose()?;
    let mut out = Parsed::default();
    let mut tops: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::Ingest(format!("cannot read {}: {e}", root.display())))?
        .collect::<std::io::Result<_>>()?;
    tops.sort_by_key(|e| e.file_name());
    for top in tops {
        let path = top.path();
        if !path.is_dir() {
            continue;
        }
        let name = top.file_name().to_string_lossy().into_owned();
        let kind = match &table {
            Some(t) => match t.get(&name) {
                Some(k) => *k,
                None => {
                    log::warn!("Hadoop directory {name} has no label; skipped");
                    out.skipped += 1;
                    continue;
                }
            },
            None => HadoopRun::parse(&name)
                .ok_or_else(|| Error::Ingest(format!("unknown Hadoop anomaly-type directory {name:?}")))?,
        };
        for file in files_under(&path)? {
            let events: Vec<String> = lines(open(&file)?)
                .map(|l| l.map(|l| prepare(l, Dataset::Hadoop, opts)))
                .collect::<Result<_>>()?;
            if events.is_empty() {
                out.warnings += 1;
                continue;
            }
            let id = rel_id(root, &file);
            for (offset, window) in sliding_window(&events, &WindowSpec::HADOOP) {
                out.records.push(SequenceRecord {
                    dataset: Dataset::Hadoop,
                    sequence_id: format!("{id}#{offset:08}"),
                    label: kind.label(),
                    events: window.to_vec(),
                });
            }
        }
    }
    sort_records(&mut out.records);
    Ok(out)
}

/// Classifies a BGL line by its first field: `-` is a non-alert line, an
/// upper-case tag is an alert. Returns `(alert, malformed, message)` where
/// the message no longer carries the tag.
fn bgl_line(line: &str) -> (bool, bool, &str) {
    let (tag, rest) = match line.split_once(char::is_whitespace) {
        Some((t, r)) => (t, r.trim_start()),
        None => (line, ""),
    };
    if tag == "-" {
        return (false, false, rest);
    }
    let is_tag = !tag.is_empty()
        && tag.starts_with(|c: char| c.is_ascii_uppercase())
        && tag.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
    if is_tag {
        (true, false, rest)
    } else {
        (false, true, line)
    }
}

/// Windows the chronological BGL stream by [`WindowSpec::BGL`]; a window
/// is anomalous iff it contains an alert line.
pub fn parse_bgl<R: BufRead>(log: R, opts: IngestOptions) -> Result<Parsed> {
    parse_bgl_with(log, WindowSpec::BGL, opts)
}

pub fn parse_bgl_with<R: BufRead>(log: R, spec: WindowSpec, opts: IngestOptions) -> Result<Parsed> {
    let mut out = Parsed::default();
    let mut events = Vec::new();
    let mut alerts = Vec::new();
    for line in lines(log) {
        let line = line?;
        let (alert, malformed, msg) = bgl_line(&line);
        if malformed {
            out.warnings += 1;
        }
        alerts.push(alert);
        events.push(prepare(msg.to_string(), Dataset::Bgl, opts));
    }
    if events.is_empty() {
        return Ok(out);
    }
    for (offset, window) in sliding_window(&events, &spec) {
        let label = u8::from(alerts[offset..offset + window.len()].iter().any(|&a| a));
        out.records.push(SequenceRecord {
            dataset: Dataset::Bgl,
            sequence_id: format!("bgl#{offset:010}"),
            label,
            events: window.to_vec(),
        });
    }
    Ok(out)
}

/// Resolves on-disk inputs for `dataset` and runs its parser.
///
/// `input` is the log file or corpus directory; `labels` the label file
/// (required for HDFS and OpenStack when it cannot be found beside the logs).
pub fn ingest_dataset(dataset: Dataset, input: &Path, labels: Option<&Path>, opts: IngestOptions) -> Result<Parsed> {
    let find = |names: &[&str]| -> Option<PathBuf> {
        names.iter().map(|n| input.join(n)).find(|p| p.exists())
    };
    let need = |what: &str, p: Option<PathBuf>| -> Result<PathBuf> {
        p.ok_or_else(|| Error::Ingest(format!("{what} not found for {dataset} under {}", input.display())))
    };
    match dataset {
        Dataset::Hdfs => {
            let log = if input.is_dir() { need("HDFS.log", find(&["HDFS.log"]))? } else { input.to_path_buf() };
            let lab = match labels {
                Some(p) => p.to_path_buf(),
                None => need(
                    "anomaly_label.csv",
                    log.parent().and_then(|d| {
                        ["anomaly_label.csv", "preprocessed/anomaly_label.csv"]
                            .iter()
                            .map(|n| d.join(n))
                            .find(|p| p.exists())
                    }),
                )?,
            };
            parse_hdfs(open(&log)?, open(&lab)?, opts)
        }
        Dataset::Openstack => {
            let logs: Vec<PathBuf> = if input.is_dir() {
                files_under(input)?
                    .into_iter()
                    .filter(|p| p.extension().is_some_and(|e| e == "log"))
                    .collect()
            } else {
                vec![input.to_path_buf()]
            };
            let lab = match labels {
                Some(p) => p.to_path_buf(),
                None => need("anomaly_labels.txt", find(&["anomaly_labels.txt"]))?,
            };
            let readers = logs.iter().map(|p| open(p)).collect::<Result<Vec<_>>>()?;
            parse_openstack(readers, open(&lab)?, opts)
        }
        Dataset::Hadoop => {
            let lab = labels.map(Path::to_path_buf).or_else(|| find(&["abnormal_label.txt"]));
            parse_hadoop(input, lab.as_deref(), opts)
        }
        Dataset::Bgl => {
            let log = if input.is_dir() { need("BGL.log", find(&["BGL.log"]))? } else { input.to_path_buf() };
            parse_bgl(open(&log)?, opts)
        }
    }
}

pub fn write_records<W: Write>(w: W, records: &[SequenceRecord]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<SequenceRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Ingest(format!("record line {}: {e}", n + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_records(path: &Path, records: &[SequenceRecord]) -> Result<()> {
    write_records(File::create(path)?, records)
}

pub fn load_records(path: &Path) -> Result<Vec<SequenceRecord>> {
    read_records(open(path)?)
}
