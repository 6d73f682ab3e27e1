//! Loghub-format sample corpora and the groupings a reader would expect from
//! them, worked out by plain token scans instead of the library's parsers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use hierlog::ingest::{Dataset, SequenceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(HDFS.log, anomaly_label.csv)` contents.
pub fn hdfs_sample(seed: u64, lines: usize, blocks: usize) -> (String, String) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..blocks)
        .map(|i| format!("blk_{}{}", if i % 3 == 0 { "-" } else { "" }, r.gen_range(1u64 << 50..1u64 << 62)))
        .collect();
    let mut log = String::new();
    for i in 0..lines {
        let a = &ids[r.gen_range(0..blocks)];
        let line = match r.gen_range(0..4) {
            0 => format!("081109 2036{:02} 148 INFO dfs.DataNode$PacketResponder: PacketResponder 1 for block {a} terminating", i % 60),
            1 => format!("081109 2036{:02} 35 INFO dfs.FSNamesystem: BLOCK* NameSystem.allocateBlock: /mnt/hadoop/job_200811092030_0001/job.jar. {a}", i % 60),
            2 => {
                let b = &ids[r.gen_range(0..blocks)];
                format!("081109 2036{:02} 19 INFO dfs.FSNamesystem: BLOCK* ask 10.250.14.224:50010 to replicate {a} to datanode(s) {b}", i % 60)
            }
            _ => format!("081109 2036{:02} 29 INFO dfs.DataNode: 10.251.90.64:50010 Served block {a} to /10.251.90.64", i % 60),
        };
        log.push_str(&line);
        log.push('\n');
    }
    log.push_str("081109 203700 1 INFO dfs.DataNode: a line without any block\n");
    let mut labels = String::from("BlockId,Label\n");
    for (i, id) in ids.iter().enumerate() {
        labels.push_str(&format!("{id},{}\n", if i % 4 == 1 { "Anomaly" } else { "Normal" }));
    }
    (log, labels)
}

/// Block ids of a line by whitespace tokenisation and prefix test.
pub fn naive_blocks(line: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in line.split_whitespace() {
        let tok = tok.trim_end_matches(|c: char| !c.is_ascii_digit());
        if let Some(rest) = tok.strip_prefix("blk_") {
            let digits = rest.strip_prefix('-').unwrap_or(rest);
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && !out.iter().any(|o| o == tok) {
                out.push(tok.to_string());
            }
        }
    }
    out
}

/// Records for an HDFS sample, sorted by block id.
pub fn hdfs_expected(log: &str, labels: &str) -> Vec<SequenceRecord> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in log.lines() {
        for id in naive_blocks(line) {
            groups.entry(id).or_default().push(line.to_string());
        }
    }
    let label_of: BTreeMap<&str, u8> = labels
        .lines()
        .skip(1)
        .map(|l| {
            let (id, lab) = l.split_once(',').unwrap();
            (id, u8::from(lab == "Anomaly"))
        })
        .collect();
    groups
        .into_iter()
        .map(|(id, events)| SequenceRecord {
            dataset: Dataset::Hdfs,
            label: label_of[id.as_str()],
            sequence_id: id,
            events,
        })
        .collect()
}

pub const UUIDS: [&str; 4] = [
    "b9000564-fe1a-409b-b8cc-1e88b294cd1d",
    "a208479c-c0e3-4730-a5a0-d75e8afd0252",
    "17288ea8-cbf4-4f0e-94fe-853fd2735f29",
    "3edec1e4-9678-4a3a-a21b-a145a4ee5e61",
];

/// Writes two nova logs and `anomaly_labels.txt` under `root`. Returns the
/// event count per instance and the abnormal instances.
pub fn openstack_corpus(root: &Path, seed: u64) -> (BTreeMap<String, usize>, BTreeSet<String>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut expect: BTreeMap<String, usize> = BTreeMap::new();
    for (f, name) in ["openstack_normal1.log", "openstack_abnormal.log"].iter().enumerate() {
        let mut text = String::new();
        for i in 0..300 {
            let u = UUIDS[r.gen_range(0..4)];
            if i % 7 == 0 {
                text.push_str(&format!(
                    "nova-api.log.1.2017-05-16_13:53:08 2017-05-16 00:00:{:02}.008 25746 INFO nova.osapi_compute.wsgi.server [req-38101a0b-2096-447d-96ea-a692162415ae 113d3a99c3da401fbd62cc2caa5b96d2 54fadb412c4e40cdbaed9335e4c35a9e - - -] 10.11.10.1 \"GET /v2/54fadb412c4e40cdbaed9335e4c35a9e/servers/detail HTTP/1.1\" status: 200 len: 1893 time: 0.2477829\n",
                    i % 60
                ));
                continue;
            }
            text.push_str(&format!(
                "nova-compute.log.{f}.2017-05-16_13:55:31 2017-05-16 00:00:{:02}.500 2931 INFO nova.compute.manager [req-3ea4052c-895d-4b64-9e2d-04d64c4d94ab - - - - -] [instance: {u}] VM Started (Lifecycle Event)\n",
                i % 60
            ));
            *expect.entry(u.to_string()).or_default() += 1;
        }
        fs::write(root.join(name), text).unwrap();
    }
    fs::write(root.join("anomaly_labels.txt"), format!("Abnormal instances:\n{}\n{}\n", UUIDS[1], UUIDS[3])).unwrap();
    (expect, BTreeSet::from([UUIDS[1].to_string(), UUIDS[3].to_string()]))
}

/// Writes three applications' container logs and `abnormal_label.txt`.
/// Returns `app/file -> (lines, label)`.
pub fn hadoop_corpus(root: &Path) -> BTreeMap<String, (usize, u8)> {
    let apps = [
        ("application_1445087491445_0005", 0u8, vec![12, 650]),
        ("application_1445087491445_0001", 1, vec![301]),
        ("application_1445144423722_0020", 1, vec![30, 299, 330]),
    ];
    let mut lines_per_file = BTreeMap::new();
    for (app, label, files) in &apps {
        for (i, &n) in files.iter().enumerate() {
            let d = root.join(app);
            fs::create_dir_all(&d).unwrap();
            let name = format!("container_{i:02}.log");
            let body: String = (0..n)
                .map(|k| format!("2015-10-18 18:01:{:02},978 INFO [main] org.apache.hadoop.mapreduce.v2.app.MRAppMaster: step {k}\n", k % 60))
                .collect();
            fs::write(d.join(&name), body).unwrap();
            lines_per_file.insert(format!("{app}/{name}"), (n, *label));
        }
    }
    fs::write(
        root.join("abnormal_label.txt"),
        "### WordCount\nNormal:\n+ application_1445087491445_0005\nMachine down:\n+ application_1445087491445_0001\n\
         ### PageRank\nNetwork disconnection:\n+ application_1445144423722_0020\n",
    )
    .unwrap();
    lines_per_file
}

/// Number of windows of width `w`, stride `s` over `n` events, counting the
/// final tail-aligned window.
pub fn expected_windows(n: usize, w: usize, s: usize) -> usize {
    if n <= w {
        1
    } else {
        (n - w) / s + 1 + usize::from(!(n - w).is_multiple_of(s))
    }
}

/// `file -> (window count, labels seen)` from Hadoop record ids `file#offset`.
pub fn hadoop_windows(records: &[SequenceRecord]) -> BTreeMap<String, (usize, BTreeSet<u8>)> {
    let mut per_file: BTreeMap<String, (usize, BTreeSet<u8>)> = BTreeMap::new();
    for r in records {
        let (file, _) = r.sequence_id.split_once('#').unwrap();
        let e = per_file.entry(file.to_string()).or_default();
        e.0 += 1;
        e.1.insert(r.label);
    }
    per_file
}

/// A BGL stream of `n` lines with alert tags at `alerts`.
pub fn bgl_stream(n: usize, alerts: &[usize]) -> String {
    let mut text = String::new();
    for i in 0..n {
        let tag = if alerts.contains(&i) { "KERNDTLB" } else { "-" };
        text.push_str(&format!(
            "{tag} 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.675872 R02-M1-N0-C:J12-U11 RAS KERNEL INFO line {i}\n"
        ));
    }
    text
}

/// `(id, label)` per window for [`bgl_stream`]: offsets step by `s` until
/// the last full window, then one tail-aligned window if events remain.
pub fn bgl_expected(n: usize, alerts: &[usize], w: usize, s: usize) -> Vec<(String, u8)> {
    let mut offsets = Vec::new();
    let mut o = 0;
    while o + w < n {
        offsets.push(o);
        o += s;
    }
    offsets.push(n.saturating_sub(w));
    offsets.dedup();
    offsets
        .into_iter()
        .map(|o| (format!("bgl#{o:010}"), u8::from(alerts.iter().any(|&a| a >= o && a < o + w))))
        .collect()
}
