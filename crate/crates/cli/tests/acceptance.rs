//! Acceptance checks, one PASS / FAIL / SKIP line each.
//!
//! Runs without the libtest harness so the lines come out in order and
//! unbuffered. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p hierlog-cli --test acceptance -- 3 4`.
//!
//! Corpus-backed checks look for loghub corpora under `$HIERLOG_DATA`
//! (`HDFS/`, `OpenStack/`, `Hadoop/`, `BGL/`); the full multi-project run
//! additionally needs `HIERLOG_STRETCH=1`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Cursor;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::loghub;
use hierlog::evolve::{evolve_corpus, EvolutionConfig};
use hierlog::ingest::{
    ingest_dataset, load_records, parse_bgl_with, parse_hdfs, save_records, Dataset, IngestOptions, SequenceRecord,
    WindowSpec,
};
use hierlog::mixer::{compose_multi_project, split, take_count, MixSpec, SplitSpec};
use hierlog::model::{EncodedSequence, HierCnn, Layout, ModelConfig};
use hierlog::synth::{generate, SynthConfig};
use hierlog::tensor::{grad_check, Graph, Tensor, Var};
use hierlog::trainer::{evaluate, read_history_csv, train, TestSet, TrainConfig};
use hierlog_cli::{rerun, run_experiment, ExperimentSpec, Outcome};
use rand::seq::SliceRandom;
use rand::Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn data_root() -> Option<PathBuf> {
    std::env::var_os("HIERLOG_DATA").map(PathBuf::from).filter(|p| p.is_dir())
}

fn corpus_dir(d: Dataset) -> Option<PathBuf> {
    let name = match d {
        Dataset::Hdfs => "HDFS",
        Dataset::Openstack => "OpenStack",
        Dataset::Hadoop => "Hadoop",
        Dataset::Bgl => "BGL",
    };
    data_root().map(|r| r.join(name)).filter(|p| p.exists())
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random_events(r: &mut impl Rng, max_events: usize, max_chars: usize) -> Vec<String> {
    let n = r.gen_range(1..=max_events);
    (0..n)
        .map(|_| {
            let len = r.gen_range(0..=max_chars);
            (0..len).map(|_| r.gen_range(32u8..127) as char).collect()
        })
        .collect()
}

fn encode(config: &ModelConfig, events: Vec<String>) -> EncodedSequence {
    let rec = SequenceRecord {
        dataset: Dataset::Hdfs,
        sequence_id: "s".into(),
        label: 0,
        events,
    };
    EncodedSequence::encode(&rec, config).unwrap()
}

/// Scalar loss `Σ proj · op(inputs)` so every output coordinate matters.
fn check_op<F>(inputs: Vec<Tensor<f64>>, seed: u64, op: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> hierlog::Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    let n = {
        let out = op(&mut g, &vars).unwrap();
        g.value(out).len()
    };
    let proj = common::random_vec(&mut common::rng(seed ^ 0xABCD), n);
    let rep = grad_check(
        |g, v| {
            let y = op(g, v)?;
            g.weighted_sum(y, &proj)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(rep.checked > 0);
    rep.max_relative_error
}

fn gradients() -> Verdict {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let mut model_worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = common::rng(seed);
        let mut rv = |n| common::random_vec(&mut r, n);
        let (m, k, n) = (1 + seed as usize % 4, 2 + seed as usize % 3, 1 + seed as usize % 5);
        note("matmul", check_op(vec![t(&[m, k], &rv(m * k)), t(&[k, n], &rv(k * n))], seed, |g, v| g.matmul(v[0], v[1])));
        note("add_bias", check_op(vec![t(&[m, n], &rv(m * n)), t(&[n], &rv(n))], seed, |g, v| g.add_bias(v[0], v[1])));
        note("relu", check_op(vec![t(&[m, k], &rv(m * k))], seed, |g, v| Ok(g.relu(v[0]))));
        note("sigmoid", check_op(vec![t(&[m, k], &rv(m * k))], seed, |g, v| Ok(g.sigmoid(v[0]))));
        note("reshape", check_op(vec![t(&[m, k], &rv(m * k))], seed, |g, v| g.reshape(v[0], &[k * m])));

        let (slices, len, c_in, c_out, ks) = (1 + seed as usize % 3, 3 + seed as usize % 6, 1 + seed as usize % 3, 2, [1, 3, 5][seed as usize % 3]);
        let lengths: Vec<usize> = (0..slices).map(|i| 1 + (i * 7 + seed as usize) % len).collect();
        let mut r2 = common::rng(seed + 100);
        let x = common::random_vec(&mut r2, slices * len * c_in);
        let w = common::random_vec(&mut r2, ks * c_in * c_out);
        let b = common::random_vec(&mut r2, c_out);
        let ls = lengths.clone();
        note(
            "conv1d",
            check_op(vec![t(&[slices, len, c_in], &x), t(&[ks, c_in, c_out], &w), t(&[c_out], &b)], seed, move |g, v| {
                g.conv1d(v[0], v[1], v[2], Some(&ls))
            }),
        );
        let ls = lengths.clone();
        note("masked_max", check_op(vec![t(&[slices, len, c_in], &x)], seed, move |g, v| g.masked_max(v[0], 1, &ls)));

        // Row 0 is the frozen padding row and never receives gradient.
        let vocab = 6;
        let idx: Vec<usize> = (0..2 * len).map(|_| r2.gen_range(1..vocab)).collect();
        let table = common::random_vec(&mut r2, vocab * 3);
        note("embedding", check_op(vec![t(&[vocab, 3], &table)], seed, move |g, v| g.embedding(v[0], &idx, &[2, len])));

        let mut rows: Vec<usize> = (0..len + 2).collect();
        rows.shuffle(&mut r2);
        rows.truncate(len);
        let src = common::random_vec(&mut r2, len * 2);
        note("scatter_rows", check_op(vec![t(&[len, 2], &src)], seed, move |g, v| g.scatter_rows(v[0], &rows, len + 2)));

        let p: Vec<f64> = (0..len).map(|_| r2.gen_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..len).map(|_| r2.gen_range(0..2) as f64).collect();
        let pw = r2.gen_range(0.5..10.0);
        note("weighted_bce", check_op(vec![t(&[len], &p)], seed, move |g, v| g.weighted_bce(v[0], &y, pw)));

        model_worst = model_worst.max(model_grad_error(seed));
    }
    let ops_worst = worst.values().copied().fold(0.0, f64::max);
    let detail = format!(
        "{} ops over 20 seeds, worst op rel err {ops_worst:.2e} ({}), full tiny model worst {model_worst:.2e}",
        worst.len(),
        worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| *k).unwrap()
    );
    verdict(ops_worst <= 1e-4 && model_worst <= 1e-3, detail)
}

fn model_grad_error(seed: u64) -> f64 {
    let mut r = common::rng(seed + 1000);
    let model = HierCnn::<f64>::new(ModelConfig::tiny(), seed).unwrap();
    let seqs: Vec<EncodedSequence> = (0..3).map(|_| encode(model.config(), random_events(&mut r, 5, 8))).collect();
    let labels = [1.0, 0.0, 1.0];
    let inputs: Vec<Tensor<f64>> = model.named_parameters().into_iter().map(|(_, t)| t.clone()).collect();
    let rep = grad_check(
        |g, vars| {
            let refs: Vec<&EncodedSequence> = seqs.iter().collect();
            let p = model.forward_bound(g, &refs, vars, Layout::Packed)?;
            g.weighted_bce(p, &labels, 2.0)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    rep.max_relative_error
}

fn oracles() -> Verdict {
    let mut r = common::rng(2024);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for _ in 0..100 {
        let (m, k, n) = (r.gen_range(1..9), r.gen_range(1..9), r.gen_range(1..9));
        let a = common::random_vec(&mut r, m * k);
        let b = common::random_vec(&mut r, k * n);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(t(&[m, k], &a)), g.constant(t(&[k, n], &b)));
        let c = g.matmul(va, vb).unwrap();
        note("matmul", diff(g.value(c).data(), &common::matmul(&a, &b, m, k, n)));

        let (slices, len, c_in, c_out, ks) =
            (r.gen_range(1..4), r.gen_range(1..12), r.gen_range(1..5), r.gen_range(1..5), 2 * r.gen_range(0..3) + 1);
        let x = common::random_vec(&mut r, slices * len * c_in);
        let w = common::random_vec(&mut r, ks * c_in * c_out);
        let bias = common::random_vec(&mut r, c_out);
        let lengths: Vec<usize> = (0..slices).map(|_| r.gen_range(1..=len)).collect();
        let mut g = Graph::new();
        let vx = g.constant(t(&[slices, len, c_in], &x));
        let vw = g.constant(t(&[ks, c_in, c_out], &w));
        let vbias = g.constant(t(&[c_out], &bias));
        let y = g.conv1d(vx, vw, vbias, Some(&lengths)).unwrap();
        let mx = g.masked_max(vx, 1, &lengths).unwrap();
        for s in 0..slices {
            let want = common::conv1d(&x[s * len * c_in..(s + 1) * len * c_in], &w, &bias, len, lengths[s], c_in, c_out, ks);
            note("conv1d", diff(&g.value(y).data()[s * len * c_out..(s + 1) * len * c_out], &want));
            let want = common::column_max(&x[s * len * c_in..(s + 1) * len * c_in], c_in, lengths[s]);
            note("masked_max", diff(&g.value(mx).data()[s * c_in..(s + 1) * c_in], &want));
        }

        let nb = r.gen_range(1..20);
        let p: Vec<f64> = (0..nb).map(|_| r.gen_range(0.0..1.0)).collect();
        let labels: Vec<f64> = (0..nb).map(|_| r.gen_range(0..2) as f64).collect();
        let pw = r.gen_range(0.1..20.0);
        let mut g = Graph::new();
        let v = g.constant(t(&[nb], &p));
        let loss = g.weighted_bce(v, &labels, pw).unwrap();
        note("loss", (g.value(loss).data()[0] - common::weighted_bce(&p, &labels, pw)).abs());
    }
    let config = ModelConfig {
        max_events: 6,
        max_chars: 12,
        char_embedding: 4,
        event_widths: vec![5, 4],
        event_kernels: vec![3, 3],
        sequence_widths: vec![4],
        sequence_kernels: vec![3],
        dense_widths: vec![4, 1],
        ..ModelConfig::default()
    };
    for case in 0..100 {
        let model = HierCnn::<f64>::new(config.clone(), case).unwrap();
        let seqs: Vec<EncodedSequence> = (0..r.gen_range(1..5)).map(|_| encode(&config, random_events(&mut r, 9, 16))).collect();
        let refs: Vec<&EncodedSequence> = seqs.iter().collect();
        for layout in [Layout::Packed, Layout::Padded] {
            let mut g = Graph::new();
            let fwd = model.forward_with(&mut g, &refs, false, layout).unwrap();
            let want: Vec<f64> = seqs.iter().map(|s| common::model_forward(&model, s)).collect();
            note("forward", diff(g.value(fwd.probs).data(), &want));
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(max <= 1e-12, format!("100 random shapes each, max abs diff: {detail}"))
}

fn memorization() -> Verdict {
    let mut hits = Vec::new();
    for seed in 0..5u64 {
        let recs = generate(&SynthConfig {
            count: 32,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut model = HierCnn::<f32>::new(ModelConfig::small(), seed).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 200,
            seed,
            ..TrainConfig::default()
        };
        let tests = [TestSet {
            name: "train".into(),
            records: recs.clone(),
        }];
        let weight = hierlog::mixer::class_weight(&recs).unwrap();
        let out = train(&mut model, &recs, &cfg, weight, &tests, None).unwrap();
        let first = out.history.rows.iter().find(|r| r.metrics.accuracy() == 1.0).map(|r| r.epoch);
        hits.push(first);
    }
    let ok = hits.iter().filter(|h| h.is_some()).count();
    let shown: Vec<String> = hits.iter().map(|h| h.map_or("never".into(), |e| format!("epoch {e}"))).collect();
    verdict(ok >= 4, format!("{ok}/5 seeds reach 100% training accuracy ({})", shown.join(", ")))
}

fn separability_spec(out: &Path) -> ExperimentSpec {
    let text = format!(
        "kind = \"robustness\"\nout_dir = {:?}\nseed = 7\n[[inputs]]\ndataset = \"hdfs\"\nsynth = {{ count = 2000, seed = 7 }}\n\
         [train]\nepochs = 30\n[evolution]\nnoise_ratio = 0.0\n",
        out.display().to_string()
    );
    let mut spec = ExperimentSpec::from_toml(&text, &[]).unwrap();
    spec.model = ModelConfig::small();
    spec
}

fn separability(out: &Path) -> (Verdict, Option<Outcome>) {
    let outcome = match run_experiment(&separability_spec(out)) {
        Ok(o) => o,
        Err(e) => return (Fail(format!("experiment failed: {e}")), None),
    };
    let rows = read_history_csv(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    let last = rows.iter().max_by_key(|r| r.epoch).unwrap();
    let test_n = load_records(&out.join("splits/test.jsonl")).unwrap().len();
    let detail = format!(
        "2000 planted-token sequences, {test_n} held out, epoch {} F1 {:.4} (best {:.4} at epoch {})",
        last.epoch,
        last.f1,
        outcome.report.mean_f1(),
        outcome.best_epoch
    );
    (verdict(last.epoch <= 30 && last.f1 >= 0.99, detail), Some(outcome))
}

fn ingestion() -> Verdict {
    let table2 = [
        (Dataset::Hdfs, (16_838, 558_223)),
        (Dataset::Openstack, (198, 1_872)),
        (Dataset::Hadoop, (4_240, 169)),
        (Dataset::Bgl, (7_632, 72_257)),
    ];
    let present: Vec<_> = table2.iter().filter_map(|&(d, want)| corpus_dir(d).map(|p| (d, p, want))).collect();
    if !present.is_empty() {
        let mut lines = Vec::new();
        let mut ok = present.len() == table2.len();
        for (d, path, want) in present {
            let got = ingest_dataset(d, &path, None, IngestOptions::default()).map(|p| p.counts());
            ok &= got.as_ref().ok() == Some(&want);
            lines.push(format!("{d} {got:?} want {want:?}"));
        }
        return verdict(ok, format!("full corpora: {}", lines.join("; ")));
    }
    // Loghub-format samples against the token-scan oracles.
    let opts = IngestOptions::default();
    let mut checked = 0;
    for seed in 0..5 {
        let (log, labels) = loghub::hdfs_sample(seed, 2000, 40 + 10 * seed as usize);
        let parsed = parse_hdfs(Cursor::new(&log), Cursor::new(&labels), opts).unwrap();
        if parsed.records != loghub::hdfs_expected(&log, &labels) {
            return Fail(format!("HDFS sample {seed} grouping differs from the oracle"));
        }
        checked += 1;

        let dir = tempfile::tempdir().unwrap();
        let (counts, abnormal) = loghub::openstack_corpus(dir.path(), seed);
        let parsed = ingest_dataset(Dataset::Openstack, dir.path(), None, opts).unwrap();
        let got: BTreeMap<String, usize> = parsed.records.iter().map(|r| (r.sequence_id.clone(), r.events.len())).collect();
        let bad: BTreeSet<String> = parsed.records.iter().filter(|r| r.label == 1).map(|r| r.sequence_id.clone()).collect();
        if got != counts || bad != abnormal {
            return Fail(format!("OpenStack sample {seed} grouping differs from the oracle"));
        }
        checked += 1;

        let alerts: Vec<usize> = (0..6).map(|i| (i * 331 + seed as usize * 97) % 2000).collect();
        let parsed = parse_bgl_with(Cursor::new(loghub::bgl_stream(2000, &alerts)), WindowSpec::BGL, opts).unwrap();
        let got: Vec<(String, u8)> = parsed.records.iter().map(|r| (r.sequence_id.clone(), r.label)).collect();
        if got != loghub::bgl_expected(2000, &alerts, 300, 50) {
            return Fail(format!("BGL sample {seed} windows differ from the oracle"));
        }
        checked += 1;
    }
    let dir = tempfile::tempdir().unwrap();
    let files = loghub::hadoop_corpus(dir.path());
    let parsed = ingest_dataset(Dataset::Hadoop, dir.path(), None, opts).unwrap();
    let per_file = loghub::hadoop_windows(&parsed.records);
    for (file, (n, label)) in &files {
        let want = (loghub::expected_windows(*n, 300, 30), BTreeSet::from([*label]));
        if per_file.get(file) != Some(&want) {
            return Fail(format!("Hadoop {file}: {:?} want {want:?}", per_file.get(file)));
        }
    }
    checked += 1;
    Pass(format!(
        "no corpora under $HIERLOG_DATA; {checked} generated loghub-format samples match the grouping oracles exactly"
    ))
}

fn hdfs_desk_scale(out: &Path) -> Option<Result<Outcome, String>> {
    let dir = corpus_dir(Dataset::Hdfs)?;
    let run = || -> Result<Outcome, String> {
        let all = ingest_dataset(Dataset::Hdfs, &dir, None, IngestOptions::default()).map_err(|e| e.to_string())?;
        let spec = SplitSpec {
            train_fraction: 20_000.0 / all.records.len() as f64,
            seed: 20,
            stratified: true,
        };
        let (sample, _) = split(&all.records, &spec).map_err(|e| e.to_string())?;
        fs::create_dir_all(out).map_err(|e| e.to_string())?;
        let records = out.join("hdfs-20k.jsonl");
        save_records(&records, &sample).map_err(|e| e.to_string())?;
        let text = format!(
            "kind = \"robustness\"\nout_dir = {:?}\nseed = 20\n[[inputs]]\ndataset = \"hdfs\"\nrecords = {:?}\n\
             [train]\nepochs = 20\n[evolution]\nnoise_ratio = 0.3\n",
            out.join("run").display().to_string(),
            records.display().to_string()
        );
        let mut spec = ExperimentSpec::from_toml(&text, &[]).map_err(|e| e.to_string())?;
        spec.model = ModelConfig::small();
        run_experiment(&spec).map_err(|e| e.to_string())
    };
    Some(run())
}

fn desk_scale(hdfs: &Option<Result<Outcome, String>>) -> Verdict {
    match hdfs {
        None => Skip("needs the HDFS corpus under $HIERLOG_DATA/HDFS".into()),
        Some(Err(e)) => Fail(e.clone()),
        Some(Ok(o)) => {
            let f1 = o.report.mean_f1();
            verdict(f1 >= 0.97, format!("20k stratified HDFS subsample, F1 {f1:.4} at epoch {}", o.best_epoch))
        }
    }
}

fn robustness(synthetic: Option<&Outcome>, separability_dir: &Path, hdfs: &Option<Result<Outcome, String>>) -> Verdict {
    let Some(s) = synthetic else {
        return Fail("separability run did not finish".into());
    };
    let csv_same = fs::read(separability_dir.join("eval.csv")).ok() == fs::read(separability_dir.join("robustness.csv")).ok();
    let identity = s.evolved_report.as_ref() == Some(&s.report) && csv_same;
    if !identity {
        return Fail("noise_ratio 0 changed the synthetic test scores".into());
    }
    // How much the synthetic model loses at 0.3, for context only.
    let model = HierCnn::<f32>::load(&separability_dir.join("checkpoints/best.hlog")).unwrap();
    let test = load_records(&separability_dir.join("splits/test.jsonl")).unwrap();
    let (noisy, _) = evolve_corpus(
        &test,
        &EvolutionConfig {
            noise_ratio: 0.3,
            seed: 7,
            ..EvolutionConfig::default()
        },
    )
    .unwrap();
    let sets = |records| [TestSet { name: "hdfs".into(), records }];
    let base = evaluate(&model, &sets(test), 0.5, 256).unwrap().mean_f1();
    let drop = base - evaluate(&model, &sets(noisy), 0.5, 256).unwrap().mean_f1();
    let synth_note = format!("identity holds on synthetic; synthetic drop at 0.3 is {:.2} points", 100.0 * drop);
    match hdfs {
        None => Skip(format!("{synth_note}; the drop check needs the HDFS corpus")),
        Some(Err(e)) => Fail(e.clone()),
        Some(Ok(o)) => {
            let drop = o.report.mean_f1() - o.evolved_report.as_ref().unwrap().mean_f1();
            verdict(drop <= 0.06, format!("{synth_note}; HDFS drop at 0.3 is {:.2} points", 100.0 * drop))
        }
    }
}

fn determinism(out: &Path) -> Verdict {
    let text = format!(
        "kind = \"robustness\"\nout_dir = {:?}\nseed = 8\n[[inputs]]\ndataset = \"hdfs\"\nsynth = {{ count = 300, seed = 8 }}\n\
         [[inputs]]\ndataset = \"bgl\"\nsynth = {{ count = 200, seed = 9 }}\n[train]\nepochs = 3\n[evolution]\nnoise_ratio = 0.3\n",
        out.join("first").display().to_string()
    );
    let mut spec = ExperimentSpec::from_toml(&text, &[]).unwrap();
    spec.model = ModelConfig::small();
    let first = run_experiment(&spec).unwrap();
    rerun(&first.manifest, Some(&out.join("second"))).unwrap();
    let files = ["results.csv", "eval.csv", "robustness.csv"];
    let same = files
        .iter()
        .all(|f| fs::read(out.join("first").join(f)).unwrap() == fs::read(out.join("second").join(f)).unwrap());
    verdict(same, format!("two runs from one manifest, {} byte-identical", files.join(", ")))
}

fn mixing() -> Verdict {
    let mut r = common::rng(9);
    let mut records = Vec::new();
    let mut sizes = BTreeMap::new();
    for d in Dataset::ALL {
        let n = r.gen_range(150..700);
        sizes.insert(d, n);
        records.extend((0..n).map(|i| SequenceRecord {
            dataset: d,
            sequence_id: format!("{d}-{i}"),
            label: u8::from(r.gen_bool(0.15)),
            events: vec![format!("e{i}")],
        }));
    }
    let (train_half, test) = split(&records, &SplitSpec::default()).unwrap();
    let mix = MixSpec::default();
    let combined = compose_multi_project(&train_half, &mix, 3).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for d in Dataset::ALL {
        let n = train_half.iter().filter(|x| x.dataset == d).count();
        let got = combined.iter().filter(|x| x.dataset == d).count();
        let want = take_count(mix.fraction(d), n);
        ok &= got == want && want == (mix.fraction(d) * n as f64).round() as usize;
        lines.push(format!("{d} {got}/{n}"));
    }
    let key = |x: &SequenceRecord| (x.dataset, x.sequence_id.clone());
    let test_ids: BTreeSet<_> = test.iter().map(key).collect();
    let leaked = combined.iter().filter(|x| test_ids.contains(&key(x))).count();
    ok &= leaked == 0;
    verdict(ok, format!("fractions (0.40, 0.60, 0.80, 0.90): {}; {leaked} leaked ids", lines.join(", ")))
}

fn stretch(out: &Path) -> Verdict {
    if std::env::var("HIERLOG_STRETCH").as_deref() != Ok("1") {
        return Skip("stretch run; set HIERLOG_STRETCH=1 with all four corpora under $HIERLOG_DATA".into());
    }
    let dirs: Vec<(Dataset, PathBuf)> = Dataset::ALL.iter().filter_map(|&d| corpus_dir(d).map(|p| (d, p))).collect();
    if dirs.len() != 4 {
        return Skip(format!("only {} of 4 corpora under $HIERLOG_DATA", dirs.len()));
    }
    let mut text = format!("kind = \"multi-project\"\nout_dir = {:?}\nseed = 1\n", out.display().to_string());
    for (d, p) in &dirs {
        text.push_str(&format!("[[inputs]]\ndataset = \"{d}\"\npath = {:?}\n", p.display().to_string()));
    }
    let outcome = match ExperimentSpec::from_toml(&text, &[]).map_err(|e| e.to_string()).and_then(|s| run_experiment(&s).map_err(|e| e.to_string())) {
        Ok(o) => o,
        Err(e) => return Fail(e),
    };
    let f1 = |d: Dataset| outcome.report.datasets.get(d.name()).map_or(0.0, |m| m.f1());
    let gated = [Dataset::Hdfs, Dataset::Hadoop, Dataset::Bgl];
    let ok = gated.iter().all(|&d| f1(d) >= 0.99);
    let shown: Vec<String> = Dataset::ALL.iter().map(|&d| format!("{d} {:.4}", f1(d))).collect();
    verdict(ok, format!("multi-project F1: {} (OpenStack not gated)", shown.join(", ")))
}

fn main() {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let scratch = tempfile::tempdir().unwrap();
    let sep_dir = scratch.path().join("separability");
    let mut failed = 0;

    let mut report = |n: u32, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Verdict| {
        if !want(n) {
            return;
        }
        let start = Instant::now();
        let v = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let v = match (v, limit) {
            (Pass(d), Some(l)) if took > l => Fail(format!("{d}; over the {}s budget", l.as_secs())),
            (v, _) => v,
        };
        let (tag, detail) = match v {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {n:>2} {name}: {detail} [{:.1}s]", took.as_secs_f64());
    };

    let mut synthetic: Option<Outcome> = None;
    let mut hdfs: Option<Result<Outcome, String>> = None;
    report(1, "gradient correctness", Some(Duration::from_secs(120)), &mut gradients);
    report(2, "oracle equivalence", Some(Duration::from_secs(120)), &mut oracles);
    report(3, "overfit memorization", Some(Duration::from_secs(300)), &mut memorization);
    report(4, "synthetic separability", Some(Duration::from_secs(900)), &mut || {
        let (v, o) = separability(&sep_dir);
        synthetic = o;
        v
    });
    report(5, "ingestion fidelity", None, &mut ingestion);
    report(6, "desk-scale HDFS", Some(Duration::from_secs(7200)), &mut || {
        hdfs = hdfs_desk_scale(&scratch.path().join("hdfs"));
        desk_scale(&hdfs)
    });
    report(7, "robustness identity and drop", None, &mut || {
        if synthetic.is_none() {
            synthetic = separability(&sep_dir).1;
        }
        robustness(synthetic.as_ref(), &sep_dir, &hdfs)
    });
    report(8, "determinism", None, &mut || determinism(&scratch.path().join("determinism")));
    report(9, "mixing arithmetic", None, &mut mixing);
    report(10, "full multi-project (stretch)", None, &mut || stretch(&scratch.path().join("stretch")));

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
