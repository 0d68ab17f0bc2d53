mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use mmtlab::annotate::client::AnnotationClient;
use mmtlab::annotate::{ImageNeed, Scale, TaskKind, TaskPayload, VerdictRequest};
use mmtlab::corpus::{self, FeatureMap, FeatureMatrix};
use mmtlab::noiser::CorruptionTrace;
use mmtlab::probing::Subset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmtlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_corpus(path: &Path, n: usize) {
    let mut s = String::from("id\tsource\ttarget\timage_id\n");
    for (i, sent) in common::sentence_pool(n).iter().enumerate() {
        s.push_str(&format!("{}\t{sent}\tलक्ष्य {i}\timg{}\n", i + 100, i % 4));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn noise_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("a.tsv");
    write_corpus(&input, 40);
    let outs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("b{i}.tsv"));
            let trace = dir.path().join(format!("t{i}.jsonl"));
            let o = run(&["noise", "--config", "low", "--seed", "42", "--in", p(&input), "--out", p(&out), "--trace", p(&trace)]);
            assert!(o.status.success(), "{}", stderr(&o));
            assert_eq!(stdout(&o).trim().split('\t').count(), 4);
            let manifest: serde_json::Value =
                serde_json::from_slice(&std::fs::read(dir.path().join(format!("b{i}.tsv.manifest.json"))).unwrap()).unwrap();
            assert_eq!(manifest["subcommand"], "noise");
            assert_eq!(manifest["seed"], 42);
            assert_eq!(manifest["config"]["noise"]["p_article"], 0.2);
            let traces: Vec<CorruptionTrace> = std::fs::read_to_string(&trace)
                .unwrap()
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect();
            assert_eq!(traces.len(), 40);
            assert!(traces.iter().all(CorruptionTrace::verify));
            std::fs::read(&out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let split = corpus::read_corpus(&outs[0][..], corpus::CorpusFormat::Tsv, corpus::SplitName::Train).unwrap();
    assert_eq!(split.records[0].id, 100);
    assert_eq!(split.records[0].target, "लक्ष्य 0");
}

#[test]
fn noise_then_evaluate_on_plain_text() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.txt");
    std::fs::write(&src, common::sentence_pool(30).join("\n") + "\n").unwrap();
    let noisy = dir.path().join("noisy.txt");
    let o = run(&["noise", "--config", "high", "--seed", "1", "--in", p(&src), "--out", p(&noisy)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    let o = run(&["evaluate", "--hyp", p(&noisy), "--ref", p(&src)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), summary);
    let fields: Vec<f64> = summary.trim().split('\t').map(|f| f.parse().unwrap()).collect();
    assert!(fields[0] < 100.0 && fields[2] > 0.0 && fields[3] == 30.0);

    let o = run(&["evaluate", "--hyp", p(&src), "--ref", p(&src)]);
    assert_eq!(stdout(&o), "100.00\t100.00\t0.00\t30\n");
    let seg = dir.path().join("seg.jsonl");
    let o = run(&["evaluate", "--hyp", p(&noisy), "--ref", p(&src), "--metric", "ter,bleu", "--per-segment", p(&seg)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim().split('\t').count(), 3);
    let lines = std::fs::read_to_string(&seg).unwrap();
    assert_eq!(lines.lines().count(), 30);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first.get("chrf2").is_none() && first.get("ter").is_some());
    assert!(dir.path().join("seg.jsonl.manifest.json").exists());

    let short = dir.path().join("short.txt");
    std::fs::write(&short, "one line\n").unwrap();
    let o = run(&["evaluate", "--hyp", p(&short), "--ref", p(&src)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error\tdata\t"));
}

#[test]
fn fuse_check_prints_a_passing_table() {
    let o = run(&["fuse-check", "--seed", "3", "--dims", "4,2,8,3,4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS\t")).count(), 18);
    assert!(out.ends_with("18 of 18 checks passed\n"));
    let o = run(&["fuse-check", "--dims", "5,2,8,3,4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn probe_substitute_table_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("test.tsv");
    write_corpus(&corpus_path, 12);
    let features: FeatureMap = (0..4)
        .map(|i| {
            let id = format!("img{i}");
            (id.clone(), FeatureMatrix::new(id, 2, 3, vec![i as f32; 6]).unwrap())
        })
        .collect();
    let feat_path = dir.path().join("feats.bin");
    corpus::save_features(&features, &feat_path).unwrap();
    let out = dir.path().join("sub.bin");
    let assign = dir.path().join("assign.tsv");
    let o = run(&[
        "probe", "substitute", "--mode", "derangement", "--seed", "5", "--corpus", p(&corpus_path),
        "--features", p(&feat_path), "--out", p(&out), "--assignment", p(&assign),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "derangement\trecords\t12\tkept_own_image\t0\n");
    let sub = corpus::load_features(&out).unwrap();
    assert_eq!(sub.len(), 12);
    for line in std::fs::read_to_string(&assign).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        assert_ne!(f[1], f[2]);
        let k: usize = f[2][3..].parse().unwrap();
        assert_eq!(sub[f[0]].data, vec![k as f32; 6]);
    }
    let again = dir.path().join("sub2.bin");
    run(&["probe", "substitute", "--mode", "derangement", "--seed", "5", "--corpus", p(&corpus_path), "--features", p(&feat_path), "--out", p(&again)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let a = dir.path().join("SelAttn-crop.tsv");
    let b = dir.path().join("random.tsv");
    std::fs::write(&a, "language\tsubset\tbleu\nhi\ttest\t45.79\nhi\tchallenge\t30.00\n").unwrap();
    std::fs::write(&b, "language\tsubset\tbleu\nhi\ttest\t46.04\nhi\tchallenge\t29.50\n").unwrap();
    let md = dir.path().join("table.md");
    let csv = dir.path().join("table.csv");
    let o = run(&["probe", "table", "--a", p(&a), "--b", p(&b), "--out", p(&md), "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&md).unwrap();
    assert_eq!(stdout(&o), text);
    assert!(text.contains("| random | +0.25 | +0.25 | -0.50 | -0.50 |"), "{text}");
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        "system,test_hi,test_avg,challenge_hi,challenge_avg\nrandom,+0.25,+0.25,-0.50,-0.50\n"
    );

    let hyp = dir.path().join("hyp.txt");
    let refs = dir.path().join("ref.txt");
    std::fs::write(&hyp, "a b c d\n").unwrap();
    std::fs::write(&refs, "a b c d\n").unwrap();
    let scores = dir.path().join("scores.tsv");
    for subset in ["test", "challenge", "test"] {
        let o = run(&["probe", "score", "--hyp", p(&hyp), "--ref", p(&refs), "--language", "hi", "--subset", subset, "--out", p(&scores)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read_to_string(&scores).unwrap(),
        "language\tsubset\tbleu\tchrf2\tter\nhi\tchallenge\t100.00\t100.00\t0.00\nhi\ttest\t100.00\t100.00\t0.00\n"
    );
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_tune_and_report_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let mut server = Child(
        bin()
            .args(["serve", "--store", p(&store), "--addr", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let mut first = String::new();
    BufReader::new(server.0.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let base = first.trim().strip_prefix("listening\t").expect(&first).to_string();
    assert!(store.join("events.jsonl.manifest.json").exists());

    let pool = dir.path().join("pool.txt");
    std::fs::write(&pool, common::sentence_pool(50).join("\n")).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let client = AnnotationClient::new(base.clone());
    // round 0 mean 4.0, round 1 mean 4.5
    let rater = rt.spawn(async move {
        loop {
            match client.next_task(TaskKind::Naturalness, "r").await.unwrap() {
                Some(t) => {
                    let rating = if t.batch.ends_with("-r0") { 4 } else if t.task_id.ends_with(['1', '3', '5', '7', '9']) { 5 } else { 4 };
                    client.submit(&VerdictRequest::naturalness(&t.task_id, "r", rating)).await.unwrap();
                }
                None => tokio::time::sleep(Duration::from_millis(5)).await,
            }
        }
    });
    let cfg_out = dir.path().join("tuned.json");
    let o = run(&[
        "tune-noise", "--corpus", p(&pool), "--server", &base, "--sample", "10", "--first", "40",
        "--poll-ms", "10", "--round-timeout", "30", "--seed", "9", "--out", p(&cfg_out),
    ]);
    rater.abort();
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert_eq!(lines[0], "round\t0\tmean\t4.0000\tnext\t0.2\t0.2\t0.2");
    assert_eq!(lines[1], "round\t1\tmean\t4.5000\tnext\t0.2\t0.2\t0.2");
    let cfg: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
    assert_eq!((cfg["p_article"].as_f64(), cfg["seed"].as_u64()), (Some(0.2), Some(9)));
    assert!(dir.path().join("tuned.json.manifest.json").exists());

    let o = run(&["report", "naturalness", "--server", &base, "--batch", "tune-s9-r1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("tune-s9-r1\ttasks\t10\tmean\t4.5000\tratings\t"));

    let o = run(&["report", "quality", "--server", &base]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("empty_filter"), "{}", stderr(&o));

    rt.block_on(async {
        let c = AnnotationClient::new(base.clone());
        let items: Vec<TaskPayload> = (0..4)
            .map(|i| TaskPayload::quality(format!("s{i}"), format!("t{i}"), "x", Subset::Test, "hi"))
            .collect();
        let r = c.create_batch(TaskKind::Quality, &items, None).await.unwrap();
        for (i, id) in r.task_ids.iter().enumerate() {
            let need = if i == 0 { ImageNeed::Yes } else { ImageNeed::No };
            c.submit(&VerdictRequest::quality(id, "q", Scale::Good, Scale::Bad, need)).await.unwrap();
        }
    });
    let o = run(&["report", "quality", "--server", &base, "--subset", "test", "--language", "hi"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("image_need\tyes\t1\t25.00\n"), "{out}");
    assert!(out.contains("image_need\tno\t3\t75.00\n"));
    assert!(out.contains("fluency\tbad\t4\t100.00\n"));
    drop(server);

    let o = run(&["report", "quality", "--store", p(&store), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["image_need"]["percent"]["yes"], 25.0);
}
