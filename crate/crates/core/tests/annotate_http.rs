mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use mmtlab::annotate::client::{tune_noise, AnnotationClient, ClientError, TuneOptions};
use mmtlab::annotate::service::ClientConfig;
use mmtlab::annotate::*;
use mmtlab::noiser::Decrement;
use mmtlab::probing::Subset;
use serde_json::{json, Value};

async fn status_and_body(resp: reqwest::Response) -> (u16, Value) {
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

fn naturalness_items(n: usize) -> Vec<TaskPayload> {
    (0..n)
        .map(|i| TaskPayload::naturalness(format!("the cat {i}"), format!("cat {i}")))
        .collect()
}

fn api_code(e: ClientError) -> (u16, String) {
    match e {
        ClientError::Api { status, code, .. } => (status, code),
        other => panic!("expected an API error, got {other}"),
    }
}

#[tokio::test]
async fn config_endpoint_describes_the_scales() {
    let dir = tempfile::tempdir().unwrap();
    let media = tempfile::tempdir().unwrap();
    let srv = common::spawn(dir.path(), Some(media.path().to_path_buf())).await;
    let cfg: ClientConfig = srv.client.config().await.unwrap();
    assert_eq!(cfg.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(cfg.kinds, vec![TaskKind::Naturalness, TaskKind::Quality]);
    assert_eq!((cfg.rating_min, cfg.rating_max), (1, 5));
    assert_eq!(cfg.adequacy, Scale::ALL.to_vec());
    assert_eq!(cfg.image_need, ImageNeed::ALL.to_vec());
    assert_eq!(cfg.media_base.as_deref(), Some("/media/"));
    assert_eq!(cfg.subsets, vec![Subset::Test, Subset::Challenge]);

    let raw: Value = reqwest::get(format!("{}/config", srv.base)).await.unwrap().json().await.unwrap();
    assert_eq!(raw["image_need"], json!(["yes", "maybe", "no", "not_reflected"]));
}

#[tokio::test]
async fn batch_lifecycle_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let srv = common::spawn(dir.path(), None).await;
    let http = reqwest::Client::new();
    let url = |p: &str| format!("{}{p}", srv.base);

    let items: Vec<Value> = naturalness_items(3).iter().map(|i| serde_json::to_value(i).unwrap()).collect();
    let body = json!({"kind": "naturalness", "items": items, "key": "nat-1"});
    let (s, r) = status_and_body(http.post(url("/batches")).json(&body).send().await.unwrap()).await;
    assert_eq!(s, 201);
    assert_eq!(r["task_ids"], json!(["t00000001", "t00000002", "t00000003"]));
    assert_eq!(r["created"], json!(true));

    let (s, r) = status_and_body(http.post(url("/batches")).json(&body).send().await.unwrap()).await;
    assert_eq!((s, r["created"].clone()), (200, json!(false)));

    let other = json!({"kind": "naturalness", "items": [items[0]], "key": "nat-1"});
    let (s, r) = status_and_body(http.post(url("/batches")).json(&other).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (409, "batch_conflict"));

    let empty = json!({"kind": "naturalness", "items": []});
    let (s, r) = status_and_body(http.post(url("/batches")).json(&empty).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (422, "empty_batch"));

    let wrong = json!({"kind": "quality", "items": [items[0]]});
    let (s, r) = status_and_body(http.post(url("/batches")).json(&wrong).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (422, "bad_item"));

    let resp = http
        .post(url("/batches"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    let (s, r) = status_and_body(resp).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (400, "bad_request"));

    let info = srv.client.batch("nat-1").await.unwrap();
    assert_eq!((info.answered, info.closed), (0, false));
    assert_eq!(api_code(srv.client.batch("nope").await.unwrap_err()), (404, "unknown_batch".into()));
    let all: Vec<Value> = http.get(url("/batches")).send().await.unwrap().json().await.unwrap();
    assert_eq!(all.len(), 1);

    let task: AnnotationTask = http.get(url("/tasks/t00000002")).send().await.unwrap().json().await.unwrap();
    assert_eq!(task.payload, naturalness_items(3)[1]);
    assert_eq!(task.status, TaskStatus::Open);
    let (s, r) = status_and_body(http.get(url("/tasks/t99")).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (404, "unknown_task"));

    let bad = [
        (json!({"task_id": "t00000001", "annotator_id": "a", "rating": 6}), 422, "invalid_verdict"),
        (json!({"task_id": "t00000001", "annotator_id": "a", "rating": 0}), 422, "invalid_verdict"),
        (json!({"task_id": "t00000001", "annotator_id": "", "rating": 3}), 422, "invalid_verdict"),
        (json!({"task_id": "t00000001", "annotator_id": "a", "adequacy": "good"}), 422, "invalid_verdict"),
        (json!({"task_id": "t00000001", "annotator_id": "a", "rating": 3, "mood": 1}), 400, "bad_request"),
        (json!({"task_id": "zz", "annotator_id": "a", "rating": 3}), 404, "unknown_task"),
    ];
    for (body, status, code) in bad {
        let (s, r) = status_and_body(http.post(url("/verdicts")).json(&body).send().await.unwrap()).await;
        assert_eq!((s, r["code"].as_str().unwrap()), (status, code), "{body}");
        assert!(r["message"].as_str().is_some_and(|m| !m.is_empty()));
    }

    let c = &srv.client;
    assert_eq!(c.naturalness_report("nat-1").await.unwrap(), None);
    for (i, r) in [5, 4, 3].into_iter().enumerate() {
        let receipt = c
            .submit(&VerdictRequest::naturalness(&task_id(i + 1), "a", r))
            .await
            .unwrap();
        assert!(!receipt.replaced);
    }
    let receipt = c.submit(&VerdictRequest::naturalness(&task_id(3), "a", 2)).await.unwrap();
    assert!(receipt.replaced);
    let report = c.naturalness_report("nat-1").await.unwrap().unwrap();
    assert_eq!(report.ratings, vec![5, 4, 2]);
    assert!((report.mean - 11.0 / 3.0).abs() < 1e-12);
    assert_eq!(api_code(c.naturalness_report("nope").await.unwrap_err()).1, "unknown_batch");

    let closed = c.close_batch("nat-1").await.unwrap();
    assert!(closed.closed);
    assert_eq!(c.next_task(TaskKind::Naturalness, "b").await.unwrap(), None);
    let task: AnnotationTask = http.get(url("/tasks/t00000001")).send().await.unwrap().json().await.unwrap();
    assert_eq!(task.status, TaskStatus::Done);

    let (s, r) = status_and_body(http.get(url("/reports/quality")).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (404, "empty_filter"));
    let (s, r) = status_and_body(http.get(url("/reports/naturalness")).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (400, "bad_request"));
    let (s, r) = status_and_body(http.get(url("/tasks/next?kind=poetry&annotator=a")).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (400, "bad_request"));
    let (s, r) = status_and_body(http.get(url("/nowhere")).send().await.unwrap()).await;
    assert_eq!((s, r["code"].as_str().unwrap()), (404, "not_found"));
}

#[tokio::test]
async fn two_annotators_interleave_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let srv = common::spawn(dir.path(), None).await;
    let c = &srv.client;
    c.create_batch(TaskKind::Naturalness, &naturalness_items(3), None).await.unwrap();
    let mut seen = [BTreeSet::new(), BTreeSet::new()];
    let names = ["ann-a", "ann-b"];
    for _ in 0..3 {
        for (who, name) in names.iter().enumerate() {
            let t = c.next_task(TaskKind::Naturalness, name).await.unwrap().expect("a task");
            assert!(seen[who].insert(t.task_id.clone()), "{name} saw {} twice", t.task_id);
            c.submit(&VerdictRequest::naturalness(&t.task_id, name, 4)).await.unwrap();
        }
    }
    for name in names {
        assert_eq!(c.next_task(TaskKind::Naturalness, name).await.unwrap(), None);
    }
    let ids: BTreeSet<String> = (1..=3).map(task_id).collect();
    assert_eq!(seen[0], ids);
    assert_eq!(seen[1], ids);
}

#[tokio::test]
async fn quality_batch_reports_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let media = tempfile::tempdir().unwrap();
    std::fs::write(media.path().join("17.jpg"), b"\xff\xd8jpeg").unwrap();
    let (items, expected_index) = {
        let srv = common::spawn(dir.path(), Some(media.path().to_path_buf())).await;
        let c = &srv.client;
        let items: Vec<TaskPayload> = (0..50)
            .map(|i| TaskPayload::quality(format!("src {i}"), format!("tgt {i}"), "17", Subset::Challenge, "hi"))
            .collect();
        let receipt = c.create_batch(TaskKind::Quality, &items, Some("qual")).await.unwrap();
        assert_eq!(receipt.task_ids.len(), 50);
        let needs = [(ImageNeed::Yes, 3), (ImageNeed::Maybe, 2), (ImageNeed::No, 42), (ImageNeed::NotReflected, 3)]
            .into_iter()
            .flat_map(|(n, k)| std::iter::repeat_n(n, k));
        for (id, need) in receipt.task_ids.iter().zip(needs) {
            c.submit(&VerdictRequest::quality(id, "ann", Scale::Good, Scale::Medium, need))
                .await
                .unwrap();
        }
        let r = c.quality_report(Some(Subset::Challenge), Some("hi")).await.unwrap();
        let pct: Vec<f64> = ImageNeed::ALL.iter().map(|n| r.image_need.percent[n]).collect();
        assert_eq!(pct, vec![6.0, 4.0, 84.0, 6.0]);
        assert_eq!(r.adequacy.percent[&Scale::Good], 100.0);
        assert_eq!(r.fluency.counts[&Scale::Medium], 50);
        assert_eq!(
            api_code(c.quality_report(Some(Subset::Test), None).await.unwrap_err()),
            (404, "empty_filter".into())
        );
        assert_eq!(api_code(c.naturalness_report("qual").await.unwrap_err()).1, "wrong_kind");

        let img = reqwest::get(format!("{}/media/17", srv.base)).await.unwrap();
        assert_eq!(img.status().as_u16(), 200);
        assert_eq!(img.headers()["content-type"], "image/jpeg");
        assert_eq!(&img.bytes().await.unwrap()[..], b"\xff\xd8jpeg");
        let miss = reqwest::get(format!("{}/media/..%2F17.jpg", srv.base)).await.unwrap();
        assert_eq!(miss.status().as_u16(), 404);

        let index = Store::open(dir.path()).unwrap().index().clone();
        (items, index)
    };
    let srv = common::spawn(dir.path(), None).await;
    let again = srv.client.create_batch(TaskKind::Quality, &items, Some("qual")).await.unwrap();
    assert!(!again.created);
    assert_eq!(Store::open(dir.path()).unwrap().index(), &expected_index);
}

/// Rates every open naturalness task, choosing ratings by round (from the
/// batch key suffix) and by position within the batch.
async fn scripted_rater(c: AnnotationClient, script: Vec<Vec<u8>>) {
    loop {
        match c.next_task(TaskKind::Naturalness, "rater").await.unwrap() {
            Some(t) => {
                let round: usize = t.batch.rsplit("-r").next().unwrap().parse().unwrap();
                let info = c.batch(&t.batch).await.unwrap();
                let pos = info.task_ids.iter().position(|id| *id == t.task_id).unwrap();
                let r = script[round][pos];
                c.submit(&VerdictRequest::naturalness(&t.task_id, "rater", r as i64))
                    .await
                    .unwrap();
            }
            None => tokio::time::sleep(Duration::from_millis(5)).await,
        }
    }
}

fn ratings_with_sum(n: usize, sum: usize) -> Vec<u8> {
    let mut v = vec![1u8; n];
    let mut left = sum - n;
    for r in v.iter_mut() {
        let add = left.min(4);
        *r += add as u8;
        left -= add;
    }
    assert_eq!(left, 0);
    v
}

#[tokio::test]
async fn tuning_loop_over_http_halts_at_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let srv = common::spawn(dir.path(), None).await;
    let pool = common::sentence_pool(60);
    // means 3.0, 4.45, 4.5
    let script = vec![ratings_with_sum(20, 60), ratings_with_sum(20, 89), ratings_with_sum(20, 90)];
    let rater = tokio::spawn(scripted_rater(srv.client.clone(), script));
    let opts = TuneOptions {
        seed: 7,
        poll_interval: Duration::from_millis(5),
        round_timeout: Some(Duration::from_secs(30)),
        ..TuneOptions::default()
    };
    let mut seen = Vec::new();
    let state = tune_noise(&srv.client, &pool, &opts, |s| seen.push(s.config.probabilities()))
        .await
        .unwrap();
    rater.abort();
    assert_eq!(seen, vec![(0.2, 0.2, 0.2), (0.1, 0.1, 0.1), (0.1, 0.1, 0.1)]);
    assert!(state.converged);
    assert_eq!(state.round, 2);
    assert_eq!(state.history, vec![3.0, 4.45, 4.5]);
    assert_eq!(state.decrement, Decrement::Uniform(0.1));
    let batches = srv.client.batch("tune-r2").await.unwrap();
    assert!(batches.closed);
    assert_eq!(
        api_code(srv.client.batch("tune-r3").await.unwrap_err()),
        (404, "unknown_batch".into())
    );
}

#[tokio::test]
async fn tuning_loop_times_out_without_raters() {
    let dir = tempfile::tempdir().unwrap();
    let srv = common::spawn(dir.path(), None).await;
    let opts = TuneOptions {
        poll_interval: Duration::from_millis(5),
        round_timeout: Some(Duration::from_millis(50)),
        ..TuneOptions::default()
    };
    let err = tune_noise(&srv.client, &common::sentence_pool(30), &opts, |_| {}).await.unwrap_err();
    assert!(matches!(err, ClientError::Timeout(ref k) if k == "tune-r0"), "{err}");
}
