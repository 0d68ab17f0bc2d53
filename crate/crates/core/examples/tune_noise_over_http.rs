//! Tunes noise probabilities against a simulated rater who rates each
//! corrupted sentence by how many edits it carries.
//!
//! cargo run --example tune_noise_over_http

use std::time::Duration;

use mmtlab::annotate::client::{tune_noise, AnnotationClient, TuneOptions};
use mmtlab::annotate::service::{serve, AppState};
use mmtlab::annotate::{Store, TaskKind, TaskPayload, VerdictRequest};
use mmtlab::metrics;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("mmtlab-tune-example-{}", std::process::id()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(listener, AppState::new(Store::open(&dir)?, None)));
    let client = AnnotationClient::new(base);

    let rater = client.clone();
    tokio::spawn(async move {
        loop {
            match rater.next_task(TaskKind::Naturalness, "sim").await {
                Ok(Some(task)) => {
                    let TaskPayload::Naturalness { original, corrupted, .. } = &task.payload else {
                        continue;
                    };
                    let o: Vec<&str> = original.split_whitespace().collect();
                    let c: Vec<&str> = corrupted.split_whitespace().collect();
                    let edits = metrics::levenshtein(&o, &c) as i64;
                    let rating = (6 - edits).clamp(1, 5);
                    rater.submit(&VerdictRequest::naturalness(&task.task_id, "sim", rating)).await.ok();
                }
                _ => tokio::time::sleep(Duration::from_millis(5)).await,
            }
        }
    });

    let pool: Vec<String> = (0..60)
        .map(|i| format!("the child throws a red ball to the dog number {i}"))
        .collect();
    let opts = TuneOptions {
        seed: 1,
        sample_size: 10,
        poll_interval: Duration::from_millis(5),
        round_timeout: Some(Duration::from_secs(20)),
        ..TuneOptions::default()
    };
    let state = tune_noise(&client, &pool, &opts, |s| {
        println!("round {} mean {:.2} -> next {:?}", s.history.len(), s.history.last().unwrap(), s.config.probabilities());
    })
    .await?;
    println!("converged after {} rounds at {:?}", state.history.len(), state.config.probabilities());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
