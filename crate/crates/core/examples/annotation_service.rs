//! Starts the annotation service on an ephemeral port, posts a batch of
//! quality tasks, answers them over HTTP and prints the report.
//!
//! cargo run --example annotation_service

use mmtlab::annotate::client::AnnotationClient;
use mmtlab::annotate::service::{serve, AppState};
use mmtlab::annotate::{ImageNeed, Scale, Store, TaskKind, TaskPayload, VerdictRequest};
use mmtlab::probing::Subset;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("mmtlab-annotation-example-{}", std::process::id()));
    let store = Store::open(&dir)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(listener, AppState::new(store, None)));
    let client = AnnotationClient::new(base.clone());

    let config = client.config().await?;
    println!("service at {base}: {}", serde_json::to_string(&config)?);

    let items: Vec<TaskPayload> = (0..4)
        .map(|i| TaskPayload::quality(format!("source {i}"), format!("target {i}"), format!("{i}.jpg"), Subset::Challenge, "hi"))
        .collect();
    let receipt = client.create_batch(TaskKind::Quality, &items, Some("demo")).await?;
    println!("batch `{}` with {} tasks", receipt.key, receipt.task_ids.len());

    let needs = [ImageNeed::Yes, ImageNeed::No, ImageNeed::No, ImageNeed::Maybe];
    for need in needs {
        let task = client.next_task(TaskKind::Quality, "alice").await?.expect("open task");
        client
            .submit(&VerdictRequest::quality(&task.task_id, "alice", Scale::Good, Scale::Good, need))
            .await?;
    }
    let report = client.quality_report(Some(Subset::Challenge), Some("hi")).await?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
