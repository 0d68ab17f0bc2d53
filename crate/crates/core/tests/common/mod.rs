#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mmtlab::annotate::client::AnnotationClient;
use mmtlab::annotate::service::{serve, AppState};
use mmtlab::annotate::Store;

pub struct Server {
    pub base: String,
    pub client: AnnotationClient,
    handle: tokio::task::JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

/// Serves a store rooted at `dir` on an ephemeral port.
pub async fn spawn(dir: &Path, media: Option<PathBuf>) -> Server {
    let store = Store::open(dir).expect("open store");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let state = AppState::new(store, media);
    let handle = tokio::spawn(async move {
        serve(listener, state).await.unwrap();
    });
    Server {
        client: AnnotationClient::new(base.clone()),
        base,
        handle,
    }
}

/// Sentences with plenty of articles, vowels and duplicable letters.
pub fn sentence_pool(n: usize) -> Vec<String> {
    let nouns = ["ball", "tree", "man", "street", "dog", "bench", "kite", "apple"];
    let verbs = ["near", "beside", "under", "behind"];
    (0..n)
        .map(|i| {
            format!(
                "the {} is {} a {} in the park {}",
                nouns[i % nouns.len()],
                verbs[i % verbs.len()],
                nouns[(i * 3 + 1) % nouns.len()],
                i
            )
        })
        .collect()
}
