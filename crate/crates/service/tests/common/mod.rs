#![allow(dead_code)]

use std::sync::Arc;

use rolereward_core::pipeline::ScoreItem;
use rolereward_core::toy::default_task;
use rolereward_service::{serve_with_shutdown, AppState, ServiceConfig};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct TestServer {
    pub base: String,
    pub client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl TestServer {
    pub async fn start(config: ServiceConfig) -> Self {
        let state = Arc::new(AppState::boot(config).unwrap());
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let handle = tokio::spawn(async move {
            serve_with_shutdown(state, listener, async {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
        TestServer {
            base,
            client: reqwest::Client::new(),
            stop: Some(tx),
            handle: Some(handle),
        }
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            h.await.unwrap();
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let r = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    pub async fn post_raw(&self, path: &str, body: impl Into<String>) -> (u16, Vec<u8>) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.into())
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let (status, bytes) = self.post_raw(path, body.to_string()).await;
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    pub async fn fit_default_groups(&self) {
        let (status, body) = self
            .post(
                "/v1/groups/fit",
                &json!({ "profiles": profiles(), "G": 3, "seed": 1 }),
            )
            .await;
        assert_eq!(status, 200, "{body}");
    }
}

pub fn profiles() -> Value {
    json!([
        { "character_id": "cake", "profile_text": "A birthday cake turned dark and venomous." },
        { "character_id": "vendor", "profile_text": "A calm sweet potato vendor in Ho Chi Minh City." },
        { "character_id": "knight", "profile_text": "An aging knight of a northern fortress." },
        { "character_id": "detective", "profile_text": "A sharp, proud detective of the gaslight era." },
        { "character_id": "gardener", "profile_text": "A gentle elderly gardener who loves roses." },
        { "character_id": "pilot", "profile_text": "A cheerful starship pilot who jokes under pressure." }
    ])
}

/// `n` items cycling through the toy prompts and their candidates.
pub fn items(n: usize, prefix: &str) -> Vec<ScoreItem> {
    let task = default_task(0);
    (0..n)
        .map(|i| {
            let p = &task.prompts[i % task.prompts.len()];
            let pool = &task.candidate_pool[&p.id];
            ScoreItem {
                request_id: format!("{prefix}{i}"),
                character_id: p.character_id.clone(),
                raw_output: pool[(i / task.prompts.len() + i) % pool.len()].clone(),
                gold: p.gold.clone(),
            }
        })
        .collect()
}

pub fn score_body(items: &[ScoreItem], update: bool) -> Value {
    json!({ "items": items, "update_stats": update })
}
