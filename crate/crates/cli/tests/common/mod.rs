#![allow(dead_code)]

use std::path::Path;

use dualsmoke::config::Config;
use dualsmoke::service::{serve, App, AppState};
use dualsmoke_core::guide::{SketchDoc, Stroke, StrokeKind};
use dualsmoke_core::GridSpec;
use serde_json::Value;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct Server {
    pub base: String,
    pub app: App,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<Vec<String>>>>,
}

impl Server {
    pub async fn start(config: Config, data: &Path, static_dir: Option<&Path>) -> Server {
        let app = AppState::new(config, data).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, app.clone(), static_dir.map(Path::to_path_buf), async {
            let _ = rx.await;
        }));
        Server { base, app, stop: Some(tx), task: Some(task) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Stops the server; returns the runs persisted on shutdown.
    pub async fn shutdown(mut self) -> Vec<String> {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap()
    }
}

pub fn small_config(grid: usize) -> Config {
    Config { grid, ..Config::default() }
}

pub fn vertical_sketch(n: usize, x: f64) -> SketchDoc {
    let s = GridSpec::square(n).unwrap();
    let lo = n as f64 / 8.0;
    SketchDoc::new(s).with_stroke(Stroke::new(StrokeKind::Smoke, vec![[x, lo], [x, n as f64 - lo]]))
}

pub async fn json(resp: reqwest::Response) -> Value {
    resp.json().await.unwrap()
}

/// Long-polls for the first frame after `after`; returns (index, c, png).
pub async fn next_frame(client: &reqwest::Client, url: &str, after: u64) -> (u64, f64, Vec<u8>) {
    loop {
        let r = client.get(format!("{url}?after={after}&timeout_ms=5000")).send().await.unwrap();
        if r.status() == 204 {
            continue;
        }
        assert_eq!(r.status(), 200);
        let h = r.headers();
        let idx: u64 = h["x-frame-index"].to_str().unwrap().parse().unwrap();
        let c: f64 = h["x-param-c"].to_str().unwrap().parse().unwrap();
        return (idx, c, r.bytes().await.unwrap().to_vec());
    }
}
