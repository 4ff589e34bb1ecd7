//! One stepping worker per session. Handlers talk to it only through
//! commands, which it applies between steps.

use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dualsmoke_core::field::image;
use dualsmoke_core::guide::{BaselineParams, GuideFields, Provenance, SketchDoc};
use serde::Serialize;
use tokio::sync::{oneshot, watch};

use crate::run::{Run, RunRecord};

/// Latest published density frame.
#[derive(Clone, Debug)]
pub struct Frame {
    pub index: u64,
    pub png: Vec<u8>,
    pub lo: f64,
    pub hi: f64,
    pub time: f64,
    /// The `c` the step producing this frame ran with.
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Idle,
    Running,
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionStatus {
    pub id: String,
    pub status: Status,
    pub frame: u64,
    pub time: f64,
    pub c: f64,
    pub grid: [usize; 2],
    pub has_sketch: bool,
    /// `"baseline"`, the provider name, or absent.
    pub guide: Option<String>,
    pub error: Option<String>,
    pub created_at: String,
}

pub type Reply<T> = oneshot::Sender<Result<T, String>>;

pub enum Command {
    SetSketch(SketchDoc, Reply<()>),
    BaselineGuide(BaselineParams, Reply<()>),
    ExternalGuide(GuideFields, Reply<()>),
    SetC(f64, Reply<()>),
    Start(Reply<()>),
    Pause(Reply<()>),
    Reset(Reply<()>),
    Save { dir: PathBuf, frames: bool, reply: Reply<RunRecord> },
    Record(Reply<RunRecord>),
    Stop,
}

/// Handle kept by the service; cloning shares the same worker.
#[derive(Clone)]
pub struct SessionHandle {
    pub id: String,
    tx: mpsc::Sender<Command>,
    frames: watch::Receiver<Arc<Frame>>,
    shared: Arc<Mutex<SessionStatus>>,
    sketch: Arc<Mutex<Option<SketchDoc>>>,
}

fn publish_frame(run: &Run) -> Frame {
    let (png, lo, hi) = image::encode_scalar_png(run.density()).unwrap_or_default();
    Frame { index: run.frame(), png, lo, hi, time: run.state.time, c: run.params.c }
}

fn guide_name(run: &Run) -> Option<String> {
    if run.guide.omega.is_empty() && run.guide.provenance == Provenance::Baseline {
        return None;
    }
    Some(match &run.guide.provenance {
        Provenance::Baseline => "baseline".into(),
        Provenance::External(n) => n.clone(),
    })
}

impl SessionHandle {
    /// Spawns the worker thread for `run`.
    pub fn spawn(id: String, run: Run, created_at: String, frame_interval: Duration) -> SessionHandle {
        let (tx, rx) = mpsc::channel();
        let (ftx, frx) = watch::channel(Arc::new(publish_frame(&run)));
        let g = run.grid();
        let shared = Arc::new(Mutex::new(SessionStatus {
            id: id.clone(),
            status: Status::Idle,
            frame: run.frame(),
            time: run.state.time,
            c: run.params.c,
            grid: [g.nx, g.ny],
            has_sketch: run.sketch.is_some(),
            guide: guide_name(&run),
            error: None,
            created_at: created_at.clone(),
        }));
        let sketch = Arc::new(Mutex::new(run.sketch.clone()));
        let worker = Worker {
            id: id.clone(),
            created_at,
            run,
            running: false,
            rx,
            frames: ftx,
            shared: shared.clone(),
            sketch: sketch.clone(),
            interval: frame_interval,
        };
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || worker.run())
            .expect("spawn session worker");
        SessionHandle { id, tx, frames: frx, shared, sketch }
    }

    pub fn status(&self) -> SessionStatus {
        self.shared.lock().unwrap().clone()
    }

    pub fn sketch(&self) -> Option<SketchDoc> {
        self.sketch.lock().unwrap().clone()
    }

    pub fn latest(&self) -> Arc<Frame> {
        self.frames.borrow().clone()
    }

    /// Waits up to `timeout` for a frame newer than `after`.
    pub async fn frame_after(&self, after: u64, timeout: Duration) -> Option<Arc<Frame>> {
        let mut rx = self.frames.clone();
        let found = tokio::time::timeout(timeout, async { rx.wait_for(|f| f.index > after).await.map(|f| f.clone()) });
        found.await.ok()?.ok()
    }

    /// Sends a command and waits for the worker to apply it.
    pub async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, String> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).map_err(|_| "session worker has stopped".to_string())?;
        rx.await.map_err(|_| "session worker has stopped".to_string())?
    }

    pub fn stop(&self) {
        let _ = self.tx.send(Command::Stop);
    }
}

struct Worker {
    id: String,
    created_at: String,
    run: Run,
    running: bool,
    rx: mpsc::Receiver<Command>,
    frames: watch::Sender<Arc<Frame>>,
    shared: Arc<Mutex<SessionStatus>>,
    sketch: Arc<Mutex<Option<SketchDoc>>>,
    interval: Duration,
}

impl Worker {
    fn run(mut self) {
        let mut last_step = Instant::now();
        loop {
            // apply everything queued before the next step
            loop {
                let cmd = if self.running {
                    let wait = self.interval.saturating_sub(last_step.elapsed());
                    if wait.is_zero() {
                        match self.rx.try_recv() {
                            Ok(c) => c,
                            Err(TryRecvError::Empty) => break,
                            Err(TryRecvError::Disconnected) => return,
                        }
                    } else {
                        match self.rx.recv_timeout(wait) {
                            Ok(c) => c,
                            Err(RecvTimeoutError::Timeout) => break,
                            Err(RecvTimeoutError::Disconnected) => return,
                        }
                    }
                } else {
                    match self.rx.recv() {
                        Ok(c) => c,
                        Err(_) => return,
                    }
                };
                if !self.handle(cmd) {
                    return;
                }
            }
            if self.running {
                last_step = Instant::now();
                match self.run.step() {
                    Ok(_) => {}
                    Err(e) => {
                        log::error!("session {}: step failed: {e}", self.id);
                        self.running = false;
                        let mut s = self.shared.lock().unwrap();
                        s.status = Status::Error;
                        s.error = Some(e.to_string());
                        continue;
                    }
                }
                self.publish();
            }
        }
    }

    fn publish(&self) {
        let frame = publish_frame(&self.run);
        {
            let mut s = self.shared.lock().unwrap();
            s.frame = frame.index;
            s.time = frame.time;
            s.c = self.run.params.c;
            s.has_sketch = self.run.sketch.is_some();
            s.guide = guide_name(&self.run);
            if s.status != Status::Error {
                s.status = if self.running { Status::Running } else { Status::Idle };
            }
        }
        *self.sketch.lock().unwrap() = self.run.sketch.clone();
        self.frames.send_replace(Arc::new(frame));
    }

    fn sync_status(&self) {
        let mut s = self.shared.lock().unwrap();
        s.c = self.run.params.c;
        s.has_sketch = self.run.sketch.is_some();
        s.guide = guide_name(&self.run);
        s.status = if self.running { Status::Running } else if s.status == Status::Error { Status::Error } else { Status::Idle };
        drop(s);
        *self.sketch.lock().unwrap() = self.run.sketch.clone();
    }

    /// Returns false when the worker should exit. Status is updated before
    /// the reply, so a caller always sees its own change.
    fn handle(&mut self, cmd: Command) -> bool {
        let err = |e: crate::run::RunError| e.to_string();
        macro_rules! reply {
            ($r:expr, $v:expr) => {{
                let v = $v;
                self.sync_status();
                let _ = $r.send(v);
            }};
        }
        match cmd {
            Command::SetSketch(doc, r) => reply!(r, self.run.set_sketch(doc).map_err(err)),
            Command::BaselineGuide(p, r) => reply!(r, self.run.set_baseline_guide(&p).map_err(err)),
            Command::ExternalGuide(g, r) => reply!(r, self.run.set_external_guide(g).map_err(err)),
            Command::SetC(c, r) => reply!(r, self.run.set_c(c).map_err(err)),
            Command::Start(r) => {
                self.running = true;
                let mut s = self.shared.lock().unwrap();
                s.status = Status::Running;
                s.error = None;
                drop(s);
                reply!(r, Ok(()))
            }
            Command::Pause(r) => {
                self.running = false;
                reply!(r, Ok(()))
            }
            Command::Reset(r) => {
                self.running = false;
                self.run.reset();
                {
                    let mut s = self.shared.lock().unwrap();
                    s.error = None;
                    s.status = Status::Idle;
                }
                self.publish();
                reply!(r, Ok(()))
            }
            Command::Save { dir, frames, reply } => {
                reply!(reply, self.run.save(&dir, &self.id, &self.created_at, frames).map_err(err))
            }
            Command::Record(r) => reply!(r, Ok(self.run.record(&self.id, &self.created_at))),
            Command::Stop => return false,
        }
        true
    }
}
