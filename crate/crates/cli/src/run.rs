//! A guided simulation with an event log, so that any run can be saved and
//! replayed bit-for-bit.
//!
//! Every change (sketch, guide, `c`) is logged with the frame index at
//! which it was applied; replay applies the same changes before the same
//! steps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dualsmoke_core::field::{image, raster, FieldError};
use dualsmoke_core::guide::{baseline_guide_with, BaselineParams, GuideError, GuideFields, Provenance, SketchDoc};
use dualsmoke_core::guided::{apply_sketch, guided_step, GuidedError, GuidedParams};
use dualsmoke_core::solver::{SimParams, SimState, StepReport};
use dualsmoke_core::{GridSpec, MaskField, ScalarField, VelocityField};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Guided(#[from] GuidedError),
    #[error(transparent)]
    Guide(#[from] GuideError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run record: {0}")]
    Record(String),
}

/// How a guide was produced, enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum GuideRecord {
    /// Recomputed from the sketch on replay.
    Baseline { sketch: SketchDoc, params: BaselineParams },
    /// Stored losslessly next to the record.
    External { name: String, file: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Change {
    Sketch { sketch: SketchDoc },
    Guide { guide: GuideRecord },
    Params { c: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    /// Applied before the step that produces frame `frame + 1`.
    pub frame: u64,
    #[serde(flatten)]
    pub change: Change,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub session_id: String,
    pub created_at: String,
    pub grid: GridSpec,
    pub base: SimParams,
    pub events: Vec<RunEvent>,
    pub frame_count: u64,
    /// Files saved with the record, relative to its directory.
    #[serde(default)]
    pub saved_frames: Vec<String>,
}

pub const RECORD_FILE: &str = "record.json";
pub const DENSITY_FILE: &str = "density.dsfld";
pub const FRAME_FILE: &str = "frame.png";

/// Lossless guide dump (the raster format stores velocity at centers).
#[derive(Serialize, Deserialize)]
struct GuideDump {
    grid: GridSpec,
    u: Vec<f64>,
    v: Vec<f64>,
    omega: String,
    name: String,
}

impl GuideDump {
    fn from_fields(g: &GuideFields, name: &str) -> Self {
        let s = *g.u_g.spec();
        let omega = (0..s.cells()).map(|k| if g.omega.get(k % s.nx, k / s.nx) { '1' } else { '0' }).collect();
        GuideDump { grid: s, u: g.u_g.u().to_vec(), v: g.u_g.v().to_vec(), omega, name: name.into() }
    }

    fn into_fields(self) -> Result<GuideFields, RunError> {
        let u_g = VelocityField::from_components(self.grid, self.u, self.v)?;
        let cells = self.omega.chars().map(|c| c == '1').collect();
        let omega = MaskField::from_cells(self.grid, cells)?;
        Ok(GuideFields { u_g, omega, provenance: Provenance::External(self.name) })
    }
}

/// Live simulation state plus everything needed to reproduce it.
#[derive(Clone, Debug)]
pub struct Run {
    pub state: SimState,
    pub guide: GuideFields,
    pub params: GuidedParams,
    pub sketch: Option<SketchDoc>,
    guide_record: Option<GuideRecord>,
    events: Vec<RunEvent>,
    externals: BTreeMap<String, GuideFields>,
    next_external: usize,
}

impl Run {
    pub fn new(grid: GridSpec, params: GuidedParams) -> Result<Run, RunError> {
        params.validate()?;
        let c = params.c;
        let mut run = Run {
            state: SimState::new(grid),
            guide: GuideFields::none(grid),
            params,
            sketch: None,
            guide_record: None,
            events: Vec::new(),
            externals: BTreeMap::new(),
            next_external: 0,
        };
        run.log(Change::Params { c });
        Ok(run)
    }

    pub fn grid(&self) -> GridSpec {
        *self.state.spec()
    }

    pub fn frame(&self) -> u64 {
        self.state.frame
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    fn log(&mut self, change: Change) {
        self.events.push(RunEvent { frame: self.state.frame, change });
    }

    pub fn set_sketch(&mut self, doc: SketchDoc) -> Result<(), RunError> {
        doc.validate()?;
        apply_sketch(&mut self.state, &doc)?;
        self.log(Change::Sketch { sketch: doc.clone() });
        self.sketch = Some(doc);
        Ok(())
    }

    /// Computes and installs the baseline guide for the current sketch.
    pub fn set_baseline_guide(&mut self, params: &BaselineParams) -> Result<(), RunError> {
        let sketch = self.sketch.clone().ok_or(GuideError::NoSmokeStroke)?;
        let guide = baseline_guide_with(&sketch, params)?;
        self.install_guide(guide, GuideRecord::Baseline { sketch, params: *params });
        Ok(())
    }

    pub fn set_external_guide(&mut self, guide: GuideFields) -> Result<(), RunError> {
        guide.validate(&self.grid())?;
        let name = match &guide.provenance {
            Provenance::External(n) => n.clone(),
            Provenance::Baseline => "external".into(),
        };
        let file = format!("guide-{:03}.json", self.next_external);
        self.next_external += 1;
        self.externals.insert(file.clone(), guide.clone());
        self.install_guide(guide, GuideRecord::External { name, file });
        Ok(())
    }

    fn install_guide(&mut self, guide: GuideFields, record: GuideRecord) {
        self.guide = guide;
        self.log(Change::Guide { guide: record.clone() });
        self.guide_record = Some(record);
    }

    pub fn set_c(&mut self, c: f64) -> Result<(), RunError> {
        GuidedParams { c, ..self.params.clone() }.validate()?;
        self.params.c = c;
        self.log(Change::Params { c });
        Ok(())
    }

    /// Back to frame 0 with the current sketch, guide and `c`.
    pub fn reset(&mut self) {
        let grid = self.grid();
        let (obstacles, sources) = (self.state.obstacles.clone(), self.state.sources.clone());
        self.state = SimState::new(grid);
        self.state.obstacles = obstacles;
        self.state.sources = sources;
        self.events.clear();
        self.log(Change::Params { c: self.params.c });
        if let Some(sketch) = self.sketch.clone() {
            self.log(Change::Sketch { sketch });
        }
        if let Some(g) = self.guide_record.clone() {
            self.log(Change::Guide { guide: g });
        }
        let keep: Vec<String> = self
            .events
            .iter()
            .filter_map(|e| match &e.change {
                Change::Guide { guide: GuideRecord::External { file, .. } } => Some(file.clone()),
                _ => None,
            })
            .collect();
        self.externals.retain(|k, _| keep.contains(k));
    }

    pub fn step(&mut self) -> Result<StepReport, RunError> {
        Ok(guided_step(&mut self.state, &self.guide, &self.params)?)
    }

    pub fn density(&self) -> &ScalarField {
        &self.state.density
    }

    pub fn record(&self, session_id: &str, created_at: &str) -> RunRecord {
        RunRecord {
            session_id: session_id.into(),
            created_at: created_at.into(),
            grid: self.grid(),
            base: self.params.base.clone(),
            events: self.events.clone(),
            frame_count: self.state.frame,
            saved_frames: Vec::new(),
        }
    }

    /// Writes `record.json`, external guides and, if asked, the current
    /// density (raster and PNG) into `dir`.
    pub fn save(&self, dir: &Path, session_id: &str, created_at: &str, with_frames: bool) -> Result<RunRecord, RunError> {
        fs::create_dir_all(dir)?;
        let mut record = self.record(session_id, created_at);
        for (file, guide) in &self.externals {
            let name = match &guide.provenance {
                Provenance::External(n) => n.as_str(),
                Provenance::Baseline => "external",
            };
            let dump = serde_json::to_vec(&GuideDump::from_fields(guide, name)).expect("guide serializes");
            fs::write(dir.join(file), dump)?;
        }
        if with_frames {
            raster::write_scalar(dir.join(DENSITY_FILE), self.density())?;
            image::write_scalar_png(dir.join(FRAME_FILE), self.density())?;
            record.saved_frames = vec![DENSITY_FILE.into(), FRAME_FILE.into()];
        }
        let text = serde_json::to_string_pretty(&record).expect("record serializes");
        fs::write(dir.join(RECORD_FILE), text)?;
        Ok(record)
    }

    pub fn load_record(dir: &Path) -> Result<RunRecord, RunError> {
        let text = fs::read_to_string(dir.join(RECORD_FILE))?;
        serde_json::from_str(&text).map_err(|e| RunError::Record(e.to_string()))
    }

    /// Rebuilds a run from a saved directory by re-simulating every frame.
    pub fn replay(dir: &Path) -> Result<(Run, RunRecord), RunError> {
        let record = Run::load_record(dir)?;
        let run = Run::replay_record(&record, dir, record.frame_count)?;
        Ok((run, record))
    }

    /// Replays `record` up to frame `upto`; external guides are read from `dir`.
    pub fn replay_record(record: &RunRecord, dir: &Path, upto: u64) -> Result<Run, RunError> {
        let c0 = match record.events.first() {
            Some(RunEvent { frame: 0, change: Change::Params { c } }) => *c,
            _ => return Err(RunError::Record("record must start with the initial parameters".into())),
        };
        let mut run = Run::new(record.grid, GuidedParams { c: c0, base: record.base.clone() })?;
        run.events.clear();
        let mut pending = record.events.iter().peekable();
        loop {
            while let Some(e) = pending.next_if(|e| e.frame == run.frame()) {
                run.apply(&e.change, dir)?;
            }
            if run.frame() >= upto {
                break;
            }
            if pending.peek().is_some_and(|e| e.frame < run.frame()) {
                return Err(RunError::Record("events out of order".into()));
            }
            run.step()?;
        }
        Ok(run)
    }

    fn apply(&mut self, change: &Change, dir: &Path) -> Result<(), RunError> {
        match change {
            Change::Params { c } => self.set_c(*c),
            Change::Sketch { sketch } => self.set_sketch(sketch.clone()),
            Change::Guide { guide: GuideRecord::Baseline { sketch, params } } => {
                let guide = baseline_guide_with(sketch, params)?;
                self.install_guide(guide, GuideRecord::Baseline { sketch: sketch.clone(), params: *params });
                Ok(())
            }
            Change::Guide { guide: GuideRecord::External { file, .. } } => {
                let text = fs::read(dir.join(file))?;
                let dump: GuideDump = serde_json::from_slice(&text).map_err(|e| RunError::Record(e.to_string()))?;
                self.set_external_guide(dump.into_fields()?)
            }
        }
    }
}

/// Directory-safe name check for saved sketches and runs.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn run_dir(root: &Path, name: &str) -> PathBuf {
    root.join("runs").join(name)
}
