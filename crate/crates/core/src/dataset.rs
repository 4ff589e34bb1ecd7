//! Paired training data: velocity field, LCS mask and synthetic sketch.
//!
//! Each scenario emits smoke from a band on the bottom row at a random
//! horizontal position, starts with a centered square of uniformly oriented
//! velocity, and runs the solver. The backward FTLE over the last frames
//! gives the LCS, whose heat skeleton is the sketch.
//!
//! Randomness comes from ChaCha8 seeded per scenario. Scenario seeds are
//! `(base_seed << 32) | (split_bit << 31) | k`, so train and test never
//! collide.

use std::collections::{HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{image, raster, FieldError, GridSpec, MaskField, VectorField, VelocityField};
use crate::ftle::{backward_ftle_from_end, FtleError, FtleParams, VelocitySequence};
use crate::lcs::{extract_lcs, LcsError, LcsParams};
use crate::skeleton::{synthetic_sketch, HeatParams, SkeletonError};
use crate::solver::{self, SimParams, SimState, SolverError};

/// Accepted LCS area range, as a fraction of the grid.
pub const LCS_AREA_RANGE: (f64, f64) = (0.005, 0.40);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("scenario {seed}: {source}")]
    Scenario { seed: u64, source: SolverError },
    #[error(transparent)]
    Ftle(#[from] FtleError),
    #[error(transparent)]
    Lcs(#[from] LcsError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn bit(&self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub frames: usize,
    pub dt: f64,
    pub alpha: f64,
    /// Source band height and width as fractions of the grid.
    pub source_height: f64,
    pub source_width: f64,
    /// Source center in cells; drawn uniformly when absent.
    pub source_x: Option<f64>,
    /// Side of the centered square as a fraction of the grid.
    pub square_fraction: f64,
    pub square_speed: f64,
    /// Direction in radians; drawn uniformly when absent.
    pub square_angle: Option<f64>,
    /// Re-impose the square velocity before every step instead of only at frame 0.
    pub persistent_square: bool,
    pub ftle: FtleParams,
    pub lcs: LcsParams,
    pub heat: HeatParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            grid: GridSpec::default(),
            frames: 1000,
            dt: 0.1,
            alpha: 0.025,
            source_height: 0.03,
            source_width: 0.125,
            source_x: None,
            square_fraction: 0.25,
            square_speed: 1.0,
            square_angle: None,
            persistent_square: false,
            ftle: FtleParams::default(),
            lcs: LcsParams::default(),
            heat: HeatParams::default(),
        }
    }
}

impl ScenarioConfig {
    /// Frames spanned by the backward FTLE window.
    pub fn window_frames(&self) -> usize {
        (self.ftle.t.abs() / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.to_string()));
        self.grid.validate().map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
        self.ftle.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        let w = self.window_frames();
        if w == 0 || self.frames < w {
            return bad("frames must cover the backward window");
        }
        if !(self.square_fraction > 0.0 && self.square_fraction < 1.0) {
            return bad("square must lie inside the domain");
        }
        if !(self.source_width > 0.0 && self.source_width < 1.0 && self.source_height > 0.0 && self.source_height < 0.5)
        {
            return bad("source band must lie inside the domain");
        }
        if !(self.square_speed.is_finite() && self.alpha.is_finite()) {
            return bad("speed and alpha must be finite");
        }
        Ok(())
    }

    fn source_half_width(&self) -> f64 {
        (0.5 * self.source_width * self.grid.nx as f64).max(1.0)
    }

    /// Copy with the random choices drawn from `seed`.
    pub fn resolved(&self) -> ScenarioConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let hw = self.source_half_width();
        let x_draw = rng.random_range(hw..self.grid.nx as f64 - hw);
        let a_draw = rng.random_range(0.0..std::f64::consts::TAU);
        ScenarioConfig {
            source_x: Some(self.source_x.unwrap_or(x_draw)),
            square_angle: Some(self.square_angle.unwrap_or(a_draw)),
            ..self.clone()
        }
    }

    fn sim_params(&self) -> SimParams {
        SimParams { dt: self.dt, alpha: self.alpha, ..SimParams::default() }
    }

    fn sources(&self) -> MaskField {
        let s = self.grid;
        let cx = self.source_x.expect("resolved");
        let hw = self.source_half_width();
        let rows = ((self.source_height * s.ny as f64).round() as usize).max(1);
        MaskField::from_fn(s, |i, j| j < rows && ((i as f64 + 0.5) - cx).abs() <= hw)
    }

    fn impose_square(&self, vel: &mut VelocityField) {
        let s = self.grid;
        let theta = self.square_angle.expect("resolved");
        let (ux, uy) = (self.square_speed * theta.cos(), self.square_speed * theta.sin());
        let half = 0.5 * self.square_fraction;
        let (x0, x1) = ((0.5 - half) * s.width(), (0.5 + half) * s.width());
        let (y0, y1) = ((0.5 - half) * s.height(), (0.5 + half) * s.height());
        let inside = |x: f64, y: f64| x >= x0 && x <= x1 && y >= y0 && y <= y1;
        for j in 0..s.ny {
            for i in 1..s.nx {
                if inside(i as f64 * s.dx, (j as f64 + 0.5) * s.dx) {
                    let k = vel.u_idx(i, j);
                    vel.u_mut()[k] = ux;
                }
            }
        }
        for j in 1..s.ny {
            for i in 0..s.nx {
                if inside((i as f64 + 0.5) * s.dx, j as f64 * s.dx) {
                    let k = vel.v_idx(i, j);
                    vel.v_mut()[k] = uy;
                }
            }
        }
    }
}

pub struct ScenarioRun {
    /// The last `window + 1` velocity frames, oldest first.
    pub sequence: VelocitySequence,
    pub final_velocity: VelocityField,
    pub config: ScenarioConfig,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun, DatasetError> {
    config.validate()?;
    let cfg = config.resolved();
    let params = cfg.sim_params();
    let mut state = SimState::new(cfg.grid);
    state.sources = cfg.sources();
    cfg.impose_square(&mut state.vel);
    let keep = cfg.window_frames() + 1;
    let mut frames: VecDeque<VelocityField> = VecDeque::with_capacity(keep + 1);
    if cfg.frames + 1 == keep {
        frames.push_back(state.vel.clone());
    }
    let none = VectorField::zeros(cfg.grid);
    for n in 1..=cfg.frames {
        if cfg.persistent_square {
            cfg.impose_square(&mut state.vel);
        }
        solver::step(&mut state, &params, &none).map_err(|e| DatasetError::Scenario { seed: cfg.seed, source: e })?;
        if !state.vel.is_finite() {
            return Err(DatasetError::Scenario {
                seed: cfg.seed,
                source: SolverError::InvalidState(format!("non-finite velocity at frame {n}")),
            });
        }
        if n + keep > cfg.frames {
            frames.push_back(state.vel.clone());
        }
    }
    let final_velocity = state.vel;
    let sequence = VelocitySequence::new(frames.into_iter().collect(), cfg.dt)?;
    Ok(ScenarioRun { sequence, final_velocity, config: cfg })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub vf: String,
    pub lcs: String,
    pub sketch: String,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    /// Paths relative to the manifest directory.
    pub files: SampleFiles,
    pub grid: [usize; 2],
    pub created_at: String,
    pub scenario: ScenarioConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleOutcome {
    Accepted(DatasetSample),
    Rejected(Rejection),
}

pub fn scenario_seed(base_seed: u64, split: Split, k: u32) -> u64 {
    (base_seed << 32) | (split.bit() << 31) | (k as u64 & 0x7fff_ffff)
}

pub fn sample_id(split: Split, k: u32) -> String {
    format!("{}-{k:05}", split.as_str())
}

/// Timestamp for manifest rows: `SOURCE_DATE_EPOCH` when set, else now.
pub fn default_timestamp() -> String {
    let epoch = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse::<i64>().ok());
    let t = match epoch.and_then(|s| chrono::DateTime::from_timestamp(s, 0)) {
        Some(t) => t,
        None => chrono::Utc::now(),
    };
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn reject(id: &str, split: Split, seed: u64, reason: String) -> SampleOutcome {
    SampleOutcome::Rejected(Rejection { id: id.to_string(), split, seed, reason })
}

/// Runs one scenario and writes `vf.dsfld`, `lcs.png` and `sketch.png`
/// under `root/<id>/`. Unusable LCS masks are rejected, not errors.
pub fn build_sample(
    config: &ScenarioConfig,
    split: Split,
    id: &str,
    root: &Path,
    created_at: &str,
) -> Result<SampleOutcome, DatasetError> {
    let run = run_scenario(config)?;
    let cfg = run.config;
    let ftle = backward_ftle_from_end(&run.sequence, &cfg.ftle)?;
    let lcs = extract_lcs(&ftle, &cfg.lcs)?;
    let area = lcs.mask.fraction();
    if lcs.mask.is_empty() {
        return Ok(reject(id, split, cfg.seed, lcs.warning.unwrap_or_else(|| "empty LCS mask".into())));
    }
    if area < LCS_AREA_RANGE.0 || area > LCS_AREA_RANGE.1 {
        return Ok(reject(id, split, cfg.seed, format!("LCS area fraction {area:.4} out of range")));
    }
    let sketch = synthetic_sketch(&lcs.mask, &cfg.heat)?.into_mask();
    if !sketch.is_subset_of(&lcs.mask) {
        return Ok(reject(id, split, cfg.seed, "sketch leaves the LCS mask".into()));
    }
    let dir = root.join(id);
    fs::create_dir_all(&dir)?;
    raster::write_velocity(dir.join("vf.dsfld"), &run.final_velocity)?;
    image::write_mask_png(dir.join("lcs.png"), &lcs.mask)?;
    image::write_sketch_png(dir.join("sketch.png"), &sketch)?;
    let rel = |f: &str| format!("{id}/{f}");
    Ok(SampleOutcome::Accepted(DatasetSample {
        id: id.to_string(),
        split,
        seed: cfg.seed,
        files: SampleFiles { vf: rel("vf.dsfld"), lcs: rel("lcs.png"), sketch: rel("sketch.png") },
        grid: [cfg.grid.nx, cfg.grid.ny],
        created_at: created_at.to_string(),
        scenario: cfg,
    }))
}

#[derive(Clone, Debug)]
pub struct DatasetOptions {
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub base_seed: u64,
    /// Template; `seed` is replaced per sample.
    pub scenario: ScenarioConfig,
    /// Manifest timestamp; [`default_timestamp`] when absent.
    pub created_at: Option<String>,
    /// Attempts per split before giving up, as a multiple of the target count.
    pub max_attempt_factor: usize,
}

impl DatasetOptions {
    pub fn new(out_dir: impl Into<PathBuf>, n_train: usize, n_test: usize, base_seed: u64) -> Self {
        DatasetOptions {
            out_dir: out_dir.into(),
            n_train,
            n_test,
            base_seed,
            scenario: ScenarioConfig::default(),
            created_at: None,
            max_attempt_factor: 4,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.jsonl")
    }

    pub fn rejects_path(&self) -> PathBuf {
        self.out_dir.join("rejects.jsonl")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub manifest: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetSample>, DatasetError> {
    let f = File::open(path)?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| DatasetError::Manifest { line: n + 1, msg: e.to_string() })?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_rejects(path: &Path) -> Vec<Rejection> {
    let Ok(f) = File::open(path) else { return Vec::new() };
    BufReader::new(f).lines().map_while(Result::ok).filter_map(|l| serde_json::from_str(&l).ok()).collect()
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<(), DatasetError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(value).expect("row serializes");
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Builds train and test samples into `out_dir` with `manifest.jsonl` and
/// `rejects.jsonl`. Existing manifest rows and logged rejections are kept
/// and skipped, so an interrupted build resumes to the same result.
pub fn build_dataset(opts: &DatasetOptions) -> Result<DatasetSummary, DatasetError> {
    if opts.n_train == 0 || opts.n_test == 0 {
        return Err(DatasetError::InvalidConfig("n_train and n_test must be at least 1".into()));
    }
    opts.scenario.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    let manifest = opts.manifest_path();
    let existing = if manifest.exists() { read_manifest(&manifest)? } else { Vec::new() };
    let rejected_before = read_rejects(&opts.rejects_path());
    let done: HashSet<String> = existing.iter().map(|r| r.id.clone()).collect();
    let done_rejected: HashSet<String> = rejected_before.iter().map(|r| r.id.clone()).collect();
    let created_at = opts.created_at.clone().unwrap_or_else(default_timestamp);
    let batch = rayon::current_num_threads().max(1);
    let mut summary = DatasetSummary { manifest: manifest.clone(), ..Default::default() };

    for (split, target) in [(Split::Train, opts.n_train), (Split::Test, opts.n_test)] {
        let mut have = existing.iter().filter(|r| r.split == split).count();
        summary.skipped += have;
        let max_k = (target * opts.max_attempt_factor.max(1)).max(target + 8) as u32;
        let mut k = 0u32;
        while have < target && k < max_k {
            let mut ks = Vec::new();
            while ks.len() < batch && k < max_k {
                let id = sample_id(split, k);
                if !done.contains(&id) && !done_rejected.contains(&id) {
                    ks.push(k);
                }
                k += 1;
            }
            let results: Vec<(u32, Result<SampleOutcome, DatasetError>)> = ks
                .par_iter()
                .map(|&k| {
                    let cfg = ScenarioConfig { seed: scenario_seed(opts.base_seed, split, k), ..opts.scenario.clone() };
                    (k, build_sample(&cfg, split, &sample_id(split, k), &opts.out_dir, &created_at))
                })
                .collect();
            for (_, res) in results {
                match res? {
                    SampleOutcome::Accepted(row) if have < target => {
                        append_line(&manifest, &row)?;
                        have += 1;
                        summary.accepted += 1;
                    }
                    SampleOutcome::Accepted(row) => {
                        // computed past the target by a wide batch; dropped for determinism
                        let _ = fs::remove_dir_all(opts.out_dir.join(&row.id));
                    }
                    SampleOutcome::Rejected(r) if have < target => {
                        log::info!("rejected {}: {}", r.id, r.reason);
                        append_line(&opts.rejects_path(), &r)?;
                        summary.rejected += 1;
                    }
                    SampleOutcome::Rejected(_) => {}
                }
            }
        }
        if have < target {
            log::warn!("{}: only {have} of {target} samples accepted after {max_k} attempts", split.as_str());
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub samples: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks manifest rows against their files: presence, grid dims,
/// finiteness, sketch inside LCS, LCS area and unique ids and seeds.
pub fn verify(manifest: &Path) -> Result<VerifyReport, DatasetError> {
    let rows = read_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut report = VerifyReport { samples: rows.len(), problems: Vec::new() };
    let mut ids = HashSet::new();
    let mut seeds = HashSet::new();
    for row in &rows {
        let mut problem = |m: String| report.problems.push(format!("{}: {m}", row.id));
        if !ids.insert(row.id.clone()) {
            problem("duplicate id".into());
        }
        if !seeds.insert(row.seed) {
            problem("duplicate seed".into());
        }
        let spec = match GridSpec::new(row.grid[0], row.grid[1], row.scenario.grid.dx) {
            Ok(s) => s,
            Err(e) => {
                problem(format!("grid: {e}"));
                continue;
            }
        };
        match raster::read_velocity(root.join(&row.files.vf)) {
            Ok(v) if !v.spec().same_dims(&spec) => problem("velocity grid differs from manifest".into()),
            Ok(_) => {}
            Err(e) => problem(format!("vf: {e}")),
        }
        let lcs = image::read_mask_png(root.join(&row.files.lcs), Some(spec));
        let sketch = image::read_sketch_png(root.join(&row.files.sketch), Some(spec));
        match (&lcs, &sketch) {
            (Ok(l), Ok(s)) => {
                if !s.is_subset_of(l) {
                    problem("sketch not inside LCS".into());
                }
                let f = l.fraction();
                if f < LCS_AREA_RANGE.0 || f > LCS_AREA_RANGE.1 {
                    problem(format!("LCS area fraction {f:.4} out of range"));
                }
            }
            _ => {
                if let Err(e) = &lcs {
                    problem(format!("lcs: {e}"));
                }
                if let Err(e) = &sketch {
                    problem(format!("sketch: {e}"));
                }
            }
        }
    }
    Ok(report)
}
