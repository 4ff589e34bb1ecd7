//! On-disk velocity sequences: `sequence.json` plus one raster per frame.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dualsmoke_core::field::raster;
use dualsmoke_core::ftle::VelocitySequence;
use dualsmoke_core::GridSpec;
use serde::{Deserialize, Serialize};

pub const SEQUENCE_FILE: &str = "sequence.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceIndex {
    pub grid: GridSpec,
    pub dt_frame: f64,
    /// Raster files, oldest first, relative to the index.
    pub frames: Vec<String>,
}

pub fn write_sequence(dir: &Path, seq: &VelocitySequence) -> Result<SequenceIndex> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut frames = Vec::with_capacity(seq.frames().len());
    for (k, f) in seq.frames().iter().enumerate() {
        let name = format!("vel_{k:05}.dsfld");
        raster::write_velocity(dir.join(&name), f)?;
        frames.push(name);
    }
    let index = SequenceIndex { grid: *seq.spec(), dt_frame: seq.dt_frame(), frames };
    fs::write(dir.join(SEQUENCE_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

pub fn read_sequence(dir: &Path) -> Result<VelocitySequence> {
    let path = dir.join(SEQUENCE_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let index: SequenceIndex = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if index.frames.len() < 2 {
        bail!("{} lists {} frames; at least 2 are needed", path.display(), index.frames.len());
    }
    let mut frames = Vec::with_capacity(index.frames.len());
    for name in &index.frames {
        let f = raster::read_velocity(dir.join(name)).with_context(|| format!("reading {name}"))?;
        if !f.spec().same_dims(&index.grid) {
            bail!("{name} is {}x{}, index says {}x{}", f.spec().nx, f.spec().ny, index.grid.nx, index.grid.ny);
        }
        frames.push(f);
    }
    Ok(VelocitySequence::new(frames, index.dt_frame)?)
}
