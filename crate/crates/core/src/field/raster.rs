//! `.dsfld` raster files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic      8 bytes  "DSFLD\0\0\x01"
//! components u32      1 = scalar, 2 = velocity (u, v)
//! nx, ny     u32 x2
//! dx         f32
//! data       components x ny x nx f32, row-major (y-major, x-minor)
//! ```
//!
//! Velocity is written resampled to cell centers; reading it back rebuilds
//! the staggered faces by averaging neighbouring centers.

use std::fs;
use std::path::Path;

use super::{FieldError, GridSpec, ScalarField, VelocityField};

pub const MAGIC: [u8; 8] = *b"DSFLD\0\0\x01";
const HEADER_LEN: usize = 8 + 4 * 4;

/// Raw interchange payload: one `nx*ny` f32 plane per component.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub spec: GridSpec,
    pub components: Vec<Vec<f32>>,
}

impl Raster {
    pub fn encode(&self) -> Result<Vec<u8>, FieldError> {
        let n = self.spec.cells();
        if self.components.is_empty() || self.components.len() > 2 {
            return Err(FieldError::Format(format!("unsupported component count {}", self.components.len())));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * self.components.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(self.components.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.ny as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.dx as f32).to_le_bytes());
        for plane in &self.components {
            if plane.len() != n {
                return Err(FieldError::Length { what: "raster plane", expected: n, found: plane.len() });
            }
            if plane.iter().any(|v| !v.is_finite()) {
                return Err(FieldError::NonFinite("raster plane"));
            }
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Raster, FieldError> {
        if bytes.len() < HEADER_LEN {
            return Err(FieldError::Format(format!("truncated header ({} bytes)", bytes.len())));
        }
        if bytes[..8] != MAGIC {
            return Err(FieldError::Format("bad magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap());
        let ncomp = word(0) as usize;
        let nx = word(1) as usize;
        let ny = word(2) as usize;
        let dx = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
        if !(1..=2).contains(&ncomp) {
            return Err(FieldError::Format(format!("unsupported component count {ncomp}")));
        }
        let spec = GridSpec::new(nx, ny, dx as f64).map_err(|e| FieldError::Format(e.to_string()))?;
        let n = spec.cells();
        let expected = HEADER_LEN + 4 * n * ncomp;
        if bytes.len() != expected {
            return Err(FieldError::Format(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut components = Vec::with_capacity(ncomp);
        for c in 0..ncomp {
            let base = HEADER_LEN + 4 * n * c;
            let plane: Vec<f32> = bytes[base..base + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if plane.iter().any(|v| !v.is_finite()) {
                return Err(FieldError::Format("non-finite sample".into()));
            }
            components.push(plane);
        }
        Ok(Raster { spec, components })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        let bytes = self.encode()?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Raster, FieldError> {
        let bytes = fs::read(path)?;
        Raster::decode(&bytes)
    }
}

fn to_f32_plane(values: &[f64]) -> Result<Vec<f32>, FieldError> {
    values
        .iter()
        .map(|&v| {
            let f = v as f32;
            if f.is_finite() {
                Ok(f)
            } else {
                Err(FieldError::NonFinite("raster plane"))
            }
        })
        .collect()
}

impl ScalarField {
    pub fn to_raster(&self) -> Result<Raster, FieldError> {
        Ok(Raster { spec: *self.spec(), components: vec![to_f32_plane(self.values())?] })
    }

    pub fn from_raster(r: &Raster) -> Result<ScalarField, FieldError> {
        if r.components.len() != 1 {
            return Err(FieldError::Format(format!("expected scalar raster, found {} components", r.components.len())));
        }
        ScalarField::from_values(r.spec, r.components[0].iter().map(|&v| v as f64).collect())
    }
}

impl VelocityField {
    pub fn to_raster(&self) -> Result<Raster, FieldError> {
        let (cu, cv) = self.centered();
        Ok(Raster { spec: *self.spec(), components: vec![to_f32_plane(&cu)?, to_f32_plane(&cv)?] })
    }

    pub fn from_raster(r: &Raster) -> Result<VelocityField, FieldError> {
        if r.components.len() != 2 {
            return Err(FieldError::Format(format!(
                "expected velocity raster, found {} components",
                r.components.len()
            )));
        }
        let cu: Vec<f64> = r.components[0].iter().map(|&v| v as f64).collect();
        let cv: Vec<f64> = r.components[1].iter().map(|&v| v as f64).collect();
        VelocityField::from_centered(r.spec, &cu, &cv)
    }
}

pub fn write_scalar(path: impl AsRef<Path>, field: &ScalarField) -> Result<(), FieldError> {
    field.to_raster()?.write(path)
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarField, FieldError> {
    ScalarField::from_raster(&Raster::read(path)?)
}

pub fn write_velocity(path: impl AsRef<Path>, field: &VelocityField) -> Result<(), FieldError> {
    field.to_raster()?.write(path)
}

pub fn read_velocity(path: impl AsRef<Path>) -> Result<VelocityField, FieldError> {
    VelocityField::from_raster(&Raster::read(path)?)
}
