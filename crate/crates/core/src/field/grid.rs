use serde::{Deserialize, Serialize};

use super::{FieldError, Vec2};

/// Dimensions of a uniform 2D grid. Cell `(i, j)` covers
/// `[i*dx, (i+1)*dx] x [j*dx, (j+1)*dx]`; `j` grows upward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_dx")]
    pub dx: f64,
}

fn default_dx() -> f64 {
    1.0
}

impl GridSpec {
    pub const MIN_CELLS: usize = 4;

    pub fn new(nx: usize, ny: usize, dx: f64) -> Result<Self, FieldError> {
        let spec = GridSpec { nx, ny, dx };
        spec.validate()?;
        Ok(spec)
    }

    pub fn square(n: usize) -> Result<Self, FieldError> {
        Self::new(n, n, 1.0)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.nx < Self::MIN_CELLS || self.ny < Self::MIN_CELLS {
            return Err(FieldError::InvalidGrid(format!(
                "grid {}x{} is smaller than the {}x{} minimum",
                self.nx,
                self.ny,
                Self::MIN_CELLS,
                Self::MIN_CELLS
            )));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(FieldError::InvalidGrid(format!("cell size {} must be positive", self.dx)));
        }
        Ok(())
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.dx
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dx)
    }

    /// Clamp a world-space point into the closed domain rectangle.
    #[inline]
    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.width()), p.y.clamp(0.0, self.height()))
    }

    pub fn same_dims(&self, other: &GridSpec) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<(), FieldError> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(FieldError::DimensionMismatch {
                expected: (self.nx, self.ny),
                found: (other.nx, other.ny),
            })
        }
    }
}

impl Default for GridSpec {
    /// 256x256 unit cells, the resolution every guided simulation runs at.
    fn default() -> Self {
        GridSpec { nx: 256, ny: 256, dx: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_and_degenerate_grids() {
        assert!(GridSpec::new(3, 10, 1.0).is_err());
        assert!(GridSpec::new(10, 0, 1.0).is_err());
        assert!(GridSpec::new(10, 10, 0.0).is_err());
        assert!(GridSpec::new(10, 10, f64::NAN).is_err());
        assert!(GridSpec::new(4, 4, 0.5).is_ok());
    }

    #[test]
    fn default_is_256_unit_grid() {
        let g = GridSpec::default();
        assert_eq!((g.nx, g.ny, g.dx), (256, 256, 1.0));
    }
}
