//! Python bindings. Grids cross the boundary as nested lists indexed `[j][i]`
//! (row `j` is the `y` index, row 0 at the bottom).

use dualsmoke_core::dataset::{run_scenario, ScenarioConfig};
use dualsmoke_core::ftle::{backward_ftle_from_end, ftle_field, FtleParams, VelocitySequence};
use dualsmoke_core::guide::{baseline_guide_with, BaselineParams, GuideFields, SketchDoc};
use dualsmoke_core::guided::{apply_sketch, guided_step, mean_guide_speed, tracking_error, GuidedParams};
use dualsmoke_core::lcs::{extract_lcs, LcsParams};
use dualsmoke_core::skeleton::{synthetic_sketch, HeatParams};
use dualsmoke_core::solver::{step, SimParams, SimState};
use dualsmoke_core::{GridSpec, MaskField, ScalarField, VectorField};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows<T: Copy>(nx: usize, flat: &[T]) -> Vec<Vec<T>> {
    flat.chunks(nx).map(<[T]>::to_vec).collect()
}

fn flatten<T: Copy>(grid: &[Vec<T>]) -> PyResult<(GridSpec, Vec<T>)> {
    let ny = grid.len();
    let nx = grid.first().map_or(0, Vec::len);
    if grid.iter().any(|r| r.len() != nx) {
        return Err(err("ragged grid"));
    }
    let spec = GridSpec::new(nx, ny, 1.0).map_err(err)?;
    Ok((spec, grid.concat()))
}

fn scalar_rows(f: &ScalarField) -> Vec<Vec<f64>> {
    rows(f.spec().nx, f.values())
}

fn mask_rows(m: &MaskField) -> Vec<Vec<bool>> {
    rows(m.spec().nx, m.cells())
}

fn parse_sketch(json: &str) -> PyResult<SketchDoc> {
    let doc = SketchDoc::from_json(json).map_err(err)?;
    doc.validate().map_err(err)?;
    Ok(doc)
}

/// Backward window of velocity frames from a randomized training scenario.
#[pyclass(frozen)]
struct Sequence {
    inner: VelocitySequence,
}

#[pymethods]
impl Sequence {
    fn __len__(&self) -> usize {
        self.inner.frames().len()
    }

    #[getter]
    fn dt_frame(&self) -> f64 {
        self.inner.dt_frame()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        let s = self.inner.spec();
        (s.ny, s.nx)
    }

    /// FTLE field. Without `t0`, a negative horizon runs backward from the last frame.
    #[pyo3(signature = (t=-2.5, tau=0.1, substep=None, t0=None))]
    fn ftle(&self, py: Python<'_>, t: f64, tau: f64, substep: Option<f64>, t0: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let p = FtleParams { t, tau, substep_dt: substep };
        let f = py
            .detach(|| match t0 {
                None if t < 0.0 => backward_ftle_from_end(&self.inner, &p),
                t0 => ftle_field(&self.inner, t0.unwrap_or(0.0), &p),
            })
            .map_err(err)?;
        Ok(scalar_rows(&f))
    }

    /// Cell-centered `(u, v)` of frame `k`.
    fn velocity(&self, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let f = self.inner.frames().get(k).ok_or_else(|| err("frame index out of range"))?;
        let (u, v) = f.centered();
        let nx = self.inner.spec().nx;
        Ok((rows(nx, &u), rows(nx, &v)))
    }
}

/// Runs one randomized scenario and returns its backward window.
#[pyfunction]
#[pyo3(signature = (seed, grid=256, frames=1000))]
fn simulate(py: Python<'_>, seed: u64, grid: usize, frames: usize) -> PyResult<Sequence> {
    let spec = GridSpec::square(grid).map_err(err)?;
    let cfg = ScenarioConfig { seed, grid: spec, frames, ..ScenarioConfig::default() };
    let run = py.detach(|| run_scenario(&cfg)).map_err(err)?;
    Ok(Sequence { inner: run.sequence })
}

/// LCS mask and threshold of an FTLE field.
#[pyfunction]
#[pyo3(signature = (ftle, sigma=1.0, seed=0))]
fn lcs(ftle: Vec<Vec<f64>>, sigma: f64, seed: u64) -> PyResult<(Vec<Vec<bool>>, Option<f64>)> {
    let (spec, values) = flatten(&ftle)?;
    let f = ScalarField::from_values(spec, values).map_err(err)?;
    let out = extract_lcs(&f, &LcsParams { gaussian_sigma: sigma, seed, ..LcsParams::default() }).map_err(err)?;
    Ok((mask_rows(&out.mask), out.threshold))
}

/// One-pixel synthetic sketch of a mask.
#[pyfunction]
fn skeletonize(mask: Vec<Vec<bool>>) -> PyResult<Vec<Vec<bool>>> {
    let (spec, cells) = flatten(&mask)?;
    let m = MaskField::from_cells(spec, cells).map_err(err)?;
    let sk = synthetic_sketch(&m, &HeatParams::default()).map_err(err)?;
    Ok(mask_rows(sk.pixels()))
}

/// Baseline guide of a sketch document: cell-centered `(u, v, omega)`.
#[pyfunction]
#[pyo3(signature = (sketch_json, radius=4.0, speed=1.0))]
fn baseline_guide(sketch_json: &str, radius: f64, speed: f64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    let doc = parse_sketch(sketch_json)?;
    let g = baseline_guide_with(&doc, &BaselineParams { radius, speed }).map_err(err)?;
    let (u, v) = g.u_g.centered();
    let nx = doc.canvas.nx;
    Ok((rows(nx, &u), rows(nx, &v), mask_rows(&g.omega)))
}

/// A guided smoke simulation driven by the baseline guide of a sketch.
#[pyclass]
struct GuidedSim {
    state: SimState,
    guide: GuideFields,
    params: GuidedParams,
}

#[pymethods]
impl GuidedSim {
    #[new]
    #[pyo3(signature = (sketch_json, c=1.0))]
    fn new(sketch_json: &str, c: f64) -> PyResult<Self> {
        let doc = parse_sketch(sketch_json)?;
        let guide = baseline_guide_with(&doc, &BaselineParams::default()).map_err(err)?;
        let mut state = SimState::new(doc.canvas);
        apply_sketch(&mut state, &doc).map_err(err)?;
        let params = GuidedParams { c, ..GuidedParams::default() };
        params.validate().map_err(err)?;
        Ok(GuidedSim { state, guide, params })
    }

    #[getter]
    fn get_c(&self) -> f64 {
        self.params.c
    }

    #[setter]
    fn set_c(&mut self, c: f64) -> PyResult<()> {
        let p = GuidedParams { c, ..self.params.clone() };
        p.validate().map_err(err)?;
        self.params = p;
        Ok(())
    }

    #[getter]
    fn frame(&self) -> u64 {
        self.state.frame
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.time
    }

    /// Advances `n` steps; `guided=False` steps without the guiding force.
    #[pyo3(signature = (n=1, guided=true))]
    fn step(&mut self, py: Python<'_>, n: usize, guided: bool) -> PyResult<()> {
        let (state, guide, params) = (&mut self.state, &self.guide, &self.params);
        py.detach(|| {
            for _ in 0..n {
                if guided {
                    guided_step(state, guide, params).map_err(|e| e.to_string())?;
                } else {
                    let none = VectorField::zeros(*state.spec());
                    step(state, &params.base, &none).map_err(|e| e.to_string())?;
                }
            }
            Ok::<_, String>(())
        })
        .map_err(err)
    }

    fn density(&self) -> Vec<Vec<f64>> {
        scalar_rows(&self.state.density)
    }

    fn tracking_error(&self) -> Option<f64> {
        tracking_error(&self.state.vel, &self.guide)
    }

    fn guide_speed(&self) -> Option<f64> {
        mean_guide_speed(&self.guide)
    }
}

/// Default solver, FTLE and LCS parameters as a dict.
#[pyfunction]
fn defaults(py: Python<'_>) -> PyResult<Bound<'_, pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    let (s, f, l, g) = (SimParams::default(), FtleParams::default(), LcsParams::default(), GuidedParams::default());
    d.set_item("dt", s.dt)?;
    d.set_item("alpha", s.alpha)?;
    d.set_item("T", f.t)?;
    d.set_item("tau", f.tau)?;
    d.set_item("gaussian_sigma", l.gaussian_sigma)?;
    d.set_item("c", g.c)?;
    d.set_item("grid", ScenarioConfig::default().grid.nx)?;
    Ok(d)
}

#[pymodule]
fn dualsmoke_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Sequence>()?;
    m.add_class::<GuidedSim>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(lcs, m)?)?;
    m.add_function(wrap_pyfunction!(skeletonize, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_guide, m)?)?;
    m.add_function(wrap_pyfunction!(defaults, m)?)?;
    Ok(())
}
