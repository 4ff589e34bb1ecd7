//! Defaults shared by the CLI and the service, optionally read from a
//! `key = value` file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use dualsmoke_core::ftle::FtleParams;
use dualsmoke_core::guide::{BaselineParams, ProviderSpec};
use dualsmoke_core::guided::GuidedParams;
use dualsmoke_core::lcs::LcsParams;
use dualsmoke_core::solver::SimParams;
use dualsmoke_core::GridSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Cells per side of new sessions and scenarios.
    pub grid: usize,
    pub dt: f64,
    pub alpha: f64,
    pub c: f64,
    /// FTLE integration time; negative is backward.
    #[serde(rename = "T")]
    pub ftle_t: f64,
    pub tau: f64,
    pub gaussian_sigma: f64,
    /// Scenario length for `simulate` and `dataset`.
    pub frames: usize,
    pub baseline_radius: f64,
    pub baseline_speed: f64,
    /// Default external provider command.
    pub provider: Option<String>,
    pub provider_timeout_secs: f64,
    /// Minimum wall time between session steps; 0 runs flat out.
    pub frame_interval_ms: u64,
    pub data_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let sim = SimParams::default();
        let ftle = FtleParams::default();
        let baseline = BaselineParams::default();
        Config {
            grid: GridSpec::default().nx,
            dt: sim.dt,
            alpha: sim.alpha,
            c: GuidedParams::default().c,
            ftle_t: ftle.t,
            tau: ftle.tau,
            gaussian_sigma: LcsParams::default().gaussian_sigma,
            frames: 1000,
            baseline_radius: baseline.radius,
            baseline_speed: baseline.speed,
            provider: None,
            provider_timeout_secs: 10.0,
            frame_interval_ms: 0,
            data_dir: None,
            static_dir: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Config::parse(&text).map_err(|msg| ConfigError::Parse { path: path.into(), msg })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        GridSpec::square(self.grid).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sim_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ftle_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.lcs_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(ConfigError::Invalid("c must be finite and >= 0".into()));
        }
        if !(self.provider_timeout_secs > 0.0 && self.provider_timeout_secs.is_finite()) {
            return Err(ConfigError::Invalid("provider_timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::square(self.grid).expect("validated grid")
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams { dt: self.dt, alpha: self.alpha, ..SimParams::default() }
    }

    pub fn guided_params(&self) -> GuidedParams {
        GuidedParams { c: self.c, base: self.sim_params() }
    }

    pub fn ftle_params(&self) -> FtleParams {
        FtleParams { t: self.ftle_t, tau: self.tau, ..FtleParams::default() }
    }

    pub fn lcs_params(&self) -> LcsParams {
        LcsParams { gaussian_sigma: self.gaussian_sigma, ..LcsParams::default() }
    }

    pub fn baseline_params(&self) -> BaselineParams {
        BaselineParams { radius: self.baseline_radius, speed: self.baseline_speed }
    }

    pub fn provider_spec(&self, command: Option<&str>) -> Option<ProviderSpec> {
        let command = command.map(str::to_string).or_else(|| self.provider.clone())?;
        Some(ProviderSpec { timeout: Duration::from_secs_f64(self.provider_timeout_secs), ..ProviderSpec::new(command) })
    }

    /// `DUALSMOKE_DATA_DIR` if set, else `data_dir`, else `./dualsmoke-data`.
    pub fn resolved_data_dir(&self) -> PathBuf {
        std::env::var_os("DUALSMOKE_DATA_DIR")
            .map(PathBuf::from)
            .or_else(|| self.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("dualsmoke-data"))
    }
}
