//! `dualsmoke` subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dualsmoke_core::dataset::{build_dataset, run_scenario, verify, DatasetOptions, ScenarioConfig};
use dualsmoke_core::field::{image, raster};
use dualsmoke_core::ftle::{backward_ftle_from_end, ftle_field};
use dualsmoke_core::guide::{external_guide, SketchDoc};
use dualsmoke_core::lcs::extract_lcs;
use dualsmoke_core::skeleton::{synthetic_sketch, HeatParams};
use serde_json::{json, Value};

use crate::config::Config;
use crate::io::{read_sequence, write_sequence};
use crate::run::{now_rfc3339, Run};

#[derive(Parser, Debug)]
#[command(name = "dualsmoke", version, about = "Sketch-guided smoke simulation and LCS dataset tools")]
pub struct Cli {
    /// Defaults file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Run one random plume scenario and write its final velocity window.
    Simulate(SimulateArgs),
    /// FTLE field of a velocity sequence.
    Ftle(FtleArgs),
    /// Threshold an FTLE raster into an LCS mask.
    Lcs(LcsArgs),
    /// Synthetic sketch of an LCS mask.
    Sketch(SketchArgs),
    /// Build a paired dataset.
    Dataset(DatasetArgs),
    /// Guided simulation of a sketch document.
    GuidedRun(GuidedRunArgs),
    /// Check a dataset manifest against its files.
    Verify(VerifyArgs),
    /// HTTP simulation service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FtleArgs {
    /// Sequence directory written by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Integration time; negative is backward from the last frame.
    #[arg(long = "T", allow_hyphen_values = true)]
    pub t: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub substep: Option<f64>,
    /// Start time; defaults to the sequence end for backward and 0 for forward.
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LcsArgs {
    /// FTLE raster.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output mask PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SketchArgs {
    /// LCS mask PNG.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[arg(long)]
    pub train: usize,
    #[arg(long)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GuidedRunArgs {
    /// Sketch document (JSON).
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub frames: u64,
    #[arg(long, default_value = "guided-out")]
    pub out: PathBuf,
    /// External guide provider command; the baseline guide is used otherwise.
    #[arg(long)]
    pub provider: Option<String>,
    /// Fail instead of falling back to the baseline guide when the provider fails.
    #[arg(long)]
    pub no_fallback: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Persistence root; overrides `DUALSMOKE_DATA_DIR` and the config.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Directory of static UI assets served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            }
            0
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn say(cli: &Cli, msg: String) {
    if !cli.json {
        println!("{msg}");
    }
}

pub fn execute(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Cmd::Simulate(a) => simulate(cli, &cfg, a),
        Cmd::Ftle(a) => ftle(cli, &cfg, a),
        Cmd::Lcs(a) => lcs(cli, &cfg, a),
        Cmd::Sketch(a) => sketch(cli, a),
        Cmd::Dataset(a) => dataset(cli, &cfg, a),
        Cmd::GuidedRun(a) => guided_run(cli, &cfg, a),
        Cmd::Verify(a) => verify_cmd(cli, a),
        Cmd::Serve(a) => serve(cli, &cfg, a),
    }
}

fn scenario_template(cfg: &Config, grid: Option<usize>, frames: Option<usize>) -> Result<ScenarioConfig> {
    let sc = ScenarioConfig {
        grid: dualsmoke_core::GridSpec::square(grid.unwrap_or(cfg.grid))?,
        frames: frames.unwrap_or(cfg.frames),
        dt: cfg.dt,
        alpha: cfg.alpha,
        ftle: cfg.ftle_params(),
        lcs: cfg.lcs_params(),
        ..ScenarioConfig::default()
    };
    sc.validate()?;
    Ok(sc)
}

fn simulate(cli: &Cli, cfg: &Config, a: &SimulateArgs) -> Result<Value> {
    let sc = ScenarioConfig { seed: a.seed, ..scenario_template(cfg, a.grid, a.frames)? };
    let run = run_scenario(&sc)?;
    let index = write_sequence(&a.out, &run.sequence)?;
    raster::write_velocity(a.out.join("final.dsfld"), &run.final_velocity)?;
    fs::write(a.out.join("scenario.json"), serde_json::to_string_pretty(&run.config)?)?;
    say(cli, format!("wrote {} frames to {}", index.frames.len(), a.out.display()));
    Ok(json!({
        "out": a.out,
        "frames": index.frames.len(),
        "dt_frame": index.dt_frame,
        "max_speed": run.final_velocity.max_speed(),
        "scenario": run.config,
    }))
}

fn ftle(cli: &Cli, cfg: &Config, a: &FtleArgs) -> Result<Value> {
    let seq = read_sequence(&a.input)?;
    let mut p = cfg.ftle_params();
    if let Some(t) = a.t {
        p.t = t;
    }
    if let Some(tau) = a.tau {
        p.tau = tau;
    }
    p.substep_dt = a.substep.or(p.substep_dt);
    p.validate()?;
    let field = match a.t0 {
        None if p.t < 0.0 => backward_ftle_from_end(&seq, &p)?,
        None => ftle_field(&seq, 0.0, &p)?,
        Some(t0) => ftle_field(&seq, t0, &p)?,
    };
    raster::write_scalar(&a.out, &field)?;
    if let Some(png) = &a.png {
        image::write_scalar_png(png, &field)?;
    }
    say(cli, format!("FTLE in [{:.4}, {:.4}] written to {}", field.min(), field.max(), a.out.display()));
    Ok(json!({ "out": a.out, "T": p.t, "tau": p.tau, "min": field.min(), "max": field.max() }))
}

fn lcs(cli: &Cli, cfg: &Config, a: &LcsArgs) -> Result<Value> {
    let field = raster::read_scalar(&a.input)?;
    let mut p = cfg.lcs_params();
    if let Some(s) = a.sigma {
        p.gaussian_sigma = s;
    }
    p.seed = a.seed;
    let x = extract_lcs(&field, &p)?;
    image::write_mask_png_1bit(&a.out, &x.mask)?;
    if let Some(w) = &x.warning {
        log::warn!("{w}");
    }
    say(cli, format!("LCS covers {:.1}% of the grid", 100.0 * x.mask.fraction()));
    Ok(json!({
        "out": a.out,
        "threshold": x.threshold,
        "fraction": x.mask.fraction(),
        "model": x.model,
        "warning": x.warning,
    }))
}

fn sketch(cli: &Cli, a: &SketchArgs) -> Result<Value> {
    let mask = image::read_mask_png(&a.input, None)?;
    let sk = synthetic_sketch(&mask, &HeatParams::default())?;
    image::write_sketch_png(&a.out, sk.pixels())?;
    say(cli, format!("{} sketch pixels written to {}", sk.pixels().count(), a.out.display()));
    Ok(json!({ "out": a.out, "pixels": sk.pixels().count() }))
}

fn dataset(cli: &Cli, cfg: &Config, a: &DatasetArgs) -> Result<Value> {
    let opts = DatasetOptions {
        scenario: scenario_template(cfg, a.grid, a.frames)?,
        ..DatasetOptions::new(&a.out, a.train, a.test, a.seed)
    };
    let s = build_dataset(&opts)?;
    say(cli, format!("{} accepted, {} rejected, {} already present", s.accepted, s.rejected, s.skipped));
    Ok(json!({ "manifest": s.manifest, "accepted": s.accepted, "rejected": s.rejected, "skipped": s.skipped }))
}

fn guided_run(cli: &Cli, cfg: &Config, a: &GuidedRunArgs) -> Result<Value> {
    let text = fs::read_to_string(&a.sketch).with_context(|| format!("reading {}", a.sketch.display()))?;
    let doc = SketchDoc::from_json(&text)?;
    let mut params = cfg.guided_params();
    if let Some(c) = a.c {
        params.c = c;
    }
    let mut run = Run::new(doc.canvas, params)?;
    run.set_sketch(doc.clone())?;
    let mut guide_source = "baseline".to_string();
    let mut fallback = false;
    match cfg.provider_spec(a.provider.as_deref()) {
        Some(spec) => match external_guide(&doc, &spec) {
            Ok(g) => {
                guide_source = spec.display_name();
                run.set_external_guide(g)?;
            }
            Err(e) if !a.no_fallback => {
                log::warn!("provider failed, using the baseline guide: {e}");
                fallback = true;
                run.set_baseline_guide(&cfg.baseline_params())?;
            }
            Err(e) => return Err(e.into()),
        },
        None => run.set_baseline_guide(&cfg.baseline_params())?,
    }
    fs::create_dir_all(&a.out)?;
    for _ in 0..a.frames {
        let report = run.step()?;
        if !report.converged() {
            log::warn!("pressure solve did not converge at frame {}", run.frame());
        }
        image::write_scalar_png(a.out.join(format!("frame_{:05}.png", run.frame())), run.density())?;
    }
    let record = run.save(&a.out, "cli", &now_rfc3339(), false)?;
    raster::write_scalar(a.out.join(crate::run::DENSITY_FILE), run.density())?;
    say(cli, format!("{} frames written to {}", a.frames, a.out.display()));
    Ok(json!({
        "out": a.out,
        "frames": record.frame_count,
        "c": run.params.c,
        "guide": guide_source,
        "fallback": fallback,
        "density_max": run.density().max(),
    }))
}

fn verify_cmd(cli: &Cli, a: &VerifyArgs) -> Result<Value> {
    let report = verify(&a.manifest)?;
    for p in &report.problems {
        eprintln!("{p}");
    }
    if !report.ok() {
        if cli.json {
            println!("{}", serde_json::to_string(&report)?);
        }
        bail!("{} problem(s) in {} samples", report.problems.len(), report.samples);
    }
    say(cli, format!("{} samples ok", report.samples));
    Ok(serde_json::to_value(&report)?)
}

fn serve(cli: &Cli, cfg: &Config, a: &ServeArgs) -> Result<Value> {
    let data_dir = a.data_dir.clone().unwrap_or_else(|| cfg.resolved_data_dir());
    let static_dir = a.static_dir.clone().or_else(|| cfg.static_dir.clone());
    let app = crate::service::AppState::new(cfg.clone(), &data_dir)?;
    let rt = tokio::runtime::Runtime::new()?;
    let saved = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        let addr = listener.local_addr()?;
        say(cli, format!("listening on http://{addr}, data in {}", data_dir.display()));
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        Ok::<_, anyhow::Error>(crate::service::serve(listener, app, static_dir, shutdown).await?)
    })?;
    say(cli, format!("persisted {} session(s)", saved.len()));
    Ok(json!({ "persisted": saved }))
}
