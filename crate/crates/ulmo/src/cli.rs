//! Subcommand front end: simulate, fit, ssf, simstudy.
//!
//! Every command echoes its fully resolved configuration (defaults
//! included) to `<out-dir>/config.json`; rerunning with `--config` on that
//! file reproduces the outputs bit for bit. Flags always win over config
//! file values. All randomness flows from the single `--seed`.
//!
//! Exit codes: 0 success, 2 bad input, 3 non-convergence, 4 domain error
//! (e.g. a track point off the raster), 5 other numerical or I/O failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dynamics::{regular_times, simulate, MovementParams};
use crate::error::{Error, Result};
use crate::field::{load_model_spec, StationaryModel};
use crate::fit::{fit, ud_with_uncertainty, FitOptions};
use crate::raster::GridSpec;
use crate::rng;
use crate::simstudy::{run_simstudy, SimStudyConfig};
use crate::ssf::{ssf_coefficients, ssf_taylor_limits};
use crate::track::{read_tracks_csv_file, write_tracks_csv_file, Track};

#[derive(Parser, Debug)]
#[command(
    name = "ulmo",
    version,
    about = "Underdamped Langevin movement: simulation, fitting, and utilisation maps"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap worker parallelism (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories from a stationary model and write a track CSV.
    Simulate(SimulateArgs),
    /// Fit movement and habitat parameters to tracks by maximum likelihood.
    Fit(FitArgs),
    /// Tabulate exact and small-interval step-selection coefficients.
    Ssf(SsfArgs),
    /// Run the simulate-thin-fit experiment and write results CSVs.
    Simstudy(SimstudyArgs),
}

/// Parse the process arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run with explicit arguments (for tests).
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    execute(cli)
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Ignore the error when a pool already exists: thread count only
        // affects scheduling, never results.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Ssf(args) => cmd_ssf(args),
        Command::Simstudy(args) => cmd_simstudy(args),
    }
}

fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out_dir.display())))
}

fn write_config_json<C: Serialize>(out_dir: &Path, config: &C) -> Result<()> {
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::invalid(format!("config serialization: {e}")))?;
    std::fs::write(out_dir.join("config.json"), text + "\n")?;
    Ok(())
}

fn load_config_json<C: for<'de> Deserialize<'de>>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
}

fn parse_pair(s: &str, what: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::invalid(format!("{what} must be two comma-separated numbers: {s:?}")));
    }
    let a = parts[0].trim().parse().map_err(|_| Error::invalid(format!("bad {what}: {s:?}")))?;
    let b = parts[1].trim().parse().map_err(|_| Error::invalid(format!("bad {what}: {s:?}")))?;
    Ok([a, b])
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad {what}: {p:?}")))
        })
        .collect()
}

/// `x0,y0,dx,dy,ncols,nrows`.
fn parse_grid(s: &str) -> Result<GridSpec> {
    let v = parse_list(s, "grid")?;
    if v.len() != 6 {
        return Err(Error::invalid("grid must be x0,y0,dx,dy,ncols,nrows"));
    }
    GridSpec::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
}

fn default_grid(model: &StationaryModel) -> Option<GridSpec> {
    model.fields().iter().find_map(|f| match f {
        crate::field::CovariateField::Raster(g) => Some(*g.spec()),
        _ => None,
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Resolved config JSON from a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model specification file (field definitions and coefficients).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Simulated horizon in time units.
    #[arg(long)]
    t_max: Option<f64>,
    /// Simulation time step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_tracks: Option<usize>,
    /// Initial position "x,y" (default: model domain center).
    #[arg(long)]
    x0: Option<String>,
    /// Initial velocity "vx,vy".
    #[arg(long)]
    v0: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulateConfig {
    model: PathBuf,
    gamma: f64,
    sigma: f64,
    t_max: f64,
    dt: f64,
    n_tracks: usize,
    x0: Option<[f64; 2]>,
    v0: [f64; 2],
    seed: u64,
    out_dir: PathBuf,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let file: Option<SimulateConfig> =
        args.config.as_deref().map(load_config_json).transpose()?;
    let f = file.as_ref();
    let config = SimulateConfig {
        model: args
            .model
            .or_else(|| f.map(|c| c.model.clone()))
            .ok_or_else(|| Error::invalid("--model is required"))?,
        gamma: args.gamma.or(f.map(|c| c.gamma)).unwrap_or(1.0),
        sigma: args.sigma.or(f.map(|c| c.sigma)).unwrap_or(1.0),
        t_max: args.t_max.or(f.map(|c| c.t_max)).unwrap_or(100.0),
        dt: args.dt.or(f.map(|c| c.dt)).unwrap_or(0.01),
        n_tracks: args.n_tracks.or(f.map(|c| c.n_tracks)).unwrap_or(1),
        x0: match &args.x0 {
            Some(s) => Some(parse_pair(s, "x0")?),
            None => f.and_then(|c| c.x0),
        },
        v0: match &args.v0 {
            Some(s) => parse_pair(s, "v0")?,
            None => f.map(|c| c.v0).unwrap_or([0.0, 0.0]),
        },
        seed: args.seed.or(f.map(|c| c.seed)).unwrap_or(0),
        out_dir: args
            .out_dir
            .or_else(|| f.map(|c| c.out_dir.clone()))
            .ok_or_else(|| Error::invalid("--out-dir is required"))?,
    };

    let model = load_model_spec(&config.model)?;
    let params = MovementParams::new(config.gamma, config.sigma)?;
    if !(config.dt > 0.0) || !(config.t_max > config.dt) {
        return Err(Error::invalid("need t_max > dt > 0"));
    }
    let x0 = match config.x0 {
        Some(p) => p,
        None => {
            let g = default_grid(&model).ok_or_else(|| {
                Error::invalid("--x0 is required for models without raster fields")
            })?;
            [(g.x_origin + g.x_max()) / 2.0, (g.y_origin + g.y_max()) / 2.0]
        }
    };
    let n_steps = (config.t_max / config.dt).round() as usize;
    let times = regular_times(0.0, config.dt, n_steps);
    let z0 = [x0[0], config.v0[0], x0[1], config.v0[1]];

    let mut tracks: Vec<(String, Track)> = Vec::with_capacity(config.n_tracks);
    for idx in 0..config.n_tracks {
        let mut stream = rng::stream(config.seed, idx as u64);
        let track = simulate(params, &model, &z0, &times, &mut stream)
            .map_err(|e| Error::domain(format!("track {idx}: {e}")))?;
        tracks.push((idx.to_string(), track));
    }

    ensure_out_dir(&config.out_dir)?;
    write_config_json(&config.out_dir, &config)?;
    write_tracks_csv_file(config.out_dir.join("tracks.csv"), &tracks)?;
    println!(
        "wrote {} tracks of {} points to {}",
        config.n_tracks,
        n_steps + 1,
        config.out_dir.join("tracks.csv").display()
    );
    Ok(())
}

// --------------------------------------------------------------------- fit

#[derive(Args, Debug)]
struct FitArgs {
    /// Resolved config JSON from a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model specification file; coefficients in it are ignored and estimated.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Track CSV (track_id,t,x,y).
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter draws for the utilisation uncertainty maps (0 skips them).
    #[arg(long)]
    draws: Option<usize>,
    /// Grid for the UD maps as "x0,y0,dx,dy,ncols,nrows"
    /// (default: the first raster field's grid).
    #[arg(long)]
    grid: Option<String>,
    /// Random optimizer restarts after the warm start.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FitConfig {
    model: PathBuf,
    tracks: PathBuf,
    seed: u64,
    draws: usize,
    grid: Option<GridSpec>,
    options: FitOptions,
    out_dir: PathBuf,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let file: Option<FitConfig> = args.config.as_deref().map(load_config_json).transpose()?;
    let f = file.as_ref();
    let mut options = f.map(|c| c.options.clone()).unwrap_or_default();
    if let Some(r) = args.restarts {
        options.n_restarts = r;
    }
    if let Some(m) = args.max_iters {
        options.optimizer.max_iters = m;
    }
    options.seed = args.seed.or(f.map(|c| c.seed)).unwrap_or(0);
    let config = FitConfig {
        model: args
            .model
            .or_else(|| f.map(|c| c.model.clone()))
            .ok_or_else(|| Error::invalid("--model is required"))?,
        tracks: args
            .tracks
            .or_else(|| f.map(|c| c.tracks.clone()))
            .ok_or_else(|| Error::invalid("--tracks is required"))?,
        seed: options.seed,
        draws: args.draws.or(f.map(|c| c.draws)).unwrap_or(1000),
        grid: match &args.grid {
            Some(s) => Some(parse_grid(s)?),
            None => f.and_then(|c| c.grid),
        },
        options,
        out_dir: args
            .out_dir
            .or_else(|| f.map(|c| c.out_dir.clone()))
            .ok_or_else(|| Error::invalid("--out-dir is required"))?,
    };

    let model = load_model_spec(&config.model)?;
    let named_tracks = read_tracks_csv_file(&config.tracks)?;
    if named_tracks.is_empty() {
        return Err(Error::invalid(format!("no tracks in {}", config.tracks.display())));
    }
    let tracks: Vec<Track> = named_tracks.iter().map(|(_, t)| t.clone()).collect();
    // Attribute domain errors to the offending track id and row up front.
    for (id, track) in &named_tracks {
        for (row, pos) in track.positions().enumerate() {
            if !model.in_domain(pos) {
                return Err(Error::domain(format!(
                    "track {id:?} row {row} at ({}, {}) is off the raster",
                    pos[0], pos[1]
                )));
            }
        }
    }

    ensure_out_dir(&config.out_dir)?;
    write_config_json(&config.out_dir, &config)?;
    let result = fit(&tracks, &model, &config.options)?;
    let json = serde_json::to_string_pretty(&result.to_json())
        .map_err(|e| Error::numerical(format!("result serialization: {e}")))?;
    std::fs::write(config.out_dir.join("fit.json"), json + "\n")?;

    if config.draws > 0 {
        if result.covariance.is_some() {
            let grid = config
                .grid
                .or_else(|| default_grid(&model))
                .ok_or_else(|| Error::invalid("--grid is required for models without rasters"))?;
            let mut rng = rng::stream(config.seed, u64::MAX);
            let (ud, cv) = ud_with_uncertainty(&result, &model, grid, config.draws, &mut rng)?;
            ud.grid.write_ascii_file(config.out_dir.join("ud_mean.asc"))?;
            cv.grid.write_ascii_file(config.out_dir.join("ud_cv.asc"))?;
        } else {
            eprintln!("skipping uncertainty maps: observed information not positive definite");
        }
    }
    println!(
        "fit {} tracks: loglik {:.4}, converged: {}",
        tracks.len(),
        result.loglik,
        result.converged
    );
    if !result.converged {
        return Err(Error::NonConvergence(
            "optimizer hit the iteration cap; best point written to fit.json".into(),
        ));
    }
    Ok(())
}

// --------------------------------------------------------------------- ssf

#[derive(Args, Debug)]
struct SsfArgs {
    /// Resolved config JSON from a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Habitat coefficients, comma separated.
    #[arg(long)]
    beta: Option<String>,
    /// Observation intervals, comma separated.
    #[arg(long)]
    deltas: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SsfConfig {
    gamma: f64,
    sigma: f64,
    beta: Vec<f64>,
    deltas: Vec<f64>,
    out_dir: PathBuf,
}

fn cmd_ssf(args: SsfArgs) -> Result<()> {
    let file: Option<SsfConfig> = args.config.as_deref().map(load_config_json).transpose()?;
    let f = file.as_ref();
    let config = SsfConfig {
        gamma: args.gamma.or(f.map(|c| c.gamma)).unwrap_or(1.0),
        sigma: args.sigma.or(f.map(|c| c.sigma)).unwrap_or(1.0),
        beta: match &args.beta {
            Some(s) => parse_list(s, "beta")?,
            None => f.map(|c| c.beta.clone()).unwrap_or_else(|| vec![2.0, 5.0, -10.0]),
        },
        deltas: match &args.deltas {
            Some(s) => parse_list(s, "deltas")?,
            None => {
                f.map(|c| c.deltas.clone()).unwrap_or_else(|| vec![1e-3, 1e-2, 1e-1, 1.0])
            }
        },
        out_dir: args
            .out_dir
            .or_else(|| f.map(|c| c.out_dir.clone()))
            .ok_or_else(|| Error::invalid("--out-dir is required"))?,
    };

    let params = MovementParams::new(config.gamma, config.sigma)?;
    let mut csv = String::from("delta,coefficient,exact,taylor,ratio\n");
    for &delta in &config.deltas {
        let exact = ssf_coefficients(params, &config.beta, delta)?;
        let taylor = ssf_taylor_limits(params, &config.beta, delta)?;
        let mut push = |name: &str, e: f64, t: f64| {
            csv.push_str(&format!("{delta},{name},{e},{t},{}\n", e / t));
        };
        push("len2", exact.c_len2, taylor.c_len2);
        push("persist", exact.c_persist, taylor.c_persist);
        for (k, (e, t)) in exact.c_habitat.iter().zip(&taylor.c_habitat).enumerate() {
            push(&format!("habitat{}", k + 1), *e, *t);
        }
    }

    ensure_out_dir(&config.out_dir)?;
    write_config_json(&config.out_dir, &config)?;
    std::fs::write(config.out_dir.join("ssf_coefficients.csv"), csv)?;
    println!(
        "wrote step-selection coefficients for {} intervals to {}",
        config.deltas.len(),
        config.out_dir.join("ssf_coefficients.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------- simstudy

#[derive(Args, Debug)]
struct SimstudyArgs {
    /// Resolved config JSON from a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Full design (100 replicates, seven intervals) instead of desk scale.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    replicates: Option<usize>,
    /// Observation intervals, comma separated.
    #[arg(long)]
    deltas: Option<String>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimstudyCliConfig {
    study: SimStudyConfig,
    out_dir: PathBuf,
}

fn cmd_simstudy(args: SimstudyArgs) -> Result<()> {
    let file: Option<SimstudyCliConfig> =
        args.config.as_deref().map(load_config_json).transpose()?;
    let mut study = match &file {
        Some(c) => c.study.clone(),
        None if args.full_scale => SimStudyConfig::full_scale(0),
        None => SimStudyConfig::desk(0),
    };
    if let Some(r) = args.replicates {
        study.n_replicates = r;
    }
    if let Some(s) = &args.deltas {
        study.fit_deltas = parse_list(s, "deltas")?;
    }
    if let Some(t) = args.t_max {
        study.horizon = t;
    }
    if let Some(dt) = args.dt {
        study.base_dt = dt;
    }
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    let config = SimstudyCliConfig {
        study,
        out_dir: args
            .out_dir
            .or_else(|| file.map(|c| c.out_dir))
            .ok_or_else(|| Error::invalid("--out-dir is required"))?,
    };

    ensure_out_dir(&config.out_dir)?;
    write_config_json(&config.out_dir, &config)?;
    let results = run_simstudy(&config.study)?;
    std::fs::write(config.out_dir.join("simstudy_results.csv"), results.rows_csv())?;
    std::fs::write(config.out_dir.join("simstudy_summary.csv"), results.summary_csv())?;
    let failures = results.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "simulation study: {} replicates x {} intervals, {} failures",
        config.study.n_replicates,
        config.study.fit_deltas.len(),
        failures
    );
    Ok(())
}
