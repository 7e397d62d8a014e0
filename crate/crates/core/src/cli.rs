//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::{load_config, RunConfig};
use crate::io::{fmt17, report_row, write_reactor, write_reports, write_snapshot, write_timeseries, TRACE_HEADER};
use crate::objective::{simulate, ControlBounds, Controls};
use crate::optimizer::{evaluate_many, optimize_raceway, RacewayOptimum};
use crate::reactor::{integrate, ReactorState};

#[derive(Debug, Parser)]
#[command(name = "raceway", version, about = "Raceway pond algae simulation and control optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Snapshot every N steps (overrides `output.snapshot_stride`).
    #[arg(long)]
    snapshot_stride: Option<usize>,
    /// Concurrent simulations.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one coupled simulation at `initial.H` and `paddle.omega`.
    Simulate(Common),
    /// Minimize the penalized cost over (H, omega).
    Optimize(Common),
    /// Integrate the well-mixed reactor.
    Reactor(Common),
    /// Evaluate the objective on a rectangular (H, omega) grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid size as `<H points>x<omega points>`.
        #[arg(long, default_value = "3x3", value_parser = parse_grid)]
        grid: (usize, usize),
    },
    /// Print mesh and geometry diagnostics.
    Info(Common),
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad grid count `{a}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad grid count `{b}`"))?;
    if a == 0 || b == 0 {
        return Err("grid counts must be positive".into());
    }
    Ok((a, b))
}

type Failure = Box<dyn std::error::Error>;

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    stride: usize,
    threads: usize,
}

impl Context {
    fn new(common: &Common) -> Result<Self, Failure> {
        let cfg = match &common.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
        let stride = common.snapshot_stride.unwrap_or(cfg.output.snapshot_stride);
        Ok(Self { cfg, out, stride, threads: common.threads as usize })
    }

    fn prepare_output(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out).map_err(|e| format!("{}: {e}", self.out.display()))?;
        let mut resolved = self.cfg.clone();
        resolved.output.directory = self.out.display().to_string();
        resolved.output.snapshot_stride = self.stride;
        fs::write(self.out.join("resolved.cfg"), resolved.to_flat_string())?;
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => Context::new(c).and_then(|ctx| cmd_simulate(&ctx)),
        Command::Optimize(c) => Context::new(c).and_then(|ctx| cmd_optimize(&ctx)),
        Command::Reactor(c) => Context::new(c).and_then(|ctx| cmd_reactor(&ctx)),
        Command::Sweep { common, grid } => Context::new(common).and_then(|ctx| cmd_sweep(&ctx, *grid)),
        Command::Info(c) => Context::new(c).and_then(|ctx| cmd_info(&ctx)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn snapshot_name(step: usize) -> String {
    format!("snapshot_{step:06}.dat")
}

/// Runs one simulation and writes its time series, report and snapshots.
fn simulate_to(ctx: &Context, controls: Controls, out: &Path) -> Result<(), Failure> {
    let scenario = ctx.cfg.scenario()?;
    let n_steps = scenario.n_steps()?;
    let stride = ctx.stride;
    let mesh = &scenario.mesh;
    let g = scenario.hydro.gravity;
    let outcome = simulate(&scenario, controls, &mut |step, flow, species| {
        if (stride > 0 && step % stride == 0) || step == n_steps {
            write_snapshot(&out.join(snapshot_name(step)), mesh, flow, species, step, g)?;
        }
        Ok(())
    })?;
    let r = &outcome.report;
    write_timeseries(&out.join("timeseries.csv"), &r.timeseries)?;
    write_reports(&out.join("report.csv"), &[report_row(controls.height, controls.omega, Some(r))])?;
    println!(
        "H = {}, omega = {}: j_raw = {:.10e}, j_tilde = {:.10e}, mean A = {:.6e}",
        controls.height, controls.omega, r.j_raw, r.j_tilde, r.mean_a
    );
    Ok(())
}

fn cmd_simulate(ctx: &Context) -> Result<(), Failure> {
    ctx.prepare_output()?;
    simulate_to(ctx, ctx.cfg.controls(), &ctx.out)
}

fn write_trace(path: &Path, opt: &RacewayOptimum) -> Result<(), Failure> {
    let mut text = format!("{TRACE_HEADER}\n");
    for rec in &opt.trace.records {
        let c = opt.controls_at(&rec.best_point);
        let (j_raw, pen) = match opt.report_at(&rec.best_point) {
            Some(r) => (r.j_raw, rec.best_value - r.j_raw),
            None => (f64::INFINITY, f64::INFINITY),
        };
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.iter,
            rec.movement.as_str(),
            fmt17(c.height),
            fmt17(c.omega),
            fmt17(j_raw),
            fmt17(pen),
            fmt17(rec.best_value)
        ));
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn cmd_optimize(ctx: &Context) -> Result<(), Failure> {
    ctx.prepare_output()?;
    let scenario = ctx.cfg.scenario()?;
    let opts = ctx.cfg.optim_options(ctx.threads);
    let opt = optimize_raceway(&scenario, &opts)?;
    write_trace(&ctx.out.join("trace.csv"), &opt)?;
    let rows: Vec<String> = opt
        .evaluations
        .iter()
        .map(|e| report_row(e.controls.height, e.controls.omega, e.report.as_ref()))
        .collect();
    write_reports(&ctx.out.join("evaluations.csv"), &rows)?;
    write_reports(&ctx.out.join("report.csv"), &[report_row(opt.best.height, opt.best.omega, Some(&opt.report))])?;
    write_timeseries(&ctx.out.join("timeseries.csv"), &opt.report.timeseries)?;
    if ctx.stride > 0 {
        let best_dir = ctx.out.join("best");
        fs::create_dir_all(&best_dir)?;
        simulate_to(ctx, opt.best, &best_dir)?;
    }
    println!(
        "best H = {}, omega = {}: j_tilde = {:.10e} after {} iterations and {} simulations (stop: {:?})",
        opt.best.height,
        opt.best.omega,
        opt.report.j_tilde,
        opt.trace.records.len() - 1,
        opt.evaluations.len(),
        opt.trace.stop
    );
    Ok(())
}

fn cmd_reactor(ctx: &Context) -> Result<(), Failure> {
    ctx.prepare_output()?;
    let cfg = &ctx.cfg;
    let dt = cfg.hydro.dt;
    let n = (cfg.objective.horizon / dt).round() as usize;
    let start = ReactorState { values: cfg.initial_values(), time: 0.0 };
    // mid-column light for either depth convention
    let depth = 0.5 * cfg.initial.height;
    let traj = if n == 0 {
        vec![start]
    } else {
        integrate(&start, &cfg.bio_params(), &cfg.forcings(), depth, dt, n)?
    };
    write_reactor(&ctx.out.join("reactor.csv"), &traj)?;
    let last = traj.last().expect("initial state");
    println!("t = {}: A = {:.10e}, O = {:.10e}", last.time, last.values[0], last.values[7]);
    Ok(())
}

/// `count` evenly spaced values from `lo` to `hi`; the midpoint when `count` is 1.
pub fn grid_axis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|i| if i + 1 == count { hi } else { lo + (hi - lo) * i as f64 / (count - 1) as f64 }).collect()
}

/// Grid points with H varying slowest.
pub fn grid_points(bounds: &ControlBounds, grid: (usize, usize)) -> Vec<Controls> {
    let hs = grid_axis(bounds.h_min, bounds.h_max, grid.0);
    let ws = grid_axis(bounds.w_min, bounds.w_max, grid.1);
    hs.iter().flat_map(|&h| ws.iter().map(move |&w| Controls { height: h, omega: w })).collect()
}

fn cmd_sweep(ctx: &Context, grid: (usize, usize)) -> Result<(), Failure> {
    ctx.prepare_output()?;
    let scenario = ctx.cfg.scenario()?;
    let points = grid_points(&ctx.cfg.bounds(), grid);
    let results = evaluate_many(&scenario, &points, ctx.threads);
    let mut rows = Vec::with_capacity(points.len());
    for (c, r) in points.iter().zip(&results) {
        if let Err(e) = r {
            log::warn!("H = {}, omega = {}: {e}", c.height, c.omega);
        }
        rows.push(report_row(c.height, c.omega, r.as_ref().ok()));
    }
    write_reports(&ctx.out.join("sweep.csv"), &rows)?;
    let best = points
        .iter()
        .zip(&results)
        .filter_map(|(c, r)| r.as_ref().ok().map(|r| (c, r.j_tilde)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((c, j)) = best {
        println!("grid minimum at H = {}, omega = {}: j_tilde = {:.10e}", c.height, c.omega, j);
    }
    Ok(())
}

fn cmd_info(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let scenario = cfg.scenario()?;
    let g = cfg.geometry();
    println!("geometry: L = {}, W = {}, r = {}, R = {}", g.straight_length, g.channel_width, g.inner_radius, g.outer_radius);
    println!("{}", scenario.mesh.summary());
    let eta = vec![cfg.initial.height; scenario.mesh.n_plan()];
    let region = scenario.paddle.region(&scenario.mesh, &eta);
    println!(
        "paddle region at H = {}: {} cells, volume {:.6} m^3 (cylinder bound {:.6} m^3)",
        cfg.initial.height,
        region.cells.len(),
        region.volume(&scenario.mesh, &eta),
        std::f64::consts::PI * g.channel_width * cfg.paddle.rho * cfg.paddle.rho
    );
    println!("time steps: {} of {} s", scenario.n_steps()?, cfg.hydro.dt);
    info!("configuration resolved");
    Ok(())
}
