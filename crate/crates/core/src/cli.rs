//! Command-line front end. Every command computes its outputs in memory, then writes them
//! together with a `manifest.json` that can reproduce them.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::equilibrium::{find_equilibrium, OperatingPoint};
use crate::error::{Error, Result};
use crate::linearize::linearize;
use crate::metrics::scenario_stats;
use crate::params::{SystemParams, RATED_CURRENT, RATED_STACK_TEMPERATURE};
use crate::pid::Feedback;
use crate::scenario::ScenarioFile;
use crate::sim::simulate;
use crate::tf::{closed_loop_poles, plant_transfer, HOUR};
use crate::tuner::{self, Axis, GridSpec, Scale, DEFAULT_GAMMA0, DEFAULT_TS0};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status for configuration and input validation failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for a simulation that produced a non-finite state.
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "etherm",
    version,
    about = "Delayed thermal model, linearization and PID tuning for alkaline electrolysis"
)]
pub struct Cli {
    /// System parameter file (JSON); built-in defaults when omitted.
    #[arg(long, global = true, env = "ETHERM_PARAMS")]
    pub params: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "ETHERM_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for grid scans (results do not depend on it).
    #[arg(long, global = true, env = "ETHERM_JOBS")]
    pub jobs: Option<usize>,
    /// Seed for synthetic current profiles.
    #[arg(long, global = true, env = "ETHERM_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackArg {
    After,
    Before,
}

impl From<FeedbackArg> for Feedback {
    fn from(f: FeedbackArg) -> Self {
        match f {
            FeedbackArg::After => Feedback::AfterStack,
            FeedbackArg::Before => Feedback::BeforeStack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleArg {
    Log,
    Linear,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct PointArgs {
    /// Terminal current, A.
    #[arg(long, default_value_t = RATED_CURRENT)]
    pub current: f64,
    /// After-stack temperature held at the operating point, °C.
    #[arg(long, default_value_t = RATED_STACK_TEMPERATURE)]
    pub temp: f64,
    /// Ambient temperature, °C.
    #[arg(long, default_value_t = 25.0)]
    pub t_amb: f64,
    /// Coolant inlet temperature, °C.
    #[arg(long, default_value_t = 30.0)]
    pub t_cool_in: f64,
    /// Override the lye delay, s.
    #[arg(long)]
    pub tau1: Option<f64>,
    /// Override the coolant delay, s.
    #[arg(long)]
    pub tau2: Option<f64>,
}

impl PointArgs {
    fn operating_point(&self) -> OperatingPoint {
        OperatingPoint {
            current: self.current,
            controlled_temp: self.temp,
            feedback: Feedback::AfterStack,
            t_amb: self.t_amb,
            t_cool_in: self.t_cool_in,
        }
    }

    fn apply_delays(&self, p: &SystemParams) -> Result<SystemParams> {
        let p = p.with_delays(self.tau1.unwrap_or(p.tau1), self.tau2.unwrap_or(p.tau2));
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub kp_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kp_max: f64,
    #[arg(long, default_value_t = 10)]
    pub kp_count: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub ki_min: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub ki_max: f64,
    #[arg(long, default_value_t = 10)]
    pub ki_count: usize,
    #[arg(long, default_value_t = 0.1)]
    pub kd_min: f64,
    #[arg(long, default_value_t = 100.0)]
    pub kd_max: f64,
    #[arg(long, default_value_t = 9)]
    pub kd_count: usize,
    /// Add an explicit kd = 0 sample.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub kd_zero: bool,
    #[arg(long, value_enum, default_value_t = ScaleArg::Log)]
    pub scale: ScaleArg,
}

impl GridArgs {
    pub fn grid(&self) -> GridSpec {
        let scale = match self.scale {
            ScaleArg::Log => Scale::Log,
            ScaleArg::Linear => Scale::Linear,
        };
        let axis = |min, max, count| Axis {
            min,
            max,
            count,
            scale,
            include_zero: false,
        };
        GridSpec {
            kp: axis(self.kp_min, self.kp_max, self.kp_count),
            ki: axis(self.ki_min, self.ki_max, self.ki_count),
            kd: Axis {
                include_zero: self.kd_zero,
                ..axis(self.kd_min, self.kd_max, self.kd_count)
            },
        }
    }
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Run a scenario file for each of its controllers.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Steady state with the controlled temperature pinned.
    Equilibrium {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value_t = FeedbackArg::After)]
        feedback: FeedbackArg,
    },
    /// Delayed linear model and plant transfer function.
    Linearize {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value_t = FeedbackArg::After)]
        feedback: FeedbackArg,
    },
    /// Closed-loop stability over a gain grid.
    Stability {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = FeedbackArg::After)]
        feedback: FeedbackArg,
        /// Required decay rate, 1/s.
        #[arg(long, default_value_t = 0.0)]
        sigma_margin: f64,
    },
    /// Grid-search PID tuning.
    Tune {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = FeedbackArg::After)]
        feedback: FeedbackArg,
        #[arg(long, default_value_t = DEFAULT_GAMMA0)]
        gamma0: f64,
        /// Reference settling time, s.
        #[arg(long, default_value_t = DEFAULT_TS0)]
        ts0: f64,
    },
    /// Re-tune over a grid of delays and fit the bilinear trend surfaces.
    DelaySweep {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = FeedbackArg::After)]
        feedback: FeedbackArg,
        /// Lye delays, s.
        #[arg(long, value_delimiter = ',', default_value = "0,240,480,720")]
        tau1_values: Vec<f64>,
        /// Coolant delays, s.
        #[arg(long, value_delimiter = ',', default_value = "0,240,480,720")]
        tau2_values: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_GAMMA0)]
        gamma0: f64,
        #[arg(long, default_value_t = DEFAULT_TS0)]
        ts0: f64,
    },
    /// Reproduce the outputs recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Equilibrium { .. } => "equilibrium",
            Command::Linearize { .. } => "linearize",
            Command::Stability { .. } => "stability",
            Command::Tune { .. } => "tune",
            Command::DelaySweep { .. } => "delay-sweep",
            Command::Rerun { .. } => "rerun",
        }
    }
}

/// Everything a command depends on, with file inputs inlined.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Snapshot {
    pub command: Command,
    pub params: SystemParams,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scenario: Option<ScenarioFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub snapshot: Snapshot,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

/// Named output files held in memory until the command has succeeded.
pub type Outputs = Vec<(String, Vec<u8>)>;

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn c_pair(z: num_complex::Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// Computes a snapshot's outputs without touching the file system.
pub fn execute(snapshot: &Snapshot) -> Result<Outputs> {
    let p = &snapshot.params;
    p.validate()?;
    match &snapshot.command {
        Command::Simulate { .. } => {
            let scenario = snapshot
                .scenario
                .as_ref()
                .ok_or_else(|| Error::invalid("scenario", "snapshot has no scenario"))?;
            let runs = scenario.resolve(p, snapshot.seed)?;
            let traces = {
                use rayon::prelude::*;
                runs.par_iter()
                    .map(|(name, cfg)| simulate(cfg, p).map(|t| (name.clone(), t)))
                    .collect::<Result<Vec<_>>>()?
            };
            let mut outputs = Vec::new();
            let mut stats = BTreeMap::new();
            for (name, trace) in &traces {
                let s = scenario_stats(trace, scenario.stats_window);
                let last = trace.last();
                stats.insert(
                    name.clone(),
                    json!({
                        "feedback": trace.feedback,
                        "stats": s,
                        "final_state": last.state(),
                        "final_valve": last.valve,
                        "flags": trace.flags().bits(),
                    }),
                );
                outputs.push((
                    format!("{name}_trace.csv"),
                    trace.to_csv(scenario.decimation).into_bytes(),
                ));
            }
            let best = |key: &str| {
                stats
                    .iter()
                    .min_by(|a, b| {
                        a.1["stats"][key]
                            .as_f64()
                            .unwrap()
                            .total_cmp(&b.1["stats"][key].as_f64().unwrap())
                    })
                    .map(|(n, _)| n.clone())
            };
            let comparison = json!({
                "smallest_delta_t_max": best("delta_t_max"),
                "smallest_delta_t_rms": best("delta_t_rms"),
            });
            let doc = json!({ "scenario": scenario.name, "runs": stats, "comparison": comparison });
            outputs.push(("stats.json".into(), json_bytes(&doc)?));
            Ok(outputs)
        }
        Command::Equilibrium { point, feedback } => {
            let op = OperatingPoint {
                feedback: (*feedback).into(),
                ..point.operating_point()
            };
            let eq = find_equilibrium(&point.apply_delays(p)?, &op)?;
            Ok(vec![("equilibrium.json".into(), json_bytes(&eq)?)])
        }
        Command::Linearize { point, feedback } => {
            let p = point.apply_delays(p)?;
            let eq = find_equilibrium(&p, &point.operating_point())?;
            let model = linearize(&p, &eq)?;
            let fb: Feedback = (*feedback).into();
            let tf = plant_transfer(&model, fb)?;
            let poles = tf.poles()?;
            let doc = json!({
                "feedback": fb,
                "time_unit": "h",
                "seconds_per_unit": HOUR,
                "numerator": tf.numerator,
                "denominator": tf.denominator,
                "dc_gain": tf.dc_gain(),
                "poles_per_second": poles.values().into_iter().map(c_pair).collect::<Vec<_>>(),
                "zeros_per_second": tf.zeros()?.into_iter().map(c_pair).collect::<Vec<_>>(),
            });
            Ok(vec![
                ("linear_model.json".into(), json_bytes(&model)?),
                ("plant_tf.json".into(), json_bytes(&doc)?),
            ])
        }
        Command::Stability {
            point,
            grid,
            feedback,
            sigma_margin,
        } => {
            let p = point.apply_delays(p)?;
            let eq = find_equilibrium(&p, &point.operating_point())?;
            let model = linearize(&p, &eq)?;
            let map = tuner::stability_region(&model, (*feedback).into(), &grid.grid(), *sigma_margin)?;
            let summary = json!({
                "feedback": map.feedback,
                "sigma_margin": map.sigma_margin,
                "points": map.rows.len(),
                "stable": map.stable_count(),
                "failed": map.failed_count(),
                "tau1": model.tau1,
                "tau2": model.tau2,
            });
            Ok(vec![
                ("stability_map.csv".into(), map.to_csv().into_bytes()),
                ("stability_summary.json".into(), json_bytes(&summary)?),
            ])
        }
        Command::Tune {
            point,
            grid,
            feedback,
            gamma0,
            ts0,
        } => {
            let p = point.apply_delays(p)?;
            let eq = find_equilibrium(&p, &point.operating_point())?;
            let model = linearize(&p, &eq)?;
            let result = tuner::tune(&model, (*feedback).into(), &grid.grid(), *gamma0, *ts0)?;
            let plant = plant_transfer(&model, result.best.feedback)?;
            let poles = closed_loop_poles(&model, &plant, &result.best)?;
            let doc = json!({ "result": result, "closed_loop_poles": poles });
            Ok(vec![("tuning_result.json".into(), json_bytes(&doc)?)])
        }
        Command::DelaySweep {
            point,
            grid,
            feedback,
            tau1_values,
            tau2_values,
            gamma0,
            ts0,
        } => {
            let mut delays = Vec::new();
            for &t1 in tau1_values {
                for &t2 in tau2_values {
                    delays.push((t1, t2));
                }
            }
            let surface = tuner::delay_sweep(
                p,
                &point.operating_point(),
                (*feedback).into(),
                &delays,
                &grid.grid(),
                *gamma0,
                *ts0,
            )?;
            Ok(vec![
                ("delay_surface.json".into(), json_bytes(&surface)?),
                ("delay_surface.csv".into(), surface.to_csv().into_bytes()),
            ])
        }
        Command::Rerun { .. } => Err(Error::invalid("command", "a snapshot cannot contain rerun")),
    }
}

/// Writes all outputs and the manifest; removes what was written if any write fails.
pub fn write_outputs(out_dir: &Path, outputs: &Outputs, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write_all = || -> Result<()> {
        for (name, bytes) in outputs {
            let path = out_dir.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, json_bytes(manifest)?)?;
        written.push(path);
        Ok(())
    };
    match write_all() {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            Err(e)
        }
    }
}

fn build_snapshot(cli: &Cli) -> Result<Snapshot> {
    if let Command::Rerun { manifest } = &cli.command {
        let text = std::fs::read_to_string(manifest)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        return Ok(m.snapshot);
    }
    let params = match &cli.params {
        Some(path) => SystemParams::from_file(path)?,
        None => SystemParams::default(),
    };
    let scenario = match &cli.command {
        Command::Simulate { scenario } => Some(ScenarioFile::from_file(scenario)?),
        _ => None,
    };
    Ok(Snapshot {
        command: cli.command.clone(),
        params,
        seed: cli.seed,
        scenario,
    })
}

/// Runs a parsed command line and returns the written files.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let snapshot = build_snapshot(cli)?;
    let outputs = match cli.jobs {
        Some(n) => {
            if n == 0 {
                return Err(Error::invalid("jobs", "must be >= 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid("jobs", e.to_string()))?;
            pool.install(|| execute(&snapshot))?
        }
        None => execute(&snapshot)?,
    };
    let manifest = RunManifest {
        command: snapshot.command.name().to_string(),
        version: VERSION.to_string(),
        outputs: outputs.iter().map(|(n, _)| n.clone()).collect(),
        snapshot,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_outputs(&cli.out, &outputs, &manifest)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_validation() => EXIT_VALIDATION,
        Error::NonFiniteState { .. } | Error::Aborted { .. } => EXIT_SIMULATION,
        _ => EXIT_FAILURE,
    }
}

/// Parses arguments, runs, reports to stdout/stderr and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_VALIDATION,
            };
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
