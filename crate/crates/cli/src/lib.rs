//! Command-line front end: calibrate, train, simulate, bench and compare.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage, config or parse error,
//! 3 numeric failure (including a training run that did not improve),
//! 4 missing input file or network.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use turbidostat::bench::{
    compare, run_replicates, ControllerFactory, ExperimentSchedule, MetricReport, Segment,
};
use turbidostat::calibration::{
    fit_replicates, generate_protocol, pmse, run_protocol, simulate_model, PROTOCOL_INITIAL_OD,
};
use turbidostat::config::RunConfig;
use turbidostat::controllers::{Controller, MpcController, PiController};
use turbidostat::dqn::{greedy_policy, load_network, save_network, train, QNetwork};
use turbidostat::{Error, Trajectory};

const SYNTHETIC_REPLICATES: u64 = 3;
const HELD_OUT_NOISE_OFFSET: u64 = 1000;

#[derive(Parser)]
#[command(
    name = "turbidostat",
    version,
    about = "Simulate, calibrate, train and benchmark turbidostat controllers"
)]
struct Cli {
    /// Run configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training and the first bench replicate (replicates use N, N+1, N+2).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit growth rate and dilution scale to open-loop data.
    Calibrate {
        /// Open-loop CSVs with columns time_min, od, pump_rate.
        data: Vec<PathBuf>,
        /// Generate three synthetic open-loop replicates from the configured model first.
        #[arg(long, value_name = "SEED")]
        synthesize: Option<u64>,
    },
    /// Train the DQN controller on the simulator.
    Train {
        /// Network file to write; defaults to OUT/qnet.txt.
        #[arg(long)]
        qnet: Option<PathBuf>,
    },
    /// One closed-loop run at a fixed setpoint and temperature.
    Simulate {
        #[arg(long, value_enum, default_value = "pi")]
        controller: ControllerKind,
        #[arg(long, default_value_t = 0.5)]
        setpoint: f64,
        #[arg(long, default_value_t = 0.8)]
        initial_od: f64,
        /// Minutes.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 37.0)]
        temp: f64,
        #[arg(long)]
        qnet: Option<PathBuf>,
    },
    /// Replicated runs of one controller on one experiment schedule.
    Bench {
        #[arg(value_enum)]
        controller: ControllerKind,
        #[arg(value_enum)]
        schedule: ScheduleKind,
        #[arg(long)]
        qnet: Option<PathBuf>,
    },
    /// DQN, PI and MPC on both schedules, summarized as ISE/ITAE.
    Compare {
        #[arg(long)]
        qnet: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerKind {
    Dqn,
    Pi,
    Mpc,
}

impl ControllerKind {
    fn label(self) -> &'static str {
        match self {
            ControllerKind::Dqn => "DQN",
            ControllerKind::Pi => "PI",
            ControllerKind::Mpc => "MPC",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleKind {
    Staircase,
    Tempstep,
}

impl ScheduleKind {
    fn name(self) -> &'static str {
        match self {
            ScheduleKind::Staircase => "staircase",
            ScheduleKind::Tempstep => "tempstep",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::NotConverged(_) => 3,
            Failure::Lib(e) => match e.root() {
                Error::NonFinite(_) | Error::Diverged { .. } | Error::Identifiability(_) => 3,
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 4,
                Error::Io { .. } => 1,
                _ => 2,
            },
        }
    }
}

/// Text for standard output on success.
type CmdResult = std::result::Result<String, Failure>;

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_out(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.dqn.seed = seed;
        let n = cfg.bench.seeds.len() as u64;
        cfg.bench.seeds = (0..n).map(|i| seed + i).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn qnet_path(cli: &Cli, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cli.out.join("qnet.txt"))
}

fn factory<'a>(
    kind: ControllerKind,
    cfg: &'a RunConfig,
    net: Option<&'a QNetwork>,
) -> ControllerFactory<'a> {
    match kind {
        ControllerKind::Pi => Box::new(move || {
            Ok(Box::new(PiController::new(cfg.pi, cfg.pi_dt)) as Box<dyn Controller + Send>)
        }),
        ControllerKind::Mpc => Box::new(move || {
            Ok(Box::new(MpcController::new(cfg.mpc_config())?) as Box<dyn Controller + Send>)
        }),
        ControllerKind::Dqn => {
            let policy = greedy_policy(net.expect("network loaded for DQN").clone());
            Box::new(move || Ok(Box::new(policy.clone()) as Box<dyn Controller + Send>))
        }
    }
}

fn load_net_if(kind: ControllerKind, path: &Path) -> Result<Option<QNetwork>, Error> {
    match kind {
        ControllerKind::Dqn => load_network(path).map(Some).map_err(|e| {
            e.context(format!(
                "DQN controller needs a trained network at {}",
                path.display()
            ))
        }),
        _ => Ok(None),
    }
}

fn cmd_calibrate(
    cli: &Cli,
    cfg: &RunConfig,
    data: &[PathBuf],
    synthesize: Option<u64>,
) -> CmdResult {
    if data.is_empty() && synthesize.is_none() {
        return Err(Error::InvalidParameter(
            "give at least one data CSV or --synthesize SEED".into(),
        )
        .into());
    }
    let mut runs = data
        .iter()
        .map(|p| Trajectory::load_csv(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut held_out = None;
    let mut synthetic = Vec::new();
    if let Some(seed) = synthesize {
        let protocol = generate_protocol(seed);
        let x0 = PROTOCOL_INITIAL_OD;
        for r in 0..SYNTHETIC_REPLICATES {
            synthetic.push(run_protocol(&protocol, &cfg.growth, x0, seed + r)?);
        }
        held_out = Some(run_protocol(
            &protocol,
            &cfg.growth,
            x0,
            seed + HELD_OUT_NOISE_OFFSET,
        )?);
        runs.extend(synthetic.iter().cloned());
    }

    let fit = fit_replicates(&runs, (cfg.growth.mu(), cfg.growth.tau()))
        .map_err(|e| e.context("calibration"))?;
    let mut report = fit.to_key_values();
    if let Some(h) = &held_out {
        let model = simulate_model(h, fit.mu_hat, fit.tau_hat)?;
        report.push_str(&format!("held_out_pmse_percent = {}\n", pmse(&model, h)?));
    }
    let mut calibrated = cfg.clone();
    calibrated.growth = cfg.growth.with_rates(fit.mu_hat, fit.tau_hat)?;

    create_out(&cli.out)?;
    for (i, t) in synthetic.iter().enumerate() {
        t.save_csv(&cli.out.join(format!("open_loop_{}.csv", i + 1)))?;
    }
    write(&cli.out.join("fit.txt"), &report)?;
    write(&cli.out.join("calibrated.conf"), &calibrated.to_text())?;
    Ok(report)
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, qnet: &Option<PathBuf>) -> CmdResult {
    let out = train(&cfg.growth, &cfg.dqn)?;
    let path = qnet_path(cli, qnet);
    create_out(&cli.out)?;
    save_network(&out.net, &path)?;
    write(&cli.out.join("rewards.csv"), &out.rewards_csv())?;
    let (first, last) = out.improvement(10);
    if !out.converged() {
        return Err(Failure::NotConverged(format!(
            "training did not improve: last-10 mean reward {last} does not exceed first-10 mean {first}"
        )));
    }
    Ok(format!(
        "episodes 1-10 mean reward {first:.6}, last 10 {last:.6}\nnetwork written to {}\n",
        path.display()
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cli: &Cli,
    cfg: &RunConfig,
    kind: ControllerKind,
    setpoint: f64,
    initial_od: f64,
    duration: f64,
    temp: f64,
    qnet: &Option<PathBuf>,
) -> CmdResult {
    let schedule = ExperimentSchedule {
        name: "simulate".into(),
        segments: vec![Segment {
            label: format!("reference {setpoint}"),
            duration,
            setpoint,
            temp_c: temp,
        }],
        initial_od,
        seeds: vec![cfg.bench.seeds[0]],
    };
    schedule.validate()?;
    cfg.growth.temp_response().factor(temp)?;
    let net = load_net_if(kind, &qnet_path(cli, qnet))?;
    let make = factory(kind, cfg, net.as_ref());
    let run = run_replicates(&schedule, &make, &cfg.growth)?.remove(0);
    create_out(&cli.out)?;
    let path = cli
        .out
        .join(format!("simulate_{}.csv", kind.label().to_lowercase()));
    run.save_csv(&path)?;
    Ok(format!("trajectory written to {}\n", path.display()))
}

fn cmd_bench(
    cli: &Cli,
    cfg: &RunConfig,
    kind: ControllerKind,
    sched: ScheduleKind,
    qnet: &Option<PathBuf>,
) -> CmdResult {
    let schedule = cfg.schedule(sched.name()).expect("known schedule");
    let net = load_net_if(kind, &qnet_path(cli, qnet))?;
    let make = factory(kind, cfg, net.as_ref());
    let runs = run_replicates(&schedule, &make, &cfg.growth)?;
    let report = MetricReport::from_runs(kind.label(), &schedule, &runs)?;

    create_out(&cli.out)?;
    let stem = format!("bench_{}_{}", kind.label().to_lowercase(), sched.name());
    for (run, seed) in runs.iter().zip(&schedule.seeds) {
        run.save_csv(&cli.out.join(format!("{stem}_seed{seed}.csv")))?;
    }
    let metrics = report.to_csv();
    write(&cli.out.join(format!("{stem}_metrics.csv")), &metrics)?;
    Ok(metrics)
}

fn cmd_compare(cli: &Cli, cfg: &RunConfig, qnet: &Option<PathBuf>) -> CmdResult {
    let net = load_net_if(ControllerKind::Dqn, &qnet_path(cli, qnet))?;
    let controllers: Vec<(String, ControllerFactory)> =
        [ControllerKind::Dqn, ControllerKind::Pi, ControllerKind::Mpc]
            .into_iter()
            .map(|k| (k.label().to_string(), factory(k, cfg, net.as_ref())))
            .collect();
    let table = compare(
        &controllers,
        &[cfg.staircase(), cfg.tempstep()],
        &cfg.growth,
    )?;
    create_out(&cli.out)?;
    write(&cli.out.join("compare.csv"), &table.to_csv())?;
    let text = table.to_text();
    write(&cli.out.join("compare.txt"), &text)?;
    Ok(text)
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::Calibrate { data, synthesize } => cmd_calibrate(cli, &cfg, data, *synthesize),
        Cmd::Train { qnet } => cmd_train(cli, &cfg, qnet),
        Cmd::Simulate {
            controller,
            setpoint,
            initial_od,
            duration,
            temp,
            qnet,
        } => cmd_simulate(
            cli,
            &cfg,
            *controller,
            *setpoint,
            *initial_od,
            *duration,
            *temp,
            qnet,
        ),
        Cmd::Bench {
            controller,
            schedule,
            qnet,
        } => cmd_bench(cli, &cfg, *controller, *schedule, qnet),
        Cmd::Compare { qnet } => cmd_compare(cli, &cfg, qnet),
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run_from`] with explicit output streams.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return e.exit_code() as u8;
        }
    };
    match run(&cli) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(f) => {
            let _ = match &f {
                Failure::Lib(e) => writeln!(stderr, "error: {e}"),
                Failure::NotConverged(msg) => writeln!(stderr, "error: {msg}"),
            };
            f.exit_code()
        }
    }
}
