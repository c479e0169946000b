//! `slicing`: train, evaluate and inspect bandwidth-allocation agents.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error.
//! Besides the flags below, `train`, `eval` and `simulate` accept config
//! overrides of the form `--section.key=value`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;
use slicing_core::action_space::AllocationGrid;
use slicing_core::agents::{run_evaluation, run_training, settle_episode, Agent, AgentKind};
use slicing_core::config::RunConfig;
use slicing_core::env::{CsvSink, Environment, EpisodeMetrics, MetricsSink};
use slicing_core::link_sim::{write_trace_csv, Simulator};
use slicing_core::rng::{stream, StreamTag};
use slicing_core::traffic::{summarize, SliceTraffic};
use slicing_core::{Error, Result};

/// Episodes averaged for the "final" figures in summaries.
const FINAL_WINDOW: usize = 200;

#[derive(Parser, Debug)]
#[command(
    name = "slicing",
    version,
    about = "Bandwidth allocation across network slices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent; writes metrics.csv, checkpoint/ and summary.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Independent runs with seeds seed, seed+1, ..., each in its own subdirectory.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Greedy rollout of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-episode CSV (metrics schema); defaults to eval.csv beside the checkpoint.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Count or list the valid allocations of a grid.
    Actions {
        #[arg(long = "W")]
        total_mhz: f64,
        #[arg(long = "delta")]
        resolution_mhz: f64,
        #[arg(long = "N")]
        slices: usize,
        #[arg(long, conflicts_with = "list")]
        count: bool,
        #[arg(long)]
        list: bool,
    },
    /// Empirical moments of a slice's inter-arrival and packet-size samplers.
    TrafficStats {
        #[arg(long)]
        slice: String,
        #[arg(short = 'n', long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the simulator under a fixed allocation and print per-interval statistics.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bandwidth per slice in MHz, comma separated; defaults to the equal split.
        #[arg(long, value_delimiter = ',')]
        allocation: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        intervals: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-slot trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

/// Splits `--section.key=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(key, _)| key.contains('.'));
        if is_override {
            overrides.push(a[2..].to_string());
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p, overrides),
        None => RunConfig::parse("", overrides),
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Final-window means of reward, SE and per-slice QoE.
fn tail_summary(metrics: &[EpisodeMetrics], names: &[String]) -> serde_json::Value {
    let tail = &metrics[metrics.len().saturating_sub(FINAL_WINDOW)..];
    let qoe: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            (
                n.clone(),
                json!(mean(tail.iter().map(|m| m.qoe.per_slice[i]))),
            )
        })
        .collect();
    let alloc: Vec<f64> = (0..names.len())
        .map(|i| mean(tail.iter().map(|m| m.allocation_mhz[i])))
        .collect();
    json!({
        "window": tail.len(),
        "mean_reward": mean(tail.iter().map(|m| m.reward)),
        "mean_se": mean(tail.iter().map(|m| m.se)),
        "mean_qoe_aggregate": mean(tail.iter().map(|m| m.qoe.aggregate)),
        "mean_qoe": qoe,
        "mean_allocation_mhz": alloc,
    })
}

fn train_one(config: &RunConfig, seed: u64, dir: &Path) -> Result<serde_json::Value> {
    fs::create_dir_all(dir)?;
    let env_config = config.env_config()?;
    let names = env_config.slice_names();
    let mut env = Environment::new(env_config)?;
    let mut agent = Agent::new(
        config.run.agent,
        &config.agent,
        *env.grid(),
        env.observation_dim(),
        seed,
    )?;
    let mut sink = CsvSink::new(
        BufWriter::new(File::create(dir.join("metrics.csv"))?),
        &names,
    )?;
    let start = Instant::now();
    let log = run_training(
        &mut env,
        &mut agent,
        config.run.episodes,
        seed,
        &mut [&mut sink as &mut dyn MetricsSink],
    )?;
    let wall = start.elapsed().as_secs_f64();
    sink.into_inner().flush()?;
    agent.save(dir.join("checkpoint"))?;

    let rewards = log.rewards();
    let final_tail = tail_summary(&log.metrics, &names);
    let final_reward = final_tail["mean_reward"].as_f64().unwrap_or(0.0);
    let recent_losses: Vec<f64> = log
        .losses
        .iter()
        .rev()
        .take(100)
        .filter_map(|l| *l)
        .collect();
    let mut resolved = config.clone();
    resolved.run.seed = seed;
    resolved.run.runs = 1;
    resolved.run.output_dir = dir.to_path_buf();
    let summary = json!({
        "agent": config.run.agent.to_string(),
        "seed": seed,
        "episodes": log.metrics.len(),
        "wall_clock_s": wall,
        "final": final_tail,
        "settle_episode": settle_episode(&rewards, 100, 0.95, final_reward),
        "last_loss": log.last_loss(),
        "mean_loss_last_100": if recent_losses.is_empty() { None } else { Some(mean(recent_losses.into_iter())) },
        "config": resolved,
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(json_err)?,
    )?;
    Ok(summary)
}

fn cmd_train(
    config_path: Option<PathBuf>,
    agent: Option<AgentKind>,
    seed: Option<u64>,
    episodes: Option<usize>,
    output: Option<PathBuf>,
    runs: Option<usize>,
    overrides: &[String],
) -> Result<()> {
    let mut config = load_config(config_path.as_deref(), overrides)?;
    if let Some(a) = agent {
        config.run.agent = a;
    }
    if let Some(s) = seed {
        config.run.seed = s;
    }
    if let Some(e) = episodes {
        config.run.episodes = e;
    }
    if let Some(o) = output {
        config.run.output_dir = o;
    }
    if let Some(r) = runs {
        config.run.runs = r;
    }
    config.validate()?;

    let base = config.run.output_dir.clone();
    if config.run.runs == 1 {
        let s = train_one(&config, config.run.seed, &base)?;
        println!("{}", serde_json::to_string(&s["final"]).map_err(json_err)?);
        return Ok(());
    }
    let seeds: Vec<u64> = (0..config.run.runs as u64)
        .map(|i| config.run.seed + i)
        .collect();
    let results: Vec<Result<serde_json::Value>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&s| {
                let config = &config;
                let dir = base.join(format!("seed-{s}"));
                scope.spawn(move || train_one(config, s, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut first_err = None;
    for (s, r) in seeds.iter().zip(results) {
        match r {
            Ok(summary) => println!(
                "seed {s}: {}",
                serde_json::to_string(&summary["final"]).map_err(json_err)?
            ),
            Err(e) => {
                eprintln!("seed {s}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_eval(
    checkpoint: PathBuf,
    config_path: Option<PathBuf>,
    episodes: Option<usize>,
    seed: Option<u64>,
    csv: Option<PathBuf>,
    overrides: &[String],
) -> Result<()> {
    let config = load_config(config_path.as_deref(), overrides)?;
    let seed = seed.unwrap_or(config.run.seed);
    let agent = Agent::load(&checkpoint, &config.agent, seed)?;
    let env_config = config.env_config()?;
    if agent.grid() != &env_config.grid {
        return Err(Error::config(format!(
            "checkpoint grid ({} MHz, {} MHz, {}) differs from the configured grid",
            agent.grid().total_mhz(),
            agent.grid().resolution_mhz(),
            agent.grid().slices()
        )));
    }
    let names = env_config.slice_names();
    let mut env = Environment::new(env_config)?;
    let csv_path = csv.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval.csv")
    });
    let mut sink = CsvSink::new(BufWriter::new(File::create(&csv_path)?), &names)?;
    let metrics = run_evaluation(
        &mut env,
        &agent,
        episodes.unwrap_or(config.run.eval_episodes),
        seed,
        &mut [&mut sink as &mut dyn MetricsSink],
    )?;
    sink.into_inner().flush()?;
    let all = tail_summary(&metrics, &names);
    println!("{}", serde_json::to_string_pretty(&all).map_err(json_err)?);
    Ok(())
}

fn cmd_actions(total_mhz: f64, resolution_mhz: f64, slices: usize, list: bool) -> Result<()> {
    let grid = AllocationGrid::new(total_mhz, resolution_mhz, slices)?;
    if !list {
        println!("{}", grid.action_count());
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    for a in grid.enumerate_actions()? {
        let mhz: Vec<String> = a
            .bandwidths_mhz(&grid)
            .iter()
            .map(|w| format!("{w}"))
            .collect();
        writeln!(out, "{}", mhz.join(","))?;
    }
    Ok(())
}

fn cmd_traffic_stats(
    slice: &str,
    samples: usize,
    seed: u64,
    config_path: Option<PathBuf>,
    overrides: &[String],
) -> Result<()> {
    let config = load_config(config_path.as_deref(), overrides)?;
    let spec = config
        .slices()?
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(slice))
        .ok_or_else(|| Error::config(format!("no slice named '{slice}'")))?;
    let traffic = SliceTraffic::new(spec.clone())?;
    println!("quantity,count,mean,std,min,max,model_mean");
    for (i, (label, sampler, model_mean)) in [
        (
            "inter_arrival_ms",
            traffic.inter_arrival(),
            spec.inter_arrival.mean_ms(),
        ),
        (
            "packet_bytes",
            traffic.packet_size(),
            spec.packet_size.mean_bytes(),
        ),
    ]
    .into_iter()
    .enumerate()
    {
        let s = summarize(
            sampler,
            samples,
            &mut stream(seed, StreamTag::Calibration, i as u32),
        );
        println!(
            "{label},{},{},{},{},{},{model_mean}",
            s.count, s.mean, s.std, s.min, s.max
        );
    }
    Ok(())
}

fn cmd_simulate(
    config_path: Option<PathBuf>,
    allocation: Option<Vec<f64>>,
    intervals: usize,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    overrides: &[String],
) -> Result<()> {
    let config = load_config(config_path.as_deref(), overrides)?;
    let env_config = config.env_config()?;
    let grid = env_config.grid;
    let action = match allocation {
        Some(mhz) => grid
            .allocation_from_mhz(&mhz)
            .map_err(|e| Error::Argument(format!("--allocation: {e}")))?,
        None => slicing_core::agents::equal_allocation(&grid)?,
    };
    let mut sim = Simulator::new(
        grid,
        &env_config.slices,
        env_config.slots,
        env_config.channel.clone(),
        seed.unwrap_or(config.run.seed),
    )?;
    if trace.is_some() {
        sim.enable_trace();
    }
    println!("interval,slice,arrived_packets,delivered_packets,satisfied_packets,expired_packets,stalled_arrivals,arrived_bits,delivered_bits,pending_packets_end");
    for i in 0..intervals {
        let stats = sim.run_interval(&action)?;
        for (spec, s) in env_config.slices.iter().zip(&stats.slices) {
            println!(
                "{i},{},{},{},{},{},{},{},{},{}",
                spec.name,
                s.arrived_packets,
                s.delivered_packets,
                s.satisfied_packets,
                s.expired_packets,
                s.stalled_arrivals,
                s.arrived_bits,
                s.delivered_bits,
                s.pending_packets_end
            );
        }
    }
    if let Some(path) = trace {
        let mut out = BufWriter::new(File::create(path)?);
        write_trace_csv(&mut out, &sim.take_trace())?;
        out.flush()?;
    }
    Ok(())
}

fn run(cli: Cli, overrides: &[String]) -> Result<()> {
    let takes_overrides = matches!(
        cli.command,
        Command::Train { .. }
            | Command::Eval { .. }
            | Command::Simulate { .. }
            | Command::TrafficStats { .. }
    );
    if !takes_overrides && !overrides.is_empty() {
        return Err(Error::config(format!(
            "this command takes no config overrides: {}",
            overrides.join(" ")
        )));
    }
    match cli.command {
        Command::Train {
            config,
            agent,
            seed,
            episodes,
            output,
            runs,
        } => cmd_train(config, agent, seed, episodes, output, runs, overrides),
        Command::Eval {
            checkpoint,
            config,
            episodes,
            seed,
            csv,
        } => cmd_eval(checkpoint, config, episodes, seed, csv, overrides),
        Command::Actions {
            total_mhz,
            resolution_mhz,
            slices,
            count: _,
            list,
        } => cmd_actions(total_mhz, resolution_mhz, slices, list),
        Command::TrafficStats {
            slice,
            samples,
            seed,
            config,
        } => cmd_traffic_stats(&slice, samples, seed, config, overrides),
        Command::Simulate {
            config,
            allocation,
            intervals,
            seed,
            trace,
        } => cmd_simulate(config, allocation, intervals, seed, trace, overrides),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
