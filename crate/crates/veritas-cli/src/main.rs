//! `veritas` command line: trace generation, session emulation, capacity
//! abduction, counterfactual what-if queries, next-chunk prediction, and the
//! throughput-estimator accuracy harness.

#![forbid(unsafe_code)]

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use veritas_core::core_model::{
    generate_trace, read_log, read_trace, write_log, write_trace, TcpState, TraceKind,
};
use veritas_core::harness::{error_cdf, f_accuracy_sweep, fraction_within_mbps, SweepRanges};
use veritas_core::inference::{
    associational_predict, baseline_reconstruct, predict_next_download_from, whatif_counterfactual,
    CapacitySource, Setting,
};
use veritas_core::metrics::compute_metrics;
use veritas_core::player_sim::run_session;
use veritas_core::tcp_estimator::{estimate_transfer, EstimatorConfig};

mod config;
mod output;

use config::{parse_abr, parse_backend, parse_ladder, parse_u64_list, ConfigArgs, RunConfig};
use output::{object, stamped_json, write_text};

#[derive(Parser)]
#[command(
    name = "veritas",
    version,
    about = "Bandwidth abduction and what-if replay for ABR session logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic ground-truth capacity traces (CSV)
    GenTraces(GenTracesArgs),
    /// Run an ABR session against a capacity trace, producing a log and metrics
    Emulate(EmulateArgs),
    /// Infer capacity traces from a session log (MAP, samples, baseline)
    Abduct(AbductArgs),
    /// Counterfactual query: replay a logged session under a changed setting
    Whatif(WhatifArgs),
    /// Interventional query: predict the next chunk's download time
    Predict(PredictArgs),
    /// Sweep the throughput estimator against the round-level backend
    FAccuracy(FAccuracyArgs),
    /// Evaluate the throughput estimator once (debugging aid)
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct GenTracesArgs {
    /// Trace family: constant, square, or markov
    #[arg(long)]
    kind: String,
    /// Output directory for trace_NNN.csv files
    #[arg(long)]
    out: PathBuf,
    /// Number of traces to generate
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Trace length in capacity windows
    #[arg(long, default_value_t = 120)]
    windows: usize,
    /// Capacity for constant traces, Mbps
    #[arg(long)]
    c: Option<f64>,
    /// Low level, Mbps (square, markov)
    #[arg(long)]
    lo: Option<f64>,
    /// High level, Mbps (square, markov)
    #[arg(long)]
    hi: Option<f64>,
    /// Half-period of the square wave, in windows
    #[arg(long, default_value_t = 6)]
    period: usize,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EmulateArgs {
    /// Ground-truth capacity trace CSV
    #[arg(long)]
    trace: PathBuf,
    /// Session log output path (JSON lines)
    #[arg(long = "out-log")]
    out_log: PathBuf,
    /// Metrics JSON output path
    #[arg(long = "out-metrics")]
    out_metrics: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct AbductArgs {
    /// Session log to abduct from
    #[arg(long)]
    log: PathBuf,
    /// Output directory (abduction.json, map.csv, baseline.csv, sample_NN.csv)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct WhatifArgs {
    /// Setting-A session log
    #[arg(long)]
    log: PathBuf,
    /// Setting-B deltas, e.g. abr=bba, buffer=30, ladder=0.1,1.2,4.0
    #[arg(long = "change", value_name = "KEY=VALUE")]
    changes: Vec<String>,
    /// Optional true capacity trace for an oracle row
    #[arg(long = "with-gtbw")]
    with_gtbw: Option<PathBuf>,
    /// Report output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Session-prefix log
    #[arg(long)]
    log: PathBuf,
    /// Candidate next-chunk sizes in bytes, comma separated
    #[arg(long)]
    candidates: String,
    /// veritas (capacity-based) or associational
    #[arg(long, default_value = "veritas")]
    predictor: String,
    /// Capacity view for the veritas predictor: map or samples
    #[arg(long = "capacity-source", default_value = "map")]
    capacity_source: String,
    /// Wall time of the hypothetical request (defaults to end of the log)
    #[arg(long)]
    now: Option<f64>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct FAccuracyArgs {
    /// Output CSV of (rel_error, cdf) rows
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    experiments: usize,
    #[arg(long, default_value_t = 40)]
    payloads: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct EstimateArgs {
    /// Capacity in Mbps
    #[arg(long)]
    c: f64,
    /// Transfer size in bytes
    #[arg(long)]
    size: u64,
    #[arg(long, default_value_t = 10)]
    cwnd: u64,
    #[arg(long, default_value_t = 1 << 20)]
    ssthresh: u64,
    /// Round-trip time in seconds
    #[arg(long, default_value_t = 0.08)]
    rtt: f64,
    /// Idle time since the last send, seconds
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
    #[arg(long, default_value_t = 1500)]
    mss: u64,
    #[arg(long = "init-cwnd", default_value_t = 10)]
    init_cwnd: u64,
}

fn main() {
    if let Ok(threads) = std::env::var("VERITAS_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .ok();
        }
    }
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenTraces(args) => cmd_gen_traces(args),
        Command::Emulate(args) => cmd_emulate(args),
        Command::Abduct(args) => cmd_abduct(args),
        Command::Whatif(args) => cmd_whatif(args),
        Command::Predict(args) => cmd_predict(args),
        Command::FAccuracy(args) => cmd_f_accuracy(args),
        Command::Estimate(args) => cmd_estimate(args),
    }
}

fn cmd_gen_traces(args: GenTracesArgs) -> Result<()> {
    let seed = args
        .cfg
        .seed
        .context("--seed is required (every run must be explicitly seeded)")?;
    let cfg = args.cfg.resolve()?;
    let need = |v: Option<f64>, name: &str| {
        v.with_context(|| format!("--{name} is required for this kind"))
    };
    let kind = match args.kind.as_str() {
        "constant" => TraceKind::Constant {
            mbps: need(args.c, "c")?,
        },
        "square" | "square_wave" => TraceKind::SquareWave {
            lo_mbps: need(args.lo, "lo")?,
            hi_mbps: need(args.hi, "hi")?,
            period_windows: args.period,
        },
        "markov" | "markov_walk" => TraceKind::MarkovWalk {
            lo_mbps: need(args.lo, "lo")?,
            hi_mbps: need(args.hi, "hi")?,
            p_stay: cfg.ehmm.p_stay,
        },
        other => bail!("unknown trace kind {other:?} (expected constant, square, or markov)"),
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.n {
        let trace = generate_trace(&kind, &cfg.grid, args.windows, seed.wrapping_add(i as u64))?;
        let path = args.out.join(format!("trace_{i:03}.csv"));
        write_trace(&trace, &path)?;
    }
    println!("wrote {} trace(s) to {}", args.n, args.out.display());
    Ok(())
}

fn cmd_emulate(args: EmulateArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let trace = read_trace(&args.trace, &cfg.grid)?;
    let result = run_session(&trace, &cfg.video, &cfg.player, cfg.seeds.session)?;
    write_log(&result.log, &args.out_log)?;
    let metrics = compute_metrics(&result);
    let body = object(vec![
        ("metrics", serde_json::to_value(metrics)?),
        ("chunks", json!(result.log.len())),
        ("play_time_s", json!(result.play_time_s)),
        ("rebuffer_time_s", json!(result.rebuffer_time_s)),
        ("startup_time_s", json!(result.startup_time_s)),
        ("end_time_s", json!(result.end_time_s)),
        ("log", json!(args.out_log.display().to_string())),
    ]);
    let text = stamped_json(&body, &cfg)?;
    match &args.out_metrics {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_abduct(args: AbductArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let log = read_log(&args.log)?;
    let model = cfg.model()?;
    let horizon = cfg
        .grid
        .window_index(log.chunks.last().context("empty log")?.end_s);
    let abduction = model.abduct(&log, cfg.ehmm.samples, cfg.seeds.sampler, horizon)?;
    let baseline = baseline_reconstruct(&log, &cfg.grid, horizon)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_trace(&abduction.map_trace, &args.out.join("map.csv"))?;
    write_trace(&baseline, &args.out.join("baseline.csv"))?;
    let mut sample_files = Vec::new();
    for (i, sample) in abduction.samples.iter().enumerate() {
        let name = format!("sample_{:02}.csv", i + 1);
        write_trace(sample, &args.out.join(&name))?;
        sample_files.push(name);
    }
    let body = object(vec![
        ("map_states", serde_json::to_value(&abduction.map_states)?),
        ("log_likelihood", json!(abduction.log_likelihood)),
        ("map_trace", json!("map.csv")),
        ("baseline_trace", json!("baseline.csv")),
        ("samples", serde_json::to_value(&sample_files)?),
        ("horizon_windows", json!(horizon)),
    ]);
    write_text(
        &args.out.join("abduction.json"),
        &stamped_json(&body, &cfg)?,
    )?;
    println!("wrote abduction outputs to {}", args.out.display());
    Ok(())
}

fn setting_from(cfg: &RunConfig, log_delay_s: f64, log_chunk_duration_s: f64) -> Setting {
    let mut setting = Setting {
        video: cfg.video.clone(),
        player: cfg.player.clone(),
        session_seed: cfg.seeds.session,
    };
    setting.player.delay_s = log_delay_s;
    setting.video.chunk_duration_s = log_chunk_duration_s;
    setting
}

fn apply_change(setting: &mut Setting, change: &str) -> Result<()> {
    let (key, value) = change
        .split_once('=')
        .with_context(|| format!("bad --change {change:?}, expected KEY=VALUE"))?;
    match key {
        "abr" => setting.player.abr = parse_abr(value)?,
        "buffer" => setting.player.buffer_cap_s = value.parse().context("bad buffer")?,
        "ladder" => setting.video.ladder = parse_ladder(value)?,
        "delay" => setting.player.delay_s = value.parse().context("bad delay")?,
        "backend" => setting.player.backend = parse_backend(value)?,
        "seed" => setting.session_seed = value.parse().context("bad seed")?,
        "chunks" => setting.video.total_chunks = value.parse().context("bad chunks")?,
        other => bail!(
            "unknown change key {other:?} (expected abr, buffer, ladder, delay, backend, seed, or chunks)"
        ),
    }
    Ok(())
}

fn cmd_whatif(args: WhatifArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let log = read_log(&args.log)?;
    let model = cfg.model()?;
    let setting_a = setting_from(&cfg, log.session_delay_s, log.chunk_duration_s);
    let mut setting_b = setting_a.clone();
    for change in &args.changes {
        apply_change(&mut setting_b, change)?;
    }
    setting_b.video.validate()?;
    setting_b.player.validate(&setting_b.video)?;
    let gtbw = args
        .with_gtbw
        .as_deref()
        .map(|p| read_trace(p, &cfg.grid))
        .transpose()?;
    let outcome = whatif_counterfactual(
        &log,
        &model,
        &setting_a,
        &setting_b,
        cfg.ehmm.samples,
        cfg.seeds.sampler,
        gtbw.as_ref(),
        cfg.ehmm.trim_rank,
    )?;
    let text = stamped_json(&outcome.report, &cfg)?;
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let log = read_log(&args.log)?;
    let candidates = parse_u64_list(&args.candidates)?;
    if candidates.is_empty() {
        bail!("need at least one candidate size");
    }
    let body = match args.predictor.as_str() {
        "veritas" => {
            let model = cfg.model()?;
            let source = match args.capacity_source.as_str() {
                "map" => CapacitySource::ViterbiMap,
                "samples" => CapacitySource::SampleMean {
                    k: cfg.ehmm.samples,
                    seed: cfg.seeds.sampler,
                },
                other => bail!("unknown capacity source {other:?} (expected map or samples)"),
            };
            let predictions =
                predict_next_download_from(&log, &model, &candidates, args.now, source)?;
            object(vec![
                ("predictor", json!("veritas")),
                ("capacity_source", json!(args.capacity_source)),
                (
                    "now_s",
                    json!(args.now.unwrap_or(log.chunks.last().unwrap().end_s)),
                ),
                ("candidates", serde_json::to_value(&predictions)?),
            ])
        }
        "associational" => {
            let rows: Vec<Value> = candidates
                .iter()
                .map(|&size| {
                    associational_predict(&log, size)
                        .map(|d| json!({"size_bytes": size, "d_hat_s": d}))
                })
                .collect::<veritas_core::Result<_>>()?;
            object(vec![
                ("predictor", json!("associational")),
                ("candidates", Value::Array(rows)),
            ])
        }
        other => bail!("unknown predictor {other:?} (expected veritas or associational)"),
    };
    let text = stamped_json(&body, &cfg)?;
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_f_accuracy(args: FAccuracyArgs) -> Result<()> {
    let estimator = EstimatorConfig::default();
    let samples = f_accuracy_sweep(
        args.experiments,
        args.payloads,
        args.seed,
        &SweepRanges::default(),
        &estimator,
    );
    let cdf = error_cdf(&samples);
    let mut csv = String::from("rel_error,cdf\n");
    for (err, p) in &cdf {
        writeln!(csv, "{},{}", output::sig9(*err), output::sig9(*p)).unwrap();
    }
    write_text(&args.out, &csv)?;
    let frac = fraction_within_mbps(&samples, 1.0);
    println!("samples={} within_1mbps={:.4}", samples.len(), frac);
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let estimator = EstimatorConfig {
        mss_bytes: args.mss,
        init_cwnd: args.init_cwnd,
        rto_floor_s: 0.2,
    };
    let state = TcpState {
        cwnd: args.cwnd,
        ssthresh: args.ssthresh,
        rto_s: estimator.rto_s(args.rtt),
        min_rtt_s: args.rtt,
        last_send_s: args.gap,
        srtt_s: args.rtt,
    };
    state.validate()?;
    let est = estimate_transfer(args.c, &state, args.size, &estimator);
    let body = object(vec![
        ("y_hat_mbps", json!(est.throughput_mbps)),
        ("rounds", json!(est.rounds)),
        ("cwnd_after", json!(est.cwnd_after)),
        ("ssthresh_after", json!(est.ssthresh_after)),
        ("capacity_mbps", json!(args.c)),
        ("size_bytes", json!(args.size)),
        ("state", serde_json::to_value(&state)?),
    ]);
    print!("{}", stamped_json(&body, &estimator)?);
    Ok(())
}
