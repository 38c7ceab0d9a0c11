//! Discrete-event ABR session simulator.
//!
//! One session walks chunk by chunk: wait for buffer room, let the ABR pick
//! a quality from observables, download through a network backend against
//! the true capacity trace, evolve the TCP state, and account playback,
//! startup, and stall time.

use serde::{Deserialize, Serialize};

use crate::core_model::{CapacityTrace, ChunkRecord, SessionLog, TcpState, VideoModel};
use crate::error::{Result, VeritasError};
use crate::tcp_estimator::{apply_ssr, estimate_transfer, EstimatorConfig};

mod abr;

pub use abr::{
    abr_bba, abr_bola_basic, abr_mpc, choose_quality, AbrPolicy, BbaParams, BolaParams, MpcParams,
    Observables,
};

pub(crate) use abr::harmonic_mean;

/// Fresh-connection slow start threshold: effectively unbounded, as with a
/// loss-free kernel default.
pub const INITIAL_SSTHRESH: u64 = 1 << 20;

/// How a download time is derived from the true trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkBackend {
    /// Whole-chunk analytic model: capacity read once at the chunk start.
    ModelF,
    /// Round-by-round simulation: capacity re-read every RTT, so it reacts
    /// to mid-download capacity changes.
    RoundSim,
}

impl NetworkBackend {
    pub fn name(&self) -> &'static str {
        match self {
            NetworkBackend::ModelF => "model_f",
            NetworkBackend::RoundSim => "round_sim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerConfig {
    pub buffer_cap_s: f64,
    /// End-to-end RTT; the session's srtt and min_rtt are pinned to it.
    pub delay_s: f64,
    pub abr: AbrPolicy,
    pub backend: NetworkBackend,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    /// Extend the trace beyond its horizon by holding the last window.
    #[serde(default = "default_true")]
    pub hold_trace_tail: bool,
}

fn default_true() -> bool {
    true
}

impl PlayerConfig {
    pub fn validate(&self, video: &VideoModel) -> Result<()> {
        if !(self.delay_s > 0.0) {
            return Err(VeritasError::InvalidConfig(format!(
                "delay_s must be positive, got {}",
                self.delay_s
            )));
        }
        if self.buffer_cap_s < video.chunk_duration_s {
            return Err(VeritasError::InvalidConfig(format!(
                "buffer_cap_s ({}) must be at least one chunk duration ({})",
                self.buffer_cap_s, video.chunk_duration_s
            )));
        }
        if let AbrPolicy::Fixed { quality } = &self.abr {
            if *quality >= video.ladder.len() {
                return Err(VeritasError::InvalidConfig(format!(
                    "fixed quality {} outside ladder of {} rungs",
                    quality,
                    video.ladder.len()
                )));
            }
        }
        Ok(())
    }
}

/// A finished session: the log plus playback accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub log: SessionLog,
    pub play_time_s: f64,
    pub rebuffer_time_s: f64,
    /// Wall time until the first chunk completed; excluded from rebuffering.
    pub startup_time_s: f64,
    pub end_time_s: f64,
    pub per_chunk_ssim: Vec<f64>,
    pub per_chunk_bitrate_mbps: Vec<f64>,
    /// TCP state right after the last download (zero idle time).
    pub final_tcp: TcpState,
}

/// Outcome of one chunk download.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownloadOutcome {
    pub duration_s: f64,
    pub cwnd_after: u64,
    pub ssthresh_after: u64,
}

/// Analytic backend: throughput from the estimator at the capacity seen at
/// the chunk start; if that capacity is zero the download blocks until the
/// first later window with positive capacity.
pub fn backend_model_f(
    trace: &CapacityTrace,
    w: &TcpState,
    size_bytes: u64,
    t_start: f64,
    config: &EstimatorConfig,
    hold_tail: bool,
) -> Result<DownloadOutcome> {
    assert!(size_bytes > 0, "zero-size chunk must be rejected upstream");
    let (wait_s, c) = next_positive_capacity(trace, t_start, hold_tail)?;
    let est = estimate_transfer(c, w, size_bytes, config);
    let duration_s = wait_s + size_bytes as f64 * 8.0 / (est.throughput_mbps * 1e6);
    Ok(DownloadOutcome {
        duration_s,
        cwnd_after: est.cwnd_after,
        ssthresh_after: est.ssthresh_after,
    })
}

/// Round-level backend. Each ACK-clocked round lasts one srtt and carries
/// `min(cwnd * mss, capacity * srtt)` bytes at the capacity of the window
/// the round falls in. The final round is shortened to the serialization
/// time of the leftover bytes when it is capacity-limited; a lone round
/// still costs a full srtt (the request round trip).
pub fn backend_round_sim(
    trace: &CapacityTrace,
    w: &TcpState,
    size_bytes: u64,
    t_start: f64,
    config: &EstimatorConfig,
    hold_tail: bool,
) -> Result<DownloadOutcome> {
    assert!(size_bytes > 0, "zero-size chunk must be rejected upstream");
    let w = apply_ssr(w, config);
    let srtt = w.srtt_s;
    let mut cwnd = w.cwnd;
    let mut remaining = size_bytes as f64;
    let mut t = t_start;
    let mut duration = 0.0;
    let mut rounds = 0u64;
    loop {
        // capacity of the window this round falls in; a round starting on a
        // boundary belongs to the window that follows it
        let window = (t / trace.grid.delta_s).floor() as usize + 1;
        if window > trace.windows() && !hold_tail {
            return Err(VeritasError::TraceExhausted { at_s: t });
        }
        let c = trace.window_value(window);
        if c <= 0.0 {
            let skip = skip_to_positive(trace, window, t, hold_tail)?;
            duration += skip;
            t += skip;
            continue;
        }
        let round_cap = c * 1e6 * srtt / 8.0;
        let window_bytes = (cwnd * config.mss_bytes) as f64;
        let sendable = window_bytes.min(round_cap);
        let grow = |cw: u64| {
            if cw < w.ssthresh {
                cw.saturating_mul(2)
            } else {
                cw.saturating_add(1)
            }
        };
        if remaining <= sendable {
            let capacity_limited = round_cap < window_bytes;
            let dt = if capacity_limited && rounds > 0 {
                srtt * remaining / round_cap
            } else {
                srtt
            };
            duration += dt;
            cwnd = grow(cwnd);
            break;
        }
        remaining -= sendable;
        duration += srtt;
        t += srtt;
        cwnd = grow(cwnd);
        rounds += 1;
    }
    Ok(DownloadOutcome {
        duration_s: duration,
        cwnd_after: cwnd,
        ssthresh_after: w.ssthresh,
    })
}

/// Wait time until the first window at/after `t_start` with positive
/// capacity, plus that capacity.
fn next_positive_capacity(
    trace: &CapacityTrace,
    t_start: f64,
    hold_tail: bool,
) -> Result<(f64, f64)> {
    let mut window = trace.grid.window_index(t_start);
    if !hold_tail && t_start > trace.horizon_s() {
        return Err(VeritasError::TraceExhausted { at_s: t_start });
    }
    if trace.window_value(window) > 0.0 {
        return Ok((0.0, trace.window_value(window)));
    }
    loop {
        window += 1;
        if window > trace.windows() {
            // tail holds the last window's value, which we know is zero
            return if hold_tail {
                Err(VeritasError::BlockedForever)
            } else {
                Err(VeritasError::TraceExhausted { at_s: t_start })
            };
        }
        if trace.window_value(window) > 0.0 {
            let wait = trace.grid.window_start_s(window) - t_start;
            return Ok((wait.max(0.0), trace.window_value(window)));
        }
    }
}

fn skip_to_positive(
    trace: &CapacityTrace,
    from_window: usize,
    t: f64,
    hold_tail: bool,
) -> Result<f64> {
    let mut window = from_window;
    loop {
        window += 1;
        if window > trace.windows() {
            return if hold_tail {
                Err(VeritasError::BlockedForever)
            } else {
                Err(VeritasError::TraceExhausted { at_s: t })
            };
        }
        if trace.window_value(window) > 0.0 {
            return Ok((trace.grid.window_start_s(window) - t).max(0.0));
        }
    }
}

pub fn simulate_download(
    backend: NetworkBackend,
    trace: &CapacityTrace,
    w: &TcpState,
    size_bytes: u64,
    t_start: f64,
    config: &EstimatorConfig,
    hold_tail: bool,
) -> Result<DownloadOutcome> {
    match backend {
        NetworkBackend::ModelF => backend_model_f(trace, w, size_bytes, t_start, config, hold_tail),
        NetworkBackend::RoundSim => {
            backend_round_sim(trace, w, size_bytes, t_start, config, hold_tail)
        }
    }
}

/// Run one full session. Pure function of `(trace, video, config, seed)`;
/// `seed` fixes the video's VBR chunk sizes, so a counterfactual replay of
/// the same video must reuse it.
pub fn run_session(
    trace: &CapacityTrace,
    video: &VideoModel,
    config: &PlayerConfig,
    seed: u64,
) -> Result<SessionResult> {
    video.validate()?;
    config.validate(video)?;
    let ladder_len = video.ladder.len();
    let chunk_len = video.chunk_duration_s;
    let srtt = config.delay_s;
    let rto = config.estimator.rto_s(srtt);
    // manifest lookahead the policy gets to see
    let lookahead = match &config.abr {
        AbrPolicy::Mpc(p) => p.horizon.max(1),
        _ => 1,
    };

    let mut now = 0.0f64;
    let mut buffer = 0.0f64;
    let mut playing = false;
    let mut play_time = 0.0f64;
    let mut rebuffer_time = 0.0f64;
    let mut startup_time = 0.0f64;
    let mut cwnd = config.estimator.init_cwnd;
    let mut ssthresh = INITIAL_SSTHRESH;
    let mut last_data_at: Option<f64> = None;

    let mut chunks = Vec::with_capacity(video.total_chunks);
    let mut throughputs: Vec<f64> = Vec::with_capacity(video.total_chunks);
    let mut ssims = Vec::with_capacity(video.total_chunks);
    let mut bitrates = Vec::with_capacity(video.total_chunks);
    let mut last_quality: Option<usize> = None;

    for n in 1..=video.total_chunks {
        // gate on buffer room for one more chunk
        if buffer > config.buffer_cap_s - chunk_len {
            let wait = buffer - (config.buffer_cap_s - chunk_len);
            // playback is necessarily underway: the buffer is only ever
            // this full after at least one chunk completed
            buffer -= wait;
            play_time += wait;
            now += wait;
        }

        let horizon = lookahead.min(video.total_chunks - n + 1);
        let upcoming: Vec<Vec<u64>> = (0..horizon)
            .map(|h| {
                (0..ladder_len)
                    .map(|q| video.chunk_size_bytes(seed, n + h, q))
                    .collect()
            })
            .collect();
        let obs = Observables {
            chunk_index: n,
            buffer_s: buffer,
            buffer_cap_s: config.buffer_cap_s,
            chunk_duration_s: chunk_len,
            past_throughputs_mbps: &throughputs,
            last_quality,
            upcoming_sizes: &upcoming,
            ladder: &video.ladder,
        };
        let quality = choose_quality(&config.abr, &obs);
        let size = video.chunk_size_bytes(seed, n, quality);

        let gap = last_data_at.map_or(0.0, |t| now - t);
        let tcp = TcpState {
            cwnd,
            ssthresh,
            rto_s: rto,
            min_rtt_s: srtt,
            last_send_s: gap,
            srtt_s: srtt,
        };

        let outcome = simulate_download(
            config.backend,
            trace,
            &tcp,
            size,
            now,
            &config.estimator,
            config.hold_trace_tail,
        )?;
        let d = outcome.duration_s;

        chunks.push(ChunkRecord {
            index: n,
            size_bytes: size,
            start_s: now,
            end_s: now + d,
            quality_level: quality,
            buffer_at_start_s: buffer,
            tcp_at_start: tcp,
        });

        if playing {
            let played = buffer.min(d);
            play_time += played;
            rebuffer_time += d - played;
            buffer -= played;
        }
        now += d;
        if !playing {
            startup_time = now;
            playing = true;
        }
        buffer += chunk_len;

        cwnd = outcome.cwnd_after;
        ssthresh = outcome.ssthresh_after;
        last_data_at = Some(now);
        throughputs.push(chunks.last().expect("pushed").throughput_mbps());
        ssims.push(video.ladder[quality].ssim);
        bitrates.push(size as f64 * 8.0 / chunk_len / 1e6);
        last_quality = Some(quality);
    }

    let final_tcp = TcpState {
        cwnd,
        ssthresh,
        rto_s: rto,
        min_rtt_s: srtt,
        last_send_s: 0.0,
        srtt_s: srtt,
    };
    Ok(SessionResult {
        log: SessionLog::new(chunks, config.delay_s, chunk_len)?,
        play_time_s: play_time,
        rebuffer_time_s: rebuffer_time,
        startup_time_s: startup_time,
        end_time_s: now,
        per_chunk_ssim: ssims,
        per_chunk_bitrate_mbps: bitrates,
        final_tcp,
    })
}
