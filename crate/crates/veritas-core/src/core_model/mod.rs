//! Domain types: capacity grid and traces, TCP state, chunk records, session
//! logs, and the video model that generates chunk sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VeritasError};

mod io;
mod tracegen;

pub use io::{read_log, read_trace, write_log, write_trace};
pub use tracegen::{generate_trace, TraceKind};

/// Quantization of time into fixed windows and capacity onto an epsilon grid.
///
/// The capacity state space is `{0, eps, 2*eps, ..., c_max}`. Window `t`
/// (1-based) covers the wall-clock interval `((t-1)*delta, t*delta]`; a time
/// falling exactly on a boundary `k*delta` belongs to window `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    pub delta_s: f64,
    pub eps_mbps: f64,
    pub c_max_mbps: f64,
}

impl QuantGrid {
    pub fn new(delta_s: f64, eps_mbps: f64, c_max_mbps: f64) -> Result<Self> {
        let grid = Self {
            delta_s,
            eps_mbps,
            c_max_mbps,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_s > 0.0) {
            return Err(VeritasError::InvalidGrid(format!(
                "delta_s must be positive, got {}",
                self.delta_s
            )));
        }
        if !(self.eps_mbps > 0.0) {
            return Err(VeritasError::InvalidGrid(format!(
                "eps_mbps must be positive, got {}",
                self.eps_mbps
            )));
        }
        let ratio = self.c_max_mbps / self.eps_mbps;
        if ratio < 0.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(VeritasError::InvalidGrid(format!(
                "c_max_mbps ({}) must be a nonnegative multiple of eps_mbps ({})",
                self.c_max_mbps, self.eps_mbps
            )));
        }
        Ok(())
    }

    /// Number of capacity states: `c_max/eps + 1`.
    pub fn state_count(&self) -> usize {
        (self.c_max_mbps / self.eps_mbps).round() as usize + 1
    }

    /// Capacity in Mbps of state index `i`.
    pub fn state_mbps(&self, i: usize) -> f64 {
        i as f64 * self.eps_mbps
    }

    /// 1-based window containing `wall_time_s`. Boundary times `k*delta`
    /// map to window `k`; everything at or before zero maps to window 1.
    pub fn window_index(&self, wall_time_s: f64) -> usize {
        if wall_time_s <= 0.0 {
            return 1;
        }
        (wall_time_s / self.delta_s).ceil() as usize
    }

    /// Start of window `t`'s interval, i.e. `(t-1)*delta`.
    pub fn window_start_s(&self, t: usize) -> f64 {
        (t - 1) as f64 * self.delta_s
    }

    /// Nearest state index for a capacity, rounding half up and clamping
    /// to `[0, c_max/eps]`.
    pub fn quantize(&self, c_mbps: f64) -> usize {
        let max_state = self.state_count() - 1;
        let i = (c_mbps.max(0.0) / self.eps_mbps + 0.5).floor() as usize;
        i.min(max_state)
    }
}

/// Piecewise-constant capacity over delta-windows, in Mbps.
///
/// Holds both ground-truth traces and inferred reconstructions; values are
/// not required to lie on the epsilon grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityTrace {
    pub grid: QuantGrid,
    values: Vec<f64>,
}

impl CapacityTrace {
    pub fn new(grid: QuantGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.is_empty() {
            return Err(VeritasError::InvalidTrace(
                "trace needs at least one window".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(VeritasError::InvalidTrace(format!(
                "capacity must be finite and >= 0, got {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Number of windows T.
    pub fn windows(&self) -> usize {
        self.values.len()
    }

    /// Wall-clock length `T * delta`.
    pub fn horizon_s(&self) -> f64 {
        self.values.len() as f64 * self.grid.delta_s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of 1-based window `t`, holding the last window beyond T.
    pub fn window_value(&self, t: usize) -> f64 {
        let idx = t.clamp(1, self.values.len());
        self.values[idx - 1]
    }

    /// Capacity at a wall-clock time (piecewise constant, tail held).
    pub fn value_at(&self, wall_time_s: f64) -> f64 {
        self.window_value(self.grid.window_index(wall_time_s))
    }
}

/// TCP control variables captured at the start of a chunk download.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpState {
    /// Congestion window, in segments.
    pub cwnd: u64,
    /// Slow start threshold, in segments.
    pub ssthresh: u64,
    /// Retransmission timeout.
    pub rto_s: f64,
    pub min_rtt_s: f64,
    /// Seconds since data was last sent on the connection.
    pub last_send_s: f64,
    pub srtt_s: f64,
}

impl TcpState {
    pub fn validate(&self) -> Result<()> {
        let fail = |why: String| {
            Err(VeritasError::InvalidParam {
                name: "tcp_state",
                why,
            })
        };
        if self.cwnd < 1 {
            return fail(format!("cwnd must be >= 1, got {}", self.cwnd));
        }
        if self.ssthresh < 2 {
            return fail(format!("ssthresh must be >= 2, got {}", self.ssthresh));
        }
        if !(self.rto_s > 0.0) {
            return fail(format!("rto_s must be positive, got {}", self.rto_s));
        }
        if !(self.min_rtt_s > 0.0) || self.min_rtt_s > self.srtt_s {
            return fail(format!(
                "need 0 < min_rtt_s <= srtt_s, got min_rtt_s={} srtt_s={}",
                self.min_rtt_s, self.srtt_s
            ));
        }
        if !(self.last_send_s >= 0.0) {
            return fail(format!(
                "last_send_s must be >= 0, got {}",
                self.last_send_s
            ));
        }
        Ok(())
    }
}

/// Per-chunk observables collected in a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    /// 1-based chunk index.
    pub index: usize,
    pub size_bytes: u64,
    pub start_s: f64,
    pub end_s: f64,
    pub quality_level: usize,
    pub buffer_at_start_s: f64,
    pub tcp_at_start: TcpState,
}

impl ChunkRecord {
    pub fn download_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Observed throughput `size * 8 / download_time`, in Mbps.
    pub fn throughput_mbps(&self) -> f64 {
        self.size_bytes as f64 * 8.0 / self.download_s() / 1e6
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |why: String| {
            Err(VeritasError::ChunkInvariant {
                chunk: self.index,
                why,
            })
        };
        if self.size_bytes == 0 {
            return fail("size_bytes must be positive".into());
        }
        if !(self.end_s > self.start_s) {
            return fail(format!(
                "end_s ({}) must be after start_s ({})",
                self.end_s, self.start_s
            ));
        }
        if !(self.start_s >= 0.0) {
            return fail(format!("start_s must be >= 0, got {}", self.start_s));
        }
        if !(self.buffer_at_start_s >= 0.0) {
            return fail(format!(
                "buffer_s must be >= 0, got {}",
                self.buffer_at_start_s
            ));
        }
        self.tcp_at_start
            .validate()
            .map_err(|e| VeritasError::ChunkInvariant {
                chunk: self.index,
                why: e.to_string(),
            })
    }
}

/// An ordered sequence of chunk records plus the session-level constants
/// needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub chunks: Vec<ChunkRecord>,
    /// Configured end-to-end RTT of the session.
    pub session_delay_s: f64,
    pub chunk_duration_s: f64,
}

impl SessionLog {
    pub fn new(
        chunks: Vec<ChunkRecord>,
        session_delay_s: f64,
        chunk_duration_s: f64,
    ) -> Result<Self> {
        let log = Self {
            chunks,
            session_delay_s,
            chunk_duration_s,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunks.is_empty() {
            return Err(VeritasError::EmptyLog);
        }
        if !(self.session_delay_s > 0.0) {
            return Err(VeritasError::LogInvariant(format!(
                "delay_s must be positive, got {}",
                self.session_delay_s
            )));
        }
        if !(self.chunk_duration_s > 0.0) {
            return Err(VeritasError::LogInvariant(format!(
                "chunk_duration_s must be positive, got {}",
                self.chunk_duration_s
            )));
        }
        for (i, chunk) in self.chunks.iter().enumerate() {
            if chunk.index != i + 1 {
                return Err(VeritasError::LogInvariant(format!(
                    "chunk indices must be consecutive from 1; position {} has n={}",
                    i + 1,
                    chunk.index
                )));
            }
            chunk.validate()?;
            if i > 0 && chunk.start_s < self.chunks[i - 1].end_s {
                return Err(VeritasError::ChunkInvariant {
                    chunk: chunk.index,
                    why: format!(
                        "start_s ({}) precedes previous chunk end ({})",
                        chunk.start_s,
                        self.chunks[i - 1].end_s
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Number of capacity windows elapsed between the starts of chunks
    /// `n-1` and `n` (1-based `n`, valid for `2 <= n <= N`).
    pub fn delta_n(&self, grid: &QuantGrid, n: usize) -> Result<usize> {
        if n < 2 || n > self.chunks.len() {
            return Err(VeritasError::InvalidParam {
                name: "n",
                why: format!("need 2 <= n <= {}, got {n}", self.chunks.len()),
            });
        }
        let w_prev = grid.window_index(self.chunks[n - 2].start_s);
        let w_cur = grid.window_index(self.chunks[n - 1].start_s);
        Ok(w_cur - w_prev)
    }
}

/// One rung of the quality ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityLevel {
    pub bitrate_mbps: f64,
    pub ssim: f64,
}

/// The encoded video: ladder, chunk duration, and VBR size jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoModel {
    pub chunk_duration_s: f64,
    pub ladder: Vec<QualityLevel>,
    /// Lognormal sigma for multiplicative chunk-size jitter; 0 disables it.
    pub vbr_sigma: f64,
    pub total_chunks: usize,
}

/// Default 5-rung ladder. SSIM endpoints 0.908 at 0.1 Mbps and 0.986 at
/// 4.0 Mbps, interior rungs spaced monotonically.
pub const DEFAULT_LADDER: [QualityLevel; 5] = [
    QualityLevel {
        bitrate_mbps: 0.1,
        ssim: 0.908,
    },
    QualityLevel {
        bitrate_mbps: 0.5,
        ssim: 0.935,
    },
    QualityLevel {
        bitrate_mbps: 1.2,
        ssim: 0.958,
    },
    QualityLevel {
        bitrate_mbps: 2.4,
        ssim: 0.975,
    },
    QualityLevel {
        bitrate_mbps: 4.0,
        ssim: 0.986,
    },
];

impl VideoModel {
    pub fn new(
        chunk_duration_s: f64,
        ladder: Vec<QualityLevel>,
        vbr_sigma: f64,
        total_chunks: usize,
    ) -> Result<Self> {
        let video = Self {
            chunk_duration_s,
            ladder,
            vbr_sigma,
            total_chunks,
        };
        video.validate()?;
        Ok(video)
    }

    /// 10-minute clip on the default ladder with 2-second chunks.
    pub fn default_video() -> Self {
        Self {
            chunk_duration_s: 2.0,
            ladder: DEFAULT_LADDER.to_vec(),
            vbr_sigma: 0.15,
            total_chunks: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_duration_s > 0.0) {
            return Err(VeritasError::InvalidVideo(format!(
                "chunk_duration_s must be positive, got {}",
                self.chunk_duration_s
            )));
        }
        if self.ladder.is_empty() {
            return Err(VeritasError::InvalidVideo(
                "ladder must have at least one rung".into(),
            ));
        }
        if self.total_chunks == 0 {
            return Err(VeritasError::InvalidVideo(
                "total_chunks must be positive".into(),
            ));
        }
        if !(self.vbr_sigma >= 0.0) {
            return Err(VeritasError::InvalidVideo(format!(
                "vbr_sigma must be >= 0, got {}",
                self.vbr_sigma
            )));
        }
        for pair in self.ladder.windows(2) {
            if !(pair[1].bitrate_mbps > pair[0].bitrate_mbps) {
                return Err(VeritasError::InvalidVideo(
                    "ladder bitrates must be strictly ascending".into(),
                ));
            }
            if !(pair[1].ssim > pair[0].ssim) {
                return Err(VeritasError::InvalidVideo(
                    "ladder ssim must be strictly increasing with bitrate".into(),
                ));
            }
        }
        for rung in &self.ladder {
            if !(rung.ssim > 0.0 && rung.ssim < 1.0) {
                return Err(VeritasError::InvalidVideo(format!(
                    "ssim must lie in (0,1), got {}",
                    rung.ssim
                )));
            }
            if !(rung.bitrate_mbps > 0.0) {
                return Err(VeritasError::InvalidVideo(format!(
                    "bitrate must be positive, got {}",
                    rung.bitrate_mbps
                )));
            }
        }
        Ok(())
    }

    /// Nominal (un-jittered) chunk size at a quality, in bytes.
    pub fn nominal_size_bytes(&self, quality: usize) -> f64 {
        self.ladder[quality].bitrate_mbps * 1e6 * self.chunk_duration_s / 8.0
    }

    /// Encoded size of chunk `n` (1-based) at `quality`. The jitter is a
    /// pure function of `(size_seed, n, quality)` so the same manifest is
    /// seen by every replay of the same video.
    pub fn chunk_size_bytes(&self, size_seed: u64, n: usize, quality: usize) -> u64 {
        let nominal = self.nominal_size_bytes(quality);
        let size = if self.vbr_sigma == 0.0 {
            nominal
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(size_seed, n as u64, quality as u64));
            let z: f64 = StandardNormal.sample(&mut rng);
            nominal * (self.vbr_sigma * z).exp()
        };
        (size.round() as u64).max(1)
    }
}

/// Build a ladder from bare bitrates, assigning SSIM by interpolating the
/// default ladder (log-bitrate linear inside its range, power-law tails
/// outside, always inside (0,1) and strictly increasing).
pub fn ladder_from_bitrates(bitrates_mbps: &[f64]) -> Result<Vec<QualityLevel>> {
    let anchors = &DEFAULT_LADDER;
    let mut ladder = Vec::with_capacity(bitrates_mbps.len());
    for &b in bitrates_mbps {
        if !(b > 0.0) {
            return Err(VeritasError::InvalidVideo(format!(
                "bitrate must be positive, got {b}"
            )));
        }
        let lo = anchors.first().unwrap();
        let hi = anchors.last().unwrap();
        let ssim = if b <= lo.bitrate_mbps {
            lo.ssim * (b / lo.bitrate_mbps).powf(0.05)
        } else if b >= hi.bitrate_mbps {
            1.0 - (1.0 - hi.ssim) * (hi.bitrate_mbps / b).powf(0.8)
        } else {
            let seg = anchors
                .windows(2)
                .find(|p| b <= p[1].bitrate_mbps)
                .expect("interior bitrate falls in some segment");
            let t = (b.ln() - seg[0].bitrate_mbps.ln())
                / (seg[1].bitrate_mbps.ln() - seg[0].bitrate_mbps.ln());
            seg[0].ssim + t * (seg[1].ssim - seg[0].ssim)
        };
        ladder.push(QualityLevel {
            bitrate_mbps: b,
            ssim,
        });
    }
    Ok(ladder)
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

pub(crate) fn mix3(a: u64, b: u64, c: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(a) ^ b) ^ c)
}
