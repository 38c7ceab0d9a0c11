//! ABR policies. Each is a pure function of observables: buffer level, past
//! observed throughputs, the previous quality, and the upcoming chunk sizes
//! from the manifest. None of them ever sees the true capacity trace.

use serde::{Deserialize, Serialize};

use crate::core_model::QualityLevel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcParams {
    pub horizon: usize,
    /// How many past throughput samples feed the harmonic-mean predictor.
    pub lookback: usize,
    pub rebuffer_coef: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon: 3,
            lookback: 5,
            rebuffer_coef: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbaParams {
    /// Buffer fraction below which the lowest quality is forced.
    pub reservoir_frac: f64,
    /// Buffer fraction at or above which the highest quality is used.
    pub upper_frac: f64,
}

impl Default for BbaParams {
    fn default() -> Self {
        Self {
            reservoir_frac: 0.2,
            upper_frac: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolaParams {
    /// Utility offset; 1.0 makes the lowest quality win at empty buffer.
    pub gamma: f64,
}

impl Default for BolaParams {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

/// Quality-selection policy run before each chunk request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum AbrPolicy {
    Mpc(MpcParams),
    Bba(BbaParams),
    #[serde(rename = "bola")]
    BolaBasic(BolaParams),
    /// Always request the same ladder rung.
    Fixed {
        quality: usize,
    },
    /// Scripted per-chunk qualities (repeating the last entry when the
    /// session outruns the script).
    Script {
        qualities: Vec<usize>,
    },
}

impl AbrPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            AbrPolicy::Mpc(_) => "mpc",
            AbrPolicy::Bba(_) => "bba",
            AbrPolicy::BolaBasic(_) => "bola",
            AbrPolicy::Fixed { .. } => "fixed",
            AbrPolicy::Script { .. } => "script",
        }
    }
}

/// What a policy is allowed to look at when choosing the next quality.
#[derive(Debug, Clone, Copy)]
pub struct Observables<'a> {
    /// 1-based index of the chunk about to be requested.
    pub chunk_index: usize,
    pub buffer_s: f64,
    pub buffer_cap_s: f64,
    pub chunk_duration_s: f64,
    pub past_throughputs_mbps: &'a [f64],
    pub last_quality: Option<usize>,
    /// Manifest sizes for the next chunks: `upcoming_sizes[h][q]`.
    pub upcoming_sizes: &'a [Vec<u64>],
    pub ladder: &'a [QualityLevel],
}

pub fn choose_quality(policy: &AbrPolicy, obs: &Observables) -> usize {
    match policy {
        AbrPolicy::Mpc(p) => abr_mpc(obs, p),
        AbrPolicy::Bba(p) => abr_bba(obs, p),
        AbrPolicy::BolaBasic(p) => abr_bola_basic(obs, p),
        AbrPolicy::Fixed { quality } => (*quality).min(obs.ladder.len() - 1),
        AbrPolicy::Script { qualities } => {
            let i = (obs.chunk_index - 1).min(qualities.len().saturating_sub(1));
            qualities
                .get(i)
                .copied()
                .unwrap_or(0)
                .min(obs.ladder.len() - 1)
        }
    }
}

pub(crate) fn harmonic_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|x| *x <= 0.0) {
        return None;
    }
    Some(xs.len() as f64 / xs.iter().map(|x| 1.0 / x).sum::<f64>())
}

/// SSIM on a dB-like scale so quality differences are commensurate with the
/// stall penalty.
pub(crate) fn ssim_db(ssim: f64) -> f64 {
    10.0 * (1.0 / (1.0 - ssim)).log10()
}

/// Model-predictive control: exhaustively scores quality sequences over a
/// short horizon under a harmonic-mean throughput prediction, maximizing
/// quality minus stall and switching penalties. Ties go to the lower
/// quality sequence.
pub fn abr_mpc(obs: &Observables, params: &MpcParams) -> usize {
    let n_q = obs.ladder.len();
    let horizon = params.horizon.max(1).min(obs.upcoming_sizes.len());
    if horizon == 0 {
        return 0;
    }
    let lookback = obs.past_throughputs_mbps.len().min(params.lookback);
    let tail = &obs.past_throughputs_mbps[obs.past_throughputs_mbps.len() - lookback..];
    // No history yet: assume the lowest rung's bitrate is sustainable.
    let predicted_mbps = harmonic_mean(tail).unwrap_or(obs.ladder[0].bitrate_mbps);

    let prev_db = obs.last_quality.map(|q| ssim_db(obs.ladder[q].ssim));
    let mut best_score = f64::NEG_INFINITY;
    let mut best_first = 0usize;
    let mut seq = vec![0usize; horizon];
    loop {
        let mut buffer = obs.buffer_s;
        let mut last_db = prev_db;
        let mut score = 0.0;
        for (k, &q) in seq.iter().enumerate() {
            let size = obs.upcoming_sizes[k][q];
            let download_s = size as f64 * 8.0 / (predicted_mbps * 1e6);
            let stall = (download_s - buffer).max(0.0);
            buffer = (buffer - download_s).max(0.0) + obs.chunk_duration_s;
            buffer = buffer.min(obs.buffer_cap_s);
            let db = ssim_db(obs.ladder[q].ssim);
            score += db - params.rebuffer_coef * stall;
            if let Some(prev) = last_db {
                score -= (db - prev).abs();
            }
            last_db = Some(db);
        }
        if score > best_score {
            best_score = score;
            best_first = seq[0];
        }
        // next sequence in lexicographic order
        let mut pos = horizon;
        loop {
            if pos == 0 {
                return best_first;
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < n_q {
                break;
            }
            seq[pos] = 0;
        }
    }
}

/// Buffer-based: a linear staircase from the lowest to the highest rung
/// across the buffer-occupancy band `[reservoir, upper]`.
pub fn abr_bba(obs: &Observables, params: &BbaParams) -> usize {
    let n_q = obs.ladder.len();
    let frac = (obs.buffer_s / obs.buffer_cap_s).clamp(0.0, 1.0);
    if frac < params.reservoir_frac {
        return 0;
    }
    if frac >= params.upper_frac {
        return n_q - 1;
    }
    let span = params.upper_frac - params.reservoir_frac;
    let v = (frac - params.reservoir_frac) / span * (n_q - 1) as f64;
    ((v + 1e-9).floor() as usize).min(n_q - 1)
}

/// BOLA (basic variant): utility is the log size ratio against the smallest
/// rung; picks the rung maximizing `(V*(utility + gamma) - buffer) / size`.
/// Ties go to the lower quality.
pub fn abr_bola_basic(obs: &Observables, params: &BolaParams) -> usize {
    let sizes = &obs.upcoming_sizes[0];
    let min_size = *sizes.iter().min().expect("nonempty ladder") as f64;
    let utilities: Vec<f64> = sizes.iter().map(|s| (*s as f64 / min_size).ln()).collect();
    let u_max = utilities.iter().cloned().fold(0.0, f64::max);
    let v = (obs.buffer_cap_s - obs.chunk_duration_s).max(obs.chunk_duration_s)
        / (u_max + params.gamma);
    let mut best = f64::NEG_INFINITY;
    let mut best_q = 0;
    for (q, u) in utilities.iter().enumerate() {
        let score = (v * (u + params.gamma) - obs.buffer_s) / sizes[q] as f64;
        if score > best {
            best = score;
            best_q = q;
        }
    }
    best_q
}
