//! Playback quality metrics.

use serde::{Deserialize, Serialize};

use crate::player_sim::SessionResult;

/// Session-level quality summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    /// Stall time over played-plus-stalled time; startup is excluded.
    pub rebuffer_ratio: f64,
    pub avg_ssim: f64,
    /// Mean of per-chunk actual bitrates `size*8/L`.
    pub avg_bitrate_mbps: f64,
    /// Mean absolute SSIM difference between consecutive chunks.
    pub ssim_change: f64,
}

pub fn compute_metrics(result: &SessionResult) -> MetricSet {
    let n = result.per_chunk_ssim.len();
    assert!(n > 0, "session has no chunks");
    let denom = result.play_time_s + result.rebuffer_time_s;
    let rebuffer_ratio = if denom > 0.0 {
        result.rebuffer_time_s / denom
    } else {
        0.0
    };
    let avg_ssim = result.per_chunk_ssim.iter().sum::<f64>() / n as f64;
    let avg_bitrate_mbps = result.per_chunk_bitrate_mbps.iter().sum::<f64>() / n as f64;
    let ssim_change = if n >= 2 {
        result
            .per_chunk_ssim
            .windows(2)
            .map(|p| (p[1] - p[0]).abs())
            .sum::<f64>()
            / (n - 1) as f64
    } else {
        0.0
    };
    MetricSet {
        rebuffer_ratio,
        avg_ssim,
        avg_bitrate_mbps,
        ssim_change,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_model::{ChunkRecord, SessionLog, TcpState};

    fn result_with(ssims: Vec<f64>, play: f64, rebuf: f64) -> SessionResult {
        let tcp = TcpState {
            cwnd: 10,
            ssthresh: 64,
            rto_s: 0.2,
            min_rtt_s: 0.08,
            last_send_s: 0.0,
            srtt_s: 0.08,
        };
        let chunks = (0..ssims.len())
            .map(|i| ChunkRecord {
                index: i + 1,
                size_bytes: 500_000,
                start_s: i as f64 * 2.0,
                end_s: i as f64 * 2.0 + 1.0,
                quality_level: 0,
                buffer_at_start_s: 0.0,
                tcp_at_start: tcp.clone(),
            })
            .collect::<Vec<_>>();
        let n = ssims.len();
        SessionResult {
            log: SessionLog::new(chunks, 0.08, 2.0).unwrap(),
            play_time_s: play,
            rebuffer_time_s: rebuf,
            startup_time_s: 1.0,
            end_time_s: 1.0 + play + rebuf,
            per_chunk_ssim: ssims,
            per_chunk_bitrate_mbps: vec![2.0; n],
            final_tcp: tcp,
        }
    }

    #[test]
    fn zero_stalls_means_zero_ratio() {
        let m = compute_metrics(&result_with(vec![0.95, 0.95], 10.0, 0.0));
        assert_eq!(m.rebuffer_ratio, 0.0);
        assert_eq!(m.ssim_change, 0.0);
    }

    #[test]
    fn hand_computed_two_chunk_values() {
        let m = compute_metrics(&result_with(vec![0.908, 0.986], 9.0, 1.0));
        assert!((m.avg_ssim - 0.947).abs() < 1e-12);
        assert!((m.ssim_change - 0.078).abs() < 1e-12);
        assert!((m.rebuffer_ratio - 0.1).abs() < 1e-12);
        assert_eq!(m.avg_bitrate_mbps, 2.0);
    }

    #[test]
    fn averages_are_permutation_invariant_and_change_is_not() {
        let a = compute_metrics(&result_with(vec![0.90, 0.95, 0.93, 0.98], 10.0, 0.0));
        let b = compute_metrics(&result_with(vec![0.90, 0.93, 0.95, 0.98], 10.0, 0.0));
        assert_eq!(a.avg_ssim, b.avg_ssim);
        assert_ne!(a.ssim_change, b.ssim_change);
    }
}
