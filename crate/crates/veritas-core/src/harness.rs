//! Accuracy harness for the throughput estimator: sweeps payload trains
//! through the round-level backend and compares each payload's observed
//! throughput with the estimator's prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::core_model::{mix3, CapacityTrace, QuantGrid, TcpState};
use crate::player_sim::{backend_round_sim, INITIAL_SSTHRESH};
use crate::tcp_estimator::EstimatorConfig;

/// One payload of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FAccuracySample {
    pub capacity_mbps: f64,
    pub delay_s: f64,
    pub gap_s: f64,
    pub size_bytes: u64,
    pub y_hat_mbps: f64,
    pub y_obs_mbps: f64,
}

impl FAccuracySample {
    pub fn abs_error_mbps(&self) -> f64 {
        (self.y_hat_mbps - self.y_obs_mbps).abs()
    }

    pub fn rel_error(&self) -> f64 {
        (self.y_hat_mbps - self.y_obs_mbps) / self.y_obs_mbps
    }
}

/// Ranges of the sweep: payloads 2 KB to 4 MB with 0.12 s to 8 s of idle
/// between them, capacity 0.5 to 10 Mbps, end-to-end delay 5 to 40 ms.
/// Capacity and delay stay constant within one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRanges {
    pub capacity_mbps: (f64, f64),
    pub delay_s: (f64, f64),
    pub gap_s: (f64, f64),
    pub size_bytes: (u64, u64),
}

impl Default for SweepRanges {
    fn default() -> Self {
        Self {
            capacity_mbps: (0.5, 10.0),
            delay_s: (0.005, 0.04),
            gap_s: (0.12, 8.0),
            size_bytes: (2_000, 4_000_000),
        }
    }
}

/// Run `experiments` payload trains of `payloads_per_experiment` transfers
/// each. Deterministic for a fixed seed; experiments run in parallel.
pub fn f_accuracy_sweep(
    experiments: usize,
    payloads_per_experiment: usize,
    seed: u64,
    ranges: &SweepRanges,
    config: &EstimatorConfig,
) -> Vec<FAccuracySample> {
    (0..experiments)
        .into_par_iter()
        .flat_map_iter(|e| run_experiment(e, payloads_per_experiment, seed, ranges, *config))
        .collect()
}

fn run_experiment(
    exp_idx: usize,
    payloads: usize,
    seed: u64,
    ranges: &SweepRanges,
    config: EstimatorConfig,
) -> Vec<FAccuracySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix3(seed, 0x6661_6363, exp_idx as u64));
    let capacity = rng.gen_range(ranges.capacity_mbps.0..=ranges.capacity_mbps.1);
    let delay = rng.gen_range(ranges.delay_s.0..=ranges.delay_s.1);
    // one window is enough: the tail hold keeps it constant forever
    let grid = QuantGrid {
        delta_s: 5.0,
        eps_mbps: 0.5,
        c_max_mbps: 10.0,
    };
    let trace = CapacityTrace::new(grid, vec![capacity]).expect("valid constant trace");

    let rto = config.rto_s(delay);
    let mut cwnd = config.init_cwnd;
    let mut ssthresh = INITIAL_SSTHRESH;
    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(payloads);
    let (lo_ln, hi_ln) = (
        (ranges.size_bytes.0 as f64).ln(),
        (ranges.size_bytes.1 as f64).ln(),
    );
    for p in 0..payloads {
        let gap = if p == 0 {
            0.0
        } else {
            rng.gen_range(ranges.gap_s.0..=ranges.gap_s.1)
        };
        t += gap;
        let size = rng.gen_range(lo_ln..=hi_ln).exp().round() as u64;
        let w = TcpState {
            cwnd,
            ssthresh,
            rto_s: rto,
            min_rtt_s: delay,
            last_send_s: gap,
            srtt_s: delay,
        };
        let y_hat = crate::tcp_estimator::estimate_throughput(capacity, &w, size, &config);
        let obs = backend_round_sim(&trace, &w, size, t, &config, true).expect("positive capacity");
        let y_obs = size as f64 * 8.0 / obs.duration_s / 1e6;
        out.push(FAccuracySample {
            capacity_mbps: capacity,
            delay_s: delay,
            gap_s: gap,
            size_bytes: size,
            y_hat_mbps: y_hat,
            y_obs_mbps: y_obs,
        });
        cwnd = obs.cwnd_after;
        ssthresh = obs.ssthresh_after;
        t += obs.duration_s;
    }
    out
}

/// Sorted `(error, cdf)` pairs for plotting.
pub fn error_cdf(samples: &[FAccuracySample]) -> Vec<(f64, f64)> {
    let mut errors: Vec<f64> = samples.iter().map(|s| s.rel_error()).collect();
    errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = errors.len() as f64;
    errors
        .iter()
        .enumerate()
        .map(|(i, e)| (*e, (i + 1) as f64 / n))
        .collect()
}

/// Fraction of predictions within an absolute band of the observation.
pub fn fraction_within_mbps(samples: &[FAccuracySample], band_mbps: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .filter(|s| s.abs_error_mbps() <= band_mbps)
        .count() as f64
        / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_deterministic() {
        let a = f_accuracy_sweep(
            4,
            10,
            3,
            &SweepRanges::default(),
            &EstimatorConfig::default(),
        );
        let b = f_accuracy_sweep(
            4,
            10,
            3,
            &SweepRanges::default(),
            &EstimatorConfig::default(),
        );
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
    }

    #[test]
    fn cdf_is_nondecreasing() {
        let samples = f_accuracy_sweep(
            4,
            25,
            1,
            &SweepRanges::default(),
            &EstimatorConfig::default(),
        );
        let cdf = error_cdf(&samples);
        for pair in cdf.windows(2) {
            assert!(pair[1].0 >= pair[0].0);
            assert!(pair[1].1 >= pair[0].1);
        }
        assert!((cdf.last().unwrap().1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samples_respect_ranges() {
        let r = SweepRanges::default();
        let samples = f_accuracy_sweep(6, 15, 9, &r, &EstimatorConfig::default());
        for s in &samples {
            assert!(s.capacity_mbps >= r.capacity_mbps.0 && s.capacity_mbps <= r.capacity_mbps.1);
            assert!(s.delay_s >= r.delay_s.0 && s.delay_s <= r.delay_s.1);
            assert!(s.size_bytes >= r.size_bytes.0 && s.size_bytes <= r.size_bytes.1 + 1);
            assert!(s.y_obs_mbps > 0.0 && s.y_hat_mbps >= 0.0);
        }
    }
}
