//! Embedded HMM over quantized capacity states.
//!
//! Chunk-to-chunk hidden-state transitions use the base matrix raised to the
//! number of capacity windows elapsed between chunk starts, so chunks that
//! share a window share one state and off-periods advance the chain without
//! observations. Emissions are Gaussian around the TCP throughput estimator.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core_model::{mix3, CapacityTrace, ChunkRecord, QuantGrid, SessionLog};
use crate::error::{Result, VeritasError};
use crate::tcp_estimator::{estimate_throughput, EstimatorConfig};

const LN_2PI: f64 = 1.8378770664093453;

/// Row-stochastic transition matrix over capacity states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    states: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let states = rows.len();
        let mut data = Vec::with_capacity(states * states);
        for row in &rows {
            if row.len() != states {
                return Err(VeritasError::InvalidModel(
                    "transition matrix must be square".into(),
                ));
            }
            data.extend_from_slice(row);
        }
        let m = Self { states, data };
        m.validate()?;
        Ok(m)
    }

    /// Tridiagonal matrix: stay with probability `p_stay`, split the rest
    /// between the two neighbors; at the boundaries the missing neighbor's
    /// share folds back onto the diagonal.
    pub fn tridiagonal(states: usize, p_stay: f64) -> Result<Self> {
        if states == 0 {
            return Err(VeritasError::InvalidModel("need at least one state".into()));
        }
        if !(p_stay > 0.0 && p_stay < 1.0) {
            return Err(VeritasError::InvalidParam {
                name: "p_stay",
                why: format!("must lie in (0,1), got {p_stay}"),
            });
        }
        let side = (1.0 - p_stay) / 2.0;
        let mut data = vec![0.0; states * states];
        for i in 0..states {
            let mut stay = p_stay;
            if i == 0 {
                stay += side;
            }
            if i == states - 1 {
                stay += side;
            }
            data[i * states + i] = stay;
            if i > 0 {
                data[i * states + i - 1] = side;
            }
            if i + 1 < states {
                data[i * states + i + 1] = side;
            }
        }
        Ok(Self { states, data })
    }

    pub fn identity(states: usize) -> Self {
        let mut data = vec![0.0; states * states];
        for i in 0..states {
            data[i * states + i] = 1.0;
        }
        Self { states, data }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.states + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.states..(i + 1) * self.states]
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.states {
            let row = self.row(i);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(VeritasError::InvalidModel(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(VeritasError::InvalidModel(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn multiply(&self, other: &Self) -> Self {
        let n = self.states;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Self { states: n, data }
    }

    /// Matrix power by repeated squaring; `A^0` is the identity.
    pub fn power(&self, delta: usize) -> Self {
        let mut result = Self::identity(self.states);
        let mut base = self.clone();
        let mut e = delta;
        while e > 0 {
            if e & 1 == 1 {
                result = result.multiply(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.multiply(&base);
            }
        }
        result
    }
}

/// The embedded HMM: grid, base transition matrix, initial distribution,
/// emission noise, and the throughput-estimator constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EhmmModel {
    pub grid: QuantGrid,
    pub transitions: TransitionMatrix,
    pub initial: Vec<f64>,
    pub sigma_mbps: f64,
    pub estimator: EstimatorConfig,
}

impl EhmmModel {
    pub fn new(
        grid: QuantGrid,
        transitions: TransitionMatrix,
        initial: Vec<f64>,
        sigma_mbps: f64,
        estimator: EstimatorConfig,
    ) -> Result<Self> {
        grid.validate()?;
        transitions.validate()?;
        if transitions.states() != grid.state_count() {
            return Err(VeritasError::InvalidModel(format!(
                "transition matrix has {} states, grid has {}",
                transitions.states(),
                grid.state_count()
            )));
        }
        if initial.len() != grid.state_count() {
            return Err(VeritasError::InvalidModel(format!(
                "initial distribution has {} entries, grid has {} states",
                initial.len(),
                grid.state_count()
            )));
        }
        if initial.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(VeritasError::InvalidModel(
                "initial distribution has a negative entry".into(),
            ));
        }
        let sum: f64 = initial.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(VeritasError::InvalidModel(format!(
                "initial distribution sums to {sum}"
            )));
        }
        if !(sigma_mbps > 0.0) {
            return Err(VeritasError::InvalidModel(format!(
                "sigma_mbps must be positive, got {sigma_mbps}"
            )));
        }
        Ok(Self {
            grid,
            transitions,
            initial,
            sigma_mbps,
            estimator,
        })
    }

    /// Uniform initial distribution over a tridiagonal chain.
    pub fn uniform_tridiagonal(
        grid: QuantGrid,
        p_stay: f64,
        sigma_mbps: f64,
        estimator: EstimatorConfig,
    ) -> Result<Self> {
        let states = grid.state_count();
        let transitions = TransitionMatrix::tridiagonal(states, p_stay)?;
        let initial = vec![1.0 / states as f64; states];
        Self::new(grid, transitions, initial, sigma_mbps, estimator)
    }

    /// Log density of the chunk's observed throughput under capacity state
    /// `state`: a Gaussian around the estimator's prediction.
    pub fn emission_logprob(&self, state: usize, chunk: &ChunkRecord) -> f64 {
        let mu = estimate_throughput(
            self.grid.state_mbps(state),
            &chunk.tcp_at_start,
            chunk.size_bytes,
            &self.estimator,
        );
        let z = (chunk.throughput_mbps() - mu) / self.sigma_mbps;
        -0.5 * LN_2PI - self.sigma_mbps.ln() - 0.5 * z * z
    }

    /// Per-chunk, per-state emission log densities.
    fn emission_matrix(&self, log: &SessionLog) -> Vec<Vec<f64>> {
        let states = self.grid.state_count();
        log.chunks
            .iter()
            .map(|c| (0..states).map(|i| self.emission_logprob(i, c)).collect())
            .collect()
    }

    /// Window gaps between consecutive chunk starts, and the matrix powers
    /// they require (cached per distinct gap).
    fn deltas_and_powers(
        &self,
        log: &SessionLog,
    ) -> Result<(Vec<usize>, HashMap<usize, TransitionMatrix>)> {
        let mut deltas = Vec::with_capacity(log.len().saturating_sub(1));
        for n in 2..=log.len() {
            deltas.push(log.delta_n(&self.grid, n)?);
        }
        let mut powers = HashMap::new();
        for &d in &deltas {
            powers.entry(d).or_insert_with(|| self.transitions.power(d));
        }
        Ok((deltas, powers))
    }

    /// Most likely capacity-state assignment for every chunk, and its log
    /// score. Ties break toward the lower state index.
    pub fn viterbi_map(&self, log: &SessionLog) -> Result<ViterbiResult> {
        log.validate()?;
        let states = self.grid.state_count();
        let n_chunks = log.len();
        let emis = self.emission_matrix(log);
        let (deltas, powers) = self.deltas_and_powers(log)?;

        let mut score: Vec<f64> = (0..states)
            .map(|i| self.initial[i].ln() + emis[0][i])
            .collect();
        let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(n_chunks.saturating_sub(1));
        for n in 1..n_chunks {
            let p = &powers[&deltas[n - 1]];
            let mut next = vec![f64::NEG_INFINITY; states];
            let mut ptr = vec![0usize; states];
            for i in 0..states {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = 0;
                for j in 0..states {
                    let s = score[j] + p.get(j, i).ln();
                    if s > best {
                        best = s;
                        best_j = j;
                    }
                }
                next[i] = best + emis[n][i];
                ptr[i] = best_j;
            }
            score = next;
            backptr.push(ptr);
        }

        let mut best_state = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, s) in score.iter().enumerate() {
            if *s > best_score {
                best_score = *s;
                best_state = i;
            }
        }
        let mut path = vec![0usize; n_chunks];
        path[n_chunks - 1] = best_state;
        for n in (0..n_chunks - 1).rev() {
            path[n] = backptr[n][path[n + 1]];
        }
        Ok(ViterbiResult {
            states: path,
            log_likelihood: best_score,
        })
    }

    /// Posterior pair distribution over consecutive chunk states, computed
    /// with scaled forward-backward passes (safe for thousands of chunks).
    pub fn forward_backward(&self, log: &SessionLog) -> Result<PairPosterior> {
        log.validate()?;
        if log.len() < 2 {
            return Err(VeritasError::TooFewChunks {
                need: 2,
                got: log.len(),
            });
        }
        let states = self.grid.state_count();
        let n_chunks = log.len();
        let log_emis = self.emission_matrix(log);
        let (deltas, powers) = self.deltas_and_powers(log)?;

        // Emission rows rescaled by their max: per-chunk constants that
        // cancel in the per-pair normalization below.
        let emis: Vec<Vec<f64>> = log_emis
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter().map(|v| (v - m).exp()).collect()
            })
            .collect();

        let normalize = |v: &mut [f64]| {
            let z: f64 = v.iter().sum();
            debug_assert!(z > 0.0, "vanishing probability mass");
            for x in v.iter_mut() {
                *x /= z;
            }
        };

        let mut alpha = vec![vec![0.0; states]; n_chunks];
        for i in 0..states {
            alpha[0][i] = self.initial[i] * emis[0][i];
        }
        normalize(&mut alpha[0]);
        for n in 1..n_chunks {
            let p = &powers[&deltas[n - 1]];
            for i in 0..states {
                let mut acc = 0.0;
                for j in 0..states {
                    acc += alpha[n - 1][j] * p.get(j, i);
                }
                alpha[n][i] = acc * emis[n][i];
            }
            normalize(&mut alpha[n]);
        }

        let mut beta = vec![vec![1.0; states]; n_chunks];
        for n in (0..n_chunks - 1).rev() {
            let p = &powers[&deltas[n]];
            for i in 0..states {
                let mut acc = 0.0;
                for j in 0..states {
                    acc += p.get(i, j) * emis[n + 1][j] * beta[n + 1][j];
                }
                beta[n][i] = acc;
            }
            normalize(&mut beta[n]);
        }

        let mut data = vec![0.0; (n_chunks - 1) * states * states];
        for n in 0..n_chunks - 1 {
            let p = &powers[&deltas[n]];
            let base = n * states * states;
            let mut z = 0.0;
            for i in 0..states {
                for j in 0..states {
                    let v = alpha[n][i] * p.get(i, j) * emis[n + 1][j] * beta[n + 1][j];
                    data[base + i * states + j] = v;
                    z += v;
                }
            }
            debug_assert!(z > 0.0);
            for v in &mut data[base..base + states * states] {
                *v /= z;
            }
        }
        Ok(PairPosterior {
            states,
            n_pairs: n_chunks - 1,
            data,
        })
    }

    /// Draw `k` chunk-state sequences from the posterior: the last chunk is
    /// pinned to the MAP last state, then earlier chunks are sampled
    /// backward from the pair posterior. Deterministic per `(seed, path)`.
    pub fn sample_paths(&self, log: &SessionLog, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        if k == 0 {
            return Err(VeritasError::InvalidParam {
                name: "k",
                why: "must be >= 1".into(),
            });
        }
        let map = self.viterbi_map(log)?;
        let n_chunks = log.len();
        if n_chunks == 1 {
            return Ok(vec![map.states.clone(); k]);
        }
        let pairs = self.forward_backward(log)?;
        let states = self.grid.state_count();
        let mut paths = Vec::with_capacity(k);
        for path_idx in 0..k {
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(seed, 0x7061_7468, path_idx as u64));
            let mut path = vec![0usize; n_chunks];
            path[n_chunks - 1] = *map.states.last().expect("nonempty path");
            for n in (0..n_chunks - 1).rev() {
                let next = path[n + 1];
                let total: f64 = (0..states).map(|i| pairs.gamma(i, next, n + 1)).sum();
                debug_assert!(total > 0.0, "pair posterior column has no mass");
                let draw: f64 = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = states - 1;
                for i in 0..states {
                    acc += pairs.gamma(i, next, n + 1);
                    if draw < acc {
                        chosen = i;
                        break;
                    }
                }
                path[n] = chosen;
            }
            paths.push(path);
        }
        Ok(paths)
    }

    /// Expand per-chunk states to a full `horizon_windows`-long trace:
    /// windows holding a chunk start take that chunk's capacity (last chunk
    /// wins), gaps are linearly interpolated then re-quantized, and the
    /// ends hold the nearest anchor.
    pub fn reconstruct_trace(
        &self,
        chunk_states: &[usize],
        log: &SessionLog,
        horizon_windows: usize,
    ) -> Result<CapacityTrace> {
        reconstruct_trace(&self.grid, chunk_states, log, horizon_windows)
    }

    /// Full abduction: MAP assignment plus `k` sampled capacity traces.
    pub fn abduct(
        &self,
        log: &SessionLog,
        k: usize,
        seed: u64,
        horizon_windows: usize,
    ) -> Result<AbductionResult> {
        let map = self.viterbi_map(log)?;
        let sample_states = self.sample_paths(log, k, seed)?;
        let map_trace = self.reconstruct_trace(&map.states, log, horizon_windows)?;
        let samples = sample_states
            .iter()
            .map(|s| self.reconstruct_trace(s, log, horizon_windows))
            .collect::<Result<Vec<_>>>()?;
        Ok(AbductionResult {
            map_states: map.states,
            log_likelihood: map.log_likelihood,
            map_trace,
            sample_states,
            samples,
        })
    }
}

/// MAP state sequence and its log score.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiResult {
    pub states: Vec<usize>,
    pub log_likelihood: f64,
}

/// Posterior joint distribution over consecutive chunk-state pairs.
///
/// `gamma(i, j, n)` is the probability that chunk `n` sits in state `i` and
/// chunk `n+1` in state `j` given all observations, for 1-based
/// `n = 1..N-1`; each pair slice sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPosterior {
    states: usize,
    n_pairs: usize,
    data: Vec<f64>,
}

impl PairPosterior {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn gamma(&self, i: usize, j: usize, n: usize) -> f64 {
        assert!(
            n >= 1 && n <= self.n_pairs,
            "pair index {n} out of 1..={}",
            self.n_pairs
        );
        self.data[(n - 1) * self.states * self.states + i * self.states + j]
    }

    /// Marginal of the left element of pair `n`.
    pub fn left_marginal(&self, i: usize, n: usize) -> f64 {
        (0..self.states).map(|j| self.gamma(i, j, n)).sum()
    }

    /// Marginal of the right element of pair `n`.
    pub fn right_marginal(&self, j: usize, n: usize) -> f64 {
        (0..self.states).map(|i| self.gamma(i, j, n)).sum()
    }
}

/// MAP states, sampled capacity traces, and the MAP score.
#[derive(Debug, Clone)]
pub struct AbductionResult {
    pub map_states: Vec<usize>,
    pub log_likelihood: f64,
    pub map_trace: CapacityTrace,
    pub sample_states: Vec<Vec<usize>>,
    pub samples: Vec<CapacityTrace>,
}

/// See [`EhmmModel::reconstruct_trace`].
pub fn reconstruct_trace(
    grid: &QuantGrid,
    chunk_states: &[usize],
    log: &SessionLog,
    horizon_windows: usize,
) -> Result<CapacityTrace> {
    log.validate()?;
    if chunk_states.len() != log.len() {
        return Err(VeritasError::InvalidParam {
            name: "chunk_states",
            why: format!(
                "have {} states for {} chunks",
                chunk_states.len(),
                log.len()
            ),
        });
    }
    let last_window = grid.window_index(log.chunks.last().expect("nonempty").start_s);
    if horizon_windows < last_window {
        return Err(VeritasError::InvalidParam {
            name: "horizon_windows",
            why: format!(
                "must cover the last chunk start (window {last_window}), got {horizon_windows}"
            ),
        });
    }
    // Anchor windows; a later chunk starting in the same window overwrites.
    let mut anchors: Vec<(usize, f64)> = Vec::new();
    for (chunk, state) in log.chunks.iter().zip(chunk_states) {
        let w = grid.window_index(chunk.start_s);
        let v = grid.state_mbps(*state);
        match anchors.last_mut() {
            Some((lw, lv)) if *lw == w => *lv = v,
            _ => anchors.push((w, v)),
        }
    }
    let mut values = vec![0.0; horizon_windows];
    let (first_w, first_v) = anchors[0];
    let (last_w, last_v) = *anchors.last().expect("nonempty anchors");
    for w in 1..first_w {
        values[w - 1] = first_v;
    }
    for w in last_w..=horizon_windows {
        values[w - 1] = last_v;
    }
    for pair in anchors.windows(2) {
        let (w0, v0) = pair[0];
        let (w1, v1) = pair[1];
        values[w0 - 1] = v0;
        for w in w0 + 1..w1 {
            let t = (w - w0) as f64 / (w1 - w0) as f64;
            let interp = v0 + t * (v1 - v0);
            values[w - 1] = grid.state_mbps(grid.quantize(interp));
        }
    }
    CapacityTrace::new(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_model::TcpState;

    fn grid(states: usize, eps: f64) -> QuantGrid {
        QuantGrid::new(5.0, eps, eps * (states - 1) as f64).unwrap()
    }

    fn tcp(cwnd: u64, last_send: f64) -> TcpState {
        TcpState {
            cwnd,
            ssthresh: 64,
            rto_s: 0.2,
            min_rtt_s: 0.08,
            last_send_s: last_send,
            srtt_s: 0.08,
        }
    }

    /// A chunk with a chosen observed throughput.
    fn chunk_with_y(n: usize, start: f64, size: u64, y_mbps: f64, cwnd: u64) -> ChunkRecord {
        let d = size as f64 * 8.0 / y_mbps / 1e6;
        ChunkRecord {
            index: n,
            size_bytes: size,
            start_s: start,
            end_s: start + d,
            quality_level: 0,
            buffer_at_start_s: 0.0,
            tcp_at_start: tcp(cwnd, 0.0),
        }
    }

    #[test]
    fn tridiagonal_rows() {
        let m = TransitionMatrix::tridiagonal(3, 0.8).unwrap();
        for (got, want) in m.row(1).iter().zip([0.1, 0.8, 0.1]) {
            assert!((got - want).abs() < 1e-15);
        }
        let r0 = m.row(0);
        assert!((r0[0] - 0.9).abs() < 1e-15 && (r0[1] - 0.1).abs() < 1e-15);
        for i in 0..3 {
            let s: f64 = m.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(TransitionMatrix::tridiagonal(3, 0.0).is_err());
        assert!(TransitionMatrix::tridiagonal(3, 1.0).is_err());
    }

    #[test]
    fn tridiagonal_single_state_is_absorbing() {
        let m = TransitionMatrix::tridiagonal(1, 0.7).unwrap();
        assert_eq!(m.row(0), &[1.0]);
    }

    #[test]
    fn power_matches_hand_multiplication() {
        let a = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let p0 = a.power(0);
        assert_eq!(p0, TransitionMatrix::identity(2));
        assert_eq!(a.power(1), a);
        let p2 = a.power(2);
        let expect = [[0.83, 0.17], [0.34, 0.66]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p2.get(i, j) - expect[i][j]).abs() < 1e-12);
            }
            let s: f64 = p2.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    fn model(states: usize, eps: f64, sigma: f64) -> EhmmModel {
        EhmmModel::uniform_tridiagonal(grid(states, eps), 0.9, sigma, EstimatorConfig::default())
            .unwrap()
    }

    #[test]
    fn emission_peak_matches_gaussian_normalizer() {
        let m = model(21, 0.5, 0.5);
        // capacity-limited chunk: estimator returns the state capacity
        // exactly, so an observation equal to it sits at the density peak.
        let c = chunk_with_y(1, 0.0, 240_000, 4.0, 64);
        let lp = m.emission_logprob(8, &c);
        assert!((lp - (-0.2257913526)).abs() < 1e-6);
        // one sigma off the peak costs exactly 0.5
        let c2 = chunk_with_y(1, 0.0, 240_000, 4.5, 64);
        let lp2 = m.emission_logprob(8, &c2);
        assert!((lp - lp2 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn emission_is_constant_across_saturated_states() {
        let m = model(21, 0.5, 0.5);
        // 3 segments, far below BDP at every plausible capacity
        let c = chunk_with_y(1, 0.0, 4_000, 0.4, 64);
        let lp10 = m.emission_logprob(10, &c);
        for state in 11..21 {
            assert_eq!(m.emission_logprob(state, &c), lp10);
        }
    }

    fn small_log() -> SessionLog {
        let chunks = vec![
            chunk_with_y(1, 0.0, 240_000, 4.0, 64),
            chunk_with_y(2, 2.0, 240_000, 4.1, 64),
            chunk_with_y(3, 12.5, 240_000, 3.4, 64),
            chunk_with_y(4, 30.0, 240_000, 3.0, 64),
        ];
        SessionLog::new(chunks, 0.08, 2.0).unwrap()
    }

    #[test]
    fn viterbi_single_chunk_is_emission_argmax() {
        let m = model(21, 0.5, 0.5);
        let log = SessionLog::new(vec![chunk_with_y(1, 0.0, 240_000, 4.0, 64)], 0.08, 2.0).unwrap();
        let r = m.viterbi_map(&log).unwrap();
        assert_eq!(r.states, vec![8]);
    }

    #[test]
    fn viterbi_breaks_ties_toward_the_lower_state() {
        // a tiny chunk saturates the estimator, so every state from some
        // point up has an identical emission; the MAP must pick the lowest
        let m = model(21, 0.5, 0.5);
        let y = 4_000.0 * 8.0 / 0.08 / 1e6; // exactly the one-round delivery rate
        let log = SessionLog::new(vec![chunk_with_y(1, 0.0, 4_000, y, 64)], 0.08, 2.0).unwrap();
        let r = m.viterbi_map(&log).unwrap();
        let best = r.states[0];
        assert_eq!(
            m.emission_logprob(best + 1, &log.chunks[0]),
            m.emission_logprob(best, &log.chunks[0])
        );
        assert!(
            m.emission_logprob(best.saturating_sub(1), &log.chunks[0])
                < m.emission_logprob(best, &log.chunks[0])
        );
    }

    #[test]
    fn viterbi_single_state_grid_is_trivial() {
        let m = model(1, 0.5, 0.5);
        let r = m.viterbi_map(&small_log()).unwrap();
        assert_eq!(r.states, vec![0, 0, 0, 0]);
    }

    #[test]
    fn forward_backward_pairs_normalize_and_marginals_chain() {
        let m = model(6, 1.0, 0.5);
        let log = small_log();
        let pairs = m.forward_backward(&log).unwrap();
        for n in 1..=pairs.n_pairs() {
            let mut total = 0.0;
            for i in 0..pairs.states() {
                for j in 0..pairs.states() {
                    total += pairs.gamma(i, j, n);
                }
            }
            assert!((total - 1.0).abs() < 1e-9);
        }
        for n in 2..=pairs.n_pairs() {
            for i in 0..pairs.states() {
                let left = pairs.left_marginal(i, n);
                let right = pairs.right_marginal(i, n - 1);
                assert!(
                    (left - right).abs() < 1e-9,
                    "marginals disagree at n={n} i={i}"
                );
            }
        }
    }

    #[test]
    fn forward_backward_needs_two_chunks() {
        let m = model(4, 1.0, 0.5);
        let log = SessionLog::new(vec![chunk_with_y(1, 0.0, 240_000, 2.0, 64)], 0.08, 2.0).unwrap();
        assert!(matches!(
            m.forward_backward(&log),
            Err(VeritasError::TooFewChunks { .. })
        ));
    }

    #[test]
    fn identity_transitions_concentrate_pairs_on_the_diagonal() {
        let g = grid(4, 1.0);
        let mut m =
            EhmmModel::uniform_tridiagonal(g, 0.9, 0.2, EstimatorConfig::default()).unwrap();
        m.transitions = TransitionMatrix::identity(4);
        let log = small_log();
        let pairs = m.forward_backward(&log).unwrap();
        for n in 1..=pairs.n_pairs() {
            let mut off = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        off += pairs.gamma(i, j, n);
                    }
                }
            }
            assert!(off < 1e-12, "off-diagonal mass {off} at n={n}");
        }
    }

    #[test]
    fn sampler_is_deterministic_and_identity_chain_reproduces_viterbi() {
        let m = model(6, 1.0, 0.5);
        let log = small_log();
        let a = m.sample_paths(&log, 5, 42).unwrap();
        let b = m.sample_paths(&log, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.sample_paths(&log, 5, 43).unwrap());

        let mut ident = m.clone();
        ident.transitions = TransitionMatrix::identity(6);
        let map = ident.viterbi_map(&log).unwrap();
        for path in ident.sample_paths(&log, 5, 1).unwrap() {
            assert_eq!(path, map.states);
        }
    }

    fn log_at_windows(starts: &[f64]) -> SessionLog {
        let chunks = starts
            .iter()
            .enumerate()
            .map(|(i, s)| chunk_with_y(i + 1, *s, 240_000, 4.0, 64))
            .collect();
        SessionLog::new(chunks, 0.08, 2.0).unwrap()
    }

    #[test]
    fn reconstruct_interpolates_between_anchors() {
        let g = grid(21, 0.5);
        // anchors in windows 1 and 5
        let log = log_at_windows(&[1.0, 21.0]);
        let trace = reconstruct_trace(&g, &[4, 8], &log, 6).unwrap();
        assert_eq!(trace.values(), &[2.0, 2.5, 3.0, 3.5, 4.0, 4.0]);
    }

    #[test]
    fn reconstruct_holds_equal_anchors_and_single_anchor() {
        let g = grid(21, 0.5);
        let log = log_at_windows(&[1.0, 21.0]);
        let trace = reconstruct_trace(&g, &[8, 8], &log, 6).unwrap();
        assert_eq!(trace.values(), &[4.0; 6]);

        let single = log_at_windows(&[8.0]);
        let trace = reconstruct_trace(&g, &[6], &single, 4).unwrap();
        assert_eq!(trace.values(), &[3.0; 4]);
    }

    #[test]
    fn reconstruct_last_chunk_in_window_wins() {
        let g = grid(21, 0.5);
        let log = log_at_windows(&[1.0, 2.0, 21.0]);
        let trace = reconstruct_trace(&g, &[4, 6, 6], &log, 5).unwrap();
        assert_eq!(trace.values()[0], 3.0);
    }
}
