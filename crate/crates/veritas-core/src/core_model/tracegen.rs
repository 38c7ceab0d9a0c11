//! Synthetic ground-truth capacity traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix3, CapacityTrace, QuantGrid};
use crate::error::{Result, VeritasError};

/// Families of synthetic traces.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceKind {
    Constant {
        mbps: f64,
    },
    /// Alternates `lo` and `hi`, holding each for `period` windows,
    /// starting low.
    SquareWave {
        lo_mbps: f64,
        hi_mbps: f64,
        period_windows: usize,
    },
    /// Random walk over the grid states inside `[lo, hi]`, stepping with a
    /// tridiagonal kernel that stays put with probability `p_stay`.
    MarkovWalk {
        lo_mbps: f64,
        hi_mbps: f64,
        p_stay: f64,
    },
}

/// Generate a `windows`-long trace. Pure function of its arguments.
pub fn generate_trace(
    kind: &TraceKind,
    grid: &QuantGrid,
    windows: usize,
    seed: u64,
) -> Result<CapacityTrace> {
    if windows == 0 {
        return Err(VeritasError::InvalidParam {
            name: "windows",
            why: "must be >= 1".into(),
        });
    }
    let values = match kind {
        TraceKind::Constant { mbps } => {
            if !(*mbps >= 0.0) {
                return Err(VeritasError::InvalidParam {
                    name: "mbps",
                    why: format!("must be >= 0, got {mbps}"),
                });
            }
            vec![*mbps; windows]
        }
        TraceKind::SquareWave {
            lo_mbps,
            hi_mbps,
            period_windows,
        } => {
            check_range(*lo_mbps, *hi_mbps)?;
            if *period_windows == 0 {
                return Err(VeritasError::InvalidParam {
                    name: "period",
                    why: "must be >= 1 window".into(),
                });
            }
            (0..windows)
                .map(|t| {
                    if (t / period_windows) % 2 == 0 {
                        *lo_mbps
                    } else {
                        *hi_mbps
                    }
                })
                .collect()
        }
        TraceKind::MarkovWalk {
            lo_mbps,
            hi_mbps,
            p_stay,
        } => {
            check_range(*lo_mbps, *hi_mbps)?;
            if !(*p_stay > 0.0 && *p_stay < 1.0) {
                return Err(VeritasError::InvalidParam {
                    name: "p_stay",
                    why: format!("must lie in (0,1), got {p_stay}"),
                });
            }
            markov_walk(grid, windows, *lo_mbps, *hi_mbps, *p_stay, seed)
        }
    };
    CapacityTrace::new(*grid, values)
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo >= 0.0) || !(hi >= lo) {
        return Err(VeritasError::InvalidParam {
            name: "lo/hi",
            why: format!("need 0 <= lo <= hi, got lo={lo} hi={hi}"),
        });
    }
    Ok(())
}

fn markov_walk(
    grid: &QuantGrid,
    windows: usize,
    lo: f64,
    hi: f64,
    p_stay: f64,
    seed: u64,
) -> Vec<f64> {
    let lo_state = grid.quantize(lo);
    let hi_state = grid.quantize(hi).max(lo_state);
    let mut rng = ChaCha8Rng::seed_from_u64(mix3(seed, 0x7261_6365, 0));
    let mut state = rng.gen_range(lo_state..=hi_state);
    let mut values = Vec::with_capacity(windows);
    for _ in 0..windows {
        values.push(grid.state_mbps(state));
        let u: f64 = rng.gen();
        // out-of-range neighbor mass folds back onto staying
        let down = if state > lo_state {
            (1.0 - p_stay) / 2.0
        } else {
            0.0
        };
        let up = if state < hi_state {
            (1.0 - p_stay) / 2.0
        } else {
            0.0
        };
        if u < down {
            state -= 1;
        } else if u < down + up {
            state += 1;
        }
    }
    values
}
