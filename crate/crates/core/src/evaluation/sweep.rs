use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{resample_corpus, GameStreams, ResamplePlan, ResampleError};
use crate::domain::{GameConfig, Policy};
use crate::scalar::Real;

pub const SWEEP_HEADER: &str = "policy\tk\tmean_f1\tmean_p\tmean_r\tmean_response_s";

/// One (policy, player count) cell of a trade-off sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<T> {
    pub policy: Policy,
    pub k: usize,
    pub mean_f1: T,
    pub mean_p: T,
    pub mean_r: T,
    pub mean_response_s: T,
    pub mean_accuracy: T,
}

/// Resamples every (policy, k) cell over the corpus. Cells share `seed`,
/// so every policy sees the same player draws for a given k. Rows come
/// back ordered by policy (as given), then k.
pub fn tradeoff_sweep<T: Real>(
    games: &[GameStreams],
    ks: &[usize],
    policies: &[Policy],
    base: &GameConfig,
    rounds: usize,
    seed: u64,
) -> Result<Vec<SweepRow<T>>, ResampleError> {
    let cells: Vec<(Policy, usize)> = policies
        .iter()
        .flat_map(|&p| ks.iter().map(move |&k| (p, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(policy, k)| {
            let config = base.with_policy(policy);
            let m = resample_corpus::<T>(games, &ResamplePlan::new(k, rounds, seed), &config)?;
            Ok(SweepRow {
                policy,
                k,
                mean_f1: m.f1,
                mean_p: m.precision,
                mean_r: m.recall,
                mean_response_s: m.mean_decision_s,
                mean_accuracy: m.accuracy,
            })
        })
        .collect()
}

pub fn write_sweep_tsv<T: Real, W: Write>(mut w: W, rows: &[SweepRow<T>]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.policy, r.k, r.mean_f1, r.mean_p, r.mean_r, r.mean_response_s
        )?;
    }
    w.flush()
}
