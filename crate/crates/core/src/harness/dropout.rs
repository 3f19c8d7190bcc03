//! After a lower dropout by index `N'`, how often does the target climb back
//! by `w_{N'}`? Compared with the two-term excursion bound at `T = w_{N'}/2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::stats::{wilson, z99, MIN_CELL};
use crate::schedule_noise::RngStream;
use crate::sgd_engine::{run_with, EngineConfig};
use crate::theory_bounds::{dropout_prob_bound, DropoutBound};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutVerdict {
    Holds,
    Violated,
    /// Fewer than 30 conditioned replicas.
    LowCount,
    /// No replica dropped out by `N'`.
    NotApplicable,
}

impl DropoutVerdict {
    pub fn tag(&self) -> &'static str {
        match self {
            DropoutVerdict::Holds => "holds",
            DropoutVerdict::Violated => "violated",
            DropoutVerdict::LowCount => "low_count",
            DropoutVerdict::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutReport {
    pub n_prime: u64,
    pub w_n_prime: f64,
    pub t_level: f64,
    pub bound: DropoutBound,
    pub replicas: usize,
    /// Replicas that dropped out by `N'` while local and excess-free.
    pub conditioned: usize,
    pub hits: usize,
    pub frequency: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub verdict: DropoutVerdict,
}

struct Excursion {
    conditioned: bool,
    hit: bool,
}

/// Requires `engine.dropout`. The excursion event is
/// `sup_{n > N'} F(X_n) - F(X_{N'}) >= w_{N'}`; runs that overflow after `N'`
/// count as hits.
pub fn dropout_experiment(
    engine: &EngineConfig,
    n_prime: u64,
    delta_prime: f64,
    lip_f: f64,
    replicas: usize,
    seed: u64,
) -> Result<DropoutReport> {
    let dp = engine
        .dropout
        .ok_or_else(|| Error::param("dropout experiment needs dropout tracking (C_w, beta)"))?;
    if n_prime < 1 || n_prime >= engine.horizon {
        return Err(Error::param(format!(
            "N' must lie in [1, horizon), got {n_prime}"
        )));
    }
    let t_n_prime = engine.schedule.natural_time(n_prime);
    let w_n_prime = dp.w_at(t_n_prime);
    let t_level = 0.5 * w_n_prime;
    let bound = dropout_prob_bound(n_prime, t_level, delta_prime, &engine.schedule, &engine.noise, lip_f)?;

    let results: Vec<Excursion> = (1..=replicas)
        .into_par_iter()
        .map(|r| -> Result<Excursion> {
            let mut anchor = None;
            let mut conditioned = false;
            let mut peak = f64::NEG_INFINITY;
            let events = run_with(engine, &RngStream::new(seed, r as u64), |v| {
                if v.n == n_prime {
                    anchor = Some(v.value);
                    conditioned = !v.flags.above_dropout && v.flags.in_locality && v.flags.excess_ok;
                } else if v.n > n_prime {
                    peak = peak.max(v.value);
                }
            })?;
            let overflow_late = events.overflow_at.map_or(false, |n| n > n_prime);
            let hit = match anchor {
                Some(f) => overflow_late || peak - f >= w_n_prime,
                None => false,
            };
            Ok(Excursion { conditioned, hit })
        })
        .collect::<Result<_>>()?;

    let conditioned = results.iter().filter(|e| e.conditioned).count();
    let hits = results.iter().filter(|e| e.conditioned && e.hit).count();
    let (wilson_lo, wilson_hi) = wilson(hits, conditioned, z99());
    let verdict = if conditioned == 0 {
        DropoutVerdict::NotApplicable
    } else if conditioned < MIN_CELL {
        DropoutVerdict::LowCount
    } else if wilson_lo <= bound.total {
        DropoutVerdict::Holds
    } else {
        DropoutVerdict::Violated
    };
    Ok(DropoutReport {
        n_prime,
        w_n_prime,
        t_level,
        bound,
        replicas,
        conditioned,
        hits,
        frequency: if conditioned == 0 {
            0.0
        } else {
            hits as f64 / conditioned as f64
        },
        wilson_lo,
        wilson_hi,
        verdict,
    })
}
