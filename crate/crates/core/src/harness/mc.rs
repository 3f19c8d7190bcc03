//! Replicated SGD runs with event-cell bookkeeping and per-step aggregates.

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::stats::{mean_se, MIN_CELL};
use crate::schedule_noise::RngStream;
use crate::sgd_engine::{classify_convergence, run, Convergence, EngineConfig, RunEvents, TrajectoryRecord};

/// Partition of the replicas by the first event they violate, in priority
/// order escaped (locality exit or overflow), excess, dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventCells {
    pub compatible: usize,
    pub escaped: usize,
    pub excess: usize,
    pub dropout: usize,
}

impl EventCells {
    pub fn total(&self) -> usize {
        self.compatible + self.escaped + self.excess + self.dropout
    }

    fn add(&mut self, ev: &RunEvents) {
        if ev.escaped() {
            self.escaped += 1;
        } else if ev.excess_exit.is_some() {
            self.excess += 1;
        } else if ev.dropout_time.is_some() {
            self.dropout += 1;
        } else {
            self.compatible += 1;
        }
    }
}

/// Statistics over replicas at one recorded index.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n: u64,
    pub t: f64,
    /// Replicas still compatible at `n`.
    pub count: usize,
    /// `M^-1 sum_i 1_B (F(X_n) - F*)`.
    pub weighted_mean_gap: f64,
    pub weighted_se: f64,
    /// Means over the compatible replicas; `None` for low-count cells.
    pub cond_mean_gap: Option<f64>,
    pub cond_mean_grad: Option<f64>,
    /// Root-mean-square distance of the compatible iterates to their mean.
    pub dispersion: Option<f64>,
}

impl AggregateRow {
    pub fn low_count(&self) -> bool {
        self.count < MIN_CELL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaOutcome {
    pub replica: usize,
    pub events: RunEvents,
    pub class: Convergence,
    pub x_final: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub replicas: usize,
    pub cells: EventCells,
    pub histogram: Vec<(Convergence, usize)>,
    pub aggregates: Vec<AggregateRow>,
    pub outcomes: Vec<ReplicaOutcome>,
}

impl McSummary {
    pub fn class_count(&self, class: Convergence) -> usize {
        self.histogram
            .iter()
            .find(|(c, _)| *c == class)
            .map_or(0, |(_, k)| *k)
    }
}

/// Runs replicas `1..=M` on streams `(seed, replica)`. Records are returned
/// in replica order when `keep_records` is set.
pub fn monte_carlo(
    cfg: &ExperimentConfig,
    engine: &EngineConfig,
    replicas: usize,
    keep_records: bool,
) -> Result<(McSummary, Vec<TrajectoryRecord>)> {
    let results: Vec<(ReplicaOutcome, TrajectoryRecord)> = (1..=replicas)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let rec = run(engine, &RngStream::new(cfg.seed, r as u64))?;
            let class = classify_convergence(
                &rec,
                cfg.classify.tail_fraction,
                cfg.classify.eps_x,
                cfg.classify.eps_f,
            )?;
            let last = rec.last();
            let outcome = ReplicaOutcome {
                replica: r,
                events: rec.events,
                class,
                x_final: last.x.clone(),
                value: last.value,
                grad_norm: last.grad_norm,
            };
            Ok((outcome, rec))
        })
        .collect::<Result<_>>()?;

    let grid: Vec<u64> = (1..=engine.horizon)
        .filter(|n| n % engine.stride == 0 || *n == engine.horizon)
        .collect();
    let m = replicas as f64;
    let mut aggregates = Vec::with_capacity(grid.len());
    for (j, &n) in grid.iter().enumerate() {
        let mut weighted = Vec::with_capacity(replicas);
        let mut gaps = Vec::new();
        let mut grads = Vec::new();
        let mut xs: Vec<&[f64]> = Vec::new();
        let mut t = f64::NAN;
        for (_, rec) in &results {
            // index j + 1 skips the n = 0 point
            match rec.points.get(j + 1).filter(|p| p.n == n) {
                Some(p) if p.flags.compatible() => {
                    t = p.t;
                    weighted.push(p.value - cfg.f_star);
                    gaps.push(p.value - cfg.f_star);
                    grads.push(p.grad_norm);
                    xs.push(&p.x);
                }
                Some(p) => {
                    t = p.t;
                    weighted.push(0.0);
                }
                None => weighted.push(0.0),
            }
        }
        let (weighted_mean_gap, weighted_se) = mean_se(&weighted);
        let count = gaps.len();
        let enough = count >= MIN_CELL;
        let cond = |v: &[f64]| enough.then(|| v.iter().sum::<f64>() / count as f64);
        let dispersion = enough.then(|| {
            let d = xs[0].len();
            let mut mean = vec![0.0; d];
            for x in &xs {
                for (a, b) in mean.iter_mut().zip(x.iter()) {
                    *a += b / count as f64;
                }
            }
            let ss: f64 = xs
                .iter()
                .map(|x| x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum();
            (ss / count as f64).sqrt()
        });
        debug_assert!((weighted_mean_gap * m - weighted.iter().sum::<f64>()).abs() <= 1e-9 * m);
        aggregates.push(AggregateRow {
            n,
            t,
            count,
            weighted_mean_gap,
            weighted_se,
            cond_mean_gap: cond(&gaps),
            cond_mean_grad: cond(&grads),
            dispersion,
        });
    }

    let mut cells = EventCells::default();
    let classes = [
        Convergence::ConvergedPoint,
        Convergence::ConvergedLevelOnly,
        Convergence::Diverged,
        Convergence::Escaped,
    ];
    let mut histogram: Vec<(Convergence, usize)> = classes.iter().map(|c| (*c, 0)).collect();
    let mut outcomes = Vec::with_capacity(replicas);
    let mut records = Vec::new();
    for (outcome, rec) in results {
        cells.add(&outcome.events);
        if let Some(h) = histogram.iter_mut().find(|(c, _)| *c == outcome.class) {
            h.1 += 1;
        }
        outcomes.push(outcome);
        if keep_records {
            records.push(rec);
        }
    }
    Ok((
        McSummary {
            replicas,
            cells,
            histogram,
            aggregates,
            outcomes,
        },
        records,
    ))
}
