//! Indicator-weighted empirical means of `F(X_n) - F*` against the
//! comparison bound `Phi^(R)_{t_n - t_N} + (y0 + 7) v_n`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::mc::EventCells;
use crate::harness::stats::mean_se;
use crate::loja_estimator::LojaCertificate;
use crate::schedule_noise::{NaturalTime, RngStream};
use crate::sgd_engine::{run_with, EngineConfig, RunEvents};
use crate::theory_bounds::{
    admissible_beta_interval, bound_curve, check_prop_assu, check_rate_conditions, decay_sequence,
    min_kappa, solve_master_equation, start_condition, sup_ratio, ConditionReport, MasterEquation,
    TheoryParams,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub n: u64,
    pub t: f64,
    pub empirical: f64,
    pub se: f64,
    pub bound: f64,
    pub consolidated: f64,
    /// Empirical mean exceeds the bound by more than three standard errors.
    pub violation: bool,
}

#[derive(Debug, Clone)]
pub struct BoundComparison {
    pub prop_assu: ConditionReport,
    pub rate: ConditionReport,
    pub beta_estimated: f64,
    pub theory: TheoryParams,
    pub rows: Vec<BoundRow>,
    /// `max_n (empirical - bound) / se`.
    pub headline: f64,
    pub violations: usize,
    /// Replicas that never left the locality ball nor overflowed.
    pub local_fraction: f64,
    pub cells: EventCells,
    pub start_lhs: f64,
    pub start_rhs: f64,
}

/// `1..=50` followed by 60 log-spaced indices per decade up to `horizon`.
pub fn comparison_grid(horizon: u64, extra: Option<u64>) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=horizon.min(50)).collect();
    let decades = (horizon as f64).log10();
    let count = (60.0 * decades).ceil() as usize;
    for i in 0..=count {
        let n = 10f64.powf(decades * i as f64 / count as f64).round() as u64;
        grid.push(n.clamp(1, horizon));
    }
    grid.push(horizon);
    grid.extend(extra.filter(|&n| n >= 1 && n <= horizon));
    grid.sort_unstable();
    grid.dedup();
    grid
}

struct ReplicaTrace {
    gap: Vec<f64>,
    compatible: Vec<bool>,
    /// First dropout at or after `grid[k]`, per candidate start `k`.
    first_drop: Vec<Option<u64>>,
    events: RunEvents,
}

fn trace_replica(
    engine: &EngineConfig,
    rng: &RngStream,
    grid: &[u64],
    f_star: f64,
    c_w: f64,
    beta: f64,
) -> Result<ReplicaTrace> {
    let k = grid.len();
    let mut gap = vec![0.0; k];
    let mut compatible = vec![false; k];
    let mut first_drop = vec![None; k];
    let mut next = 0;
    let mut unset = 0;
    let events = run_with(engine, rng, |v| {
        if v.n == 0 {
            return;
        }
        if v.value - f_star < -decay_sequence(c_w, beta, v.t) {
            while unset < k && grid[unset] <= v.n {
                first_drop[unset] = Some(v.n);
                unset += 1;
            }
        }
        if next < k && grid[next] == v.n {
            gap[next] = v.value - f_star;
            compatible[next] = v.flags.in_locality && v.flags.excess_ok;
            next += 1;
        }
    })?;
    Ok(ReplicaTrace {
        gap,
        compatible,
        first_drop,
        events,
    })
}

/// Runs the comparison. `cert` supplies the Łojasiewicz parameters unless the
/// configuration pins `beta` or `c_l`; `beta` is raised into the interval
/// where the exponent conditions hold.
pub fn bound_compare(cfg: &ExperimentConfig, engine: &EngineConfig, cert: &LojaCertificate) -> Result<BoundComparison> {
    let (gamma, sigma, q) = (cfg.schedule.gamma, cfg.noise.sigma, cfg.noise.q);
    let prop_assu = check_prop_assu(gamma, sigma, q);
    if !prop_assu.overall() {
        return Err(Error::Hypothesis(format!(
            "exponent conditions fail: {}",
            prop_assu.failed().join(", ")
        )));
    }
    let (lo, hi) = admissible_beta_interval(gamma, sigma, q)
        .ok_or_else(|| Error::Hypothesis("no admissible Łojasiewicz exponent".into()))?;
    let beta_estimated = cfg.theory.beta.unwrap_or(cert.beta);
    let margin = 1e-3 * (hi - lo);
    let beta = beta_estimated.clamp(lo + margin, hi - margin);
    let c_l = cfg.theory.c_l.unwrap_or(cert.c_l);
    let rate = check_rate_conditions(gamma, sigma, q, beta);
    let (c_v, c_w, delta_prime) = (cfg.theory.c_v, cfg.theory.c_w, cfg.theory.delta_prime);

    let horizon = engine.horizon;
    let grid = comparison_grid(horizon, cfg.theory.n_start);
    let traces: Vec<ReplicaTrace> = (1..=cfg.replicas)
        .into_par_iter()
        .map(|r| trace_replica(engine, &RngStream::new(cfg.seed, r as u64), &grid, cfg.f_star, c_w, beta))
        .collect::<Result<_>>()?;
    let mut cells = EventCells::default();
    for tr in &traces {
        let ev = &tr.events;
        if ev.escaped() {
            cells.escaped += 1;
        } else if ev.excess_exit.is_some() {
            cells.excess += 1;
        } else {
            cells.compatible += 1;
        }
    }
    let local_fraction =
        traces.iter().filter(|t| !t.events.escaped()).count() as f64 / cfg.replicas as f64;

    // indicator-weighted values at grid[j] for start candidate grid[k]
    let weighted = |j: usize, k: usize| -> Vec<f64> {
        traces
            .iter()
            .map(|tr| {
                let dropped = tr.first_drop[k].map_or(false, |d| d <= grid[j]);
                if tr.compatible[j] && !dropped {
                    tr.gap[j]
                } else {
                    0.0
                }
            })
            .collect()
    };

    let clock = NaturalTime::new(cfg.schedule, horizon + 1001);
    let candidates: Vec<usize> = match cfg.theory.n_start {
        Some(n) => grid.iter().position(|&g| g == n).into_iter().collect(),
        None => (0..grid.len()).filter(|&k| grid[k] < horizon).collect(),
    };
    let mut chosen = None;
    let mut last_start = (f64::NAN, f64::NAN);
    for k in candidates {
        let n_start = grid[k];
        let (emp, se) = mean_se(&weighted(k, k));
        let r = (emp + se).max(f64::MIN_POSITIVE);
        let kappa = min_kappa(c_v, beta, &clock, n_start, horizon);
        let s = sup_ratio(beta, &clock, n_start)?;
        let eq = MasterEquation {
            beta,
            c_l,
            delta_prime,
            kappa,
        };
        let Ok(sol) = solve_master_equation(&eq, s) else {
            continue;
        };
        let tp = TheoryParams {
            beta,
            c_l,
            delta: engine.delta,
            delta_prime,
            kappa,
            c_v,
            c_w,
            y0: sol.y0,
            eta: sol.eta,
            r,
            n_start,
            s,
        };
        let (lhs, rhs) = start_condition(&tp, &clock);
        last_start = (lhs, rhs);
        if lhs <= rhs {
            chosen = Some((k, tp));
            break;
        }
    }
    let (k, theory) = chosen.ok_or_else(|| {
        Error::Infeasible(format!(
            "no start index N < {horizon} satisfies the start condition (last: {} > {})",
            last_start.0, last_start.1
        ))
    })?;
    theory.validate()?;

    let ns: Vec<u64> = grid[k..].to_vec();
    let curve = bound_curve(&theory, &clock, &ns)?;
    let mut rows = Vec::with_capacity(ns.len());
    let mut headline = f64::NEG_INFINITY;
    for (off, point) in curve.iter().enumerate() {
        let j = k + off;
        let (emp, se) = mean_se(&weighted(j, k));
        let excess = emp - point.two_term;
        let score = if se > 0.0 {
            excess / se
        } else if excess > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        headline = headline.max(score);
        rows.push(BoundRow {
            n: point.n,
            t: clock.at(point.n),
            empirical: emp,
            se,
            bound: point.two_term,
            consolidated: point.consolidated,
            violation: excess > 3.0 * se,
        });
    }
    let violations = rows.iter().filter(|r| r.violation).count();
    let (start_lhs, start_rhs) = start_condition(&theory, &clock);
    Ok(BoundComparison {
        prop_assu,
        rate,
        beta_estimated,
        theory,
        rows,
        headline,
        violations,
        local_fraction,
        cells,
        start_lhs,
        start_rhs,
    })
}
