//! Martingales with increments `Delta_n = n^-a xi_n`: tail oscillation as
//! evidence of convergence, and the frequency of
//! `sup_l (M_l - <M>_l) >= kappa` against `phi(kappa)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::harness::config::MartingaleParams;
use crate::harness::stats::{median, quantile, wilson, z99};
use crate::schedule_noise::RngStream;
use crate::theory_bounds::phi_tailbound;

#[derive(Debug, Clone, PartialEq)]
pub struct KappaRow {
    pub kappa: f64,
    pub hits: usize,
    pub frequency: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub phi: f64,
    /// The lower 99% band does not exceed `phi(kappa)`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub replicas: usize,
    pub horizon: u64,
    /// `xi = scale * Z` with `E|xi|^beta = amplitude^beta`, `Z` standard normal.
    pub scale: f64,
    /// `<M>_horizon`.
    pub bracket: f64,
    pub kappa_rows: Vec<KappaRow>,
    /// `sum_{h/10 < n <= h} E[Delta_n^2]`.
    pub tail_variance: f64,
    pub tail_osc_median: f64,
    pub tail_osc_q90: f64,
    /// `median <= 3 sqrt(tail_variance)`.
    pub converges: bool,
}

/// `E|Z|^p` for a standard normal `Z`.
pub fn gaussian_abs_moment(p: f64) -> f64 {
    2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

struct Path {
    sup_compensated: f64,
    tail_osc: f64,
}

pub fn martingale_lemma_experiment(
    params: &MartingaleParams,
    replicas: usize,
    horizon: u64,
    seed: u64,
) -> Result<MartingaleReport> {
    if !(1.0..=2.0).contains(&params.beta) {
        return Err(Error::param("moment order must lie in [1, 2]"));
    }
    if !(params.a * params.beta > 1.0) {
        return Err(Error::param(format!(
            "need a * beta > 1, got {}",
            params.a * params.beta
        )));
    }
    let amplitude = params.amplitude;
    if replicas == 0 || horizon < 10 || !(amplitude >= 0.0) {
        return Err(Error::param("need replicas >= 1, horizon >= 10, amplitude >= 0"));
    }
    let scale = amplitude / gaussian_abs_moment(params.beta).powf(1.0 / params.beta);
    let h = horizon as usize;
    let weights: Vec<f64> = (1..=h).map(|n| (n as f64).powf(-params.a)).collect();
    let mut bracket = Vec::with_capacity(h);
    let mut acc = 0.0;
    for w in &weights {
        acc += scale * scale * w * w;
        bracket.push(acc);
    }
    let window_start = h / 10;
    let tail_variance: f64 = weights[window_start..]
        .iter()
        .map(|w| scale * scale * w * w)
        .sum();

    let paths: Vec<Path> = (1..=replicas)
        .into_par_iter()
        .map(|r| {
            let mut gen = RngStream::new(seed, r as u64).generator();
            let mut m = 0.0f64;
            let mut sup = 0.0f64;
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for (i, w) in weights.iter().enumerate() {
                let z: f64 = gen.sample(StandardNormal);
                m += w * scale * z;
                sup = sup.max(m - bracket[i]);
                if i >= window_start {
                    hi = hi.max(m);
                    lo = lo.min(m);
                }
            }
            Path {
                sup_compensated: sup,
                tail_osc: (hi - m).max(m - lo),
            }
        })
        .collect();

    let z = z99();
    let kappa_rows = params
        .kappas
        .iter()
        .map(|&kappa| {
            let hits = paths.iter().filter(|p| p.sup_compensated >= kappa).count();
            let (wilson_lo, wilson_hi) = wilson(hits, replicas, z);
            let phi = phi_tailbound(kappa);
            KappaRow {
                kappa,
                hits,
                frequency: hits as f64 / replicas as f64,
                wilson_lo,
                wilson_hi,
                phi,
                holds: wilson_lo <= phi,
            }
        })
        .collect();
    let osc: Vec<f64> = paths.iter().map(|p| p.tail_osc).collect();
    let tail_osc_median = median(&osc);
    Ok(MartingaleReport {
        replicas,
        horizon,
        scale,
        bracket: acc,
        kappa_rows,
        tail_variance,
        tail_osc_median,
        tail_osc_q90: quantile(&osc, 0.9),
        converges: tail_osc_median <= 3.0 * tail_variance.sqrt(),
    })
}
