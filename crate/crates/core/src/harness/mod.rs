//! Experiment orchestration: configuration, Monte-Carlo replicas, estimators
//! and file emission. Every experiment is deterministic given its
//! configuration; replica `r` always draws from stream `(seed, r)`.

pub mod bound;
pub mod config;
pub mod dropout;
pub mod martingale;
pub mod mc;
pub mod output;
pub mod stats;

use std::path::PathBuf;

use rand_distr::{Distribution, StandardNormal};

use crate::analytic_mlp::{as_landscape, gradient_bounds, random_params, teacher_student, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::landscape::{catalog_get, norm, LandscapeSpec};
use crate::loja_estimator::{estimate_loja, LojaCertificate, Region};
use crate::schedule_noise::{NaturalTime, RngStream};
use crate::sgd_engine::{Convergence, EngineConfig};
use crate::theory_bounds::{
    check_comparison_assumptions, check_prop_assu, check_rate_conditions, check_theorem1, check_theorem2,
    RegionNorms, Verdict,
};

pub use bound::{bound_compare, BoundComparison, BoundRow};
pub use config::{ExperimentConfig, ExperimentKind, RawConfig};
pub use dropout::{dropout_experiment, DropoutReport, DropoutVerdict};
pub use martingale::{martingale_lemma_experiment, MartingaleReport};
pub use mc::{monte_carlo, AggregateRow, EventCells, McSummary, ReplicaOutcome};
pub use output::{emit_csv, Summary, CSV_HEADER};

/// Summary lines and the files written.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
    /// `false` when a statistical verdict of the experiment failed.
    pub verdict_ok: bool,
}

/// Stream reserved for set-up randomness (teacher networks, starting points).
const SETUP_STREAM: u64 = u64::MAX;

/// Engine for a landscape with the configuration's schedule, noise and
/// tracking parameters.
pub fn build_engine(cfg: &ExperimentConfig, landscape: LandscapeSpec, x0: Vec<f64>) -> Result<EngineConfig> {
    let mut noise = cfg.noise.clone();
    noise.dim = landscape.dim;
    let mut engine = EngineConfig::new(landscape, cfg.schedule, noise, x0, cfg.horizon)?
        .with_locality(cfg.r_loc)?
        .with_excess(cfg.delta)?
        .with_stride(cfg.stride)?;
    if let Some(dp) = cfg.dropout {
        engine = engine.with_dropout(dp)?;
    }
    Ok(engine)
}

fn catalog_engine(cfg: &ExperimentConfig) -> Result<EngineConfig> {
    build_engine(cfg, catalog_get(&cfg.landscape, cfg.dim)?, cfg.x0.clone())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut summary = Summary::default();
    summary.push("kind", cfg.kind);
    summary.push("seed", cfg.seed);
    match cfg.kind {
        ExperimentKind::Run | ExperimentKind::McConvergence => {
            let engine = catalog_engine(cfg)?;
            let replicas = if cfg.kind == ExperimentKind::Run { 1 } else { cfg.replicas };
            mc_report(cfg, &engine, replicas, summary)
        }
        ExperimentKind::MlpTrain => mlp_train(cfg, summary),
        ExperimentKind::BoundCompare => {
            let engine = catalog_engine(cfg)?;
            let cert = certificate_for(cfg, &engine.landscape)?;
            let cmp = bound_compare(cfg, &engine, &cert)?;
            bound_report(cfg, &cert, &cmp, summary)
        }
        ExperimentKind::MartingaleLemma => {
            let rep = martingale_lemma_experiment(&cfg.martingale, cfg.replicas, cfg.horizon, cfg.seed)?;
            martingale_report(cfg, &rep, summary)
        }
        ExperimentKind::DropoutBound => {
            let engine = catalog_engine(cfg)?;
            let n_prime = cfg
                .n_prime
                .ok_or_else(|| config_missing("n_prime", "dropout experiment needs N'"))?;
            let lip_f = cfg
                .theory
                .lip_f
                .ok_or_else(|| config_missing("lip_f", "dropout bound needs a Lipschitz constant of f"))?;
            let rep = dropout_experiment(&engine, n_prime, cfg.theory.delta_prime, lip_f, cfg.replicas, cfg.seed)?;
            dropout_report(cfg, &rep, summary)
        }
    }
}

fn config_missing(key: &str, message: &str) -> Error {
    Error::Config {
        line: 0,
        key: key.into(),
        message: message.into(),
    }
}

fn conditions_block(cfg: &ExperimentConfig, summary: &mut Summary) {
    summary.extend_kv(&check_theorem2(cfg.schedule.gamma, cfg.noise.sigma, cfg.noise.q).to_kv());
}

fn mc_report(
    cfg: &ExperimentConfig,
    engine: &EngineConfig,
    replicas: usize,
    mut summary: Summary,
) -> Result<ExperimentReport> {
    let (mc, records) = monte_carlo(cfg, engine, replicas, cfg.per_step_csv)?;
    let mut files = Vec::new();
    if cfg.per_step_csv {
        let path = cfg.output_path(".csv");
        let pairs: Vec<(usize, &_)> = records.iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        emit_csv(&pairs, &path)?;
        files.push(path);
    }
    let agg_path = cfg.output_path("_aggregates.csv");
    let rows: Vec<String> = mc
        .aggregates
        .iter()
        .map(|a| {
            let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:e}"));
            format!(
                "{},{:e},{},{:e},{:e},{},{},{},{}",
                a.n,
                a.t,
                a.count,
                a.weighted_mean_gap,
                a.weighted_se,
                opt(a.cond_mean_gap),
                opt(a.cond_mean_grad),
                opt(a.dispersion),
                u8::from(a.low_count())
            )
        })
        .collect();
    output::write_table(
        &agg_path,
        "n,t_n,compatible,weighted_mean_gap,weighted_se,cond_mean_gap,cond_mean_gradnorm,dispersion,low_count",
        &rows,
    )?;
    files.push(agg_path);
    let lim_path = cfg.output_path("_limits.csv");
    let rows: Vec<String> = mc
        .outcomes
        .iter()
        .map(|o| {
            let x: Vec<String> = o.x_final.iter().map(|v| format!("{v:e}")).collect();
            format!(
                "{},{},{:e},{:e},{:e},{}",
                o.replica,
                o.class.tag(),
                o.value,
                o.grad_norm,
                norm(&o.x_final),
                x.join(";")
            )
        })
        .collect();
    output::write_table(&lim_path, "replica,class,F,gradnorm,xnorm,x", &rows)?;
    files.push(lim_path);

    summary.push("landscape", &engine.landscape.name);
    summary.push("dim", engine.landscape.dim);
    summary.push("horizon", engine.horizon);
    summary.push("replicas", mc.replicas);
    summary.push("cells.compatible", mc.cells.compatible);
    summary.push("cells.escaped", mc.cells.escaped);
    summary.push("cells.excess", mc.cells.excess);
    summary.push("cells.dropout", mc.cells.dropout);
    for (class, count) in &mc.histogram {
        summary.push(&format!("class.{}", class.tag()), count);
    }
    let local = mc.replicas - mc.class_count(Convergence::Escaped);
    summary.push("local", local);
    if local > 0 {
        summary.push(
            "converged_point_fraction_local",
            mc.class_count(Convergence::ConvergedPoint) as f64 / local as f64,
        );
    }
    if let Some(last) = mc.aggregates.last() {
        summary.push("final.n", last.n);
        summary.push("final.t_n", last.t);
        summary.push("final.weighted_mean_gap", last.weighted_mean_gap);
        summary.push("final.weighted_se", last.weighted_se);
        summary.push("final.compatible", last.count);
        summary.push("final.low_count", last.low_count());
    }
    if mc.replicas == 1 {
        let o = &mc.outcomes[0];
        summary.push("run.class", o.class.tag());
        summary.push("run.final_value", o.value);
        summary.push("run.final_gradnorm", o.grad_norm);
        let opt = |v: Option<u64>| v.map_or("none".to_string(), |n| n.to_string());
        summary.push("run.locality_exit", opt(o.events.locality_exit));
        summary.push("run.excess_exit", opt(o.events.excess_exit));
        summary.push("run.dropout_time", opt(o.events.dropout_time));
        summary.push("run.overflow_at", opt(o.events.overflow_at));
    }
    conditions_block(cfg, &mut summary);
    finish(cfg, summary, files, true)
}

fn finish(cfg: &ExperimentConfig, mut summary: Summary, mut files: Vec<PathBuf>, verdict_ok: bool) -> Result<ExperimentReport> {
    summary.push("verdict", if verdict_ok { "pass" } else { "fail" });
    let path = cfg.output_path("_summary.txt");
    summary.write(&path)?;
    files.push(path);
    Ok(ExperimentReport {
        summary,
        files,
        verdict_ok,
    })
}

/// Łojasiewicz certificate on the cube `[-loja_box, loja_box]^d` around the
/// origin at level `f_star`.
pub fn certificate_for(cfg: &ExperimentConfig, landscape: &LandscapeSpec) -> Result<LojaCertificate> {
    estimate_loja(
        landscape,
        &Region::cube(landscape.dim, cfg.theory.loja_box),
        cfg.f_star,
        cfg.theory.loja_samples,
        cfg.theory.loja_band,
        &RngStream::new(cfg.seed, SETUP_STREAM),
    )
}

fn bound_report(
    cfg: &ExperimentConfig,
    cert: &LojaCertificate,
    cmp: &BoundComparison,
    mut summary: Summary,
) -> Result<ExperimentReport> {
    let table = cfg.output_path("_table.csv");
    let rows: Vec<String> = cmp
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{:e},{:e},{:e},{:e},{:e},{}",
                r.n,
                r.t,
                r.empirical,
                r.se,
                r.bound,
                r.consolidated,
                u8::from(r.violation)
            )
        })
        .collect();
    output::write_table(&table, "n,t_n,empirical,se,bound,consolidated,violation", &rows)?;
    summary.push("landscape", &cert.landscape);
    summary.push("replicas", cfg.replicas);
    summary.push("horizon", cfg.horizon);
    summary.extend_kv(&cmp.prop_assu.to_kv());
    summary.extend_kv(&cmp.rate.to_kv());
    for (k, v) in cert.to_kv().lines().filter_map(|l| l.split_once('=')) {
        summary.push(&format!("loja.{k}"), v);
    }
    summary.push("beta_estimated", cmp.beta_estimated);
    summary.extend_kv(&cmp.theory.to_kv());
    summary.push("start.lhs", cmp.start_lhs);
    summary.push("start.rhs", cmp.start_rhs);
    if let (Some(sup_f), Some(lip_f)) = (cfg.theory.sup_f, cfg.theory.lip_f) {
        let clock = NaturalTime::new(cfg.schedule, cfg.horizon + 1);
        let report = check_comparison_assumptions(
            &cmp.theory,
            &clock,
            &cfg.noise,
            RegionNorms { sup_f, lip_f },
            cfg.horizon,
        );
        summary.extend_kv(&report.to_kv());
    }
    summary.push("local_fraction", cmp.local_fraction);
    summary.push("cells.compatible", cmp.cells.compatible);
    summary.push("cells.escaped", cmp.cells.escaped);
    summary.push("cells.excess", cmp.cells.excess);
    summary.push("headline_se_units", cmp.headline);
    summary.push("violations", cmp.violations);
    if let Some(last) = cmp.rows.last() {
        if last.empirical > 0.0 {
            summary.push("final_slack_ratio", last.bound / last.empirical);
        }
    }
    finish(cfg, summary, vec![table], cmp.violations == 0)
}

fn martingale_report(cfg: &ExperimentConfig, rep: &MartingaleReport, mut summary: Summary) -> Result<ExperimentReport> {
    let table = cfg.output_path("_kappa.csv");
    let rows: Vec<String> = rep
        .kappa_rows
        .iter()
        .map(|r| {
            format!(
                "{:e},{},{:e},{:e},{:e},{:e},{}",
                r.kappa,
                r.hits,
                r.frequency,
                r.wilson_lo,
                r.wilson_hi,
                r.phi,
                u8::from(r.holds)
            )
        })
        .collect();
    output::write_table(&table, "kappa,hits,frequency,wilson_lo,wilson_hi,phi,holds", &rows)?;
    summary.push("replicas", rep.replicas);
    summary.push("horizon", rep.horizon);
    summary.push("moment_order", cfg.martingale.beta);
    summary.push("decay", cfg.martingale.a);
    summary.push("bracket_total", rep.bracket);
    summary.push("tail_variance", rep.tail_variance);
    summary.push("tail_osc_median", rep.tail_osc_median);
    summary.push("tail_osc_q90", rep.tail_osc_q90);
    summary.push("converges", rep.converges);
    let ok = rep.converges && rep.kappa_rows.iter().all(|r| r.holds);
    finish(cfg, summary, vec![table], ok)
}

fn dropout_report(cfg: &ExperimentConfig, rep: &DropoutReport, mut summary: Summary) -> Result<ExperimentReport> {
    summary.push("landscape", &cfg.landscape);
    summary.push("replicas", rep.replicas);
    summary.push("n_prime", rep.n_prime);
    summary.push("w_n_prime", rep.w_n_prime);
    summary.push("t_level", rep.t_level);
    summary.push("bound.phi_argument", rep.bound.phi_argument);
    summary.push("bound.first_term", rep.bound.first_term);
    summary.push("bound.series", rep.bound.series);
    summary.push("bound.second_term", rep.bound.second_term);
    summary.push("bound.total", rep.bound.total);
    summary.push("conditioned", rep.conditioned);
    summary.push("hits", rep.hits);
    summary.push("frequency", rep.frequency);
    summary.push("wilson_lo", rep.wilson_lo);
    summary.push("wilson_hi", rep.wilson_hi);
    summary.push("dropout_verdict", rep.verdict.tag());
    finish(cfg, summary, Vec::new(), rep.verdict != DropoutVerdict::Violated)
}

/// Dataset and starting parameters for network training. Without a data
/// file, a teacher network generates the data and training starts from the
/// teacher perturbed by `perturb` times a standard normal vector.
pub fn mlp_setup(cfg: &ExperimentConfig) -> Result<(Dataset, Option<ParamVector>, Vec<f64>)> {
    let arch = &cfg.mlp.arch;
    let setup = RngStream::new(cfg.seed, SETUP_STREAM);
    let (data, teacher) = match &cfg.mlp.data {
        Some(path) => (Dataset::load(path)?, None),
        None => {
            let (teacher, data) = teacher_student(arch, cfg.mlp.teacher_samples, cfg.mlp.input_bound, &setup)?;
            (data, Some(teacher))
        }
    };
    let mut gen = RngStream::new(cfg.seed, SETUP_STREAM - 1).generator();
    let x0 = if !cfg.x0.is_empty() {
        cfg.x0.clone()
    } else if let Some(t) = &teacher {
        t.0.iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut gen);
                v + cfg.mlp.perturb * z
            })
            .collect()
    } else {
        random_params(arch, 1.0, &mut gen).0
    };
    Ok((data, teacher, x0))
}

fn mlp_train(cfg: &ExperimentConfig, mut summary: Summary) -> Result<ExperimentReport> {
    let (data, teacher, x0) = mlp_setup(cfg)?;
    let arch = &cfg.mlp.arch;
    let landscape = as_landscape(arch, &data)?;
    let initial = landscape.value(&x0);
    let engine = build_engine(cfg, landscape, x0)?;
    summary.push("widths", arch.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
    summary.push("activation", arch.activation);
    summary.push("params", arch.param_count());
    summary.push("samples", data.len());
    summary.push("data_bound", data.bound);
    summary.push("teacher", teacher.is_some());
    summary.push("initial_loss", initial);
    let bounds = gradient_bounds(
        arch,
        &data,
        cfg.mlp.bound_radius,
        cfg.mlp.bound_samples,
        &RngStream::new(cfg.seed, SETUP_STREAM - 2),
    )?;
    summary.push("bounds.radius", cfg.mlp.bound_radius);
    summary.push("bounds.sup_grad", bounds.sup_grad);
    summary.push("bounds.lipschitz", bounds.lipschitz);
    let replicas = cfg.replicas;
    mc_report(cfg, &engine, replicas, summary)
}

/// All hypothesis checkers for the configured exponents. `ok` is false when
/// any checker rejects.
pub fn check_conditions(cfg: &ExperimentConfig) -> Result<(Summary, bool)> {
    let mut s = Summary::default();
    let t1 = check_theorem1(cfg.theory.alpha1, cfg.theory.alpha2, &cfg.schedule, &cfg.noise)?;
    let t2 = check_theorem2(cfg.schedule.gamma, cfg.noise.sigma, cfg.noise.q);
    let pa = check_prop_assu(cfg.schedule.gamma, cfg.noise.sigma, cfg.noise.q);
    let mut ok = t1.overall() && t2.overall() && pa.verdict() == Verdict::Pass;
    s.extend_kv(&t1.to_kv());
    s.extend_kv(&t2.to_kv());
    s.extend_kv(&pa.to_kv());
    if let Some(beta) = cfg.theory.beta {
        let rate = check_rate_conditions(cfg.schedule.gamma, cfg.noise.sigma, cfg.noise.q, beta);
        ok &= rate.overall();
        s.extend_kv(&rate.to_kv());
    }
    s.push("all_pass", ok);
    Ok((s, ok))
}

/// Certificate for the configured landscape, written to `{out}_loja.txt`.
pub fn estimate_loja_command(cfg: &ExperimentConfig) -> Result<(LojaCertificate, PathBuf)> {
    let landscape = catalog_get(&cfg.landscape, cfg.dim)?;
    let cert = certificate_for(cfg, &landscape)?;
    let path = cfg.output_path("_loja.txt");
    std::fs::write(&path, cert.to_kv()).map_err(|e| Error::io(&path, e))?;
    Ok((cert, path))
}

/// Writes a teacher-generated dataset to `{out}_data.txt` and the teacher
/// parameters to `{out}_teacher.txt`.
pub fn gen_teacher_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (teacher, data) = teacher_student(
        &cfg.mlp.arch,
        cfg.mlp.teacher_samples,
        cfg.mlp.input_bound,
        &RngStream::new(cfg.seed, SETUP_STREAM),
    )?;
    let data_path = cfg.output_path("_data.txt");
    data.save(&data_path)?;
    let teacher_path = cfg.output_path("_teacher.txt");
    let text: Vec<String> = teacher.0.iter().map(|v| format!("{v:e}")).collect();
    std::fs::write(&teacher_path, text.join("\n") + "\n").map_err(|e| Error::io(&teacher_path, e))?;
    Ok(vec![data_path, teacher_path])
}
