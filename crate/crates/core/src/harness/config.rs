//! Flat `key = value` experiment configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analytic_mlp::{Activation, Architecture};
use crate::error::{Error, Result};
use crate::schedule_noise::{NoiseFamily, NoiseSpec, StepSchedule};
use crate::sgd_engine::DropoutSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Run,
    McConvergence,
    BoundCompare,
    MartingaleLemma,
    DropoutBound,
    MlpTrain,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Run,
        ExperimentKind::McConvergence,
        ExperimentKind::BoundCompare,
        ExperimentKind::MartingaleLemma,
        ExperimentKind::DropoutBound,
        ExperimentKind::MlpTrain,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::McConvergence => "mc_convergence",
            ExperimentKind::BoundCompare => "bound_compare",
            ExperimentKind::MartingaleLemma => "martingale_lemma",
            ExperimentKind::DropoutBound => "dropout_bound",
            ExperimentKind::MlpTrain => "mlp_train",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::param(format!("unknown experiment kind `{s}`")))
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "kind",
    // engine
    "landscape",
    "dim",
    "x0",
    "horizon",
    "c_gamma",
    "gamma",
    "c_sigma",
    "sigma",
    "q",
    "noise",
    "noise_p",
    "noise_moment",
    "batch_size",
    "r_loc",
    "delta",
    "stride",
    "dropout_c_w",
    "dropout_beta",
    "dropout_start",
    // orchestration
    "replicas",
    "seed",
    "out",
    "f_star",
    "per_step_csv",
    "tail_fraction",
    "eps_x",
    "eps_f",
    // theory
    "beta",
    "c_l",
    "delta_prime",
    "c_v",
    "c_w",
    "n_start",
    "sup_f",
    "lip_f",
    "alpha1",
    "alpha2",
    "loja_samples",
    "loja_box",
    "loja_band_lo",
    "loja_band_hi",
    // martingale
    "mart_beta",
    "mart_a",
    "mart_scale",
    "kappas",
    // dropout experiment
    "n_prime",
    // network
    "widths",
    "activation",
    "data",
    "teacher_samples",
    "input_bound",
    "perturb",
    "bound_radius",
    "bound_samples",
];

/// Parsed `key = value` lines with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                key: content.to_string(),
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    key: key.into(),
                    message: "unknown key".into(),
                });
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(Error::Config {
                    line,
                    key: key.into(),
                    message: format!("duplicate key (first set on line {first})"),
                });
            }
            entries.insert(key.to_string(), (line, value.to_string()));
        }
        Ok(Self { entries })
    }

    /// Sets `key` as if given on the command line (line 0).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line: 0,
                key: key.into(),
                message: "unknown key".into(),
            });
        }
        self.entries.insert(key.into(), (0, value.into()));
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.entries.get(key).map_or(0, |e| e.0),
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.err(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<T>()
                        .map_err(|e| self.err(key, format!("cannot parse `{}`: {e}", s.trim())))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Re-tags a validation error from a domain constructor with `key`.
    fn check<T>(&self, key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Config { .. } => e,
            other => self.err(key, other.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyParams {
    pub tail_fraction: f64,
    pub eps_x: f64,
    pub eps_f: f64,
}

/// Inputs for the comparison constants; `beta` and `c_l` override the
/// estimated Łojasiewicz parameters when given.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInputs {
    pub beta: Option<f64>,
    pub c_l: Option<f64>,
    pub delta_prime: f64,
    pub c_v: f64,
    pub c_w: f64,
    pub n_start: Option<u64>,
    pub sup_f: Option<f64>,
    pub lip_f: Option<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub loja_samples: usize,
    pub loja_box: f64,
    pub loja_band: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleParams {
    /// Moment order of the increments, in `[1, 2]`.
    pub beta: f64,
    /// Decay exponent: `Delta_n = n^-a xi_n`.
    pub a: f64,
    /// `E|xi_n|^beta = amplitude^beta`.
    pub amplitude: f64,
    pub kappas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub arch: Architecture,
    pub data: Option<PathBuf>,
    pub teacher_samples: usize,
    pub input_bound: f64,
    pub perturb: f64,
    pub bound_radius: f64,
    pub bound_samples: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub landscape: String,
    pub dim: usize,
    pub x0: Vec<f64>,
    pub horizon: u64,
    pub schedule: StepSchedule,
    pub noise: NoiseSpec,
    pub r_loc: f64,
    pub delta: f64,
    pub stride: u64,
    pub dropout: Option<DropoutSpec>,
    pub replicas: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub f_star: f64,
    pub per_step_csv: bool,
    pub classify: ClassifyParams,
    pub theory: TheoryInputs,
    pub martingale: MartingaleParams,
    pub n_prime: Option<u64>,
    pub mlp: MlpParams,
}

impl ExperimentConfig {
    pub fn load(path: &Path, kind: Option<ExperimentKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_raw(&RawConfig::parse(&text)?, kind)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?, None)
    }

    /// Builds the typed configuration. `kind` (from the command line) wins
    /// over a conflicting-free `kind` key; a mismatch is an error.
    pub fn from_raw(raw: &RawConfig, kind: Option<ExperimentKind>) -> Result<Self> {
        let file_kind: Option<String> = raw.get("kind")?;
        let file_kind = file_kind
            .map(|k| raw.check("kind", k.parse::<ExperimentKind>()))
            .transpose()?;
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(raw.err("kind", format!("config is for `{b}`, command runs `{a}`")))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(raw.err("kind", "missing experiment kind")),
        };

        let widths: Vec<usize> = raw.list("widths")?.unwrap_or_else(|| vec![1, 2, 1]);
        let activation: Activation = raw.check(
            "activation",
            raw.get_or("activation", "softplus".to_string())?.parse(),
        )?;
        let arch = raw.check("widths", Architecture::new(widths, activation))?;

        let landscape: String = if kind == ExperimentKind::MlpTrain {
            "mlp".into()
        } else {
            raw.get_or("landscape", "quadratic".to_string())?
        };
        let dim: usize = if kind == ExperimentKind::MlpTrain {
            arch.param_count()
        } else {
            raw.get_or("dim", 1)?
        };
        let x0: Vec<f64> = match raw.list("x0")? {
            Some(v) => v,
            // network training derives its start from the teacher
            None if kind == ExperimentKind::MlpTrain => Vec::new(),
            None => vec![1.0; dim],
        };
        if kind == ExperimentKind::MlpTrain && !x0.is_empty() && x0.len() != dim {
            return Err(raw.err("x0", format!("expected {dim} parameters, got {}", x0.len())));
        }
        if kind != ExperimentKind::MlpTrain && x0.len() != dim {
            return Err(raw.err("x0", format!("expected {dim} coordinates, got {}", x0.len())));
        }

        let schedule = raw.check(
            "c_gamma",
            StepSchedule::new(raw.get_or("c_gamma", 0.1)?, raw.get_or("gamma", 0.8)?),
        )?;
        let family_tag: String = raw.get_or("noise", "gaussian".to_string())?;
        let family = match family_tag.as_str() {
            "heavy_tailed" => {
                let p: f64 = raw.get_or("noise_p", 3.0)?;
                match raw.get::<f64>("noise_moment")? {
                    Some(m) => raw.check("noise_moment", NoiseFamily::heavy_tailed_with_moment(p, m))?,
                    None => raw.check("noise_p", NoiseFamily::heavy_tailed(p))?,
                }
            }
            "minibatch" => NoiseFamily::Minibatch {
                batch_size: raw.get_or("batch_size", 8)?,
            },
            other => raw.check("noise", other.parse::<NoiseFamily>())?,
        };
        let noise_dim = if kind == ExperimentKind::MlpTrain {
            arch.param_count()
        } else {
            dim
        };
        let noise = raw.check(
            "c_sigma",
            NoiseSpec::new(
                raw.get_or("c_sigma", 0.0)?,
                raw.get_or("sigma", 0.0)?,
                raw.get_or("q", 2.0)?,
                family,
                noise_dim,
            ),
        )?;

        let dropout = match raw.get::<f64>("dropout_c_w")? {
            None => None,
            Some(c_w) => Some(DropoutSpec {
                f_star: raw.get_or("f_star", 0.0)?,
                c_w,
                beta: raw
                    .get("dropout_beta")?
                    .ok_or_else(|| raw.err("dropout_beta", "required with dropout_c_w"))?,
                n_start: raw.get_or("dropout_start", 1)?,
            }),
        };

        let replicas: usize = raw.get_or("replicas", 1)?;
        if replicas == 0 {
            return Err(raw.err("replicas", "must be >= 1"));
        }
        let horizon: u64 = raw.get_or("horizon", 1000)?;
        if horizon == 0 {
            return Err(raw.err("horizon", "must be >= 1"));
        }
        let stride: u64 = raw.get_or("stride", 1)?;
        if stride == 0 {
            return Err(raw.err("stride", "must be >= 1"));
        }

        let classify = ClassifyParams {
            tail_fraction: raw.get_or("tail_fraction", 0.1)?,
            eps_x: raw.get_or("eps_x", 1e-2)?,
            eps_f: raw.get_or("eps_f", 1e-2)?,
        };
        if !(classify.tail_fraction > 0.0 && classify.tail_fraction < 1.0) {
            return Err(raw.err("tail_fraction", "must lie in (0, 1)"));
        }

        let theory = TheoryInputs {
            beta: raw.get("beta")?,
            c_l: raw.get("c_l")?,
            delta_prime: raw.get_or("delta_prime", 0.5)?,
            c_v: raw.get_or("c_v", 1.0)?,
            c_w: raw.get_or("c_w", 0.5)?,
            n_start: raw.get("n_start")?,
            sup_f: raw.get("sup_f")?,
            lip_f: raw.get("lip_f")?,
            alpha1: raw.get_or("alpha1", 1.0)?,
            alpha2: raw.get_or("alpha2", 1.0)?,
            loja_samples: raw.get_or("loja_samples", 10_000)?,
            loja_box: raw.get_or("loja_box", 1.0)?,
            loja_band: (raw.get_or("loja_band_lo", 1e-8)?, raw.get_or("loja_band_hi", 0.1)?),
        };
        if !(theory.delta_prime > 0.0 && theory.delta_prime < 1.0) {
            return Err(raw.err("delta_prime", "must lie in (0, 1)"));
        }

        let martingale = MartingaleParams {
            beta: raw.get_or("mart_beta", 2.0)?,
            a: raw.get_or("mart_a", 1.0)?,
            amplitude: raw.get_or("mart_scale", 1.0)?,
            kappas: raw.list("kappas")?.unwrap_or_else(|| vec![5.0, 10.0, 20.0]),
        };
        if !(1.0..=2.0).contains(&martingale.beta) {
            return Err(raw.err("mart_beta", "moment order must lie in [1, 2]"));
        }
        if !(martingale.a * martingale.beta > 1.0) {
            return Err(raw.err(
                "mart_a",
                format!(
                    "need a * beta > 1 for summable moments, got {}",
                    martingale.a * martingale.beta
                ),
            ));
        }
        if martingale.kappas.iter().any(|k| !(*k > 0.0)) {
            return Err(raw.err("kappas", "thresholds must be positive"));
        }

        let r_loc: f64 = raw.get_or("r_loc", f64::INFINITY)?;
        let mlp = MlpParams {
            arch,
            data: raw.get::<String>("data")?.map(PathBuf::from),
            teacher_samples: raw.get_or("teacher_samples", 64)?,
            input_bound: raw.get_or("input_bound", 1.0)?,
            perturb: raw.get_or("perturb", 0.1)?,
            bound_radius: raw.get_or("bound_radius", if r_loc.is_finite() { r_loc } else { 10.0 })?,
            bound_samples: raw.get_or("bound_samples", 200)?,
        };

        Ok(Self {
            kind,
            landscape,
            dim,
            x0,
            horizon,
            schedule,
            noise,
            r_loc,
            delta: raw.get_or("delta", f64::INFINITY)?,
            stride,
            dropout,
            replicas,
            seed: raw.get_or("seed", 0)?,
            out: PathBuf::from(raw.get_or("out", "lojalab_out".to_string())?),
            f_star: raw.get_or("f_star", 0.0)?,
            per_step_csv: raw.get_or("per_step_csv", true)?,
            classify,
            theory,
            martingale,
            n_prime: raw.get("n_prime")?,
            mlp,
        })
    }

    /// Output file `{out}{suffix}`.
    pub fn output_path(&self, suffix: &str) -> PathBuf {
        let mut s = self.out.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    }
}
