//! Power-law step sizes, the natural time scale, and martingale-difference
//! noise generators.
//!
//! Noise at step `n` is a pure function of `(NoiseSpec, n, seed, stream)`:
//! each step draws from a ChaCha8 generator positioned at a word offset
//! derived from `n`, so replicas and steps never share generator state.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, StandardNormal};

use crate::error::{Error, Result};

/// `gamma_n = c_gamma * n^(-gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub c_gamma: f64,
    pub gamma: f64,
}

impl StepSchedule {
    pub fn new(c_gamma: f64, gamma: f64) -> Result<Self> {
        if !(c_gamma > 0.0 && c_gamma.is_finite()) {
            return Err(Error::param(format!("C_gamma must be positive, got {c_gamma}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be non-negative, got {gamma}")));
        }
        Ok(Self { c_gamma, gamma })
    }

    /// Step size at `n >= 1`.
    pub fn gamma_at(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        if self.gamma == 0.0 {
            self.c_gamma
        } else {
            self.c_gamma * (n as f64).powf(-self.gamma)
        }
    }

    /// `t_n = sum_{l <= n} gamma_l` by direct summation; `t_0 = 0`.
    pub fn natural_time(&self, n: u64) -> f64 {
        (1..=n).map(|l| self.gamma_at(l)).sum()
    }
}

/// Prefix sums of the step sizes, cached up to a fixed horizon.
#[derive(Debug, Clone)]
pub struct NaturalTime {
    schedule: StepSchedule,
    prefix: Vec<f64>,
}

impl NaturalTime {
    pub fn new(schedule: StepSchedule, n_max: u64) -> Self {
        let mut prefix = Vec::with_capacity(n_max as usize + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for n in 1..=n_max {
            acc += schedule.gamma_at(n);
            prefix.push(acc);
        }
        Self { schedule, prefix }
    }

    pub fn schedule(&self) -> StepSchedule {
        self.schedule
    }

    pub fn horizon(&self) -> u64 {
        self.prefix.len() as u64 - 1
    }

    /// `t_n`; falls back to summation past the cached horizon.
    pub fn at(&self, n: u64) -> f64 {
        match self.prefix.get(n as usize) {
            Some(&t) => t,
            None => {
                let cached = *self.prefix.last().unwrap();
                cached
                    + (self.horizon() + 1..=n)
                        .map(|l| self.schedule.gamma_at(l))
                        .sum::<f64>()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    /// `sigma_n * Z / sqrt(d)` with `Z` standard normal in `R^d`.
    Gaussian,
    /// `sigma_n * U / sqrt(d)` with `U` uniform on `[-sqrt 3, sqrt 3]^d`.
    BoundedUniform,
    /// Symmetrized Pareto with tail index `p`, calibrated so that
    /// `E|D_n|^moment = sigma_n^moment` (requires `moment < p`).
    HeavyTailed { p: f64, moment: f64 },
    /// Minibatch resampling of an empirical target; scale multiplies the
    /// intrinsic `grad_batch - grad_full` perturbation.
    Minibatch { batch_size: usize },
}

impl NoiseFamily {
    pub fn heavy_tailed(p: f64) -> Result<Self> {
        Self::heavy_tailed_with_moment(p, 0.5 * (1.0 + p))
    }

    pub fn heavy_tailed_with_moment(p: f64, moment: f64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::param(format!(
                "heavy-tailed noise needs tail index p > 1, got {p}"
            )));
        }
        if !(moment > 0.0 && moment < p) {
            return Err(Error::param(format!(
                "calibration moment must lie in (0, p) = (0, {p}), got {moment}"
            )));
        }
        Ok(NoiseFamily::HeavyTailed { p, moment })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::BoundedUniform => "bounded_uniform",
            NoiseFamily::HeavyTailed { .. } => "heavy_tailed",
            NoiseFamily::Minibatch { .. } => "minibatch",
        }
    }

    /// Whether the family has a finite second moment.
    pub fn finite_variance(&self) -> bool {
        match self {
            NoiseFamily::HeavyTailed { p, .. } => *p > 2.0,
            _ => true,
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    /// Parses the bare tag; heavy-tailed defaults to `p = 2`, minibatch to
    /// batch size 1. Use the constructors for other parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "bounded_uniform" => Ok(NoiseFamily::BoundedUniform),
            "heavy_tailed" => NoiseFamily::heavy_tailed(2.0),
            "minibatch" => Ok(NoiseFamily::Minibatch { batch_size: 1 }),
            other => Err(Error::param(format!(
                "unknown noise family `{other}` (gaussian, bounded_uniform, heavy_tailed, minibatch)"
            ))),
        }
    }
}

/// Target moment envelope `E[|D_n|^q | past]^(1/q) <= c_sigma * n^sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub c_sigma: f64,
    pub sigma: f64,
    pub q: f64,
    pub family: NoiseFamily,
    pub dim: usize,
}

impl NoiseSpec {
    pub fn new(c_sigma: f64, sigma: f64, q: f64, family: NoiseFamily, dim: usize) -> Result<Self> {
        if !(c_sigma >= 0.0 && c_sigma.is_finite()) {
            return Err(Error::param(format!("C_sigma must be non-negative, got {c_sigma}")));
        }
        if !sigma.is_finite() {
            return Err(Error::param("sigma must be finite"));
        }
        if !(q >= 1.0) {
            return Err(Error::param(format!("moment order q must be >= 1, got {q}")));
        }
        if dim == 0 {
            return Err(Error::param("noise dimension must be positive"));
        }
        if let NoiseFamily::HeavyTailed { p, moment } = family {
            NoiseFamily::heavy_tailed_with_moment(p, moment)?;
        }
        Ok(Self {
            c_sigma,
            sigma,
            q,
            family,
            dim,
        })
    }

    /// Noise-free spec of the given dimension.
    pub fn silent(dim: usize) -> Self {
        Self {
            c_sigma: 0.0,
            sigma: 0.0,
            q: 2.0,
            family: NoiseFamily::Gaussian,
            dim,
        }
    }

    /// `sigma_n = c_sigma * n^sigma`.
    pub fn sigma_at(&self, n: u64) -> f64 {
        if self.sigma == 0.0 {
            self.c_sigma
        } else {
            self.c_sigma * (n as f64).powf(self.sigma)
        }
    }
}

/// Identifies one reproducible noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

/// Words of ChaCha output reserved for each step.
const WORDS_PER_STEP_LOG2: u32 = 24;

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Generator for sequential (non step-indexed) use.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    pub fn stepper(&self) -> StepRng {
        StepRng {
            base: self.generator(),
        }
    }
}

/// Produces the generator for step `n` of a stream.
#[derive(Debug, Clone)]
pub struct StepRng {
    base: ChaCha8Rng,
}

impl StepRng {
    pub fn at(&self, n: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_word_pos((n as u128) << WORDS_PER_STEP_LOG2);
        rng
    }
}

/// Draws `D_n` for a synthetic family. Pure in `(ns, n, rng)`.
pub fn sample_noise(ns: &NoiseSpec, n: u64, rng: &RngStream) -> Result<Vec<f64>> {
    let mut step_rng = rng.stepper().at(n);
    let mut out = vec![0.0; ns.dim];
    sample_noise_into(ns, n, &mut step_rng, &mut out)?;
    Ok(out)
}

/// Fills `out` with `D_n` drawn from `rng`. Minibatch noise needs a target and
/// is produced by the engine instead.
pub fn sample_noise_into<R: Rng + ?Sized>(
    ns: &NoiseSpec,
    n: u64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    let scale = ns.sigma_at(n);
    if scale == 0.0 {
        out.fill(0.0);
        return Ok(());
    }
    let d = out.len() as f64;
    match ns.family {
        NoiseFamily::Gaussian => {
            let s = scale / d.sqrt();
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *o = s * z;
            }
        }
        NoiseFamily::BoundedUniform => {
            let half = 3f64.sqrt();
            let s = scale / d.sqrt();
            for o in out.iter_mut() {
                *o = s * rng.gen_range(-half..half);
            }
        }
        NoiseFamily::HeavyTailed { p, moment } => {
            // E[R^m] = p / (p - m) for R ~ Pareto(1, p)
            let calib = ((p - moment) / p).powf(1.0 / moment);
            let radius: f64 = Pareto::new(1.0, p)
                .map_err(|e| Error::param(e.to_string()))?
                .sample(rng);
            let magnitude = scale * calib * radius;
            random_direction(rng, out);
            for o in out.iter_mut() {
                *o *= magnitude;
            }
        }
        NoiseFamily::Minibatch { .. } => {
            return Err(Error::param(
                "minibatch noise is generated from the target, not sampled directly",
            ))
        }
    }
    Ok(())
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut sq = 0.0;
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o = z;
            sq += z * z;
        }
        if sq > 1e-300 {
            let inv = sq.sqrt().recip();
            out.iter_mut().for_each(|o| *o *= inv);
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_examples() {
        assert_eq!(StepSchedule::new(1.0, 1.0).unwrap().gamma_at(2), 0.5);
        assert_relative_eq!(
            StepSchedule::new(2.0, 0.75).unwrap().gamma_at(16),
            0.25,
            max_relative = 1e-14
        );
        assert_eq!(StepSchedule::new(1.0, 0.0).unwrap().gamma_at(7), 1.0);
    }

    #[test]
    fn natural_time_examples() {
        let harmonic = StepSchedule::new(1.0, 1.0).unwrap();
        assert_relative_eq!(harmonic.natural_time(3), 11.0 / 6.0, max_relative = 1e-14);
        assert_eq!(harmonic.natural_time(0), 0.0);
        let sqrt = StepSchedule::new(1.0, 0.5).unwrap();
        let expected = 1.0 + 2f64.powf(-0.5) + 3f64.powf(-0.5) + 0.5;
        assert_relative_eq!(sqrt.natural_time(4), expected, max_relative = 1e-14);
        assert!((sqrt.natural_time(4) - 2.784457).abs() < 1e-6);
    }

    #[test]
    fn cached_time_matches_direct_sum() {
        let s = StepSchedule::new(0.7, 0.8).unwrap();
        let clock = NaturalTime::new(s, 100);
        for n in [0, 1, 7, 100, 150] {
            assert_relative_eq!(clock.at(n), s.natural_time(n), max_relative = 1e-13);
        }
    }

    #[test]
    fn sigma_examples() {
        let fam = NoiseFamily::Gaussian;
        assert_eq!(NoiseSpec::new(1.0, 0.0, 2.0, fam, 1).unwrap().sigma_at(9), 1.0);
        assert_relative_eq!(
            NoiseSpec::new(1.0, 0.25, 2.0, fam, 1).unwrap().sigma_at(16),
            2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            NoiseSpec::new(3.0, -1.0, 2.0, fam, 1).unwrap().sigma_at(3),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn degenerate_noise_is_zero() {
        let ns = NoiseSpec::new(0.0, 0.0, 2.0, NoiseFamily::Gaussian, 3).unwrap();
        assert_eq!(sample_noise(&ns, 5, &RngStream::new(1, 1)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn heavy_tailed_rejects_small_index() {
        assert!(NoiseFamily::heavy_tailed(1.0).is_err());
        assert!(NoiseFamily::heavy_tailed(0.5).is_err());
        assert!(NoiseFamily::heavy_tailed_with_moment(1.5, 1.5).is_err());
        assert_eq!(
            NoiseFamily::heavy_tailed(2.0).unwrap(),
            NoiseFamily::HeavyTailed { p: 2.0, moment: 1.5 }
        );
    }

    #[test]
    fn noise_is_reproducible_and_step_indexed() {
        let ns = NoiseSpec::new(1.0, 0.0, 2.0, NoiseFamily::Gaussian, 4).unwrap();
        let rng = RngStream::new(42, 3);
        let a = sample_noise(&ns, 10, &rng).unwrap();
        let b = sample_noise(&ns, 10, &rng).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_noise(&ns, 11, &rng).unwrap());
        assert_ne!(a, sample_noise(&ns, 10, &RngStream::new(42, 4)).unwrap());
    }

    #[test]
    fn family_tags_round_trip() {
        for tag in ["gaussian", "bounded_uniform", "heavy_tailed", "minibatch"] {
            assert_eq!(tag.parse::<NoiseFamily>().unwrap().tag(), tag);
        }
        assert!("cauchy".parse::<NoiseFamily>().is_err());
    }
}
