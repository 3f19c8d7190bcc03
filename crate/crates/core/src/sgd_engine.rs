//! The SGD recursion `X_n = X_{n-1} - gamma_n (f(X_{n-1}) + D_n)` with
//! per-step event tracking.

use rand::Rng;

use crate::error::{Error, Result};
use crate::landscape::{norm, LandscapeSpec};
use crate::schedule_noise::{sample_noise_into, NoiseFamily, NoiseSpec, RngStream, StepSchedule};
use crate::theory_bounds::decay_sequence;

/// Lower dropout tracking: from index `n_start` on, the run leaves the
/// tracked event once `F(X_n) - f_star < -w_n` with
/// `w_n = c_w t_n^(-1/(2 beta - 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub f_star: f64,
    pub c_w: f64,
    pub beta: f64,
    pub n_start: u64,
}

impl DropoutSpec {
    pub fn w_at(&self, t: f64) -> f64 {
        decay_sequence(self.c_w, self.beta, t)
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub landscape: LandscapeSpec,
    pub schedule: StepSchedule,
    pub noise: NoiseSpec,
    pub x0: Vec<f64>,
    pub horizon: u64,
    /// Locality radius; `+inf` disables the locality flag.
    pub r_loc: f64,
    /// Excess threshold on `gamma_n |D_n|`; `+inf` disables it.
    pub delta: f64,
    pub dropout: Option<DropoutSpec>,
    pub stride: u64,
}

impl EngineConfig {
    /// Configuration with locality, excess and dropout tracking disabled and
    /// every step recorded.
    pub fn new(
        landscape: LandscapeSpec,
        schedule: StepSchedule,
        noise: NoiseSpec,
        x0: Vec<f64>,
        horizon: u64,
    ) -> Result<Self> {
        let cfg = Self {
            landscape,
            schedule,
            noise,
            x0,
            horizon,
            r_loc: f64::INFINITY,
            delta: f64::INFINITY,
            dropout: None,
            stride: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_locality(mut self, r_loc: f64) -> Result<Self> {
        self.r_loc = r_loc;
        self.validate()?;
        Ok(self)
    }

    pub fn with_excess(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dropout(mut self, dropout: DropoutSpec) -> Result<Self> {
        self.dropout = Some(dropout);
        self.validate()?;
        Ok(self)
    }

    pub fn with_stride(mut self, stride: u64) -> Result<Self> {
        self.stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.landscape.dim;
        if self.x0.len() != d {
            return Err(Error::Layout(format!(
                "X_0 has {} coordinates, landscape `{}` has dimension {d}",
                self.x0.len(),
                self.landscape.name
            )));
        }
        if self.noise.dim != d {
            return Err(Error::Layout(format!(
                "noise dimension {} differs from landscape dimension {d}",
                self.noise.dim
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("X_0 must be finite"));
        }
        if self.horizon < 1 {
            return Err(Error::param("horizon must be >= 1"));
        }
        if self.stride < 1 {
            return Err(Error::param("record stride must be >= 1"));
        }
        if !(self.r_loc > norm(&self.x0)) {
            return Err(Error::param(format!(
                "locality radius {} must exceed |X_0| = {}",
                self.r_loc,
                norm(&self.x0)
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("excess threshold must be positive"));
        }
        if let Some(dp) = &self.dropout {
            if !(dp.beta > 0.5 && dp.beta < 1.0) || !(dp.c_w > 0.0) || dp.n_start < 1 {
                return Err(Error::param(
                    "dropout needs beta in (1/2, 1), C_w > 0 and start index >= 1",
                ));
            }
            if !dp.f_star.is_finite() {
                return Err(Error::param("dropout reference level must be finite"));
            }
        }
        if let NoiseFamily::Minibatch { batch_size } = self.noise.family {
            let mut probe = RngStream::new(0, 0).generator();
            if self
                .landscape
                .minibatch_noise(&self.x0, batch_size, &mut probe)
                .is_none()
            {
                return Err(Error::param(format!(
                    "landscape `{}` has no sample structure for minibatch noise",
                    self.landscape.name
                )));
            }
        }
        Ok(())
    }
}

/// Event indicators, each absorbing: once false, false for the rest of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flags {
    pub in_locality: bool,
    pub excess_ok: bool,
    pub above_dropout: bool,
}

impl Flags {
    pub const ALL: Flags = Flags {
        in_locality: true,
        excess_ok: true,
        above_dropout: true,
    };

    pub fn compatible(&self) -> bool {
        self.in_locality && self.excess_ok && self.above_dropout
    }
}

/// Draws `D_n` at `x` into `out`.
fn draw_noise<R: Rng>(
    cfg: &EngineConfig,
    x: &[f64],
    n: u64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    match cfg.noise.family {
        NoiseFamily::Minibatch { batch_size } => {
            let scale = cfg.noise.sigma_at(n);
            let d = cfg
                .landscape
                .minibatch_noise(x, batch_size, rng)
                .ok_or_else(|| Error::param("landscape has no minibatch structure"))?;
            for (o, v) in out.iter_mut().zip(d) {
                *o = scale * v;
            }
            Ok(())
        }
        _ => sample_noise_into(&cfg.noise, n, rng, out),
    }
}

/// One SGD step from `x` at index `n`. The noise comes from the step-indexed
/// generator of `rng`, so it depends only on `(rng, n)` and `x`.
pub fn step(x: &[f64], n: u64, cfg: &EngineConfig, rng: &RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 1 {
        return Err(Error::param("step index must be >= 1"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("step input must be finite"));
    }
    let mut noise = vec![0.0; x.len()];
    draw_noise(cfg, x, n, &mut rng.stepper().at(n), &mut noise)?;
    let mut grad = vec![0.0; x.len()];
    cfg.landscape.gradient_into(x, &mut grad);
    let gamma = cfg.schedule.gamma_at(n);
    let next: Vec<f64> = x
        .iter()
        .zip(grad.iter().zip(&noise))
        .map(|(xi, (g, d))| xi - gamma * (g + d))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { n });
    }
    Ok((next, noise))
}

/// State handed to run observers after each completed step (and at `n = 0`).
#[derive(Debug)]
pub struct StepView<'a> {
    pub n: u64,
    pub x: &'a [f64],
    pub value: f64,
    pub grad_norm: f64,
    pub t: f64,
    /// Absorbing flags up to and including step `n`.
    pub flags: Flags,
    /// `|D_n|` (0 at `n = 0`).
    pub noise_norm: f64,
    /// Polyak-Ruppert average of `X_1..X_n` (`X_0` at `n = 0`).
    pub average: &'a [f64],
}

/// First-violation indices of a run, at full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunEvents {
    pub locality_exit: Option<u64>,
    pub excess_exit: Option<u64>,
    pub dropout_time: Option<u64>,
    pub overflow_at: Option<u64>,
    /// Last index reached (`horizon` unless overflow truncated the run).
    pub last_step: u64,
}

impl RunEvents {
    /// Compatibility at the end of the run, overflow counting as an exit.
    pub fn compatible(&self) -> bool {
        self.locality_exit.is_none()
            && self.excess_exit.is_none()
            && self.dropout_time.is_none()
            && self.overflow_at.is_none()
    }

    pub fn escaped(&self) -> bool {
        self.locality_exit.is_some() || self.overflow_at.is_some()
    }
}

/// Streams a full run to `observer`. Noise is drawn sequentially from
/// `rng.generator()`; the run is a pure function of `(cfg, rng)`.
pub fn run_with<F>(cfg: &EngineConfig, rng: &RngStream, mut observer: F) -> Result<RunEvents>
where
    F: FnMut(&StepView<'_>),
{
    cfg.validate()?;
    let d = cfg.x0.len();
    let mut gen = rng.generator();
    let mut x = cfg.x0.clone();
    let mut next = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut average = cfg.x0.clone();
    let mut flags = Flags::ALL;
    let mut events = RunEvents::default();
    let mut t = 0.0;

    cfg.landscape.gradient_into(&x, &mut grad);
    observer(&StepView {
        n: 0,
        x: &x,
        value: cfg.landscape.value(&x),
        grad_norm: norm(&grad),
        t,
        flags,
        noise_norm: 0.0,
        average: &average,
    });

    for n in 1..=cfg.horizon {
        draw_noise(cfg, &x, n, &mut gen, &mut noise)?;
        let gamma = cfg.schedule.gamma_at(n);
        let mut finite = true;
        for i in 0..d {
            next[i] = x[i] - gamma * (grad[i] + noise[i]);
            finite &= next[i].is_finite();
        }
        if !finite {
            events.overflow_at = Some(n);
            break;
        }
        std::mem::swap(&mut x, &mut next);
        t += gamma;
        events.last_step = n;

        let noise_norm = norm(&noise);
        let value = cfg.landscape.value(&x);
        cfg.landscape.gradient_into(&x, &mut grad);
        if flags.in_locality && norm(&x) > cfg.r_loc {
            flags.in_locality = false;
            events.locality_exit = Some(n);
        }
        if flags.excess_ok && gamma * noise_norm > cfg.delta {
            flags.excess_ok = false;
            events.excess_exit = Some(n);
        }
        if let Some(dp) = &cfg.dropout {
            if flags.above_dropout && n >= dp.n_start && value - dp.f_star < -dp.w_at(t) {
                flags.above_dropout = false;
                events.dropout_time = Some(n);
            }
        }
        let k = n as f64;
        for i in 0..d {
            sum[i] += x[i];
            average[i] = sum[i] / k;
        }
        observer(&StepView {
            n,
            x: &x,
            value,
            grad_norm: norm(&grad),
            t,
            flags,
            noise_norm,
            average: &average,
        });
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordPoint {
    pub n: u64,
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub t: f64,
    pub flags: Flags,
    pub average: Vec<f64>,
}

/// Thinned trajectory: `n = 0`, every multiple of the stride and the last
/// step reached, plus the full-resolution first-violation indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub points: Vec<RecordPoint>,
    pub events: RunEvents,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &RecordPoint {
        self.points.last().expect("a record always holds n = 0")
    }
}

pub fn run(cfg: &EngineConfig, rng: &RngStream) -> Result<TrajectoryRecord> {
    let mut points = Vec::new();
    let mut pending: Option<RecordPoint> = None;
    let stride = cfg.stride;
    let events = run_with(cfg, rng, |v| {
        let point = RecordPoint {
            n: v.n,
            x: v.x.to_vec(),
            value: v.value,
            grad_norm: v.grad_norm,
            t: v.t,
            flags: v.flags,
            average: v.average.to_vec(),
        };
        if v.n % stride == 0 {
            points.push(point);
            pending = None;
        } else {
            pending = Some(point);
        }
    })?;
    points.extend(pending);
    Ok(TrajectoryRecord { points, events })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    ConvergedPoint,
    ConvergedLevelOnly,
    Diverged,
    Escaped,
}

impl Convergence {
    pub fn tag(&self) -> &'static str {
        match self {
            Convergence::ConvergedPoint => "converged_point",
            Convergence::ConvergedLevelOnly => "converged_level_only",
            Convergence::Diverged => "diverged",
            Convergence::Escaped => "escaped",
        }
    }
}

/// Maximum pairwise Euclidean distance.
pub fn diameter(points: &[&[f64]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d2: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

/// Empirical convergence verdict from the recorded points with
/// `n > (1 - tail_fraction) * n_last`.
pub fn classify_convergence(
    rec: &TrajectoryRecord,
    tail_fraction: f64,
    eps_x: f64,
    eps_f: f64,
) -> Result<Convergence> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::param(format!(
            "tail fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    if rec.events.locality_exit.is_some() {
        return Ok(Convergence::Escaped);
    }
    if rec.events.overflow_at.is_some() {
        return Ok(Convergence::Diverged);
    }
    let n_last = rec.last().n as f64;
    let cut = (1.0 - tail_fraction) * n_last;
    let tail: Vec<&RecordPoint> = rec
        .points
        .iter()
        .filter(|p| p.n > 0 && p.n as f64 > cut)
        .collect();
    if tail.is_empty() {
        return Err(Error::param("tail window holds no recorded steps"));
    }
    let xs: Vec<&[f64]> = tail.iter().map(|p| p.x.as_slice()).collect();
    let spread = diameter(&xs);
    let mean_grad = tail.iter().map(|p| p.grad_norm).sum::<f64>() / tail.len() as f64;
    if spread <= eps_x && mean_grad <= eps_f {
        return Ok(Convergence::ConvergedPoint);
    }
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.value), hi.max(p.value))
        });
    if hi - lo <= eps_f {
        return Ok(Convergence::ConvergedLevelOnly);
    }
    Ok(Convergence::Diverged)
}
