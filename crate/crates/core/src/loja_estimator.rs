//! Empirical Łojasiewicz parameters and critical-level detection.
//!
//! Estimates fit the lower envelope of `log |f|` against `log |F - F*|` and
//! are certified by re-auditing the inequality on fresh samples. This is a
//! sampled certificate, not a proof.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::landscape::{norm, ratio_from_parts, LandscapeSpec};
use crate::schedule_noise::RngStream;

const BINS: usize = 32;
const MIN_ACCEPTED: usize = 100;
const SHRINK: f64 = 0.95;
const BETA_MAX: f64 = 0.999;
const REFINE_TOL: f64 = 1e-10;

/// Sampling region.
#[derive(Debug, Clone)]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, r_in: f64, r_out: f64 },
    /// `{y in base : |F(y) - level| < eps}`.
    Band {
        base: Box<Region>,
        landscape: LandscapeSpec,
        level: f64,
        eps: f64,
    },
}

impl Region {
    /// The cube `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Self {
        Region::Box {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Ball { center, .. } | Region::Annulus { center, .. } => center.len(),
            Region::Band { base, .. } => base.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(Error::Layout("box corners must share a positive dimension".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::param("box needs lo < hi in every coordinate"));
                }
            }
            Region::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) {
                    return Err(Error::param("ball needs a center and a positive radius"));
                }
            }
            Region::Annulus { center, r_in, r_out } => {
                if center.is_empty() || !(*r_in >= 0.0 && r_in < r_out) {
                    return Err(Error::param("annulus needs 0 <= r_in < r_out"));
                }
            }
            Region::Band {
                base, landscape, eps, ..
            } => {
                base.validate()?;
                if landscape.dim != base.dim() {
                    return Err(Error::Layout("band landscape and base region differ in dimension".into()));
                }
                if !(*eps > 0.0) {
                    return Err(Error::param("band width must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Region::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *a <= *v && *v <= *b),
            Region::Ball { center, radius } => distance(y, center) <= *radius,
            Region::Annulus { center, r_in, r_out } => {
                let r = distance(y, center);
                *r_in <= r && r <= *r_out
            }
            Region::Band {
                base,
                landscape,
                level,
                eps,
            } => base.contains(y) && (landscape.value(y) - level).abs() < *eps,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Box { lo, hi } => (lo.clone(), hi.clone()),
            Region::Ball { center, radius: r } | Region::Annulus { center, r_out: r, .. } => (
                center.iter().map(|c| c - r).collect(),
                center.iter().map(|c| c + r).collect(),
            ),
            Region::Band { base, .. } => base.bounding_box(),
        }
    }

    /// Uniform draw from the region by rejection from its bounding box.
    /// `None` after `max_tries` misses.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_tries: usize) -> Option<Vec<f64>> {
        let (lo, hi) = self.bounding_box();
        for _ in 0..max_tries {
            let y: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
            if self.contains(&y) {
                return Some(y);
            }
        }
        None
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Box { lo, hi } => write!(f, "box lo={} hi={}", join(lo), join(hi)),
            Region::Ball { center, radius } => write!(f, "ball center={} radius={radius}", join(center)),
            Region::Annulus { center, r_in, r_out } => {
                write!(f, "annulus center={} r_in={r_in} r_out={r_out}", join(center))
            }
            Region::Band {
                base, level, eps, ..
            } => write!(f, "band level={level} eps={eps} within {base}"),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `{y in region : |F(y) - level| < eps}` as a rejection-sampling region.
pub fn neighborhood_fit(spec: &LandscapeSpec, level: f64, region: &Region, eps: f64) -> Result<Region> {
    let band = Region::Band {
        base: Box::new(region.clone()),
        landscape: spec.clone(),
        level,
        eps,
    };
    band.validate()?;
    Ok(band)
}

#[derive(Debug, Clone)]
pub struct LojaCertificate {
    pub landscape: String,
    pub region: Region,
    pub f_star: f64,
    pub band: (f64, f64),
    /// Fitted exponent clamped to `[1/2, 0.999]`.
    pub beta: f64,
    /// Unclamped least-squares slope.
    pub beta_raw: f64,
    pub c_l: f64,
    pub certified: bool,
    /// Sample with the smallest ratio `|f| / |F - F*|^beta` over fit and audit.
    pub worst_point: Vec<f64>,
    pub worst_ratio: f64,
    pub samples: usize,
    pub audit_samples: usize,
}

impl LojaCertificate {
    pub fn to_kv(&self) -> String {
        format!(
            "landscape={}\nregion={}\nf_star={}\nband_lo={}\nband_hi={}\nbeta={}\nbeta_raw={}\n\
             c_l={}\ncertified={}\nworst_point={}\nworst_ratio={}\nsamples={}\naudit_samples={}\n",
            self.landscape,
            self.region,
            self.f_star,
            self.band.0,
            self.band.1,
            self.beta,
            self.beta_raw,
            self.c_l,
            self.certified,
            join(&self.worst_point),
            self.worst_ratio,
            self.samples,
            self.audit_samples
        )
    }
}

struct Sample {
    y: Vec<f64>,
    log_gap: f64,
    log_grad: f64,
}

fn collect_band_samples(
    spec: &LandscapeSpec,
    region: &Region,
    f_star: f64,
    band: (f64, f64),
    target: usize,
    rng: &RngStream,
) -> Vec<Sample> {
    let mut gen = rng.generator();
    let (lo, hi) = region.bounding_box();
    let mut out = Vec::with_capacity(target);
    let max_tries = target.saturating_mul(200).max(100_000);
    let mut grad = vec![0.0; spec.dim];
    for _ in 0..max_tries {
        if out.len() == target {
            break;
        }
        let y: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| gen.gen_range(*a..=*b)).collect();
        if !region.contains(&y) {
            continue;
        }
        let gap = (spec.value(&y) - f_star).abs();
        if !(gap > band.0 && gap < band.1) {
            continue;
        }
        spec.gradient_into(&y, &mut grad);
        let g = norm(&grad);
        if !(g > 0.0 && g.is_finite()) {
            continue;
        }
        out.push(Sample {
            y,
            log_gap: gap.ln(),
            log_grad: g.ln(),
        });
    }
    out
}

/// Least-squares slope through the per-bin minima of `log |f|` over 32
/// equal-width bins in `log |F - F*|`.
fn envelope_slope(samples: &[Sample]) -> Result<f64> {
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.log_gap), hi.max(s.log_gap))
    });
    let width = (hi - lo) / BINS as f64;
    if !(width > 0.0) {
        return Err(Error::Numeric("all samples share one level gap".into()));
    }
    let mut minima: Vec<Option<(f64, f64)>> = vec![None; BINS];
    for s in samples {
        let k = (((s.log_gap - lo) / width) as usize).min(BINS - 1);
        match minima[k] {
            Some((_, g)) if g <= s.log_grad => {}
            _ => minima[k] = Some((s.log_gap, s.log_grad)),
        }
    }
    let pts: Vec<(f64, f64)> = minima.into_iter().flatten().collect();
    if pts.len() < 2 {
        return Err(Error::Numeric("fewer than two occupied bins".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// Fits `|f(y)| >= C_L |F(y) - F*|^beta` on samples from `region` whose gap
/// lies in the open band, then audits the fit on a fresh sample stream.
pub fn estimate_loja(
    spec: &LandscapeSpec,
    region: &Region,
    f_star: f64,
    samples: usize,
    band: (f64, f64),
    rng: &RngStream,
) -> Result<LojaCertificate> {
    region.validate()?;
    if region.dim() != spec.dim {
        return Err(Error::Layout(format!(
            "region dimension {} differs from landscape dimension {}",
            region.dim(),
            spec.dim
        )));
    }
    if !(band.0 >= 0.0 && band.0 < band.1) {
        return Err(Error::param(format!("band needs 0 <= lo < hi, got {band:?}")));
    }
    let fit = collect_band_samples(spec, region, f_star, band, samples, rng);
    if fit.len() < MIN_ACCEPTED {
        return Err(Error::InsufficientData {
            accepted: fit.len(),
            required: MIN_ACCEPTED,
        });
    }
    let beta_raw = envelope_slope(&fit)?;
    let beta = beta_raw.clamp(0.5, BETA_MAX);
    let log_c = fit
        .iter()
        .map(|s| s.log_grad - beta * s.log_gap)
        .fold(f64::INFINITY, f64::min);
    let c_l = SHRINK * log_c.exp();

    let audit_rng = RngStream::new(rng.seed, rng.stream ^ (1 << 63));
    let audit = collect_band_samples(spec, region, f_star, band, samples, &audit_rng);
    let ratio = |s: &Sample| (s.log_grad - beta * s.log_gap).exp();
    let (worst_point, worst_ratio) = fit
        .iter()
        .chain(&audit)
        .map(|s| (s, ratio(s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, r)| (s.y.clone(), r))
        .expect("fit set is non-empty");
    let certified = audit.len() >= MIN_ACCEPTED && audit.iter().all(|s| ratio(s) >= c_l);
    Ok(LojaCertificate {
        landscape: spec.name.clone(),
        region: region.clone(),
        f_star,
        band,
        beta,
        beta_raw,
        c_l,
        certified,
        worst_point,
        worst_ratio,
        samples: fit.len(),
        audit_samples: audit.len(),
    })
}

/// Ratio `|f(y)| / |F(y) - F*|^beta` for an audit point; NaN at `0/0`.
pub fn audit_ratio(spec: &LandscapeSpec, y: &[f64], f_star: f64, beta: f64) -> f64 {
    ratio_from_parts(spec.grad_norm(y), (spec.value(y) - f_star).abs(), beta)
}

/// Parameters valid on the union of several certified regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchedLoja {
    pub beta: f64,
    pub c_l: f64,
    pub certified: bool,
    pub regions: usize,
}

/// Combines certificates for one level over a user-chosen cover: the largest
/// exponent and the smallest constant.
///
/// Within each region `gap <= 1` is assumed, so raising `beta` keeps the
/// inequality valid.
pub fn stitch(certs: &[LojaCertificate]) -> Result<StitchedLoja> {
    let first = certs
        .first()
        .ok_or_else(|| Error::param("nothing to stitch"))?;
    if certs.iter().any(|c| (c.f_star - first.f_star).abs() > 1e-12) {
        return Err(Error::param("certificates refer to different levels"));
    }
    Ok(StitchedLoja {
        beta: certs.iter().map(|c| c.beta).fold(0.5, f64::max),
        c_l: certs.iter().map(|c| c.c_l).fold(f64::INFINITY, f64::min),
        certified: certs.iter().all(|c| c.certified && c.band.1 <= 1.0),
        regions: certs.len(),
    })
}

/// Jacobian of the gradient by central differences.
fn gradient_jacobian(spec: &LandscapeSpec, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        let h = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        spec.gradient_into(&xp, &mut gp);
        xp[j] = x[j] - h;
        spec.gradient_into(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Drives `|f|` below `REFINE_TOL` by Levenberg-Marquardt on `f(x) = 0`.
/// `None` if the tolerance is not reached.
fn refine_critical(spec: &LandscapeSpec, x0: &[f64]) -> Option<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut g = spec.gradient(&x);
    let mut r = norm(&g);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        if r <= REFINE_TOL {
            return Some(x);
        }
        let jac = gradient_jacobian(spec, &x);
        let jt = jac.transpose();
        let gv = DVector::from_column_slice(&g);
        let rhs = -(&jt * gv);
        let normal = &jt * &jac;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = normal.clone();
            for i in 0..x.len() {
                a[(i, i)] += lambda * (1.0 + normal[(i, i)]);
            }
            let Some(step) = a.lu().solve(&rhs) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let gt = spec.gradient(&trial);
            let rt = norm(&gt);
            if rt.is_finite() && rt < r {
                x = trial;
                g = gt;
                r = rt;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (r <= REFINE_TOL).then_some(x)
}

/// Critical levels of `spec` found from a regular grid on the bounding box of
/// `region`: grid points with `|f| <= f_tol` are refined to `|f| <= 1e-10`
/// and their values merged within `merge_tol`.
pub fn detect_critical_levels(
    spec: &LandscapeSpec,
    region: &Region,
    grid_per_dim: usize,
    f_tol: f64,
    merge_tol: f64,
) -> Result<Vec<f64>> {
    region.validate()?;
    if region.dim() != spec.dim {
        return Err(Error::Layout("region and landscape differ in dimension".into()));
    }
    if grid_per_dim < 3 {
        return Err(Error::param("grid needs at least 3 points per dimension"));
    }
    if !(f_tol > 0.0 && merge_tol > 0.0) {
        return Err(Error::param("tolerances must be positive"));
    }
    let d = spec.dim;
    let total = (grid_per_dim as u64)
        .checked_pow(d as u32)
        .filter(|&t| t <= 50_000_000)
        .ok_or_else(|| Error::param("grid too large"))?;
    let (lo, hi) = region.bounding_box();
    let steps: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) / (grid_per_dim - 1) as f64)
        .collect();
    // refined points may drift by up to one cell
    let slack = Region::Box {
        lo: lo.iter().zip(&steps).map(|(a, s)| a - s).collect(),
        hi: hi.iter().zip(&steps).map(|(b, s)| b + s).collect(),
    };
    let mut levels = Vec::new();
    let mut y = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for idx in 0..total {
        let mut rest = idx;
        for k in 0..d {
            let i = rest % grid_per_dim as u64;
            rest /= grid_per_dim as u64;
            y[k] = lo[k] + steps[k] * i as f64;
        }
        if !region.contains(&y) {
            continue;
        }
        spec.gradient_into(&y, &mut grad);
        if norm(&grad) > f_tol {
            continue;
        }
        if let Some(p) = refine_critical(spec, &y) {
            if slack.contains(&p) {
                levels.push(spec.value(&p));
            }
        }
    }
    Ok(merge_levels(levels, merge_tol))
}

/// Sorts and merges values closer than `tol` (single linkage), reporting
/// each cluster by its smallest member.
fn merge_levels(mut levels: Vec<f64>, tol: f64) -> Vec<f64> {
    levels.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for v in levels {
        if v - last > tol {
            out.push(v);
        }
        last = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::catalog_get;

    #[test]
    fn detects_double_well_levels() {
        let spec = catalog_get("double_well", 1).unwrap();
        let levels = detect_critical_levels(&spec, &Region::cube(1, 2.0), 41, 0.5, 1e-6).unwrap();
        assert_eq!(levels.len(), 2);
        assert!(levels[0].abs() < 1e-9 && (levels[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_quadratic_level() {
        let spec = catalog_get("quadratic", 1).unwrap();
        let levels = detect_critical_levels(&spec, &Region::cube(1, 1.0), 11, 0.2, 1e-6).unwrap();
        assert_eq!(levels.len(), 1);
        assert!(levels[0].abs() < 1e-12);
    }

    #[test]
    fn detects_circle_levels() {
        let spec = catalog_get("circle_valley", 2).unwrap();
        let levels = detect_critical_levels(&spec, &Region::cube(2, 2.0), 41, 1.0, 1e-6).unwrap();
        assert_eq!(levels.len(), 2, "{levels:?}");
        assert!(levels[0].abs() < 1e-9 && (levels[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_critical_points_is_empty() {
        let spec = catalog_get("quadratic", 1).unwrap();
        let region = Region::Box {
            lo: vec![2.0],
            hi: vec![3.0],
        };
        assert!(detect_critical_levels(&spec, &region, 11, 0.1, 1e-6).unwrap().is_empty());
    }

    #[test]
    fn quartic_estimate() {
        let spec = catalog_get("quartic", 1).unwrap();
        let cert = estimate_loja(&spec, &Region::cube(1, 1.0), 0.0, 5000, (1e-8, 1e-1), &RngStream::new(1, 0)).unwrap();
        assert!((0.70..=0.80).contains(&cert.beta), "{}", cert.beta);
        assert!((3.4..=4.0).contains(&cert.c_l), "{}", cert.c_l);
        assert!(cert.certified);
    }

    #[test]
    fn quadratic_estimate_clamped() {
        let spec = catalog_get("quadratic", 1).unwrap();
        let cert = estimate_loja(&spec, &Region::cube(1, 1.0), 0.0, 5000, (1e-8, 1e-1), &RngStream::new(2, 0)).unwrap();
        assert!((0.45..=0.55).contains(&cert.beta_raw));
        assert!(cert.beta >= 0.5);
    }

    #[test]
    fn circle_annulus_estimate() {
        let spec = catalog_get("circle_valley", 2).unwrap();
        let region = Region::Annulus {
            center: vec![0.0, 0.0],
            r_in: 0.5,
            r_out: 1.5,
        };
        let cert = estimate_loja(&spec, &region, 0.0, 5000, (1e-8, 1e-1), &RngStream::new(3, 0)).unwrap();
        assert!((0.45..=0.55).contains(&cert.beta_raw), "{}", cert.beta_raw);
    }

    #[test]
    fn too_few_samples() {
        let spec = catalog_get("quadratic", 1).unwrap();
        let err = estimate_loja(&spec, &Region::cube(1, 1.0), 0.0, 50, (1e-8, 1e-1), &RngStream::new(2, 0))
            .unwrap_err();
        assert!(matches!(err, Error::InsufficientData { accepted: 50, .. }));
    }

    #[test]
    fn band_region_examples() {
        let spec = catalog_get("quadratic", 1).unwrap();
        let base = Region::cube(1, 2.0);
        let band = neighborhood_fit(&spec, 0.0, &base, 0.5).unwrap();
        for x in [-1.5, -1.0, -0.99, 0.0, 0.5, 0.999, 1.0, 1.7] {
            assert_eq!(band.contains(&[x]), x.abs() < 1.0, "{x}");
        }
        let wide = neighborhood_fit(&spec, 0.0, &base, 10.0).unwrap();
        for x in [-2.0, -0.3, 1.9] {
            assert_eq!(wide.contains(&[x]), base.contains(&[x]));
        }
    }

    #[test]
    fn stitch_takes_worst_case() {
        let spec = catalog_get("quartic", 1).unwrap();
        let a = estimate_loja(&spec, &Region::Box { lo: vec![-1.0], hi: vec![0.0] }, 0.0, 2000, (1e-8, 1e-1), &RngStream::new(5, 0)).unwrap();
        let b = estimate_loja(&spec, &Region::Box { lo: vec![0.0], hi: vec![1.0] }, 0.0, 2000, (1e-8, 1e-1), &RngStream::new(6, 0)).unwrap();
        let s = stitch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.c_l, a.c_l.min(b.c_l));
        assert_eq!(s.beta, a.beta.max(b.beta));
        assert!(stitch(&[]).is_err());
    }

    #[test]
    fn merge_levels_single_linkage() {
        assert_eq!(merge_levels(vec![1.0, 0.0, 1e-8, 1.0 + 5e-7], 1e-6), vec![0.0, 1.0]);
    }
}
