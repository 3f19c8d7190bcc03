//! Target functions and the built-in catalog of Łojasiewicz landscapes.
//!
//! Every catalog entry ships its exact gradient and, where it is known in
//! closed form, its critical structure and Łojasiewicz parameters. These
//! serve as ground truth for the engine, the estimator and the checkers.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};

/// Names accepted by [`catalog_get`]. Part of the CLI contract.
pub const CATALOG: [&str; 6] = [
    "quadratic",
    "quartic",
    "double_well",
    "circle_valley",
    "saddle_cubic",
    "rosenbrock_mod",
];

/// A differentiable target `F` with gradient `f`.
///
/// Implementations must be pure: the same input always yields the same output.
pub trait Objective: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    /// Centered stochastic-gradient perturbation `grad_batch - grad_full` for
    /// targets that are empirical means. `None` when the target has no
    /// sample structure.
    fn minibatch_noise(
        &self,
        _x: &[f64],
        _batch_size: usize,
        _rng: &mut dyn RngCore,
    ) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    LipschitzGradient,
    /// Gradient is locally Hölder with the given exponent in (0, 1].
    HolderGradient(f64),
}

/// Łojasiewicz parameters valid on a neighbourhood of a critical level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownLoja {
    pub level: f64,
    pub beta: f64,
    pub c_l: f64,
    /// Distance from the critical set within which the inequality holds.
    pub radius: f64,
}

/// Critical points (or a description of a critical continuum) together with
/// the deduplicated list of critical levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalStructure {
    pub points: Vec<Vec<f64>>,
    pub description: Option<String>,
    pub levels: Vec<f64>,
}

impl CriticalStructure {
    pub const LEVEL_TOL: f64 = 1e-9;

    pub fn new(points: Vec<Vec<f64>>, description: Option<String>, levels: Vec<f64>) -> Self {
        Self {
            points,
            description,
            levels: dedup_levels(levels, Self::LEVEL_TOL),
        }
    }
}

/// Sorts and merges levels closer than `tol`; each cluster is represented by
/// its mean.
pub fn dedup_levels(mut levels: Vec<f64>, tol: f64) -> Vec<f64> {
    levels.retain(|l| l.is_finite());
    levels.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    let mut cluster: Vec<f64> = Vec::new();
    for l in levels {
        if let Some(&last) = cluster.last() {
            if l - last > tol {
                out.push(cluster.iter().sum::<f64>() / cluster.len() as f64);
                cluster.clear();
            }
        }
        cluster.push(l);
    }
    if !cluster.is_empty() {
        out.push(cluster.iter().sum::<f64>() / cluster.len() as f64);
    }
    out
}

/// A target function together with its metadata. Cheap to clone.
#[derive(Clone)]
pub struct LandscapeSpec {
    pub name: String,
    pub dim: usize,
    pub smoothness: Smoothness,
    pub critical: Option<CriticalStructure>,
    pub loja: Vec<KnownLoja>,
    objective: Arc<dyn Objective>,
}

impl fmt::Debug for LandscapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LandscapeSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("smoothness", &self.smoothness)
            .field("critical", &self.critical)
            .field("loja", &self.loja)
            .finish()
    }
}

impl LandscapeSpec {
    pub fn new(name: impl Into<String>, dim: usize, objective: Arc<dyn Objective>) -> Self {
        Self {
            name: name.into(),
            dim,
            smoothness: Smoothness::LipschitzGradient,
            critical: None,
            loja: Vec::new(),
            objective,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.objective.value(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.objective.gradient_into(x, out)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    pub fn grad_norm(&self, x: &[f64]) -> f64 {
        norm(&self.gradient(x))
    }

    pub fn minibatch_noise(
        &self,
        x: &[f64],
        batch_size: usize,
        rng: &mut dyn RngCore,
    ) -> Option<Vec<f64>> {
        self.objective.minibatch_noise(x, batch_size, rng)
    }

    /// Known Łojasiewicz parameters for the critical level closest to `level`.
    pub fn known_loja(&self, level: f64) -> Option<KnownLoja> {
        self.loja
            .iter()
            .filter(|k| (k.level - level).abs() <= 1e-9)
            .copied()
            .next()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
enum CatalogFn {
    Quadratic,
    Quartic,
    DoubleWell,
    CircleValley,
    SaddleCubic,
    RosenbrockMod,
}

const ROSENBROCK_B: f64 = 10.0;

impl Objective for CatalogFn {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            CatalogFn::Quadratic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            CatalogFn::Quartic => x.iter().map(|v| v.powi(4)).sum(),
            CatalogFn::DoubleWell => x.iter().map(|v| (v * v - 1.0).powi(2)).sum(),
            CatalogFn::CircleValley => (x[0] * x[0] + x[1] * x[1] - 1.0).powi(2),
            CatalogFn::SaddleCubic => 0.5 * x[0] * x[0] + x[1].powi(3) / 3.0 - x[1],
            CatalogFn::RosenbrockMod => {
                (1.0 - x[0]).powi(2) + ROSENBROCK_B * (x[1] - x[0] * x[0]).powi(2)
            }
        }
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CatalogFn::Quadratic => out.copy_from_slice(x),
            CatalogFn::Quartic => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 4.0 * v.powi(3);
                }
            }
            CatalogFn::DoubleWell => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 4.0 * v * (v * v - 1.0);
                }
            }
            CatalogFn::CircleValley => {
                let s = 4.0 * (x[0] * x[0] + x[1] * x[1] - 1.0);
                out[0] = s * x[0];
                out[1] = s * x[1];
            }
            CatalogFn::SaddleCubic => {
                out[0] = x[0];
                out[1] = x[1] * x[1] - 1.0;
            }
            CatalogFn::RosenbrockMod => {
                let r = x[1] - x[0] * x[0];
                out[0] = -2.0 * (1.0 - x[0]) - 4.0 * ROSENBROCK_B * x[0] * r;
                out[1] = 2.0 * ROSENBROCK_B * r;
            }
        }
    }
}

/// Returns the catalog landscape `name` in dimension `dim`.
///
/// `quadratic`, `quartic` and `double_well` accept any `dim >= 1`; the planar
/// entries require `dim == 2`.
pub fn catalog_get(name: &str, dim: usize) -> Result<LandscapeSpec> {
    let kind = match name {
        "quadratic" => CatalogFn::Quadratic,
        "quartic" => CatalogFn::Quartic,
        "double_well" => CatalogFn::DoubleWell,
        "circle_valley" => CatalogFn::CircleValley,
        "saddle_cubic" => CatalogFn::SaddleCubic,
        "rosenbrock_mod" => CatalogFn::RosenbrockMod,
        _ => {
            return Err(Error::UnknownLandscape {
                name: name.to_string(),
                valid: CATALOG.to_vec(),
            })
        }
    };
    if dim == 0 {
        return Err(Error::param("landscape dimension must be positive"));
    }
    let planar = matches!(
        kind,
        CatalogFn::CircleValley | CatalogFn::SaddleCubic | CatalogFn::RosenbrockMod
    );
    if planar && dim != 2 {
        return Err(Error::param(format!("`{name}` is defined in dimension 2 only")));
    }
    let mut spec = LandscapeSpec::new(name, dim, Arc::new(kind));
    let d = dim as f64;
    match kind {
        CatalogFn::Quadratic => {
            spec.critical = Some(CriticalStructure::new(vec![vec![0.0; dim]], None, vec![0.0]));
            // |x| = sqrt(2) (|x|^2 / 2)^(1/2) everywhere.
            spec.loja.push(KnownLoja {
                level: 0.0,
                beta: 0.5,
                c_l: 2f64.sqrt(),
                radius: f64::INFINITY,
            });
        }
        CatalogFn::Quartic => {
            spec.critical = Some(CriticalStructure::new(vec![vec![0.0; dim]], None, vec![0.0]));
            // power-mean inequality: sum x^6 >= d^(-1/2) (sum x^4)^(3/2)
            spec.loja.push(KnownLoja {
                level: 0.0,
                beta: 0.75,
                c_l: 4.0 * d.powf(-0.25),
                radius: f64::INFINITY,
            });
        }
        CatalogFn::DoubleWell => {
            let (points, levels) = double_well_critical(dim);
            let description = (points.is_empty())
                .then(|| "all points of {-1, 0, 1}^d; level = number of zero coordinates".into());
            spec.critical = Some(CriticalStructure::new(points, description, levels));
            // on {|x_i| >= 1/2}: |f|^2 >= 4 F
            spec.loja.push(KnownLoja {
                level: 0.0,
                beta: 0.5,
                c_l: 2.0,
                radius: 0.5,
            });
        }
        CatalogFn::CircleValley => {
            spec.critical = Some(CriticalStructure::new(
                vec![
                    vec![0.0, 0.0],
                    vec![1.0, 0.0],
                    vec![0.0, 1.0],
                    vec![-1.0, 0.0],
                    vec![0.0, -1.0],
                ],
                Some("unit circle (level 0) and the origin (level 1)".into()),
                vec![0.0, 1.0],
            ));
            // |f| / F^(1/2) = 4r >= 2 on the annulus 1/2 <= r <= 3/2
            spec.loja.push(KnownLoja {
                level: 0.0,
                beta: 0.5,
                c_l: 2.0,
                radius: 0.5,
            });
        }
        CatalogFn::SaddleCubic => {
            spec.critical = Some(CriticalStructure::new(
                vec![vec![0.0, 1.0], vec![0.0, -1.0]],
                None,
                vec![-2.0 / 3.0, 2.0 / 3.0],
            ));
            // F - F* = x^2/2 + (y-1)^2 (y+2)/3, |f|^2 = x^2 + (y-1)^2 (y+1)^2
            spec.loja.push(KnownLoja {
                level: -2.0 / 3.0,
                beta: 0.5,
                c_l: 2f64.sqrt(),
                radius: 0.5,
            });
        }
        CatalogFn::RosenbrockMod => {
            spec.critical = Some(CriticalStructure::new(vec![vec![1.0, 1.0]], None, vec![0.0]));
        }
    }
    Ok(spec)
}

fn double_well_critical(dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let levels = (0..=dim).map(|k| k as f64).collect();
    if dim > 6 {
        return (Vec::new(), levels);
    }
    let count = 3usize.pow(dim as u32);
    let points = (0..count)
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let digit = code % 3;
                    code /= 3;
                    digit as f64 - 1.0
                })
                .collect()
        })
        .collect();
    (points, levels)
}

/// Central-difference gradient `(F(x + h e_i) - F(x - h e_i)) / 2h`.
pub fn finite_diff_gradient(spec: &LandscapeSpec, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param(format!("step h must be positive, got {h}")));
    }
    if x.len() != spec.dim {
        return Err(Error::Layout(format!(
            "point has dimension {}, landscape has {}",
            x.len(),
            spec.dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite probe point".into()));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = spec.value(&probe);
        probe[i] = x[i] - h;
        let down = spec.value(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite target value while differencing coordinate {i}"
            )));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|f(x)| / |F(x) - level|^beta`.
///
/// Returns `+inf` when `F(x) == level` but `f(x) != 0`, and `NaN` when both
/// vanish (the inequality is vacuous at a critical point on the level).
pub fn loja_ratio(spec: &LandscapeSpec, x: &[f64], level: f64, beta: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&beta) {
        return Err(Error::param(format!("beta must lie in [1/2, 1), got {beta}")));
    }
    let gap = (spec.value(x) - level).abs();
    let grad = spec.grad_norm(x);
    Ok(ratio_from_parts(grad, gap, beta))
}

pub(crate) fn ratio_from_parts(grad: f64, gap: f64, beta: f64) -> f64 {
    if gap == 0.0 {
        if grad == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        grad / gap.powf(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn catalog_examples() {
        let q = catalog_get("quadratic", 1).unwrap();
        assert_eq!(q.value(&[1.0]), 0.5);
        assert_eq!(q.gradient(&[1.0]), vec![1.0]);

        let c = catalog_get("circle_valley", 2).unwrap();
        assert_eq!(c.value(&[1.0, 0.0]), 0.0);
        assert_eq!(c.grad_norm(&[1.0, 0.0]), 0.0);

        let q4 = catalog_get("quartic", 1).unwrap();
        assert_eq!(q4.value(&[2.0]), 16.0);
        assert_eq!(q4.gradient(&[2.0]), vec![32.0]);
    }

    #[test]
    fn unknown_name_lists_catalog() {
        let err = catalog_get("rastrigin", 2).unwrap_err();
        let msg = err.to_string();
        for name in CATALOG {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn planar_entries_reject_other_dimensions() {
        assert!(catalog_get("circle_valley", 3).is_err());
        assert!(catalog_get("quartic", 0).is_err());
    }

    #[test]
    fn finite_differences_examples() {
        let q = catalog_get("quadratic", 1).unwrap();
        let g = finite_diff_gradient(&q, &[1.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);

        let q4 = catalog_get("quartic", 1).unwrap();
        let g = finite_diff_gradient(&q4, &[2.0], 1e-4).unwrap();
        assert!((g[0] - 32.0).abs() < 1e-5);

        let c = catalog_get("circle_valley", 2).unwrap();
        let g = finite_diff_gradient(&c, &[1.0, 0.0], 1e-5).unwrap();
        assert!(norm(&g) < 1e-6);
    }

    #[test]
    fn finite_differences_reject_bad_step() {
        let q = catalog_get("quadratic", 1).unwrap();
        assert!(matches!(
            finite_diff_gradient(&q, &[1.0], 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            finite_diff_gradient(&q, &[f64::NAN], 1e-3),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn loja_ratio_examples() {
        let q4 = catalog_get("quartic", 1).unwrap();
        assert_relative_eq!(loja_ratio(&q4, &[0.5], 0.0, 0.75).unwrap(), 4.0, max_relative = 1e-12);

        let q = catalog_get("quadratic", 1).unwrap();
        assert_relative_eq!(
            loja_ratio(&q, &[3.0], 0.0, 0.5).unwrap(),
            2f64.sqrt(),
            max_relative = 1e-12
        );

        let c = catalog_get("circle_valley", 2).unwrap();
        assert!(loja_ratio(&c, &[1.0, 0.0], 0.0, 0.6).unwrap().is_nan());
    }

    #[test]
    fn loja_ratio_infinite_sentinel_and_range() {
        let q = catalog_get("quadratic", 1).unwrap();
        // F(1) = 0.5 = level while f(1) = 1
        assert_eq!(loja_ratio(&q, &[1.0], 0.5, 0.5).unwrap(), f64::INFINITY);
        assert!(loja_ratio(&q, &[1.0], 0.0, 1.0).is_err());
        assert!(loja_ratio(&q, &[1.0], 0.0, 0.49).is_err());
    }

    #[test]
    fn dedup_merges_close_levels() {
        let levels = dedup_levels(vec![1.0, 0.0, 1.0 + 1e-12, -1e-12], 1e-9);
        assert_eq!(levels.len(), 2);
        assert!(levels[0].abs() < 1e-11);
        assert!((levels[1] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn double_well_critical_points_enumerated() {
        let dw = catalog_get("double_well", 2).unwrap();
        let crit = dw.critical.as_ref().unwrap();
        assert_eq!(crit.points.len(), 9);
        assert_eq!(crit.levels, vec![0.0, 1.0, 2.0]);
    }
}
