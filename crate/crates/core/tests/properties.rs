use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lojalab::analytic_mlp::{
    empirical_target, permute_hidden, random_params, Activation, Architecture, Dataset, ParamVector,
};
use lojalab::landscape::{catalog_get, finite_diff_gradient, loja_ratio, norm, CATALOG};
use lojalab::loja_estimator::{audit_ratio, detect_critical_levels, estimate_loja, Region};
use lojalab::schedule_noise::{sample_noise, sample_noise_into, NoiseFamily, NoiseSpec, RngStream, StepSchedule};
use lojalab::sgd_engine::{run_with, DropoutSpec, EngineConfig};
use lojalab::theory_bounds::{comparison_flow, phi_tailbound};

fn probe(rng: &mut ChaCha8Rng, dim: usize, half: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-half..half)).collect()
}

fn catalog_dims(name: &str) -> Vec<usize> {
    match name {
        "circle_valley" | "saddle_cubic" | "rosenbrock_mod" => vec![2],
        _ => vec![1, 2, 3],
    }
}

#[test]
fn finite_differences_match_gradients_on_catalog() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in CATALOG {
        for dim in catalog_dims(name) {
            let spec = catalog_get(name, dim).unwrap();
            for _ in 0..1000 {
                let x = probe(&mut rng, dim, 2.0);
                let g = spec.gradient(&x);
                let fd = finite_diff_gradient(&spec, &x, 1e-5).unwrap();
                if norm(&g) < 1e-6 {
                    continue;
                }
                let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
                assert!(norm(&diff) <= 1e-5 * norm(&g), "{name} at {x:?}: {g:?} vs {fd:?}");
            }
        }
    }
}

#[test]
fn listed_critical_points_are_critical() {
    for name in CATALOG {
        for dim in catalog_dims(name) {
            let spec = catalog_get(name, dim).unwrap();
            if let Some(cs) = &spec.critical {
                for p in &cs.points {
                    assert!(spec.grad_norm(p) <= 1e-10, "{name} {p:?}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quartic_ratio_is_four(x in prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0]) {
        let spec = catalog_get("quartic", 1).unwrap();
        let r = loja_ratio(&spec, &[x], 0.0, 0.75).unwrap();
        prop_assert!((r - 4.0).abs() <= 4e-9, "ratio {r}");
    }

    #[test]
    fn noise_is_deterministic(seed in any::<u64>(), stream in any::<u64>(), n in 1u64..1_000_000, dim in 1usize..5) {
        for family in [NoiseFamily::Gaussian, NoiseFamily::BoundedUniform, NoiseFamily::heavy_tailed(3.0).unwrap()] {
            let ns = NoiseSpec::new(0.7, 0.1, 2.0, family, dim).unwrap();
            let rng = RngStream::new(seed, stream);
            prop_assert_eq!(sample_noise(&ns, n, &rng).unwrap(), sample_noise(&ns, n, &rng).unwrap());
        }
    }

    #[test]
    fn natural_time_is_increasing(c in 0.01f64..5.0, gamma in 0.0f64..1.5, n in 1u64..5000) {
        let s = StepSchedule::new(c, gamma).unwrap();
        prop_assert!(s.natural_time(n + 1) > s.natural_time(n));
    }

    #[test]
    fn flow_solves_its_ode(r in 1e-3f64..10.0, beta in 0.55f64..0.95, eta in 0.05f64..5.0, t in 1e-2f64..100.0) {
        let h = 1e-4 * t.max(1.0).min(10.0);
        let h = h.min(t / 2.0);
        let d = (comparison_flow(r, beta, eta, t + h).unwrap() - comparison_flow(r, beta, eta, t - h).unwrap()) / (2.0 * h);
        let rhs = eta * comparison_flow(r, beta, eta, t).unwrap().powf(2.0 * beta);
        prop_assert!((d + rhs).abs() <= 1e-6 * rhs, "derivative {d}, expected {}", -rhs);
        prop_assert!(comparison_flow(r, beta, eta, t + 1.0).unwrap() < comparison_flow(r, beta, eta, t).unwrap());
    }

    #[test]
    fn phi_is_decreasing(k in 0.01f64..1e5, f in 1.001f64..10.0) {
        prop_assert!(phi_tailbound(k * f) < phi_tailbound(k));
    }

    #[test]
    fn noiseless_descent_is_monotone(x0 in prop::collection::vec(-1.0f64..1.0, 1..4), which in 0usize..2) {
        let (name, c_gamma) = [("quartic", 0.04), ("double_well", 0.035)][which];
        let spec = catalog_get(name, x0.len()).unwrap();
        let engine = EngineConfig::new(spec, StepSchedule::new(c_gamma, 0.7).unwrap(), NoiseSpec::silent(x0.len()), x0, 3000).unwrap();
        let mut prev = f64::INFINITY;
        let mut ok = true;
        run_with(&engine, &RngStream::new(0, 1), |v| {
            ok &= v.value <= prev;
            prev = v.value;
        }).unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn dropout_flag_matches_dropout_time(seed in 0u64..1000, start in 1u64..200) {
        let spec = catalog_get("double_well", 1).unwrap();
        let ns = NoiseSpec::new(0.5, 0.0, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        let engine = EngineConfig::new(spec, StepSchedule::new(0.1, 0.8).unwrap(), ns, vec![0.05], 1000)
            .unwrap()
            .with_dropout(DropoutSpec { f_star: 1.0, c_w: 0.5, beta: 0.75, n_start: start })
            .unwrap();
        let mut flags = Vec::new();
        let events = run_with(&engine, &RngStream::new(seed, 1), |v| flags.push((v.n, v.flags.above_dropout))).unwrap();
        for (n, above) in flags {
            if n >= start {
                prop_assert_eq!(!above, events.dropout_time.map_or(false, |d| d <= n), "n = {}", n);
            }
        }
    }

    #[test]
    fn hidden_permutations_leave_target_invariant(seed in any::<u64>(), act in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let activation = [Activation::Softplus, Activation::Tanh, Activation::Sigmoid][act];
        let depth = rng.gen_range(2..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=4)).collect();
        let arch = Architecture::new(widths.clone(), activation).unwrap();
        let theta = random_params(&arch, 1.0, &mut rng);
        let m = rng.gen_range(1..6);
        let xs: Vec<Vec<f64>> = (0..m).map(|_| probe(&mut rng, widths[0], 1.0)).collect();
        let ys: Vec<Vec<f64>> = (0..m).map(|_| probe(&mut rng, widths[depth], 1.0)).collect();
        let data = Dataset::new(xs, ys, 2.0).unwrap();
        let layer = rng.gen_range(1..depth);
        let mut perm: Vec<usize> = (0..widths[layer]).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted = permute_hidden(&arch, &theta, layer, &perm).unwrap();
        let a = empirical_target(&arch, &theta, &data).unwrap();
        let b = empirical_target(&arch, &permuted, &data).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn noise_is_centered() {
    for family in [NoiseFamily::Gaussian, NoiseFamily::BoundedUniform, NoiseFamily::heavy_tailed(3.5).unwrap()] {
        let ns = NoiseSpec::new(1.0, 0.2, 2.0, family, 2).unwrap();
        let n = 50;
        let mut gen = RngStream::new(3, 1).generator();
        let mut buf = vec![0.0; 2];
        let mut sum = [0.0; 2];
        let draws = 1_000_000;
        for _ in 0..draws {
            sample_noise_into(&ns, n, &mut gen, &mut buf).unwrap();
            sum[0] += buf[0];
            sum[1] += buf[1];
        }
        let mean = [sum[0] / draws as f64, sum[1] / draws as f64];
        assert!(norm(&mean) <= 4.0 * ns.sigma_at(n) / 1e3, "{family:?}: {mean:?}");
    }
}

#[test]
fn noise_moments_scale_with_sigma() {
    // (E|D|^q)^(1/q) / sigma_n for the unit-variance families
    let constant = |family: NoiseFamily, q: i32, d: f64| match (family, q) {
        (_, 2) => 1.0,
        (NoiseFamily::Gaussian, 4) => (1.0 + 2.0 / d).powf(0.25),
        (NoiseFamily::BoundedUniform, 4) => (1.0 + 0.8 / d).powf(0.25),
        _ => unreachable!(),
    };
    for family in [NoiseFamily::Gaussian, NoiseFamily::BoundedUniform] {
        for dim in [1usize, 3] {
            let ns = NoiseSpec::new(0.5, 0.3, 4.0, family, dim).unwrap();
            for n in [1u64, 10, 1000] {
                let mut gen = RngStream::new(5, n).generator();
                let mut buf = vec![0.0; dim];
                let (mut m2, mut m4) = (0.0, 0.0);
                let draws = 200_000;
                for _ in 0..draws {
                    sample_noise_into(&ns, n, &mut gen, &mut buf).unwrap();
                    let r2 = buf.iter().map(|v| v * v).sum::<f64>();
                    m2 += r2;
                    m4 += r2 * r2;
                }
                let s = ns.sigma_at(n);
                for (q, m) in [(2, m2), (4, m4)] {
                    let ratio = (m / draws as f64).powf(1.0 / q as f64) / s;
                    let c = constant(family, q, dim as f64);
                    assert!((0.9 * c..=1.1 * c).contains(&ratio), "{family:?} d={dim} n={n} q={q}: {ratio}");
                }
            }
        }
    }
}

#[test]
fn heavy_tailed_moment_is_calibrated() {
    let family = NoiseFamily::heavy_tailed_with_moment(3.5, 1.5).unwrap();
    let ns = NoiseSpec::new(2.0, 0.0, 1.5, family, 2).unwrap();
    let mut gen = RngStream::new(6, 1).generator();
    let mut buf = vec![0.0; 2];
    let draws = 400_000;
    let mut m = 0.0;
    for _ in 0..draws {
        sample_noise_into(&ns, 1, &mut gen, &mut buf).unwrap();
        m += norm(&buf).powf(1.5);
    }
    let ratio = (m / draws as f64).powf(1.0 / 1.5) / 2.0;
    assert!((0.9..=1.1).contains(&ratio), "{ratio}");
}

#[test]
fn natural_time_asymptotics() {
    for gamma in [0.3, 0.5, 0.6] {
        let s = StepSchedule::new(0.7, gamma).unwrap();
        let n = 1_000_000u64;
        let ratio = s.natural_time(n) / (0.7 * (n as f64).powf(1.0 - gamma) / (1.0 - gamma));
        assert!((ratio - 1.0).abs() <= 0.02, "gamma {gamma}: {ratio}");
    }
    // for larger gamma the constant offset decays slowly; the ratio still approaches 1
    for gamma in [0.8, 0.9] {
        let s = StepSchedule::new(1.0, gamma).unwrap();
        let ratio = |n: u64| s.natural_time(n) / ((n as f64).powf(1.0 - gamma) / (1.0 - gamma));
        assert!((ratio(1_000_000) - 1.0).abs() < (ratio(1000) - 1.0).abs());
    }
}

#[test]
fn phi_between_partial_sum_and_tail() {
    for kappa in [0.1, 1.0, 10.0, 100.0] {
        let mut partial = 4.0 / (kappa * kappa);
        for n in 0..10_000 {
            let x = 2f64.powi(n);
            partial += if x.is_finite() { 8.0 / (x * (1.0 + kappa / x).powi(2)) } else { 0.0 };
        }
        let phi = phi_tailbound(kappa);
        assert!(phi >= partial * (1.0 - 1e-15), "kappa {kappa}: {phi} < {partial}");
        assert!(phi <= partial * (1.0 + 1e-12), "kappa {kappa}: {phi} vs {partial}");
    }
}

#[test]
fn running_average_settles_with_iterates() {
    let spec = catalog_get("quartic", 1).unwrap();
    let engine = EngineConfig::new(spec, StepSchedule::new(0.5, 0.8).unwrap(), NoiseSpec::silent(1), vec![0.6], 20_000).unwrap();
    let (mut xs, mut avg) = (Vec::new(), Vec::new());
    run_with(&engine, &RngStream::new(0, 1), |v| {
        if v.n > 18_000 {
            xs.push(v.x[0]);
            avg.push(v.average[0]);
        }
    })
    .unwrap();
    let osc = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(osc(&avg) <= osc(&xs) + 1e-3, "{} vs {}", osc(&avg), osc(&xs));
}

#[test]
fn estimator_recovers_known_constants() {
    for (name, dim) in [("quadratic", 1), ("quadratic", 2), ("quartic", 1), ("quartic", 2)] {
        let spec = catalog_get(name, dim).unwrap();
        let known = spec.known_loja(0.0).unwrap();
        let (mut beta, mut c_l) = (0.0, 0.0);
        for seed in 0..10 {
            let cert = estimate_loja(&spec, &Region::cube(dim, 1.0), 0.0, 10_000, (1e-8, 0.1), &RngStream::new(seed, 0)).unwrap();
            if cert.certified {
                assert!(cert.worst_ratio >= cert.c_l, "{name}: certified with violating audit sample");
            }
            beta += cert.beta / 10.0;
            c_l += cert.c_l / 10.0;
        }
        assert!((beta - known.beta).abs() <= 0.05, "{name} d={dim}: beta {beta} vs {}", known.beta);
        assert!(
            (0.8 * known.c_l..=known.c_l).contains(&c_l),
            "{name} d={dim}: C_L {c_l} vs {}",
            known.c_l
        );
    }
}

#[test]
fn certified_constant_holds_on_fresh_samples() {
    let spec = catalog_get("double_well", 1).unwrap();
    let region = Region::Ball { center: vec![1.0], radius: 0.4 };
    let cert = estimate_loja(&spec, &region, 0.0, 10_000, (1e-8, 0.1), &RngStream::new(1, 0)).unwrap();
    assert!(cert.certified);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let y = region.sample(&mut rng, 100).unwrap();
        let gap = spec.value(&y);
        if (1e-8..=0.1).contains(&gap) {
            assert!(audit_ratio(&spec, &y, 0.0, cert.beta) >= cert.c_l * (1.0 - 1e-9), "{y:?}");
        }
    }
}

#[test]
fn critical_levels_stable_under_refinement() {
    for (name, dim) in [("double_well", 1), ("double_well", 2), ("circle_valley", 2), ("saddle_cubic", 2)] {
        let spec = catalog_get(name, dim).unwrap();
        let region = Region::cube(dim, 1.8);
        let coarse = detect_critical_levels(&spec, &region, 8, 1e-10, 1e-6).unwrap();
        let fine = detect_critical_levels(&spec, &region, 16, 1e-10, 1e-6).unwrap();
        assert_eq!(coarse.len(), fine.len(), "{name}: {coarse:?} vs {fine:?}");
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a - b).abs() <= 1e-6, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn flatten_layout_is_weights_then_biases() {
    let arch = Architecture::new(vec![2, 1], Activation::Tanh).unwrap();
    let theta = ParamVector(vec![1.0, 2.0, 3.0]);
    let layers = theta.unflatten(&arch).unwrap();
    assert_eq!(layers[0].a, vec![1.0, 2.0]);
    assert_eq!(layers[0].b, vec![3.0]);
}

#[test]
fn minibatch_noise_is_centered() {
    use lojalab::analytic_mlp::{as_landscape, teacher_student};
    let arch = Architecture::new(vec![2, 3, 1], Activation::Tanh).unwrap();
    let (teacher, data) = teacher_student(&arch, 40, 1.0, &RngStream::new(1, 1)).unwrap();
    let spec = as_landscape(&arch, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = teacher.0.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
    let p = x.len();
    let draws = 100_000;
    let (mut sum, mut sq) = (vec![0.0; p], vec![0.0; p]);
    for _ in 0..draws {
        let d = spec.minibatch_noise(&x, 4, &mut rng).unwrap();
        for i in 0..p {
            sum[i] += d[i];
            sq[i] += d[i] * d[i];
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / draws as f64).collect();
    let var: f64 = (0..p).map(|i| sq[i] / draws as f64 - mean[i] * mean[i]).sum();
    assert!(norm(&mean) <= 4.0 * var.sqrt() / (draws as f64).sqrt(), "{mean:?}");
}
