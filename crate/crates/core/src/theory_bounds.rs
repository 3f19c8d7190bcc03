//! Closed-form quantities of the convergence analysis and truth-valued
//! checkers for the hypothesis sets of the convergence theorems.
//!
//! Series conditions on power-law schedules are decided by exponent
//! arithmetic: `sum n^a < inf` iff `a < -1`. Numerical summation only appears
//! where a finite value is needed (the dropout bound) and in tests.

use std::fmt;

use crate::error::{Error, Result};
use crate::schedule_noise::{NaturalTime, NoiseSpec, StepSchedule};

/// Relative tolerance under which two sides of a clause count as equal.
const BOUNDARY_TOL: f64 = 1e-12;

/// `c * t^(-1/(2 beta - 1))`, the common shape of the `v_n` and `w_n`
/// sequences.
pub fn decay_sequence(c: f64, beta: f64, t: f64) -> f64 {
    c * t.powf(-1.0 / (2.0 * beta - 1.0))
}

/// Constants of the comparison argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub beta: f64,
    pub c_l: f64,
    /// Excess threshold: steps with `gamma_n |D_n| > delta` leave the
    /// compatible event.
    pub delta: f64,
    pub delta_prime: f64,
    pub kappa: f64,
    pub c_v: f64,
    pub c_w: f64,
    pub y0: f64,
    pub eta: f64,
    pub r: f64,
    pub n_start: u64,
    /// `sup_{n > N} (v_{n-1} / v_n)^(2 beta)`.
    pub s: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 11] = [
            (self.beta > 0.5 && self.beta < 1.0, "beta must lie in (1/2, 1)"),
            (self.c_l > 0.0, "C_L must be positive"),
            (self.delta > 0.0, "delta must be positive"),
            (
                self.delta_prime > 0.0 && self.delta_prime < 1.0,
                "delta' must lie in (0, 1)",
            ),
            (self.kappa > 0.0, "kappa must be positive"),
            (self.c_v > 0.0, "C_v must be positive"),
            (self.c_w > 0.0, "C_w must be positive"),
            (self.y0 > 0.0, "y_0 must be positive"),
            (self.eta > 0.0, "eta must be positive"),
            (self.r > 0.0, "R must be positive"),
            (self.n_start >= 1 && self.s >= 1.0, "N must be >= 1 and s >= 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::param(msg));
            }
        }
        Ok(())
    }

    pub fn master(&self) -> MasterEquation {
        MasterEquation {
            beta: self.beta,
            c_l: self.c_l,
            delta_prime: self.delta_prime,
            kappa: self.kappa,
        }
    }

    /// Whether `(y0, eta)` solves the master inequality for `s`, audited on
    /// the standard grid.
    pub fn master_feasible(&self) -> bool {
        let sol = MasterSolution {
            y0: self.y0,
            eta: self.eta,
            s: self.s,
            y_cross: self.master().dominance_threshold(self.y0),
        };
        self.master().audit(&sol, &audit_grid(sol.y_cross)) == 0
    }

    pub fn to_kv(&self) -> String {
        format!(
            "theory.beta={}\ntheory.c_l={}\ntheory.delta={}\ntheory.delta_prime={}\n\
             theory.kappa={}\ntheory.c_v={}\ntheory.c_w={}\ntheory.y0={}\ntheory.eta={}\n\
             theory.r={}\ntheory.n_start={}\ntheory.s={}\ntheory.master_feasible={}\n",
            self.beta,
            self.c_l,
            self.delta,
            self.delta_prime,
            self.kappa,
            self.c_v,
            self.c_w,
            self.y0,
            self.eta,
            self.r,
            self.n_start,
            self.s,
            self.master_feasible()
        )
    }
}

/// `Phi^(R)_t = R ((2 beta - 1) eta R^(2 beta - 1) t + 1)^(-1/(2 beta - 1))`,
/// the solution of `Phi' = -eta Phi^(2 beta)` with `Phi_0 = R`.
pub fn comparison_flow(r: f64, beta: f64, eta: f64, t: f64) -> Result<f64> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::param(format!("R must be non-negative, got {r}")));
    }
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::param(format!("beta must lie in (1/2, 1), got {beta}")));
    }
    if !(eta > 0.0) {
        return Err(Error::param(format!("eta must be positive, got {eta}")));
    }
    if !(t >= 0.0) {
        return Err(Error::param(format!("t must be non-negative, got {t}")));
    }
    let e = 2.0 * beta - 1.0;
    Ok(r * (e * eta * r.powf(e) * t + 1.0).powf(-1.0 / e))
}

/// `g(y) = kappa y - (1 - delta') C_L^2 |y|^(2 beta) + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterEquation {
    pub beta: f64,
    pub c_l: f64,
    pub delta_prime: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterSolution {
    pub y0: f64,
    pub eta: f64,
    pub s: f64,
    /// Beyond `y_cross` the inequality follows from power dominance.
    pub y_cross: f64,
}

const Y0_MAX: f64 = 1e6;
const ETA_SAFETY: f64 = 0.9;
const AUDIT_POINTS: usize = 10_000;

impl MasterEquation {
    pub fn g(&self, y: f64) -> f64 {
        self.kappa * y - self.contraction() * y.abs().powf(2.0 * self.beta) + 1.0
    }

    fn contraction(&self) -> f64 {
        (1.0 - self.delta_prime) * self.c_l * self.c_l
    }

    /// Smallest `y >= 0` such that for `u = y + y0 >= y_cross + y0`,
    /// `0.1 c u^(2 beta) >= kappa u + 1` with `c = (1-delta') C_L^2`.
    pub fn dominance_threshold(&self, y0: f64) -> f64 {
        let c = self.contraction();
        let p = 2.0 * self.beta;
        let linear = (20.0 * self.kappa / c).powf(1.0 / (p - 1.0));
        let constant = (20.0 / c).powf(1.0 / p);
        (linear.max(constant) - y0).max(0.0)
    }

    /// Number of audit points where `s g(y + y0) <= -eta y^(2 beta)` fails.
    pub fn audit(&self, sol: &MasterSolution, ys: &[f64]) -> usize {
        let p = 2.0 * self.beta;
        ys.iter()
            .filter(|&&y| {
                let lhs = sol.s * self.g(y + sol.y0);
                let rhs = -sol.eta * y.powf(p);
                !(lhs <= rhs)
            })
            .count()
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.5 && self.beta < 1.0) {
            return Err(Error::param(format!("beta must lie in (1/2, 1), got {}", self.beta)));
        }
        if !(self.c_l > 0.0) {
            return Err(Error::param("C_L must be positive"));
        }
        if !(self.delta_prime >= 0.0 && self.delta_prime < 1.0) {
            return Err(Error::param("delta' must lie in [0, 1)"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::param("kappa must be non-negative"));
        }
        Ok(())
    }
}

/// `TheoryParams`-style evaluation of the master function.
pub fn master_g(y: f64, tp: &TheoryParams) -> f64 {
    tp.master().g(y)
}

fn geometric(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(move |i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
}

/// The standard audit grid: `y = 0` plus a geometric sweep up to beyond the
/// dominance threshold.
fn audit_grid(y_cross: f64) -> Vec<f64> {
    let hi = y_cross.clamp(1e12, 1e300);
    std::iter::once(0.0)
        .chain(geometric(1e-10, hi, AUDIT_POINTS - 1))
        .collect()
}

/// Finds `(y0, eta)` with `s g(y + y0) <= -eta y^(2 beta)` for all `y >= 0`.
///
/// `y0` is the smallest point of a geometric grid on `[1e-3, 1e6]` past which
/// `g` is decreasing and `g(y0) <= -2/s`; `eta` is 90% of the infimum of
/// `-s g(y + y0) / y^(2 beta)`, including its limit `s (1 - delta') C_L^2`.
/// Every returned pair has passed a 10^4-point audit.
pub fn solve_master_equation(eq: &MasterEquation, s: f64) -> Result<MasterSolution> {
    eq.validate()?;
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::param(format!("sup-ratio s must be >= 1, got {s}")));
    }
    let p = 2.0 * eq.beta;
    let c = eq.contraction();
    // g' <= 0 beyond y_dec
    let y_dec = if eq.kappa == 0.0 {
        0.0
    } else {
        (eq.kappa / (c * p)).powf(1.0 / (p - 1.0))
    };
    if !(y_dec <= Y0_MAX) {
        return Err(Error::Infeasible(format!(
            "g keeps increasing up to y = {y_dec:e} > {Y0_MAX:e}"
        )));
    }
    let limit = s * c;
    let probe: Vec<f64> = geometric(1e-8, 1e12, 801).collect();
    for y0 in geometric(1e-3, Y0_MAX, 271) {
        if y0 < y_dec || eq.g(y0) > -2.0 / s {
            continue;
        }
        let inf = probe
            .iter()
            .map(|&y| -s * eq.g(y + y0) / y.powf(p))
            .fold(limit, f64::min);
        if !(inf > 0.0) {
            continue;
        }
        let sol = MasterSolution {
            y0,
            eta: ETA_SAFETY * inf,
            s,
            y_cross: eq.dominance_threshold(y0),
        };
        if eq.audit(&sol, &audit_grid(sol.y_cross)) == 0 {
            return Ok(sol);
        }
    }
    Err(Error::Infeasible(format!(
        "no y0 <= {Y0_MAX:e} satisfies the master inequality (kappa = {}, C_L = {}, beta = {})",
        eq.kappa, eq.c_l, eq.beta
    )))
}

/// `sup_{n > N} (v_{n-1} / v_n)^(2 beta) = sup (t_n / t_{n-1})^(2 beta / (2 beta - 1))`.
///
/// The ratio decreases in `n` for power-law schedules, so the supremum is the
/// value at `N + 1`; the maximum over a 1000-step audit range is returned.
pub fn sup_ratio(beta: f64, clock: &NaturalTime, n_start: u64) -> Result<f64> {
    if n_start < 1 {
        return Err(Error::param("start index N must be >= 1"));
    }
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::param(format!("beta must lie in (1/2, 1), got {beta}")));
    }
    let exponent = 2.0 * beta / (2.0 * beta - 1.0);
    let s = (n_start + 1..=n_start + 1000)
        .map(|n| (clock.at(n) / clock.at(n - 1)).powf(exponent))
        .fold(1.0, f64::max);
    Ok(s)
}

/// Smallest `kappa` with `v_{n-1}/v_n - 1 <= kappa gamma_n v_n^(2 beta - 1)`
/// for `N < n <= n_end`, for `v_n = c_v t_n^(-1/(2 beta - 1))`.
pub fn min_kappa(c_v: f64, beta: f64, clock: &NaturalTime, n_start: u64, n_end: u64) -> f64 {
    let sched = clock.schedule();
    (n_start.max(1) + 1..=n_end)
        .map(|n| {
            let v_prev = decay_sequence(c_v, beta, clock.at(n - 1));
            let v = decay_sequence(c_v, beta, clock.at(n));
            (v_prev / v - 1.0) / (sched.gamma_at(n) * v.powf(2.0 * beta - 1.0))
        })
        .fold(0.0, f64::max)
}

/// `(v_n, w_n) = (C_v, C_w) * t_n^(-1/(2 beta - 1))`.
pub fn vw_sequences(tp: &TheoryParams, sched: &StepSchedule, n: u64) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(Error::param("v_n and w_n are defined for n >= 1"));
    }
    let t = sched.natural_time(n);
    Ok((
        decay_sequence(tp.c_v, tp.beta, t),
        decay_sequence(tp.c_w, tp.beta, t),
    ))
}

/// `phi(kappa) = 4/kappa^2 + sum_{n >= 0} 2^(n+3) / (2^n + kappa)^2`.
///
/// The series is summed until the current term drops below `1e-15` of the
/// running sum (once `2^n > kappa`), then the remaining terms are bounded by
/// `sum_{m > n} 8 / 2^m = 8 / 2^n` and added, so the result is an upper
/// bound within `1e-12` of the exact value. Non-positive `kappa` gives `+inf`.
pub fn phi_tailbound(kappa: f64) -> f64 {
    if !(kappa > 0.0) {
        return f64::INFINITY;
    }
    let mut sum = 4.0 / (kappa * kappa);
    let mut n = 0i32;
    loop {
        let x = 2f64.powi(n);
        let term = 8.0 / (x * (1.0 + kappa / x).powi(2));
        sum += term;
        if x > kappa && term < 1e-15 * sum {
            return sum + 8.0 * 2f64.powi(-n);
        }
        n += 1;
    }
}

/// `sum_{l >= start} l^a` for `a < -1`: direct summation over 2e5 terms and a
/// midpoint-rule integral for the rest.
pub fn power_tail_sum(a: f64, start: u64) -> Result<f64> {
    if !(a < -1.0) {
        return Err(Error::Hypothesis(format!(
            "series sum l^{a} diverges (exponent must be < -1)"
        )));
    }
    let start = start.max(1);
    let last = start + 200_000;
    let direct: f64 = (start..last).map(|l| (l as f64).powf(a)).sum();
    let tail = (last as f64 - 0.5).powf(a + 1.0) / (-(a + 1.0));
    Ok(direct + tail)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutBound {
    /// `(1 - delta') T / (gamma_{N'+1} sigma_{N'+1}^2)`.
    pub phi_argument: f64,
    pub first_term: f64,
    /// `sum_{l > N'} (gamma_l sigma_l)^2`.
    pub series: f64,
    pub second_term: f64,
    pub total: f64,
}

/// Bound on the probability that the target climbs by `2T` after index `N'`:
/// `phi((1-delta') T / (gamma_{N'+1} sigma_{N'+1}^2)) + 2 lip_f sum_{l>N'} (gamma_l sigma_l)^2 / T`.
pub fn dropout_prob_bound(
    n_prime: u64,
    t_level: f64,
    delta_prime: f64,
    sched: &StepSchedule,
    ns: &NoiseSpec,
    lip_f: f64,
) -> Result<DropoutBound> {
    if !(t_level > 0.0) {
        return Err(Error::param(format!("T must be positive, got {t_level}")));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::param("delta' must lie in (0, 1)"));
    }
    if !(lip_f >= 0.0) {
        return Err(Error::param("Lipschitz constant must be non-negative"));
    }
    let gamma_next = sched.gamma_at(n_prime + 1);
    if 2.0 * lip_f * gamma_next > delta_prime {
        return Err(Error::Hypothesis(format!(
            "2 Lip(f) gamma_{{N'+1}} = {} exceeds delta' = {delta_prime}",
            2.0 * lip_f * gamma_next
        )));
    }
    if 2.0 * ns.sigma - sched.gamma > 0.0 {
        return Err(Error::Hypothesis(format!(
            "gamma_n sigma_n^2 is increasing (exponent {} > 0)",
            2.0 * ns.sigma - sched.gamma
        )));
    }
    let exponent = 2.0 * (ns.sigma - sched.gamma);
    let prefactor = (sched.c_gamma * ns.c_sigma).powi(2);
    let series = if prefactor == 0.0 {
        0.0
    } else {
        prefactor * power_tail_sum(exponent, n_prime + 1)?
    };
    let sigma_next = ns.sigma_at(n_prime + 1);
    let denom = gamma_next * sigma_next * sigma_next;
    let phi_argument = if denom == 0.0 {
        f64::INFINITY
    } else {
        (1.0 - delta_prime) * t_level / denom
    };
    let first_term = if phi_argument.is_infinite() {
        0.0
    } else {
        phi_tailbound(phi_argument)
    };
    let second_term = 2.0 * lip_f * series / t_level;
    Ok(DropoutBound {
        phi_argument,
        first_term,
        series,
        second_term,
        total: first_term + second_term,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClauseStatus {
    Pass,
    Fail,
    /// Equality in a strict inequality; counts as a failure.
    Boundary,
    NotApplicable,
}

impl ClauseStatus {
    pub fn holds(self) -> bool {
        matches!(self, ClauseStatus::Pass | ClauseStatus::NotApplicable)
    }

    fn tag(self) -> &'static str {
        match self {
            ClauseStatus::Pass => "pass",
            ClauseStatus::Fail => "fail",
            ClauseStatus::Boundary => "boundary",
            ClauseStatus::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub name: String,
    pub group: String,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub status: ClauseStatus,
}

impl Clause {
    pub fn compare(name: &str, group: &str, lhs: f64, relation: Relation, rhs: f64) -> Self {
        let equal = (lhs - rhs).abs() <= BOUNDARY_TOL * rhs.abs().max(1.0);
        let status = if !(lhs.is_finite() || rhs.is_finite()) || lhs.is_nan() || rhs.is_nan() {
            ClauseStatus::Fail
        } else if equal {
            match relation {
                Relation::Le | Relation::Ge => ClauseStatus::Pass,
                Relation::Lt | Relation::Gt => ClauseStatus::Boundary,
            }
        } else {
            let ok = match relation {
                Relation::Lt | Relation::Le => lhs < rhs,
                Relation::Gt | Relation::Ge => lhs > rhs,
            };
            if ok {
                ClauseStatus::Pass
            } else {
                ClauseStatus::Fail
            }
        };
        Self {
            name: name.into(),
            group: group.into(),
            lhs,
            relation,
            rhs,
            status,
        }
    }

    pub fn not_applicable(name: &str, group: &str, relation: Relation) -> Self {
        Self {
            name: name.into(),
            group: group.into(),
            lhs: f64::NAN,
            relation,
            rhs: f64::NAN,
            status: ClauseStatus::NotApplicable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The primary (first) clause group holds while another group fails.
    Mixed,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Mixed => "mixed",
        })
    }
}

/// Named clause results with their evaluated sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub name: String,
    pub clauses: Vec<Clause>,
    pub notes: Vec<(String, String)>,
}

impl ConditionReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            clauses: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn push(&mut self, clause: Clause) {
        self.clauses.push(clause);
    }

    fn note(&mut self, key: &str, value: impl fmt::Display) {
        self.notes.push((key.into(), value.to_string()));
    }

    /// Conjunction of all clauses.
    pub fn overall(&self) -> bool {
        self.clauses.iter().all(|c| c.status.holds())
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.clauses
            .iter()
            .filter(|c| !c.status.holds())
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn verdict(&self) -> Verdict {
        if self.overall() {
            return Verdict::Pass;
        }
        let primary = self.clauses[0].group.as_str();
        let primary_holds = self
            .clauses
            .iter()
            .filter(|c| c.group == primary)
            .all(|c| c.status.holds());
        if primary_holds {
            Verdict::Mixed
        } else {
            Verdict::Fail
        }
    }

    /// Deterministic `key=value` block, one line per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let p = &self.name;
        for c in &self.clauses {
            let n = &c.name;
            out.push_str(&format!("{p}.{n}.group={}\n", c.group));
            out.push_str(&format!("{p}.{n}.lhs={}\n", c.lhs));
            out.push_str(&format!("{p}.{n}.relation={}\n", c.relation.symbol()));
            out.push_str(&format!("{p}.{n}.rhs={}\n", c.rhs));
            out.push_str(&format!("{p}.{n}.status={}\n", c.status.tag()));
        }
        for (k, v) in &self.notes {
            out.push_str(&format!("{p}.note.{k}={v}\n"));
        }
        out.push_str(&format!("{p}.verdict={}\n", self.verdict()));
        out
    }
}

/// Hypotheses of the Hölder-gradient convergence theorem for power-law
/// `gamma_n` and `sigma_n`.
pub fn check_theorem1(
    alpha1: f64,
    alpha2: f64,
    sched: &StepSchedule,
    ns: &NoiseSpec,
) -> Result<ConditionReport> {
    if !(alpha1 > 0.0 && alpha1 <= alpha2 && alpha2 <= 1.0) {
        return Err(Error::param(format!(
            "need 0 < alpha1 <= alpha2 <= 1, got ({alpha1}, {alpha2})"
        )));
    }
    let (g, s) = (sched.gamma, ns.sigma);
    let mut r = ConditionReport::new("theorem1");
    r.push(Clause::compare("steps_vanish", "theorem1", g, Relation::Gt, 0.0));
    r.push(Clause::compare(
        "noise_summability",
        "theorem1",
        (s - g) * (1.0 + alpha1),
        Relation::Lt,
        -1.0,
    ));
    if alpha2 < 1.0 {
        r.push(Clause::compare(
            "holder_summability",
            "theorem1",
            -g * (1.0 + alpha2) / (1.0 - alpha2),
            Relation::Lt,
            -1.0,
        ));
    } else {
        r.push(Clause::not_applicable("holder_summability", "theorem1", Relation::Lt));
    }
    r.push(Clause::compare("steps_diverge", "theorem1_gradient_limit", g, Relation::Le, 1.0));
    Ok(r)
}

/// Hypotheses of the Łojasiewicz convergence theorem for
/// `gamma_n = C n^-gamma`, `sigma_n = n^sigma`.
pub fn check_theorem2(gamma: f64, sigma: f64, q: f64) -> ConditionReport {
    let mut r = ConditionReport::new("theorem2");
    push_gamma_range(&mut r, "theorem2", gamma);
    r.push(Clause::compare("q_at_least_two", "theorem2", q, Relation::Ge, 2.0));
    r.push(Clause::compare(
        "rate_clause",
        "theorem2",
        2.0 / 3.0 * (sigma + 1.0),
        Relation::Lt,
        gamma,
    ));
    push_q_clause(&mut r, "theorem2", gamma, sigma, q);
    r
}

fn push_gamma_range(r: &mut ConditionReport, group: &str, gamma: f64) {
    r.push(Clause::compare("gamma_lower", group, gamma, Relation::Gt, 0.5));
    r.push(Clause::compare("gamma_upper", group, gamma, Relation::Le, 1.0));
}

fn push_q_clause(r: &mut ConditionReport, group: &str, gamma: f64, sigma: f64, q: f64) {
    let denom = 2.0 * gamma - sigma - 1.0;
    r.push(Clause::compare("denominator_positive", group, denom, Relation::Gt, 0.0));
    if denom > 0.0 {
        r.push(Clause::compare("q_clause", group, 1.0 / denom, Relation::Lt, q));
    } else {
        r.push(Clause::not_applicable("q_clause", group, Relation::Lt));
    }
}

/// Sufficient exponent conditions for the rate assumptions (a), (b), (c):
/// the `gamma < 1` clause set (a'), (b'), (c') or, for `gamma = 1`,
/// `sigma < 1/2` and `q >= 2`.
pub fn check_rate_conditions(gamma: f64, sigma: f64, q: f64, beta: f64) -> ConditionReport {
    let group = "rate";
    let mut r = ConditionReport::new("rate");
    r.push(Clause::compare("beta_lower", group, beta, Relation::Gt, 0.5));
    r.push(Clause::compare("beta_upper", group, beta, Relation::Lt, 1.0));
    push_gamma_range(&mut r, group, gamma);
    if (gamma - 1.0).abs() <= BOUNDARY_TOL {
        r.push(Clause::compare("sigma_below_half", group, sigma, Relation::Lt, 0.5));
        r.push(Clause::compare("q_at_least_two", group, q, Relation::Ge, 2.0));
    } else {
        let e = 2.0 * beta - 1.0;
        r.push(Clause::compare(
            "a_prime",
            group,
            2.0 * sigma,
            Relation::Le,
            ((4.0 * beta - 1.0) * gamma - 2.0 * beta) / e,
        ));
        r.push(Clause::compare(
            "b_prime",
            group,
            sigma,
            Relation::Le,
            (2.0 * beta * gamma - 1.0) / e - 1.0 / q,
        ));
        r.push(Clause::compare(
            "c_prime",
            group,
            gamma,
            Relation::Ge,
            1.0 / (2.0 * beta),
        ));
    }
    r
}

/// Open-ended interval of `beta in (1/2, 1)` for which
/// [`check_rate_conditions`] passes, found by bisection on each clause.
pub fn admissible_beta_interval(gamma: f64, sigma: f64, q: f64) -> Option<(f64, f64)> {
    let (a, b) = (0.5 + 1e-9, 1.0 - 1e-9);
    let names: Vec<String> = check_rate_conditions(gamma, sigma, q, 0.75)
        .clauses
        .iter()
        .map(|c| c.name.clone())
        .filter(|n| n != "beta_lower" && n != "beta_upper")
        .collect();
    let (mut lo, mut hi) = (a, b);
    for name in &names {
        let holds = |beta: f64| {
            check_rate_conditions(gamma, sigma, q, beta)
                .clause(name)
                .map_or(false, |c| c.status.holds())
        };
        match (holds(a), holds(b)) {
            (true, true) => {}
            (false, false) => return None,
            (false, true) => lo = lo.max(bisect(&holds, a, b)),
            (true, false) => hi = hi.min(bisect(&holds, b, a)),
        }
    }
    (lo < hi).then_some((lo, hi))
}

/// Point where `holds` switches, searching from `bad` (false) toward `good`.
fn bisect(holds: &dyn Fn(f64) -> bool, bad: f64, good: f64) -> f64 {
    let (mut bad, mut good) = (bad, good);
    for _ in 0..100 {
        let mid = 0.5 * (bad + good);
        if holds(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// Exponent conditions making the assumptions satisfiable for some `beta`.
/// The theorem's `q >= 2` requirement is reported as its own group.
pub fn check_prop_assu(gamma: f64, sigma: f64, q: f64) -> ConditionReport {
    let group = "prop_assu";
    let mut r = ConditionReport::new("prop_assu");
    push_gamma_range(&mut r, group, gamma);
    r.push(Clause::compare(
        "three_gamma",
        group,
        3.0 * gamma - 2.0 * sigma,
        Relation::Gt,
        2.0,
    ));
    push_q_clause(&mut r, group, gamma, sigma, q);
    r.push(Clause::compare("q_at_least_two", "theorem2", q, Relation::Ge, 2.0));
    match admissible_beta_interval(gamma, sigma, q) {
        Some((lo, hi)) => {
            r.note("beta_interval_lo", lo);
            r.note("beta_interval_hi", hi);
        }
        None => r.note("beta_interval", "empty"),
    }
    r.note(
        "beta_threshold_dropout_ratio",
        (1.0 - 2.0 * sigma) / (2.0 * gamma - 4.0 * sigma),
    );
    r.note(
        "beta_threshold_series",
        (gamma - 2.0 * sigma) / (4.0 * gamma - 4.0 * sigma - 2.0),
    );
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub n: u64,
    /// `Phi^(R)_{t_n - t_N} + (y0 + 7) v_n`.
    pub two_term: f64,
    /// `(1 + (y0 + 7) C_v / R ((2 beta - 1) eta R^(2 beta - 1) + 1/t_N)^(1/(2 beta - 1))) Phi^(R)_{t_n - t_N}`.
    pub consolidated: f64,
}

/// Upper bound on the indicator-weighted mean excess `E[1_B (F(X_n) - F*)]`.
pub fn bound_curve(tp: &TheoryParams, clock: &NaturalTime, ns: &[u64]) -> Result<Vec<BoundPoint>> {
    let e = 2.0 * tp.beta - 1.0;
    let t_start = clock.at(tp.n_start);
    let prefactor = 1.0
        + (tp.y0 + 7.0) * tp.c_v / tp.r
            * (e * tp.eta * tp.r.powf(e) + 1.0 / t_start).powf(1.0 / e);
    ns.iter()
        .map(|&n| {
            if n < tp.n_start {
                return Err(Error::param(format!(
                    "bound requested at n = {n} before the start index N = {}",
                    tp.n_start
                )));
            }
            let t = clock.at(n);
            let flow = comparison_flow(tp.r, tp.beta, tp.eta, t - t_start)?;
            let v = decay_sequence(tp.c_v, tp.beta, t);
            Ok(BoundPoint {
                n,
                two_term: flow + (tp.y0 + 7.0) * v,
                consolidated: prefactor * flow,
            })
        })
        .collect()
}

/// Sides of the start requirement
/// `R + (y0 + 7) v_N <= ((1 - delta') 2 beta C_L^2 gamma_{N+1})^(-1/(2 beta - 1))`.
pub fn start_condition(tp: &TheoryParams, clock: &NaturalTime) -> (f64, f64) {
    let n = tp.n_start;
    let v = decay_sequence(tp.c_v, tp.beta, clock.at(n));
    let gamma_next = clock.schedule().gamma_at(n + 1);
    let lhs = tp.r + (tp.y0 + 7.0) * v;
    let rhs = ((1.0 - tp.delta_prime) * 2.0 * tp.beta * tp.c_l * tp.c_l * gamma_next)
        .powf(-1.0 / (2.0 * tp.beta - 1.0));
    (lhs, rhs)
}

/// Norms of the gradient on the region `U` (and its `2 delta` enlargement),
/// supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionNorms {
    pub sup_f: f64,
    pub lip_f: f64,
}

/// Evaluates the step-wise assumptions of the comparison estimate over
/// `N < n <= n_end`; each clause reports the sides at its worst index.
pub fn check_comparison_assumptions(
    tp: &TheoryParams,
    clock: &NaturalTime,
    ns: &NoiseSpec,
    norms: RegionNorms,
    n_end: u64,
) -> ConditionReport {
    let group = "comparison";
    let mut r = ConditionReport::new("comparison");
    let sched = clock.schedule();
    let (sup, lip, q) = (norms.sup_f, norms.lip_f, ns.q);
    let c1 = sup.powf(q) + (2.0 * lip).powf(q / 2.0);
    // (name, lhs, rhs) at the index with the smallest rhs - lhs margin
    let mut worst: Vec<(&str, f64, f64, f64)> = Vec::new();
    let mut track = |name: &'static str, lhs: f64, rhs: f64| {
        let margin = rhs - lhs;
        match worst.iter_mut().find(|w| w.0 == name) {
            Some(w) if margin < w.3 => *w = (name, lhs, rhs, margin),
            Some(_) => {}
            None => worst.push((name, lhs, rhs, margin)),
        }
    };
    for n in tp.n_start + 1..=n_end.max(tp.n_start + 1) {
        let gamma = sched.gamma_at(n);
        let gs = gamma * ns.sigma_at(n);
        let t = clock.at(n);
        let t_prev = clock.at(n - 1);
        let v = decay_sequence(tp.c_v, tp.beta, t);
        let v_prev = decay_sequence(tp.c_v, tp.beta, t_prev);
        let w = decay_sequence(tp.c_w, tp.beta, t);
        let w_prev = decay_sequence(tp.c_w, tp.beta, t_prev);
        track(
            "v_ratio",
            v_prev / v - 1.0,
            tp.kappa * gamma * v.powf(2.0 * tp.beta - 1.0),
        );
        track(
            "moment_drift",
            (sup / tp.delta + 2.0 * lip) * gs * gs + c1 * w.powf(-(q - 1.0)) * gs.powf(q),
            gamma * v.powf(2.0 * tp.beta),
        );
        track("w_halving", 0.5 * w_prev, w);
        track("w_below_v", w, v.min(1.0));
        track(
            "w_covers_step",
            (gamma + 2.0 * lip * gamma * gamma) * sup * sup,
            w,
        );
        track("step_contraction", 2.0 * gamma * lip, tp.delta_prime);
    }
    for (name, lhs, rhs, _) in worst {
        r.push(Clause::compare(name, group, lhs, Relation::Le, rhs));
    }
    let (lhs, rhs) = start_condition(tp, clock);
    r.push(Clause::compare("start", group, lhs, Relation::Le, rhs));
    r.note("master_feasible", tp.master_feasible());
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule_noise::NoiseFamily;
    use approx::assert_relative_eq;

    fn harmonic() -> StepSchedule {
        StepSchedule::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn flow_examples() {
        assert_eq!(comparison_flow(2.5, 0.7, 3.0, 0.0).unwrap(), 2.5);
        assert_relative_eq!(comparison_flow(1.0, 0.75, 1.0, 2.0).unwrap(), 0.25, max_relative = 1e-14);
        // Phi' = -eta Phi^(2 beta)
        let h = 1e-5;
        let d = (comparison_flow(1.0, 0.75, 1.0, 1.0 + h).unwrap()
            - comparison_flow(1.0, 0.75, 1.0, 1.0 - h).unwrap())
            / (2.0 * h);
        let rhs = -comparison_flow(1.0, 0.75, 1.0, 1.0).unwrap().powf(1.5);
        assert!((d - rhs).abs() < 1e-6);
    }

    #[test]
    fn flow_rejects_bad_parameters() {
        assert!(comparison_flow(1.0, 0.5, 1.0, 1.0).is_err());
        assert!(comparison_flow(1.0, 0.75, 0.0, 1.0).is_err());
        assert!(comparison_flow(1.0, 0.75, 1.0, -1.0).is_err());
    }

    #[test]
    fn master_g_examples() {
        let eq = |kappa: f64| MasterEquation {
            beta: 0.75,
            c_l: 1.0,
            delta_prime: 0.0,
            kappa,
        };
        assert_eq!(eq(1.0).g(0.0), 1.0);
        assert_relative_eq!(eq(1.0).g(1.0), 1.0);
        assert_relative_eq!(eq(0.0).g(16.0), -63.0, max_relative = 1e-14);
    }

    #[test]
    fn master_solution_feasible_for_pure_contraction() {
        let eq = MasterEquation {
            beta: 0.75,
            c_l: 1.0,
            delta_prime: 0.0,
            kappa: 0.0,
        };
        let sol = solve_master_equation(&eq, 1.0).unwrap();
        assert!(sol.eta > 0.0);
        // g(y0) <= -2 needs y0 >= 3^(2/3)
        assert!(sol.y0 >= 3f64.powf(2.0 / 3.0) - 1e-12);
        assert!(sol.y0 <= 3.0);
    }

    #[test]
    fn master_solution_infeasible_for_huge_kappa() {
        let eq = MasterEquation {
            beta: 0.51,
            c_l: 1.0,
            delta_prime: 0.0,
            kappa: 1e9,
        };
        assert!(matches!(solve_master_equation(&eq, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn vw_examples() {
        let tp = params();
        let (v, w) = vw_sequences(&TheoryParams { c_v: 1.0, c_w: 1.0, ..tp }, &harmonic(), 3).unwrap();
        assert_relative_eq!(v, (11.0f64 / 6.0).powi(-2), max_relative = 1e-13);
        assert!((v - 0.297521).abs() < 1e-6);
        assert_eq!(v, w);
        let mut prev = f64::INFINITY;
        for n in 1..50 {
            let (v, _) = vw_sequences(&tp, &harmonic(), n).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn phi_tailbound_properties() {
        assert!(phi_tailbound(20.0) < phi_tailbound(10.0));
        assert!(phi_tailbound(1e6) <= 1e-4);
        assert_eq!(phi_tailbound(0.0), f64::INFINITY);
    }

    #[test]
    fn dropout_bound_example() {
        let sched = harmonic();
        let ns = NoiseSpec::new(1.0, 0.0, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        let b = dropout_prob_bound(10, 1.0, 0.5, &sched, &ns, 1.0).unwrap();
        assert_relative_eq!(b.phi_argument, 5.5, max_relative = 1e-12);
        assert_relative_eq!(b.first_term, phi_tailbound(5.5));
        assert!((b.second_term - 0.190332).abs() < 1e-5, "{}", b.second_term);
    }

    #[test]
    fn dropout_bound_vanishes_for_large_threshold() {
        let sched = harmonic();
        let ns = NoiseSpec::new(1.0, 0.0, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        let b = dropout_prob_bound(10, 1e9, 0.5, &sched, &ns, 1.0).unwrap();
        assert!(b.total < 1e-6);
    }

    #[test]
    fn dropout_bound_hypothesis_errors() {
        let ns = NoiseSpec::new(1.0, 0.0, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        // 2 * 1 * gamma_11 = 2/11 > 0.1
        assert!(matches!(
            dropout_prob_bound(10, 1.0, 0.1, &harmonic(), &ns, 1.0),
            Err(Error::Hypothesis(_))
        ));
        // gamma = 0.5, sigma = 0: sum l^-1 diverges
        let slow = StepSchedule::new(1.0, 0.5).unwrap();
        assert!(matches!(
            dropout_prob_bound(1000, 1.0, 0.5, &slow, &ns, 1.0),
            Err(Error::Hypothesis(_))
        ));
        // gamma sigma^2 increasing
        let loud = NoiseSpec::new(1.0, 0.6, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        assert!(dropout_prob_bound(10, 1.0, 0.5, &StepSchedule::new(0.01, 1.0).unwrap(), &loud, 1.0).is_err());
    }

    #[test]
    fn theorem1_examples() {
        let sched = StepSchedule::new(1.0, 1.0).unwrap();
        let ns = NoiseSpec::new(1.0, -0.25, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        let r = check_theorem1(1.0, 1.0, &sched, &ns).unwrap();
        let c = r.clause("noise_summability").unwrap();
        assert_relative_eq!(c.lhs, -2.5);
        assert_eq!(c.status, ClauseStatus::Pass);
        assert_eq!(r.clause("holder_summability").unwrap().status, ClauseStatus::NotApplicable);
        assert!(r.overall());

        let sched = StepSchedule::new(1.0, 0.5).unwrap();
        let ns = NoiseSpec::new(1.0, 0.0, 2.0, NoiseFamily::Gaussian, 1).unwrap();
        let r = check_theorem1(1.0, 1.0, &sched, &ns).unwrap();
        assert_eq!(r.clause("noise_summability").unwrap().status, ClauseStatus::Boundary);
        assert!(!r.overall());

        assert!(check_theorem1(0.5, 0.4, &sched, &ns).is_err());
    }

    #[test]
    fn theorem2_examples() {
        assert_eq!(check_theorem2(1.0, 0.0, 2.0).verdict(), Verdict::Pass);
        let r = check_theorem2(0.6, 0.0, 2.0);
        assert!(r.failed().contains(&"rate_clause"));
        assert_eq!(r.verdict(), Verdict::Fail);
        let r = check_theorem2(0.8, 0.0, 2.0);
        assert!(r.overall());
        assert_relative_eq!(r.clause("q_clause").unwrap().lhs, 1.0 / 0.6, max_relative = 1e-14);
    }

    #[test]
    fn rate_condition_examples() {
        for beta in [0.55, 0.75, 0.95] {
            let r = check_rate_conditions(1.0, 0.0, 2.0, beta);
            assert!(r.overall());
            assert!(r.clause("sigma_below_half").is_some());
        }
        let r = check_rate_conditions(0.9, 0.0, 4.0, 0.9);
        assert_relative_eq!(r.clause("a_prime").unwrap().rhs, 0.675, max_relative = 1e-12);
        assert_relative_eq!(r.clause("b_prime").unwrap().rhs, 0.525, max_relative = 1e-12);
        assert!(r.overall());
        let r = check_rate_conditions(0.6, 0.0, 2.0, 0.55);
        assert_eq!(r.clause("c_prime").unwrap().status, ClauseStatus::Fail);
        assert_relative_eq!(r.clause("c_prime").unwrap().rhs, 1.0 / 1.1);
    }

    #[test]
    fn prop_assu_examples() {
        let r = check_prop_assu(1.0, 0.0, 2.0);
        assert_eq!(r.verdict(), Verdict::Pass);
        let (lo, hi) = admissible_beta_interval(1.0, 0.0, 2.0).unwrap();
        assert!(lo < 0.51 && hi > 0.99);

        let r = check_prop_assu(0.7, 0.2, 3.0);
        assert_eq!(r.clause("three_gamma").unwrap().status, ClauseStatus::Fail);
        assert_eq!(r.verdict(), Verdict::Fail);

        let r = check_prop_assu(0.9, 0.0, 1.5);
        assert_eq!(r.clause("q_clause").unwrap().status, ClauseStatus::Pass);
        assert_eq!(r.clause("q_at_least_two").unwrap().status, ClauseStatus::Fail);
        assert_eq!(r.verdict(), Verdict::Mixed);
    }

    #[test]
    fn beta_interval_matches_closed_form() {
        // gamma = 0.8, sigma = 0, q = 2: (b') needs beta >= 5/6, (c') beta >= 5/8
        let (lo, hi) = admissible_beta_interval(0.8, 0.0, 2.0).unwrap();
        assert!((lo - 5.0 / 6.0).abs() < 1e-9, "{lo}");
        assert!(hi > 0.999);
    }

    #[test]
    fn report_serialization_is_deterministic() {
        let r = check_theorem2(0.8, 0.0, 2.0);
        let kv = r.to_kv();
        assert_eq!(kv, r.to_kv());
        assert!(kv.contains("theorem2.rate_clause.status=pass\n"));
        assert!(kv.ends_with("theorem2.verdict=pass\n"));
    }

    fn params() -> TheoryParams {
        TheoryParams {
            beta: 0.75,
            c_l: 4.0,
            delta: 1.0,
            delta_prime: 0.5,
            kappa: 2.0,
            c_v: 1.0,
            c_w: 0.5,
            y0: 2.0,
            eta: 1.0,
            r: 0.5,
            n_start: 5,
            s: 1.0,
        }
    }

    #[test]
    fn bound_curve_examples() {
        let tp = params();
        let clock = NaturalTime::new(StepSchedule::new(0.5, 0.8).unwrap(), 2000);
        let ns: Vec<u64> = (5..2000).step_by(7).collect();
        let curve = bound_curve(&tp, &clock, &ns).unwrap();
        let v_start = decay_sequence(tp.c_v, tp.beta, clock.at(5));
        assert_relative_eq!(curve[0].two_term, tp.r + (tp.y0 + 7.0) * v_start, max_relative = 1e-14);
        for w in curve.windows(2) {
            assert!(w[1].two_term < w[0].two_term);
        }
        for p in &curve {
            assert!(p.consolidated >= p.two_term * (1.0 - 1e-12));
        }
        assert!(bound_curve(&tp, &clock, &[4]).is_err());
    }

    #[test]
    fn sup_ratio_is_first_ratio() {
        let clock = NaturalTime::new(StepSchedule::new(0.5, 0.8).unwrap(), 5000);
        let s = sup_ratio(0.75, &clock, 10).unwrap();
        assert_relative_eq!(s, (clock.at(11) / clock.at(10)).powf(3.0), max_relative = 1e-14);
        assert!(s > 1.0);
    }

    #[test]
    fn min_kappa_satisfies_ratio_condition() {
        let clock = NaturalTime::new(StepSchedule::new(0.5, 0.8).unwrap(), 5000);
        let kappa = min_kappa(1.0, 0.75, &clock, 10, 5000);
        let tp = TheoryParams { kappa, n_start: 10, ..params() };
        let ns = NoiseSpec::silent(1);
        let report = check_comparison_assumptions(
            &tp,
            &clock,
            &ns,
            RegionNorms { sup_f: 0.0, lip_f: 0.0 },
            5000,
        );
        assert!(report.clause("v_ratio").unwrap().status.holds());
    }
}
