//! Step-size and momentum schedules and the theorem-regime constraint check.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::problems::ProblemConstants;

/// How the tracker momenta evolve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MomentumRule {
    /// `α_{t+1} = c1 η_t²`, `β_{t+1} = c2 η_t²`, `ϱ_{t+1} = c3 η_t²`.
    Theorem,
    /// Fixed momenta for every step; `(1, 1, 1)` disables variance reduction.
    Constant { alpha: f64, beta: f64, varrho: f64 },
}

/// Decay `ϑ_t` of the adaptive-matrix accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRule {
    /// `ϑ_t = theta` for all `t`.
    Fixed,
    /// `ϑ_t = α_{t+1}`.
    TiedToAlpha,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub k: f64,
    pub n: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gamma: f64,
    pub rho: f64,
    /// Synchronization period.
    pub q: u64,
    /// Horizon `T`.
    pub horizon: u64,
    pub theta: f64,
    pub theta_rule: ThetaRule,
    pub momentum: MomentumRule,
    /// Inner learning rate of the MAML instance; not used by the schedule.
    pub inner_lr: Option<f64>,
    /// Explicit `B`; `None` means its own lower-bound expression.
    pub b: Option<f64>,
}

impl ScheduleParams {
    /// Parameters with `ϑ = 0.99`, fixed decay and theorem momenta.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k: f64,
        n: f64,
        c1: f64,
        c2: f64,
        c3: f64,
        gamma: f64,
        rho: f64,
        q: u64,
        horizon: u64,
    ) -> Result<Self> {
        let params = Self {
            k,
            n,
            c1,
            c2,
            c3,
            gamma,
            rho,
            q,
            horizon,
            theta: 0.99,
            theta_rule: ThetaRule::Fixed,
            momentum: MomentumRule::Theorem,
            inner_lr: None,
            b: None,
        };
        params.check()?;
        Ok(params)
    }

    /// Range checks that every schedule must pass. `n ≥ 2` belongs to the
    /// theorem regime and is reported by [`validate`] instead.
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("n", self.n),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("gamma", self.gamma),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.q == 0 || self.horizon == 0 {
            return Err(config_err("q and T must be at least 1"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(config_err(format!("theta must lie in (0,1), got {}", self.theta)));
        }
        if let MomentumRule::Constant { alpha, beta, varrho } = self.momentum {
            for (name, v) in [("alpha", alpha), ("beta", beta), ("varrho", varrho)] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(config_err(format!("{name} must lie in (0,1], got {v}")));
                }
            }
        }
        if let Some(lr) = self.inner_lr {
            if !(lr > 0.0) {
                return Err(config_err("inner_lr must be positive"));
            }
        }
        Ok(())
    }

    /// Smallest admissible momentum constants for `(k, γ, ρ, q)`, with `n` at
    /// its minimum. `c2` and `c3` sit on their lower bounds and `c1` is the
    /// smaller root of `c1 = 2/(3k³) + B_lower(c1)`. The result still has to
    /// pass [`validate`]: `γ` may lie outside its window.
    #[allow(clippy::too_many_arguments)]
    pub fn theorem_tuned(
        pc: &ProblemConstants,
        k: f64,
        gamma: f64,
        rho: f64,
        q: u64,
        horizon: u64,
    ) -> Result<Self> {
        let base = 2.0 / (3.0 * k * k * k);
        let c2 = base + 5.0 * pc.c_f.powi(2);
        let c3 = base + 5.0 * pc.c_g.powi(2);
        let mut params = Self::new(k, 2.0, 1.0, c2, c3, gamma, rho, q, horizon)?;
        // B_lower is affine in c1²: B_lower(c1) = b0 + kappa c1².
        let b_one = TheoremConstants::compute(&params, pc).b_lower;
        params.c1 = 0.0;
        let b0 = TheoremConstants::compute(&params, pc).b_lower;
        let kappa = b_one - b0;
        let s = base + b0;
        let c1 = if kappa <= 0.0 {
            s
        } else {
            let disc = 1.0 - 4.0 * kappa * s;
            if disc < 0.0 {
                return Err(config_err(format!(
                    "no c1 satisfies c1 >= 2/(3k^3) + B at gamma = {gamma}"
                )));
            }
            2.0 * s / (1.0 + disc.sqrt())
        };
        params.c1 = c1 * (1.0 + 1e-12);
        params.n = params.min_n(pc) * (1.0 + 1e-12);
        Ok(params)
    }

    /// Smallest `n` satisfying every lower bound on `n` of the theorem regime
    /// for these `(k, c1, c2, c3, γ, ρ, q)` and the given constants.
    pub fn min_n(&self, pc: &ProblemConstants) -> f64 {
        let tc = TheoremConstants::compute(self, pc);
        let cube = |v: f64| v * v * v;
        [
            2.0,
            cube(self.k),
            cube(self.c1 * self.k),
            cube(self.c2 * self.k),
            cube(self.c3 * self.k),
            cube(24.0 * self.k * self.gamma * self.q as f64 * tc.l_fg * tc.c_fg) / cube(self.rho),
            cube(2.0 * tc.l * self.k * self.gamma / self.rho),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `η_t = k / (n + t)^{1/3}`
pub fn eta(params: &ScheduleParams, t: u64) -> f64 {
    params.k / (params.n + t as f64).cbrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Momenta {
    pub alpha: f64,
    pub beta: f64,
    pub varrho: f64,
    /// At least one raw value exceeded 1 and was clamped.
    pub clamped: bool,
}

/// Momenta `(α_{t+1}, β_{t+1}, ϱ_{t+1})` used for the tracker update that
/// follows iteration `t`, clamped to `(0, 1]`.
pub fn momenta(params: &ScheduleParams, t: u64) -> Momenta {
    let m = momenta_quiet(params, t);
    if m.clamped {
        log::warn!("momenta clamped to 1 at t={t}");
    }
    m
}

/// [`momenta`] without the clamp warning, for callers that report clamping
/// themselves.
pub fn momenta_quiet(params: &ScheduleParams, t: u64) -> Momenta {
    let (a, b, r) = match params.momentum {
        MomentumRule::Theorem => {
            let e2 = eta(params, t).powi(2);
            (params.c1 * e2, params.c2 * e2, params.c3 * e2)
        }
        MomentumRule::Constant { alpha, beta, varrho } => (alpha, beta, varrho),
    };
    let clamped = a > 1.0 || b > 1.0 || r > 1.0;
    let clamp = |v: f64| v.clamp(f64::MIN_POSITIVE, 1.0);
    Momenta { alpha: clamp(a), beta: clamp(b), varrho: clamp(r), clamped }
}

/// `ϑ_t` for the adaptive-matrix refresh at iteration `t`.
pub fn theta_at(params: &ScheduleParams, t: u64) -> f64 {
    match params.theta_rule {
        ThetaRule::Fixed => params.theta,
        // α = 1 would freeze the accumulator; keep ϑ strictly inside (0,1).
        ThetaRule::TiedToAlpha => momenta_quiet(params, t).alpha.min(1.0 - 1e-12),
    }
}

/// Derived constants of the theorem regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    /// `C_fg = √max(C_f², C_g²)`
    pub c_fg: f64,
    /// `L_fg = √(L_f²C_g² + L_g²)`
    pub l_fg: f64,
    /// Smoothness constant `√(2C_f²L_g² + 2C_g⁴L_f²)`.
    pub l: f64,
    /// `B` in effect (explicit or its lower-bound expression).
    pub b: f64,
    /// Lower-bound expression for `B`.
    pub b_lower: f64,
    #[serde(rename = "Theta")]
    pub theta_big: f64,
    pub delta_hat_sq: f64,
}

impl TheoremConstants {
    pub fn compute(params: &ScheduleParams, pc: &ProblemConstants) -> Self {
        let (c1, c2, c3) = (params.c1, params.c2, params.c3);
        let (g, rho, q) = (params.gamma, params.rho, params.q as f64);
        let c_fg = pc.c_f.max(pc.c_g);
        let l_fg = (pc.l_f.powi(2) * pc.c_g.powi(2) + pc.l_g.powi(2)).sqrt();
        let l = pc.smoothness();
        let lc = l_fg * c_fg;
        let curvature = pc.c_g.powi(2) + pc.l_g.powi(2) + 2.0 * pc.l_f.powi(2) * pc.c_g.powi(2);
        let cgl = pc.c_g.powi(2) * pc.l_f.powi(2);

        let theta_big = (5.0 * pc.c_f.powi(2) * pc.l_g.powi(2)
            + c2 * c2 * cgl / (864.0 * q.powi(3) * g.powi(3) * lc.powi(3)))
            * rho.powi(2)
            / (576.0 * lc.powi(2))
            + g * rho / (6.0 * q * lc) * curvature;
        let b_lower = 20.0 * cgl
            + c2 * c2 * cgl / (216.0 * q.powi(3) * g.powi(3) * lc.powi(3))
            + theta_big * rho.powi(2) * (c1 * c1 + c3 * c3)
                / (30.0 * q.powi(2) * g.powi(4) * lc.powi(2) * pc.c_g.powi(2));
        let s2 = pc.sigma.powi(2);
        let delta_hat_sq = 2.0 * c1 * c1 * pc.l_f.powi(2) * s2
            + c3 * c3 * s2
            + 4.0 * c3 * c3 * pc.delta_f.powi(2)
            + 4.0 * c3 * c3 * pc.l_f.powi(2) * pc.delta_g.powi(2)
            + c2 * c2 * s2
            + 3.0 * c2 * c2 * pc.delta_g.powi(2);

        Self {
            c_fg,
            l_fg,
            l,
            b: params.b.unwrap_or(b_lower),
            b_lower,
            theta_big,
            delta_hat_sq,
        }
    }

    /// `G` for a run started at objective gap `F(x̄_1) − F*`.
    pub fn g(&self, params: &ScheduleParams, pc: &ProblemConstants, initial_gap: f64) -> f64 {
        let (k, g, rho, q, n) =
            (params.k, params.gamma, params.rho, params.q as f64, params.n);
        let s2 = pc.sigma.powi(2);
        let csum = params.c1.powi(2) + params.c2.powi(2) + params.c3.powi(2);
        let log_term = (n + params.horizon as f64).ln();
        4.0 * initial_gap / (k * rho * g)
            + 12.0 * n.cbrt() * s2 / (q * k * k * rho * rho)
            + 4.0
                * k
                * k
                * (self.delta_hat_sq / (4.0 * g * g * self.l_fg.powi(2))
                    + csum * s2 / (3.0 * rho * g * q * self.l_fg * self.c_fg))
                * log_term
    }
}

/// One evaluated inequality of the theorem regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub id: String,
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// The inequality in closed form.
    pub quote: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
    pub constants: TheoremConstants,
}

impl ValidationReport {
    pub fn violations(&self) -> Vec<&ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied).collect()
    }

    pub fn all_satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn find(&self, id: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// JSON array of `{id, satisfied, lhs, rhs, quote}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.checks).expect("report serializes")
    }
}

fn check(id: &str, lhs: f64, rhs: f64, ge: bool, quote: &str) -> ConstraintCheck {
    let satisfied = if ge { lhs >= rhs } else { lhs <= rhs };
    ConstraintCheck { id: id.to_string(), satisfied, lhs, rhs, quote: quote.to_string() }
}

/// Evaluate every inequality of the theorem regime. `params` is never
/// modified; infeasible settings are reported, not repaired.
pub fn validate(
    params: &ScheduleParams,
    constants: Option<&ProblemConstants>,
) -> Result<ValidationReport> {
    let pc = constants.ok_or_else(|| config_err("constants unavailable"))?;
    let tc = TheoremConstants::compute(params, pc);
    let (k, n, c1, c2, c3) = (params.k, params.n, params.c1, params.c2, params.c3);
    let (g, rho, q) = (params.gamma, params.rho, params.q as f64);
    let lc = tc.l_fg * tc.c_fg;
    let cube = |v: f64| v * v * v;
    let base = 2.0 / (3.0 * cube(k));
    let curvature = pc.c_g.powi(2) + pc.l_g.powi(2) + 2.0 * pc.l_f.powi(2) * pc.c_g.powi(2);

    let gamma_lo = rho * (c1 * c1 + c3 * c3).powf(0.25) / (12.0 * (5.0 * q).sqrt() * lc);
    let gamma_hi = (3.0 * rho * q * lc / (4.0 * curvature)).min(n.cbrt() * rho / (2.0 * tc.l * k));
    let cg_term = tc.b * pc.c_g.powi(2) * rho * rho / (576.0 * lc * lc);

    let checks = vec![
        check("n ≥ 2", n, 2.0, true, "n ≥ 2"),
        check("n ≥ k³", n, cube(k), true, "n ≥ k³"),
        check("n ≥ (c1·k)³", n, cube(c1 * k), true, "n ≥ (c1 k)³"),
        check("n ≥ (c2·k)³", n, cube(c2 * k), true, "n ≥ (c2 k)³"),
        check("n ≥ (c3·k)³", n, cube(c3 * k), true, "n ≥ (c3 k)³"),
        check(
            "n ≥ (24kγqL_fgC_fg)³/ρ³",
            n,
            cube(24.0 * k * g * q * lc) / cube(rho),
            true,
            "n ≥ (24 k γ q L_fg C_fg)³ / ρ³",
        ),
        check("c1 ≥ 2/(3k³) + B", c1, base + tc.b, true, "c1 ≥ 2/(3k³) + B"),
        check(
            "c2 ≥ 2/(3k³) + 5C_f²",
            c2,
            base + 5.0 * pc.c_f.powi(2),
            true,
            "c2 ≥ 2/(3k³) + 5 C_f²",
        ),
        check(
            "c3 ≥ 2/(3k³) + 5C_g²",
            c3,
            base + 5.0 * pc.c_g.powi(2),
            true,
            "c3 ≥ 2/(3k³) + 5 C_g²",
        ),
        check(
            "c1² + c2² ≤ 24⁴q²γ⁴L_fg⁴C_fg⁴/(9ρ⁴)",
            c1 * c1 + c2 * c2,
            24f64.powi(4) * q * q * g.powi(4) * lc.powi(4) / (9.0 * rho.powi(4)),
            false,
            "c1² + c2² ≤ 24⁴ q² γ⁴ L_fg⁴ C_fg⁴ / (9 ρ⁴)",
        ),
        check(
            "γ ≥ ρ(c1²+c3²)^{1/4}/(12√(5q)L_fgC_fg)",
            g,
            gamma_lo,
            true,
            "γ ≥ ρ (c1² + c3²)^{1/4} / (12 √(5q) L_fg C_fg)",
        ),
        check(
            "γ ≤ min(…)",
            g,
            gamma_hi,
            false,
            "γ ≤ min(3ρ q L_fg C_fg / (4(C_g² + L_g² + 2L_f²C_g²)), n^{1/3} ρ / (2 L k))",
        ),
        check("γ window nonempty", gamma_lo, gamma_hi, false, "lower γ endpoint ≤ upper γ endpoint"),
        check(
            "B ≥ lower bound",
            tc.b,
            tc.b_lower,
            true,
            "B ≥ 20C_g²L_f² + c2²C_g²L_f²/(216q³γ³L_fg³C_fg³) + Θρ²(c1²+c3²)/(30q²γ⁴C_fg²L_fg²C_g²)",
        ),
        check(
            "Θ + BC_g²ρ²/(24²L_fg²C_fg²) ≤ 5ρ²/48",
            tc.theta_big + cg_term,
            5.0 * rho * rho / 48.0,
            false,
            "Θ + B C_g² ρ² / (24² L_fg² C_fg²) ≤ 5ρ²/48",
        ),
    ];
    Ok(ValidationReport { checks, constants: tc })
}

/// `√(2G) n^{1/6} / T^{1/2} + √(2G) / T^{1/3}`
pub fn theorem_bound(g: f64, n: f64, horizon: f64) -> f64 {
    let s = (2.0 * g).sqrt();
    s * n.powf(1.0 / 6.0) / horizon.sqrt() + s / horizon.cbrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: f64, n: f64, c: f64) -> ScheduleParams {
        ScheduleParams::new(k, n, c, c, c, 0.1, 1.0, 1, 10).unwrap()
    }

    fn unit_constants() -> ProblemConstants {
        ProblemConstants {
            c_f: 1.0,
            c_g: 1.0,
            l_f: 1.0,
            l_g: 1.0,
            sigma: 0.0,
            delta_f: 0.0,
            delta_g: 0.0,
            f_star: None,
        }
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta(&params(1.0, 8.0, 1.0), 0), 0.5);
        assert!((eta(&params(2.0, 27.0, 1.0), 0) - 2.0 / 3.0).abs() < 1e-15);
        let p = params(1.0, 8.0, 1.0);
        let mut prev = eta(&p, 0);
        for t in [1u64, 10, 1000, 1_000_000, 1_000_000_000] {
            let e = eta(&p, t);
            assert!(e > 0.0 && e < prev);
            prev = e;
        }
    }

    #[test]
    fn momenta_examples() {
        let m = momenta(&params(1.0, 8.0, 1.0), 0);
        assert_eq!((m.alpha, m.beta, m.varrho, m.clamped), (0.25, 0.25, 0.25, false));
        let mut p = params(1.0, 8.0, 1.0);
        p.c1 = 100.0;
        let m = momenta(&p, 0);
        assert_eq!(m.alpha, 1.0);
        assert!(m.clamped);
    }

    #[test]
    fn no_clamping_when_n_dominates() {
        let c = 3.0;
        let p = params(1.0, 27.0, c);
        for t in 0..=1000 {
            assert!(!momenta(&p, t).clamped);
        }
    }

    #[test]
    fn n_below_two_is_reported() {
        let p = params(1.0, 1.0, 1.0);
        let report = validate(&p, Some(&unit_constants())).unwrap();
        let v = report.find("n ≥ 2").unwrap();
        assert!(!v.satisfied);
        assert_eq!((v.lhs, v.rhs), (1.0, 2.0));
    }

    #[test]
    fn missing_constants_is_an_error() {
        let err = validate(&params(1.0, 8.0, 1.0), None).unwrap_err();
        assert!(err.to_string().contains("constants unavailable"));
    }

    #[test]
    fn smoothness_matches_formula() {
        let tc = TheoremConstants::compute(&params(1.0, 8.0, 1.0), &unit_constants());
        assert_eq!(tc.l, 2.0);
        let pc = ProblemConstants { c_f: 2.0, c_g: 3.0, l_f: 0.5, l_g: 1.5, ..unit_constants() };
        let tc = TheoremConstants::compute(&params(1.0, 8.0, 1.0), &pc);
        let by_hand = (2.0 * 4.0 * 2.25 + 2.0 * 81.0 * 0.25f64).sqrt();
        assert_eq!(tc.l, by_hand);
    }

    #[test]
    fn validate_is_pure() {
        let p = params(1.0, 8.0, 1.0);
        let a = validate(&p, Some(&unit_constants())).unwrap();
        let b = validate(&p, Some(&unit_constants())).unwrap();
        assert_eq!(a, b);
        assert_eq!(p, params(1.0, 8.0, 1.0));
    }

    #[test]
    fn bound_examples() {
        assert_eq!(theorem_bound(0.0, 8.0, 10.0), 0.0);
        assert_eq!(theorem_bound(2.0, 1.0, 1.0), 4.0);
        assert!(theorem_bound(3.0, 8.0, 200.0) < theorem_bound(3.0, 8.0, 100.0));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(ScheduleParams::new(0.0, 8.0, 1.0, 1.0, 1.0, 0.1, 1.0, 1, 10).is_err());
        assert!(ScheduleParams::new(1.0, 8.0, 1.0, 1.0, 1.0, 0.1, 1.0, 0, 10).is_err());
        let mut p = params(1.0, 8.0, 1.0);
        p.theta = 1.0;
        assert!(p.check().is_err());
    }
}
