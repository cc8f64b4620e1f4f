//! Independent numerical checks: finite-difference gradients, the estimator
//! error inequality, smoothness and assumption audits, and rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::estimator::TrackerState;
use crate::fedsim::RunRecord;
use crate::numerics::{fro_norm, RngStream, Vector};
use crate::problems::{chain_rule_grad, measure_heterogeneity, CompositionProblem};

/// Default central-difference step `1e-5 (1 + ‖x‖∞)`.
pub fn default_fd_step(x: &Vector) -> f64 {
    1e-5 * (1.0 + x.max_abs())
}

/// Central differences of `F` along each coordinate.
pub fn finite_diff_grad<P: CompositionProblem + ?Sized>(problem: &P, x: &Vector, h: f64) -> Vector {
    let mut out = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + h;
        let up = problem.objective(&probe);
        probe[i] = xi - h;
        let down = problem.objective(&probe);
        probe[i] = xi;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `‖a − b‖ / ‖b‖`, with the denominator floored at `1e-12`.
pub fn rel_err(a: &Vector, b: &Vector) -> f64 {
    a.sub(b).norm() / b.norm().max(1e-12)
}

/// Largest relative error between the closed-form gradient and central
/// differences over `n_points` uniform box points.
pub fn gradcheck<P: CompositionProblem + ?Sized>(
    problem: &P,
    n_points: usize,
    rng: &mut RngStream,
) -> f64 {
    let d = problem.dims().d;
    let r = problem.box_radius();
    (0..n_points)
        .map(|_| {
            let x = rng.box_point(d, r);
            rel_err(&finite_diff_grad(problem, &x, default_fd_step(&x)), &problem.exact_grad_F(&x))
        })
        .fold(0.0, f64::max)
}

/// `(x̄_t − x̄_{t+1}) / (η_t γ)`
#[derive(Clone, Debug, PartialEq)]
pub struct GradMapping {
    pub d_bar: Vector,
}

impl GradMapping {
    pub fn new(x_t: &Vector, x_next: &Vector, eta_t: f64, gamma: f64) -> Self {
        Self { d_bar: x_t.sub(x_next).scaled(1.0 / (eta_t * gamma)) }
    }
}

/// Constants entering the estimator-error bound: the outer-tracker radius
/// `C_f`, the Jacobian bound `C_g` and the outer smoothness `L_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Bounds {
    pub c_f: f64,
    pub c_g: f64,
    pub l_f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Check {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `lhs = ‖w̄ − ∇F(x̄)‖²` against
/// `rhs = (1/M) Σ [2C_f²‖u−∇g(x̄)‖² + 4C_g²‖v−∇f(h)‖² + 4C_g²L_f²‖h−g(x̄)‖²]`.
///
/// `ok` allows a relative slack of `1e-9` plus a rounding floor of
/// `(4ε C_f C_g)²`, the size of one ulp-level error in `w̄`.
pub fn lemma2_gap_check<P: CompositionProblem + ?Sized>(
    problem: &P,
    x_bar: &Vector,
    trackers: &[&TrackerState],
    bounds: Lemma2Bounds,
) -> Lemma2Check {
    let mm = trackers.len() as f64;
    let w_bar = Vector::mean_of(trackers.iter().map(|t| &t.w)).expect("at least one client");
    let lhs = w_bar.sub(&chain_rule_grad(problem, x_bar)).norm_sq();
    let (cf2, cg2, lf2) = (bounds.c_f.powi(2), bounds.c_g.powi(2), bounds.l_f.powi(2));
    let mut rhs = 0.0;
    for (m, tr) in trackers.iter().enumerate() {
        let eu = tr.u.sub(&problem.exact_jac_g(m, x_bar)).norm_sq();
        let ev = tr.v.sub(&problem.exact_grad_f(m, &tr.h)).norm_sq();
        let eh = tr.h.sub(&problem.exact_g(m, x_bar)).norm_sq();
        let mut term = 2.0 * cf2 * eu + 4.0 * cg2 * ev;
        // Skipping exact zeros keeps an unbounded L_f from producing ∞·0.
        if eh > 0.0 {
            term += 4.0 * cg2 * lf2 * eh;
        }
        rhs += term / mm;
    }
    let floor = (4.0 * f64::EPSILON * bounds.c_f * bounds.c_g).powi(2);
    Lemma2Check { lhs, rhs, ok: lhs <= rhs * (1.0 + 1e-9) + floor }
}

/// Largest gradient-difference quotient over `n_pairs` random box pairs.
#[allow(non_snake_case)]
pub fn estimate_L<P: CompositionProblem + ?Sized>(
    problem: &P,
    n_pairs: usize,
    rng: &mut RngStream,
) -> f64 {
    let d = problem.dims().d;
    let r = problem.box_radius();
    let mut worst = 0.0_f64;
    for _ in 0..n_pairs.max(1) {
        let a = rng.box_point(d, r);
        let b = rng.box_point(d, r);
        let dist = a.sub(&b).norm();
        if dist > 0.0 {
            let q = problem.exact_grad_F(&a).sub(&problem.exact_grad_F(&b)).norm() / dist;
            worst = worst.max(q);
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(ln T, ln metric)` pairs used in the fit.
    pub log_points: Vec<(f64, f64)>,
}

impl RateFit {
    /// Two-column CSV `log_T,log_metric`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("log_T,log_metric\n");
        for (x, y) in &self.log_points {
            s.push_str(&format!("{x:.16e},{y:.16e}\n"));
        }
        s
    }
}

/// Least-squares slope of `ln metric` against `ln T`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(config_err(format!("rate fit needs at least 3 horizons, got {}", points.len())));
    }
    if points.iter().any(|&(t, v)| !(t > 0.0) || !(v > 0.0)) {
        return Err(config_err("rate fit needs positive horizons and metrics"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, v)| (t.ln(), v.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(config_err("rate fit needs distinct horizons"));
    }
    let slope = sxy / sxx;
    Ok(RateFit { slope, intercept: my - slope * mx, log_points: logs })
}

/// [`rate_fit`] over runs at different horizons using each run's running
/// average of `‖∇F(x̄_t)‖`.
pub fn rate_fit_records(records: &[RunRecord]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> =
        records.iter().map(|r| (r.horizon as f64, r.mean_grad_norm)).collect();
    rate_fit(&pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub declared: f64,
    pub observed: f64,
    pub pass: bool,
    /// Point attaining the observed value.
    pub witness: Option<Vector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Default)]
struct Worst {
    value: f64,
    witness: Option<Vector>,
}

impl Worst {
    fn offer(&mut self, value: f64, at: &Vector) {
        if value > self.value || self.witness.is_none() {
            self.value = self.value.max(value);
            self.witness = Some(at.clone());
        }
    }
}

/// Draws per probe point for the variance estimates.
const VARIANCE_DRAWS: usize = 200;

/// Sample the box and compare observed bounds, Lipschitz quotients,
/// oracle variances and heterogeneity against the declared constants.
///
/// Variance estimates are empirical means over a finite number of draws, so
/// they pass when within `4√(2/n)` relative sampling slack of `σ²`.
pub fn assumption_audit<P: CompositionProblem + ?Sized>(
    problem: &P,
    n_probes: usize,
    rng: &mut RngStream,
) -> Result<AuditReport> {
    let pc = problem.constants().ok_or_else(|| config_err("constants unavailable"))?.clone();
    let dims = problem.dims();
    let r = problem.box_radius();

    let mut jac = Worst::default();
    let mut grad_f = Worst::default();
    let mut lip_g = Worst::default();
    let mut lip_f = Worst::default();
    let mut var_g = Worst::default();
    let mut var_j = Worst::default();
    let mut var_f = Worst::default();

    for _ in 0..n_probes.max(1) {
        let x = rng.box_point(dims.d, r);
        let x2 = rng.box_point(dims.d, r);
        let dist = x.sub(&x2).norm();
        for m in 0..dims.m {
            let s = problem.draw_inner(m, rng);
            jac.offer(fro_norm(&problem.exact_jac_g(m, &x)), &x);
            jac.offer(fro_norm(&problem.sample_jac_g(m, &x, &s)), &x);
            if dist > 0.0 {
                let dj = problem.exact_jac_g(m, &x).sub(&problem.exact_jac_g(m, &x2));
                lip_g.offer(fro_norm(&dj) / dist, &x);
            }
            for k in 0..dims.m {
                let y = problem.exact_g(k, &x);
                let y2 = problem.exact_g(k, &x2);
                let o = problem.draw_outer(m, rng);
                grad_f.offer(problem.exact_grad_f(m, &y).norm(), &x);
                grad_f.offer(problem.sample_grad_f(m, &y, &o).norm(), &x);
                let dy = y.sub(&y2).norm();
                if dy > 0.0 {
                    let dg = problem.exact_grad_f(m, &y).sub(&problem.exact_grad_f(m, &y2));
                    lip_f.offer(dg.norm() / dy, &x);
                }
            }
        }
    }

    // Variances at a few probe points; each uses many draws.
    let var_points = n_probes.clamp(1, 5);
    for _ in 0..var_points {
        let x = rng.box_point(dims.d, r);
        for m in 0..dims.m {
            let g0 = problem.exact_g(m, &x);
            let j0 = problem.exact_jac_g(m, &x);
            let f0 = problem.exact_grad_f(m, &g0);
            let (mut sg, mut sj, mut sf) = (0.0, 0.0, 0.0);
            for _ in 0..VARIANCE_DRAWS {
                let s = problem.draw_inner(m, rng);
                let o = problem.draw_outer(m, rng);
                sg += problem.sample_g(m, &x, &s).sub(&g0).norm_sq();
                sj += problem.sample_jac_g(m, &x, &s).sub(&j0).norm_sq();
                sf += problem.sample_grad_f(m, &g0, &o).sub(&f0).norm_sq();
            }
            let n = VARIANCE_DRAWS as f64;
            var_g.offer(sg / n, &x);
            var_j.offer(sj / n, &x);
            var_f.offer(sf / n, &x);
        }
    }

    let (het_f, het_g) = measure_heterogeneity(problem, n_probes, rng);
    let tol = |declared: f64| declared * (1.0 + 1e-9) + 1e-12;
    let var_declared = pc.sigma.powi(2);
    let var_tol = var_declared * (1.0 + 4.0 * (2.0 / VARIANCE_DRAWS as f64).sqrt()) + 1e-12;
    let mk = |name: &str, declared: f64, w: Worst, limit: f64| AuditCheck {
        name: name.to_string(),
        declared,
        observed: w.value,
        pass: w.value <= limit,
        witness: w.witness,
    };
    let checks = vec![
        mk("jacobian_bound", pc.c_g, jac, tol(pc.c_g)),
        mk("outer_gradient_bound", pc.c_f, grad_f, tol(pc.c_f)),
        mk("inner_lipschitz", pc.l_g, lip_g, tol(pc.l_g)),
        mk("outer_lipschitz", pc.l_f, lip_f, tol(pc.l_f)),
        mk("inner_value_variance", var_declared, var_g, var_tol),
        mk("jacobian_variance", var_declared, var_j, var_tol),
        mk("outer_gradient_variance", var_declared, var_f, var_tol),
        AuditCheck {
            name: "outer_heterogeneity".into(),
            declared: pc.delta_f,
            observed: het_f,
            pass: het_f <= tol(pc.delta_f),
            witness: None,
        },
        AuditCheck {
            name: "inner_heterogeneity".into(),
            declared: pc.delta_g,
            observed: het_g,
            pass: het_g <= tol(pc.delta_g),
            witness: None,
        },
    ];
    Ok(AuditReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{derive_stream, Matrix, Purpose};
    use crate::problems::{make_quadratic, HeterogeneityProfile, QuadraticClient, QuadraticProblem};

    fn half_norm() -> QuadraticProblem {
        let c = QuadraticClient {
            a: Matrix::identity(2),
            b: Vector::zeros(2),
            q: Matrix::identity(2),
            r: Vector::zeros(2),
        };
        QuadraticProblem::from_clients(2, 2, 0.0, 10.0, vec![c])
    }

    #[test]
    fn finite_differences_on_half_norm() {
        let p = half_norm();
        let g = finite_diff_grad(&p, &Vector::from_vec(vec![1.0, 0.0]), 1e-5);
        assert!((g[0] - 1.0).abs() < 1e-8 && g[1].abs() < 1e-8);
        let g0 = finite_diff_grad(&p, &Vector::zeros(2), 1e-5);
        assert!(g0.norm() <= 1e-7);
    }

    #[test]
    fn gap_check_zero_when_exact() {
        let p = half_norm();
        let x = Vector::from_vec(vec![0.5, -1.5]);
        let h = p.exact_g(0, &x);
        let u = p.exact_jac_g(0, &x);
        let v = p.exact_grad_f(0, &h);
        let w = u.t_mul_vec(&v);
        let tr = TrackerState { h, u, v, w };
        let b = Lemma2Bounds { c_f: 100.0, c_g: 10.0, l_f: 1.0 };
        let c = lemma2_gap_check(&p, &x, &[&tr], b);
        assert_eq!((c.lhs, c.rhs, c.ok), (0.0, 0.0, true));
    }

    #[test]
    fn gap_check_jacobian_perturbation() {
        let p = half_norm();
        let x = Vector::from_vec(vec![0.5, -1.5]);
        let h = p.exact_g(0, &x);
        let v = p.exact_grad_f(0, &h);
        let err = Matrix::from_fn(2, 2, |i, j| 1e3 * (1.0 + i as f64 - 2.0 * j as f64));
        let u = p.exact_jac_g(0, &x).add(&err);
        let w = u.t_mul_vec(&v);
        let tr = TrackerState { h, u, v, w };
        let b = Lemma2Bounds { c_f: 2.0, c_g: 10.0, l_f: 1.0 };
        let c = lemma2_gap_check(&p, &x, &[&tr], b);
        assert!((c.rhs - 2.0 * 4.0 * err.norm_sq()).abs() <= 1e-9 * c.rhs);
        assert!(c.ok && c.lhs <= c.rhs);
    }

    #[test]
    fn smoothness_of_half_norm_is_one() {
        let p = half_norm();
        let mut rng = derive_stream(1, 0, 0, Purpose::Probe);
        let l = estimate_L(&p, 100, &mut rng);
        assert!((l - 1.0).abs() < 1e-12);
        assert!(l <= p.constants().unwrap().smoothness());
    }

    #[test]
    fn synthetic_rate_is_minus_one_third() {
        let pts: Vec<(f64, f64)> =
            [1e3, 1e4, 1e5].iter().map(|&t: &f64| (t, 3.0 * t.powf(-1.0 / 3.0))).collect();
        let fit = rate_fit(&pts).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-6);
        assert!(rate_fit(&pts[..2]).is_err());
    }

    #[test]
    fn audit_passes_and_catches_shrunken_bound() {
        let p = make_quadratic(3, 5, 4, 3, HeterogeneityProfile::new(0.5, 1), 0.0).unwrap();
        let mut rng = derive_stream(2, 0, 0, Purpose::Probe);
        let report = assumption_audit(&p, 50, &mut rng).unwrap();
        assert!(report.all_pass(), "{report:?}");
        assert_eq!(report.get("jacobian_variance").unwrap().observed, 0.0);

        let mut bad = p.clone();
        let mut c = bad.constants.clone().unwrap();
        c.c_g *= 0.5;
        bad.constants = Some(c);
        let report = assumption_audit(&bad, 50, &mut rng).unwrap();
        let check = report.get("jacobian_bound").unwrap();
        assert!(!check.pass && check.witness.is_some());
    }
}
