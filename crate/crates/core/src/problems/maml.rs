//! Task-distributed MAML with quadratic task losses.
//!
//! Task `m` has loss `½(x−θ_m)ᵀH_m(x−θ_m)`; the inner map is one gradient
//! step `g^m(x) = x − ηH_m(x−θ_m)` and the outer loss is the task loss
//! evaluated at the adapted point. Stochastic oracles replace `(H_m, θ_m)` by
//! `(H_m + Δ, θ_m + ε)` with a symmetric Gaussian `Δ` and Gaussian `ε`,
//! independent between the inner and outer draws.

use serde::{Deserialize, Serialize};

use super::{
    box_l2_radius, quadratic_minimizer, random_unit, spd_with_spectrum, CompositionProblem, Dims,
    HeterogeneityProfile, InnerSample, OuterSample, ProblemConstants, NOISE_SLACK,
};
use crate::error::{config_err, Result};
use crate::numerics::{derive_stream, fro_norm, Matrix, Purpose, RngStream, Vector};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MamlTask {
    pub hessian: Matrix,
    pub theta: Vector,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MamlProblem {
    pub d: usize,
    pub inner_lr: f64,
    /// Scale `s` of the task perturbations: `E‖Δ‖_F² = E‖ε‖² = s²`.
    pub noise_scale: f64,
    pub box_radius: f64,
    pub tasks: Vec<MamlTask>,
    /// `(1/M) Σ P_m` with `P_m = (I−ηH_m) H_m (I−ηH_m)`.
    pub hessian: Matrix,
    /// `−(1/M) Σ P_m θ_m`
    pub linear: Vector,
    pub constants: Option<ProblemConstants>,
}

pub fn make_maml(
    seed: u64,
    d: usize,
    m_clients: usize,
    inner_lr: f64,
    profile: HeterogeneityProfile,
    sigma: f64,
) -> Result<MamlProblem> {
    if d == 0 || m_clients == 0 {
        return Err(config_err("maml instance needs d, M >= 1"));
    }
    if !(inner_lr > 0.0) {
        return Err(config_err("inner_lr must be positive"));
    }
    if !(sigma >= 0.0) || !(profile.spread >= 0.0) {
        return Err(config_err("sigma and spread must be nonnegative"));
    }

    let mut rng = derive_stream(seed, 0, 0, Purpose::Instance);
    let h_center = spd_with_spectrum(d, 0.5, 1.5, &mut rng);
    let theta_center = random_unit(d, &mut rng);

    let tasks = (0..m_clients)
        .map(|m| {
            let mut crng = derive_stream(profile.seed, m as u64, 1, Purpose::Instance);
            let g = Matrix::from_fn(d, d, |_, _| crng.normal());
            let psd = g.matmul(&g.transpose()).scaled(1.0 / (d * d) as f64);
            let mut hessian = h_center.clone();
            hessian.axpy(profile.spread, &psd);
            let mut theta = theta_center.clone();
            theta.axpy(profile.spread, &random_unit(d, &mut crng));
            MamlTask { hessian, theta }
        })
        .collect();

    Ok(MamlProblem::from_tasks(d, inner_lr, sigma, 10.0, tasks))
}

impl MamlProblem {
    pub fn from_tasks(
        d: usize,
        inner_lr: f64,
        noise_scale: f64,
        box_radius: f64,
        tasks: Vec<MamlTask>,
    ) -> Self {
        let mm = tasks.len() as f64;
        let mut hessian = Matrix::zeros(d, d);
        let mut linear = Vector::zeros(d);
        for (m, task) in tasks.iter().enumerate() {
            let h_norm = task.hessian.operator_norm();
            if inner_lr * h_norm >= 1.0 {
                log::warn!(
                    "task {m}: inner_lr * |H| = {:.3} >= 1, inner step is not a contraction",
                    inner_lr * h_norm
                );
            }
            let step = Matrix::identity(d).sub(&task.hessian.scaled(inner_lr));
            let p = step.matmul(&task.hessian).matmul(&step);
            linear.axpy(-1.0 / mm, &p.mul_vec(&task.theta));
            hessian.axpy(1.0 / mm, &p);
        }
        let mut problem = Self {
            d,
            inner_lr,
            noise_scale,
            box_radius,
            tasks,
            hessian,
            linear,
            constants: None,
        };
        problem.constants = Some(problem.compute_constants());
        problem
    }

    /// Same tasks on a different iterate box; constants are recomputed.
    pub fn with_box_radius(mut self, box_radius: f64) -> Self {
        self.box_radius = box_radius;
        self.constants = Some(self.compute_constants());
        self
    }

    fn step_matrix(&self, m: usize) -> Matrix {
        Matrix::identity(self.d).sub(&self.tasks[m].hessian.scaled(self.inner_lr))
    }

    fn compute_constants(&self) -> ProblemConstants {
        let eta = self.inner_lr;
        let s2 = self.noise_scale * self.noise_scale;
        let dd = self.d as f64;
        let box_l2 = box_l2_radius(self.d, self.box_radius);

        let h_op: Vec<f64> = self.tasks.iter().map(|t| t.hessian.operator_norm()).collect();
        let h_fro: Vec<f64> = self.tasks.iter().map(|t| fro_norm(&t.hessian)).collect();
        let steps: Vec<Matrix> = (0..self.tasks.len()).map(|m| self.step_matrix(m)).collect();
        let h_theta: Vec<Vector> =
            self.tasks.iter().map(|t| t.hessian.mul_vec(&t.theta)).collect();

        // Largest inner value over the box, across all tasks.
        let y_abs = steps
            .iter()
            .zip(&h_theta)
            .map(|(s, ht)| s.operator_norm() * box_l2 + eta * ht.norm())
            .fold(0.0_f64, f64::max);

        // Variance of a draw of (H+Δ)(z−ε) around H z is
        // (s²/d)‖z‖² + (s²/d)‖H‖_F² + s⁴/d.
        let spread_var =
            |z: f64, hf: f64| s2 / dd * z * z + s2 / dd * hf * hf + s2 * s2 / dd;
        let mut var_g = eta * eta * s2;
        let mut var_f = 0.0_f64;
        let mut c_f = 0.0_f64;
        for (m, task) in self.tasks.iter().enumerate() {
            let z_inner = box_l2 + task.theta.norm();
            let z_outer = y_abs + task.theta.norm();
            var_g = var_g.max(eta * eta * spread_var(z_inner, h_fro[m]));
            var_f = var_f.max(spread_var(z_outer, h_fro[m]));
            c_f = c_f.max(h_op[m] * z_outer);
        }
        let sigma = var_g.max(var_f).sqrt();
        let jac_dev = eta * self.noise_scale;

        let c_g = steps.iter().map(fro_norm).fold(0.0_f64, f64::max) + NOISE_SLACK * jac_dev;
        let c_f = c_f + NOISE_SLACK * var_f.sqrt();
        let l_f = h_op.iter().copied().fold(0.0_f64, f64::max);

        let mut delta_f = 0.0_f64;
        let mut delta_g = 0.0_f64;
        for i in 0..self.tasks.len() {
            for j in (i + 1)..self.tasks.len() {
                let dh = self.tasks[i].hessian.sub(&self.tasks[j].hessian);
                let dht = h_theta[i].sub(&h_theta[j]).norm();
                let dh_op = dh.operator_norm();
                delta_f = delta_f.max(dh_op * y_abs + dht);
                delta_g = delta_g
                    .max(eta * fro_norm(&dh))
                    .max(eta * (dh_op * box_l2 + dht));
            }
        }

        let x_star = quadratic_minimizer(&self.hessian, &self.linear);
        ProblemConstants {
            c_f,
            c_g,
            l_f,
            l_g: 0.0,
            sigma,
            delta_f,
            delta_g,
            f_star: Some(self.objective(&x_star)),
        }
    }

    fn draw_perturbation(&self, rng: &mut RngStream) -> Vec<f64> {
        let d = self.d;
        let s = self.noise_scale;
        let tau = s * (2.0 / (d * (d + 1)) as f64).sqrt();
        let g = rng.normals(d * d, tau);
        let mut noise = Vec::with_capacity(d * d + d);
        for i in 0..d {
            for j in 0..d {
                noise.push(0.5 * (g[i * d + j] + g[j * d + i]));
            }
        }
        noise.extend(rng.normals(d, s / (d as f64).sqrt()));
        noise
    }

    /// `(H_m + Δ)` and `θ_m + ε` for a nonempty draw.
    fn perturbed(&self, m: usize, noise: &[f64]) -> (Matrix, Vector) {
        let d = self.d;
        let task = &self.tasks[m];
        let mut h = task.hessian.clone();
        for (hi, n) in h.as_mut_slice().iter_mut().zip(&noise[..d * d]) {
            *hi += n;
        }
        let mut theta = task.theta.clone();
        for (ti, n) in theta.as_mut_slice().iter_mut().zip(&noise[d * d..]) {
            *ti += n;
        }
        (h, theta)
    }
}

#[allow(non_snake_case)]
impl CompositionProblem for MamlProblem {
    fn dims(&self) -> Dims {
        Dims { d: self.d, p: self.d, m: self.tasks.len() }
    }

    fn constants(&self) -> Option<&ProblemConstants> {
        self.constants.as_ref()
    }

    fn box_radius(&self) -> f64 {
        self.box_radius
    }

    fn draw_inner(&self, _m: usize, rng: &mut RngStream) -> InnerSample {
        if self.noise_scale == 0.0 {
            return InnerSample::default();
        }
        InnerSample { index: None, noise: self.draw_perturbation(rng) }
    }

    fn draw_outer(&self, _m: usize, rng: &mut RngStream) -> OuterSample {
        if self.noise_scale == 0.0 {
            return OuterSample::default();
        }
        OuterSample { noise: self.draw_perturbation(rng) }
    }

    fn sample_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Vector {
        if s.noise.is_empty() {
            return self.exact_g(m, x);
        }
        let (h, theta) = self.perturbed(m, &s.noise);
        let mut y = x.clone();
        y.axpy(-self.inner_lr, &h.mul_vec(&x.sub(&theta)));
        y
    }

    fn sample_jac_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Matrix {
        if s.noise.is_empty() {
            return self.exact_jac_g(m, x);
        }
        let (h, _) = self.perturbed(m, &s.noise);
        Matrix::identity(self.d).sub(&h.scaled(self.inner_lr))
    }

    fn sample_grad_f(&self, m: usize, y: &Vector, s: &OuterSample) -> Vector {
        if s.noise.is_empty() {
            return self.exact_grad_f(m, y);
        }
        let (h, theta) = self.perturbed(m, &s.noise);
        h.mul_vec(&y.sub(&theta))
    }

    fn exact_g(&self, m: usize, x: &Vector) -> Vector {
        let task = &self.tasks[m];
        let mut y = x.clone();
        y.axpy(-self.inner_lr, &task.hessian.mul_vec(&x.sub(&task.theta)));
        y
    }

    fn exact_jac_g(&self, m: usize, _x: &Vector) -> Matrix {
        self.step_matrix(m)
    }

    fn exact_grad_f(&self, m: usize, y: &Vector) -> Vector {
        let task = &self.tasks[m];
        task.hessian.mul_vec(&y.sub(&task.theta))
    }

    fn outer_value(&self, m: usize, y: &Vector) -> f64 {
        let task = &self.tasks[m];
        let z = y.sub(&task.theta);
        0.5 * z.dot(&task.hessian.mul_vec(&z))
    }

    fn exact_grad_F(&self, x: &Vector) -> Vector {
        self.hessian.mul_vec(x).add(&self.linear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::chain_rule_grad;

    #[test]
    fn identity_task_closed_form() {
        let task = MamlTask { hessian: Matrix::identity(3), theta: Vector::zeros(3) };
        let p = MamlProblem::from_tasks(3, 0.5, 0.0, 10.0, vec![task.clone(), task]);
        let x = Vector::from_vec(vec![1.0, -2.0, 4.0]);
        assert_eq!(p.exact_g(0, &x).as_slice(), &[0.5, -1.0, 2.0]);
        assert_eq!(p.exact_grad_F(&x).as_slice(), &[0.25, -0.5, 1.0]);
        assert!((p.objective(&x) - 0.5 * 0.25 * x.norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn common_optimum_is_stationary() {
        let p = make_maml(2, 5, 4, 0.3, HeterogeneityProfile::iid(1), 0.0).unwrap();
        let theta = p.tasks[0].theta.clone();
        assert!(p.exact_grad_F(&theta).norm() < 1e-14);
    }

    #[test]
    fn closed_form_matches_chain_rule() {
        let p = make_maml(7, 6, 3, 0.4, HeterogeneityProfile::new(1.0, 5), 0.2).unwrap();
        let mut rng = derive_stream(3, 0, 0, Purpose::Probe);
        for _ in 0..20 {
            let x = rng.box_point(6, 10.0);
            let a = p.exact_grad_F(&x);
            let b = chain_rule_grad(&p, &x);
            assert!(a.sub(&b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn perturbation_has_requested_scale() {
        let p = make_maml(1, 4, 1, 0.3, HeterogeneityProfile::iid(1), 0.5).unwrap();
        let mut rng = derive_stream(5, 0, 0, Purpose::Inner);
        let n = 20_000;
        let (mut dh, mut de) = (0.0, 0.0);
        for _ in 0..n {
            let s = p.draw_inner(0, &mut rng);
            let sym = (0..4).all(|i| (0..4).all(|j| s.noise[i * 4 + j] == s.noise[j * 4 + i]));
            assert!(sym);
            dh += s.noise[..16].iter().map(|v| v * v).sum::<f64>() / n as f64;
            de += s.noise[16..].iter().map(|v| v * v).sum::<f64>() / n as f64;
        }
        assert!((dh - 0.25).abs() < 0.01, "{dh}");
        assert!((de - 0.25).abs() < 0.01, "{de}");
    }

    #[test]
    fn rejects_nonpositive_inner_lr() {
        assert!(make_maml(1, 3, 2, 0.0, HeterogeneityProfile::iid(1), 0.0).is_err());
    }
}
