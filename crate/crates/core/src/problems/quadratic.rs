//! Linear inner maps composed with quadratic outer losses.
//!
//! Client `m` holds `g^m(x) = A_m x + b_m` and
//! `f^m(y) = ½ yᵀQ_m y + r_mᵀ y`. Stochastic oracles add zero-mean Gaussian
//! noise to the inner value, the Jacobian and the outer gradient, each scaled
//! so its expected squared norm is exactly `σ²`.

use serde::{Deserialize, Serialize};

use super::{
    box_l2_radius, quadratic_minimizer, random_orthogonal, random_unit, spd_with_spectrum,
    CompositionProblem, Dims, HeterogeneityProfile, InnerSample, OuterSample, ProblemConstants,
    NOISE_SLACK,
};
use crate::error::{config_err, Result};
use crate::numerics::{derive_stream, fro_norm, Matrix, Purpose, RngStream, Vector};

/// Shape of the generated instance. Heterogeneity magnitude comes from the
/// [`HeterogeneityProfile`]; these knobs set the common center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticOptions {
    /// Largest singular value of the shared inner map.
    pub a_scale: f64,
    /// Smallest / largest singular value ratio of the shared inner map.
    pub a_cond: f64,
    /// Largest eigenvalue of the shared outer Hessian.
    pub q_scale: f64,
    /// Smallest / largest eigenvalue ratio of the shared outer Hessian.
    pub q_cond: f64,
    /// Norm of the shared offsets `b`, `r` and scale of their per-client shifts.
    pub offset_scale: f64,
    /// Multiplier on `spread` for per-client changes to `A_m` and `Q_m`.
    /// Zero keeps curvature common and makes heterogeneity a pure offset shift.
    pub curvature_spread: f64,
    pub box_radius: f64,
}

impl Default for QuadraticOptions {
    fn default() -> Self {
        Self {
            a_scale: 1.0,
            a_cond: 0.5,
            q_scale: 1.0,
            q_cond: 0.5,
            offset_scale: 1.0,
            curvature_spread: 1.0,
            box_radius: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticClient {
    pub a: Matrix,
    pub b: Vector,
    pub q: Matrix,
    pub r: Vector,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticProblem {
    pub d: usize,
    pub p: usize,
    pub sigma: f64,
    pub box_radius: f64,
    pub clients: Vec<QuadraticClient>,
    /// `(1/M) Σ A_mᵀ Q_m A_m`
    pub hessian: Matrix,
    /// `(1/M) Σ A_mᵀ (Q_m b_m + r_m)`
    pub linear: Vector,
    pub constants: Option<ProblemConstants>,
}

/// Generated instance with default [`QuadraticOptions`].
pub fn make_quadratic(
    seed: u64,
    d: usize,
    p: usize,
    m_clients: usize,
    profile: HeterogeneityProfile,
    sigma: f64,
) -> Result<QuadraticProblem> {
    make_quadratic_with(seed, d, p, m_clients, profile, sigma, &QuadraticOptions::default())
}

pub fn make_quadratic_with(
    seed: u64,
    d: usize,
    p: usize,
    m_clients: usize,
    profile: HeterogeneityProfile,
    sigma: f64,
    opts: &QuadraticOptions,
) -> Result<QuadraticProblem> {
    if d == 0 || p == 0 || m_clients == 0 {
        return Err(config_err("quadratic instance needs d, p, M >= 1"));
    }
    if !(sigma >= 0.0) || !(profile.spread >= 0.0) {
        return Err(config_err("sigma and spread must be nonnegative"));
    }
    if !(opts.box_radius > 0.0) {
        return Err(config_err("box_radius must be positive"));
    }

    let mut rng = derive_stream(seed, 0, 0, Purpose::Instance);
    let rank = p.min(d);
    let u = random_orthogonal(p, &mut rng);
    let v = random_orthogonal(d, &mut rng);
    let singular = |i: usize| {
        if rank == 1 {
            opts.a_scale
        } else {
            opts.a_scale * (1.0 - (1.0 - opts.a_cond) * i as f64 / (rank - 1) as f64)
        }
    };
    let a_center = Matrix::from_fn(p, d, |i, j| {
        (0..rank).map(|k| u[(i, k)] * singular(k) * v[(j, k)]).sum()
    });
    let q_center = spd_with_spectrum(p, opts.q_scale * opts.q_cond, opts.q_scale, &mut rng);
    let b_center = random_unit(p, &mut rng).scaled(opts.offset_scale);
    let r_center = random_unit(p, &mut rng).scaled(opts.offset_scale);

    let curv = profile.spread * opts.curvature_spread;
    let clients = (0..m_clients)
        .map(|m| {
            let mut crng = derive_stream(profile.seed, m as u64, 1, Purpose::Instance);
            let na = Matrix::from_fn(p, d, |_, _| crng.normal() / ((p * d) as f64).sqrt());
            let g = Matrix::from_fn(p, p, |_, _| crng.normal());
            let ggt = g.matmul(&g.transpose()).scaled(1.0 / (p * p) as f64);
            let b_shift = random_unit(p, &mut crng);
            let r_shift = random_unit(p, &mut crng);
            let mut a = a_center.clone();
            a.axpy(curv * opts.a_scale, &na);
            let mut q = q_center.clone();
            q.axpy(curv * opts.q_scale, &ggt);
            let mut b = b_center.clone();
            b.axpy(profile.spread * opts.offset_scale, &b_shift);
            let mut r = r_center.clone();
            r.axpy(profile.spread * opts.offset_scale, &r_shift);
            QuadraticClient { a, b, q, r }
        })
        .collect();

    Ok(QuadraticProblem::from_clients(d, p, sigma, opts.box_radius, clients))
}

impl QuadraticProblem {
    /// Assemble an instance from explicit client data and compute its constants.
    pub fn from_clients(
        d: usize,
        p: usize,
        sigma: f64,
        box_radius: f64,
        clients: Vec<QuadraticClient>,
    ) -> Self {
        let mm = clients.len() as f64;
        let mut hessian = Matrix::zeros(d, d);
        let mut linear = Vector::zeros(d);
        for c in &clients {
            let qa = c.q.matmul(&c.a);
            hessian.axpy(1.0 / mm, &c.a.transpose().matmul(&qa));
            let inner = c.q.mul_vec(&c.b).add(&c.r);
            linear.axpy(1.0 / mm, &c.a.t_mul_vec(&inner));
        }
        let mut problem = Self {
            d,
            p,
            sigma,
            box_radius,
            clients,
            hessian,
            linear,
            constants: None,
        };
        problem.constants = Some(problem.compute_constants());
        problem
    }

    fn compute_constants(&self) -> ProblemConstants {
        let box_l2 = box_l2_radius(self.d, self.box_radius);
        let a_op: Vec<f64> = self.clients.iter().map(|c| c.a.operator_norm()).collect();
        let q_op: Vec<f64> = self.clients.iter().map(|c| c.q.operator_norm()).collect();
        let y_radius = self
            .clients
            .iter()
            .zip(&a_op)
            .map(|(c, a)| a * box_l2 + c.b.norm())
            .fold(0.0_f64, f64::max);
        let slack = NOISE_SLACK * self.sigma;
        let c_g = self.clients.iter().map(|c| fro_norm(&c.a)).fold(0.0_f64, f64::max) + slack;
        let c_f = self
            .clients
            .iter()
            .zip(&q_op)
            .map(|(c, q)| q * y_radius + c.r.norm())
            .fold(0.0_f64, f64::max)
            + slack;
        let l_f = q_op.iter().copied().fold(0.0_f64, f64::max);

        let mut delta_f = 0.0_f64;
        let mut delta_g = 0.0_f64;
        for (i, ci) in self.clients.iter().enumerate() {
            for cj in &self.clients[i + 1..] {
                let da = ci.a.sub(&cj.a);
                let dq = ci.q.sub(&cj.q);
                delta_f = delta_f.max(dq.operator_norm() * y_radius + ci.r.sub(&cj.r).norm());
                delta_g = delta_g
                    .max(fro_norm(&da))
                    .max(da.operator_norm() * box_l2 + ci.b.sub(&cj.b).norm());
            }
        }

        let x_star = quadratic_minimizer(&self.hessian, &self.linear);
        ProblemConstants {
            c_f,
            c_g,
            l_f,
            l_g: 0.0,
            sigma: self.sigma,
            delta_f,
            delta_g,
            f_star: Some(self.objective(&x_star)),
        }
    }

    /// Minimum-norm minimizer of `F`.
    pub fn minimizer(&self) -> Vector {
        quadratic_minimizer(&self.hessian, &self.linear)
    }

    fn noisy(&self) -> bool {
        self.sigma > 0.0
    }
}

#[allow(non_snake_case)]
impl CompositionProblem for QuadraticProblem {
    fn dims(&self) -> Dims {
        Dims { d: self.d, p: self.p, m: self.clients.len() }
    }

    fn constants(&self) -> Option<&ProblemConstants> {
        self.constants.as_ref()
    }

    fn box_radius(&self) -> f64 {
        self.box_radius
    }

    fn draw_inner(&self, _m: usize, rng: &mut RngStream) -> InnerSample {
        if !self.noisy() {
            return InnerSample::default();
        }
        let (p, d) = (self.p, self.d);
        let mut noise = rng.normals(p, self.sigma / (p as f64).sqrt());
        noise.extend(rng.normals(p * d, self.sigma / ((p * d) as f64).sqrt()));
        InnerSample { index: None, noise }
    }

    fn draw_outer(&self, _m: usize, rng: &mut RngStream) -> OuterSample {
        if !self.noisy() {
            return OuterSample::default();
        }
        OuterSample { noise: rng.normals(self.p, self.sigma / (self.p as f64).sqrt()) }
    }

    fn sample_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Vector {
        let mut y = self.exact_g(m, x);
        if !s.noise.is_empty() {
            for (yi, z) in y.as_mut_slice().iter_mut().zip(&s.noise[..self.p]) {
                *yi += z;
            }
        }
        y
    }

    fn sample_jac_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Matrix {
        let mut j = self.exact_jac_g(m, x);
        if !s.noise.is_empty() {
            for (ji, e) in j.as_mut_slice().iter_mut().zip(&s.noise[self.p..]) {
                *ji += e;
            }
        }
        j
    }

    fn sample_grad_f(&self, m: usize, y: &Vector, s: &OuterSample) -> Vector {
        let mut g = self.exact_grad_f(m, y);
        if !s.noise.is_empty() {
            for (gi, z) in g.as_mut_slice().iter_mut().zip(&s.noise) {
                *gi += z;
            }
        }
        g
    }

    fn exact_g(&self, m: usize, x: &Vector) -> Vector {
        let c = &self.clients[m];
        c.a.mul_vec(x).add(&c.b)
    }

    fn exact_jac_g(&self, m: usize, _x: &Vector) -> Matrix {
        self.clients[m].a.clone()
    }

    fn exact_grad_f(&self, m: usize, y: &Vector) -> Vector {
        let c = &self.clients[m];
        c.q.mul_vec(y).add(&c.r)
    }

    fn outer_value(&self, m: usize, y: &Vector) -> f64 {
        let c = &self.clients[m];
        0.5 * y.dot(&c.q.mul_vec(y)) + c.r.dot(y)
    }

    fn exact_grad_F(&self, x: &Vector) -> Vector {
        self.hessian.mul_vec(x).add(&self.linear)
    }
}
