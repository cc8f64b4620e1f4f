//! Distributionally robust federated learning on synthetic labeled data.
//!
//! `g^m(x; ζ)` is the logistic loss of `x` on one datum of client `m` and the
//! shared outer map is `f(y) = y + (λ/2) y²`, increasing on `y ≥ 0`.

use serde::{Deserialize, Serialize};

use super::{
    box_l2_radius, random_unit, CompositionProblem, Dims, HeterogeneityProfile, InnerSample,
    OuterSample, ProblemConstants,
};
use crate::error::{config_err, Result};
use crate::numerics::{derive_stream, Matrix, Purpose, RngStream, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Each draw picks one datum uniformly from the client's set.
    Sampled,
    /// Each draw is the full client batch; oracles are noiseless.
    FullBatch,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClientDataset {
    /// One datum per row.
    pub features: Matrix,
    /// Labels in `{-1, +1}`.
    pub labels: Vec<f64>,
}

impl ClientDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn margin(&self, i: usize, x: &Vector) -> f64 {
        self.labels[i] * dot(self.features.row(i), x.as_slice())
    }

    fn loss(&self, i: usize, x: &Vector) -> f64 {
        softplus(-self.margin(i, x))
    }

    fn add_loss_grad(&self, i: usize, x: &Vector, scale: f64, out: &mut [f64]) {
        let c = -self.labels[i] * sigmoid(-self.margin(i, x)) * scale;
        for (o, a) in out.iter_mut().zip(self.features.row(i)) {
            *o += c * a;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustFlProblem {
    pub d: usize,
    pub lambda: f64,
    pub sigma_mode: SigmaMode,
    pub box_radius: f64,
    pub clients: Vec<ClientDataset>,
    pub constants: Option<ProblemConstants>,
}

pub fn make_robust_fl(
    seed: u64,
    d: usize,
    m_clients: usize,
    n_per_client: usize,
    profile: HeterogeneityProfile,
    lambda: f64,
    sigma_mode: SigmaMode,
) -> Result<RobustFlProblem> {
    if d == 0 || m_clients == 0 || n_per_client == 0 {
        return Err(config_err("robust_fl instance needs d, M, n_per_client >= 1"));
    }
    if !(lambda >= 0.0) {
        return Err(config_err("lambda must be nonnegative"));
    }
    if !(profile.spread >= 0.0) {
        return Err(config_err("spread must be nonnegative"));
    }

    let mut rng = derive_stream(seed, 0, 0, Purpose::Instance);
    let mu = random_unit(d, &mut rng);
    let noise_std = 1.0 / (d as f64).sqrt();
    let mut base = Matrix::zeros(n_per_client, d);
    let mut labels = Vec::with_capacity(n_per_client);
    for i in 0..n_per_client {
        let label = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        for j in 0..d {
            base.set(i, j, label * mu[j] + noise_std * rng.normal());
        }
        labels.push(label);
    }

    let clients = (0..m_clients)
        .map(|m| {
            let mut crng = derive_stream(profile.seed, m as u64, 1, Purpose::Instance);
            let shift = random_unit(d, &mut crng).scaled(profile.spread);
            let features = Matrix::from_fn(n_per_client, d, |i, j| base.get(i, j) + shift[j]);
            ClientDataset { features, labels: labels.clone() }
        })
        .collect();

    Ok(RobustFlProblem::from_clients(d, lambda, sigma_mode, 10.0, clients))
}

impl RobustFlProblem {
    pub fn from_clients(
        d: usize,
        lambda: f64,
        sigma_mode: SigmaMode,
        box_radius: f64,
        clients: Vec<ClientDataset>,
    ) -> Self {
        let mut problem = Self { d, lambda, sigma_mode, box_radius, clients, constants: None };
        problem.constants = Some(problem.compute_constants());
        problem
    }

    /// Same data on a different iterate box; constants are recomputed.
    pub fn with_box_radius(mut self, box_radius: f64) -> Self {
        self.box_radius = box_radius;
        self.constants = Some(self.compute_constants());
        self
    }

    fn compute_constants(&self) -> ProblemConstants {
        let box_l2 = box_l2_radius(self.d, self.box_radius);
        let amax = self
            .clients
            .iter()
            .flat_map(|c| (0..c.len()).map(move |i| norm(c.features.row(i))))
            .fold(0.0_f64, f64::max);
        let max_loss = softplus(amax * box_l2);
        let sigma = match self.sigma_mode {
            SigmaMode::Sampled => max_loss.max(amax),
            SigmaMode::FullBatch => 0.0,
        };

        // Every client carries the same base data shifted by one vector, so
        // pairwise differences are controlled by the shift difference.
        let mut shift_gap = 0.0_f64;
        for (i, ci) in self.clients.iter().enumerate() {
            for cj in &self.clients[i + 1..] {
                let gap = if ci.len() == cj.len() {
                    let diff = ci.features.sub(&cj.features);
                    (0..ci.len()).map(|k| norm(diff.row(k))).fold(0.0_f64, f64::max)
                } else {
                    2.0 * amax
                };
                shift_gap = shift_gap.max(gap);
            }
        }
        let delta_g = (box_l2 * shift_gap).max((0.25 * box_l2 * amax + 1.0) * shift_gap);

        ProblemConstants {
            c_f: 1.0 + self.lambda * max_loss,
            c_g: amax,
            l_f: self.lambda,
            l_g: 0.25 * amax * amax,
            sigma,
            delta_f: 0.0,
            delta_g,
            f_star: Some(0.0),
        }
    }

    /// `f'(y)`
    pub fn outer_derivative(&self, y: f64) -> f64 {
        1.0 + self.lambda * y
    }
}

impl CompositionProblem for RobustFlProblem {
    fn dims(&self) -> Dims {
        Dims { d: self.d, p: 1, m: self.clients.len() }
    }

    fn constants(&self) -> Option<&ProblemConstants> {
        self.constants.as_ref()
    }

    fn box_radius(&self) -> f64 {
        self.box_radius
    }

    fn draw_inner(&self, m: usize, rng: &mut RngStream) -> InnerSample {
        match self.sigma_mode {
            SigmaMode::Sampled => InnerSample {
                index: Some(rng.below(self.clients[m].len())),
                noise: Vec::new(),
            },
            SigmaMode::FullBatch => InnerSample::default(),
        }
    }

    fn draw_outer(&self, _m: usize, _rng: &mut RngStream) -> OuterSample {
        OuterSample::default()
    }

    fn sample_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Vector {
        match s.index {
            Some(i) => Vector::from_vec(vec![self.clients[m].loss(i, x)]),
            None => self.exact_g(m, x),
        }
    }

    fn sample_jac_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Matrix {
        match s.index {
            Some(i) => {
                let mut row = vec![0.0; self.d];
                self.clients[m].add_loss_grad(i, x, 1.0, &mut row);
                Matrix::from_fn(1, self.d, |_, j| row[j])
            }
            None => self.exact_jac_g(m, x),
        }
    }

    fn sample_grad_f(&self, m: usize, y: &Vector, _s: &OuterSample) -> Vector {
        self.exact_grad_f(m, y)
    }

    fn exact_g(&self, m: usize, x: &Vector) -> Vector {
        let c = &self.clients[m];
        let total: f64 = (0..c.len()).map(|i| c.loss(i, x)).sum();
        Vector::from_vec(vec![total / c.len() as f64])
    }

    fn exact_jac_g(&self, m: usize, x: &Vector) -> Matrix {
        let c = &self.clients[m];
        let mut row = vec![0.0; self.d];
        let w = 1.0 / c.len() as f64;
        for i in 0..c.len() {
            c.add_loss_grad(i, x, w, &mut row);
        }
        Matrix::from_fn(1, self.d, |_, j| row[j])
    }

    fn exact_grad_f(&self, _m: usize, y: &Vector) -> Vector {
        Vector::from_vec(vec![self.outer_derivative(y[0])])
    }

    fn outer_value(&self, _m: usize, y: &Vector) -> f64 {
        y[0] + 0.5 * self.lambda * y[0] * y[0]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{chain_rule_grad, measure_heterogeneity};

    #[test]
    fn lambda_zero_is_mean_loss() {
        let p = make_robust_fl(3, 5, 3, 20, HeterogeneityProfile::new(0.5, 1), 0.0, SigmaMode::Sampled)
            .unwrap();
        let mut rng = derive_stream(1, 0, 0, Purpose::Probe);
        let x = rng.box_point(5, 2.0);
        let mean_loss: f64 = (0..3).map(|m| p.exact_g(m, &x)[0]).sum::<f64>() / 3.0;
        assert!((p.objective(&x) - mean_loss).abs() < 1e-14);
    }

    #[test]
    fn outer_is_increasing_on_nonnegative_values() {
        let p = make_robust_fl(3, 4, 2, 10, HeterogeneityProfile::iid(1), 2.5, SigmaMode::Sampled)
            .unwrap();
        for k in 0..100 {
            assert!(p.outer_derivative(k as f64 * 0.37) > 0.0);
        }
    }

    #[test]
    fn sampled_oracles_average_to_exact() {
        let p = make_robust_fl(9, 4, 2, 7, HeterogeneityProfile::new(1.0, 2), 1.0, SigmaMode::Sampled)
            .unwrap();
        let x = Vector::from_vec(vec![0.3, -0.2, 0.5, 1.0]);
        let mut g = 0.0;
        let mut j = Matrix::zeros(1, 4);
        for i in 0..7 {
            let s = InnerSample { index: Some(i), noise: Vec::new() };
            g += p.sample_g(1, &x, &s)[0] / 7.0;
            j.axpy(1.0 / 7.0, &p.sample_jac_g(1, &x, &s));
        }
        assert!((g - p.exact_g(1, &x)[0]).abs() < 1e-14);
        assert!(j.sub(&p.exact_jac_g(1, &x)).norm_sq().sqrt() < 1e-14);
    }

    #[test]
    fn full_batch_is_noiseless() {
        let p = make_robust_fl(2, 3, 2, 5, HeterogeneityProfile::new(0.2, 2), 1.0, SigmaMode::FullBatch)
            .unwrap();
        assert_eq!(p.constants().unwrap().sigma, 0.0);
        let mut rng = derive_stream(1, 0, 0, Purpose::Inner);
        let s = p.draw_inner(0, &mut rng);
        let x = Vector::from_vec(vec![1.0, 2.0, -1.0]);
        assert_eq!(p.sample_g(0, &x, &s), p.exact_g(0, &x));
        assert_eq!(p.sample_jac_g(0, &x, &s), p.exact_jac_g(0, &x));
    }

    #[test]
    fn identical_clients_at_zero_spread() {
        let p = make_robust_fl(4, 3, 4, 6, HeterogeneityProfile::iid(3), 1.0, SigmaMode::Sampled)
            .unwrap();
        assert_eq!(p.constants().unwrap().delta_g, 0.0);
        let mut rng = derive_stream(1, 0, 0, Purpose::Probe);
        assert_eq!(measure_heterogeneity(&p, 4, &mut rng), (0.0, 0.0));
    }

    #[test]
    fn default_gradient_is_the_chain_rule() {
        let p = make_robust_fl(4, 3, 2, 6, HeterogeneityProfile::new(0.5, 3), 0.7, SigmaMode::Sampled)
            .unwrap();
        let x = Vector::from_vec(vec![0.1, 0.2, 0.3]);
        assert_eq!(p.exact_grad_F(&x), chain_rule_grad(&p, &x));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }
}
