//! Distributed composition problems `F(x) = (1/M) Σ_m f^m(g^m(x))`.
//!
//! Every instance provides stochastic oracles (driven by an explicit sample so
//! the same draw can be evaluated at two points), exact oracles, and the
//! Lipschitz / boundedness / variance / heterogeneity constants the step-size
//! theory consumes. Constants are only claimed on the iterate box
//! `‖x‖∞ ≤ box_radius`.

mod maml;
mod quadratic;
mod robust_fl;

use serde::{Deserialize, Serialize};

use crate::numerics::{fro_norm, Matrix, RngStream, Vector};

pub use maml::{make_maml, MamlProblem, MamlTask};
pub use quadratic::{
    make_quadratic, make_quadratic_with, QuadraticClient, QuadraticOptions, QuadraticProblem,
};
pub use robust_fl::{make_robust_fl, ClientDataset, RobustFlProblem, SigmaMode};

/// Per-draw deviations are expected to stay within `NOISE_SLACK * σ`; the
/// declared gradient bounds include this much headroom over the exact ones.
pub const NOISE_SLACK: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Model dimension.
    pub d: usize,
    /// Inner-value dimension.
    pub p: usize,
    /// Number of clients.
    pub m: usize,
}

/// Assumption-level constants of an instance, valid on its iterate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub c_f: f64,
    pub c_g: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub sigma: f64,
    pub delta_f: f64,
    pub delta_g: f64,
    /// `inf F`, or a valid lower bound when the infimum has no closed form.
    pub f_star: Option<f64>,
}

impl ProblemConstants {
    /// Smoothness constant `√(2C_f²L_g² + 2C_g⁴L_f²)` of `F`.
    pub fn smoothness(&self) -> f64 {
        (2.0 * self.c_f.powi(2) * self.l_g.powi(2) + 2.0 * self.c_g.powi(4) * self.l_f.powi(2)).sqrt()
    }
}

/// How clients differ from each other. `spread = 0` makes every client identical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityProfile {
    pub spread: f64,
    pub seed: u64,
}

impl HeterogeneityProfile {
    pub fn new(spread: f64, seed: u64) -> Self {
        Self { spread, seed }
    }

    pub fn iid(seed: u64) -> Self {
        Self { spread: 0.0, seed }
    }
}

/// One draw `ζ` for the inner function. `index` selects a datum for
/// finite-sum instances; `noise` carries Gaussian perturbations and is empty
/// for noiseless draws.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InnerSample {
    pub index: Option<usize>,
    pub noise: Vec<f64>,
}

/// One draw `ξ` for the outer gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OuterSample {
    pub noise: Vec<f64>,
}

/// The oracle interface consumed by the simulator and diagnostics.
///
/// Implementations must be immutable after construction; all randomness comes
/// through the sample arguments.
#[allow(non_snake_case)]
pub trait CompositionProblem: Send + Sync {
    fn dims(&self) -> Dims;

    /// `None` when the instance was loaded without its constants.
    fn constants(&self) -> Option<&ProblemConstants>;

    fn box_radius(&self) -> f64;

    fn draw_inner(&self, m: usize, rng: &mut RngStream) -> InnerSample;
    fn draw_outer(&self, m: usize, rng: &mut RngStream) -> OuterSample;

    /// `g^m(x; ζ)`
    fn sample_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Vector;
    /// `∇g^m(x; ζ)`, a `p x d` Jacobian.
    fn sample_jac_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Matrix;
    /// `∇f^m(y; ξ)`
    fn sample_grad_f(&self, m: usize, y: &Vector, s: &OuterSample) -> Vector;

    fn exact_g(&self, m: usize, x: &Vector) -> Vector;
    fn exact_jac_g(&self, m: usize, x: &Vector) -> Matrix;
    fn exact_grad_f(&self, m: usize, y: &Vector) -> Vector;
    /// `f^m(y)`
    fn outer_value(&self, m: usize, y: &Vector) -> f64;

    /// `F(x) = (1/M) Σ f^m(g^m(x))`
    fn objective(&self, x: &Vector) -> f64 {
        let mm = self.dims().m;
        (0..mm).map(|m| self.outer_value(m, &self.exact_g(m, x))).sum::<f64>() / mm as f64
    }

    /// `∇F(x)`. Instances override this with a closed form; the default is
    /// the chain rule.
    fn exact_grad_F(&self, x: &Vector) -> Vector {
        chain_rule_grad(self, x)
    }
}

/// `(1/M) Σ (∇g^m(x))ᵀ ∇f^m(g^m(x))` assembled from the per-client exact oracles.
pub fn chain_rule_grad<P: CompositionProblem + ?Sized>(problem: &P, x: &Vector) -> Vector {
    let dims = problem.dims();
    let mut acc = Vector::zeros(dims.d);
    for m in 0..dims.m {
        let y = problem.exact_g(m, x);
        let grad_f = problem.exact_grad_f(m, &y);
        acc.axpy(1.0, &problem.exact_jac_g(m, x).t_mul_vec(&grad_f));
    }
    acc.scaled(1.0 / dims.m as f64)
}

/// Any shipped instance; this is what problem manifests serialize.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyProblem {
    Quadratic(QuadraticProblem),
    RobustFl(RobustFlProblem),
    Maml(MamlProblem),
}

impl AnyProblem {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyProblem::Quadratic(_) => "quadratic",
            AnyProblem::RobustFl(_) => "robust_fl",
            AnyProblem::Maml(_) => "maml",
        }
    }

    fn inner(&self) -> &dyn CompositionProblem {
        match self {
            AnyProblem::Quadratic(p) => p,
            AnyProblem::RobustFl(p) => p,
            AnyProblem::Maml(p) => p,
        }
    }

    /// Replace the declared constants (used for negative controls and for
    /// manifests that carry their own).
    pub fn set_constants(&mut self, constants: Option<ProblemConstants>) {
        match self {
            AnyProblem::Quadratic(p) => p.constants = constants,
            AnyProblem::RobustFl(p) => p.constants = constants,
            AnyProblem::Maml(p) => p.constants = constants,
        }
    }
}

impl CompositionProblem for AnyProblem {
    fn dims(&self) -> Dims {
        self.inner().dims()
    }
    fn constants(&self) -> Option<&ProblemConstants> {
        self.inner().constants()
    }
    fn box_radius(&self) -> f64 {
        self.inner().box_radius()
    }
    fn draw_inner(&self, m: usize, rng: &mut RngStream) -> InnerSample {
        self.inner().draw_inner(m, rng)
    }
    fn draw_outer(&self, m: usize, rng: &mut RngStream) -> OuterSample {
        self.inner().draw_outer(m, rng)
    }
    fn sample_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Vector {
        self.inner().sample_g(m, x, s)
    }
    fn sample_jac_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Matrix {
        self.inner().sample_jac_g(m, x, s)
    }
    fn sample_grad_f(&self, m: usize, y: &Vector, s: &OuterSample) -> Vector {
        self.inner().sample_grad_f(m, y, s)
    }
    fn exact_g(&self, m: usize, x: &Vector) -> Vector {
        self.inner().exact_g(m, x)
    }
    fn exact_jac_g(&self, m: usize, x: &Vector) -> Matrix {
        self.inner().exact_jac_g(m, x)
    }
    fn exact_grad_f(&self, m: usize, y: &Vector) -> Vector {
        self.inner().exact_grad_f(m, y)
    }
    fn outer_value(&self, m: usize, y: &Vector) -> f64 {
        self.inner().outer_value(m, y)
    }
    fn objective(&self, x: &Vector) -> f64 {
        self.inner().objective(x)
    }
    fn exact_grad_F(&self, x: &Vector) -> Vector {
        self.inner().exact_grad_F(x)
    }
}

/// Largest client-pair heterogeneity measured with exact oracles at box
/// probes: `(δ_f, δ_g)` where `δ_g` covers both Jacobians and inner values.
/// Outer gradients are compared at every client's inner value of each probe.
pub fn measure_heterogeneity<P: CompositionProblem + ?Sized>(
    problem: &P,
    n_probe_points: usize,
    rng: &mut RngStream,
) -> (f64, f64) {
    let dims = problem.dims();
    let radius = problem.box_radius();
    let mut delta_f = 0.0_f64;
    let mut delta_g = 0.0_f64;
    for _ in 0..n_probe_points.max(1) {
        let x = rng.box_point(dims.d, radius);
        let values: Vec<Vector> = (0..dims.m).map(|m| problem.exact_g(m, &x)).collect();
        let jacs: Vec<Matrix> = (0..dims.m).map(|m| problem.exact_jac_g(m, &x)).collect();
        for m in 0..dims.m {
            for j in (m + 1)..dims.m {
                delta_g = delta_g
                    .max(values[m].sub(&values[j]).norm())
                    .max(fro_norm(&jacs[m].sub(&jacs[j])));
            }
        }
        for y in &values {
            let grads: Vec<Vector> = (0..dims.m).map(|m| problem.exact_grad_f(m, y)).collect();
            for m in 0..dims.m {
                for j in (m + 1)..dims.m {
                    delta_f = delta_f.max(grads[m].sub(&grads[j]).norm());
                }
            }
        }
    }
    (delta_f, delta_g)
}

// Shared helpers for the instance generators.

pub(crate) fn sym_from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Matrix {
    let n = m.nrows();
    Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Random orthogonal `n x n` matrix via QR of a Gaussian matrix.
pub(crate) fn random_orthogonal(n: usize, rng: &mut RngStream) -> nalgebra::DMatrix<f64> {
    let g = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.normal());
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // Fix signs so the distribution does not depend on the QR convention.
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Symmetric matrix with eigenvalues evenly spaced on `[lo, hi]`.
pub(crate) fn spd_with_spectrum(n: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Matrix {
    let u = random_orthogonal(n, rng);
    let eig = nalgebra::DVector::from_fn(n, |i, _| {
        if n == 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    });
    let m = &u * nalgebra::DMatrix::from_diagonal(&eig) * u.transpose();
    sym_from_nalgebra(&m)
}

/// Unit vector with a uniformly random direction.
pub(crate) fn random_unit(n: usize, rng: &mut RngStream) -> Vector {
    loop {
        let v = Vector::from_vec(rng.normals(n, 1.0));
        let norm = v.norm();
        if norm > 1e-12 {
            return v.scaled(1.0 / norm);
        }
    }
}

/// `sup ‖x‖₂` over the box `‖x‖∞ ≤ r` in `d` dimensions.
pub(crate) fn box_l2_radius(d: usize, r: f64) -> f64 {
    r * (d as f64).sqrt()
}

/// Minimum-norm minimizer of `½xᵀHx + cᵀx` with `H` symmetric PSD.
pub(crate) fn quadratic_minimizer(h: &Matrix, c: &Vector) -> Vector {
    let hn = h.to_nalgebra();
    let cn = nalgebra::DVector::from_column_slice(c.as_slice());
    let svd = hn.svd(true, true);
    let rhs = -cn;
    let sol = svd
        .solve(&rhs, 1e-12 * svd.singular_values.max().max(1.0))
        .expect("svd with u and v computed");
    Vector::from_vec(sol.iter().copied().collect())
}
