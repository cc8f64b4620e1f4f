//! Recursive-momentum trackers for the inner value, the inner Jacobian and
//! the outer gradient, plus the norm-ball projection that keeps the last two
//! bounded.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::numerics::{fro_norm, mat_t_vec, Entries, Matrix, RngStream, Vector};
use crate::problems::CompositionProblem;

/// Per-client tracker state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    /// Inner-value tracker, length `p`.
    pub h: Vector,
    /// Inner-Jacobian tracker, `p x d`.
    pub u: Matrix,
    /// Outer-gradient tracker, length `p`.
    pub v: Vector,
    /// Composite direction `uᵀv`, length `d`.
    pub w: Vector,
}

impl TrackerState {
    pub fn is_finite(&self) -> bool {
        self.h.is_finite() && self.u.is_finite() && self.v.is_finite() && self.w.is_finite()
    }
}

/// Types that can be rescaled onto a Frobenius ball.
pub trait Projectable: Entries + Sized {
    fn rescaled(&self, c: f64) -> Self;
}

impl Projectable for Vector {
    fn rescaled(&self, c: f64) -> Self {
        self.scaled(c)
    }
}

impl Projectable for Matrix {
    fn rescaled(&self, c: f64) -> Self {
        self.scaled(c)
    }
}

/// Project onto `{z : ‖z‖_F ≤ radius}`.
pub fn project_ball<T: Projectable + Clone>(z: &T, radius: f64) -> Result<T> {
    let norm = fro_norm(z);
    if !norm.is_finite() {
        return Err(Error::Numerical("non-finite input to projection".into()));
    }
    if norm <= radius {
        Ok(z.clone())
    } else {
        Ok(z.rescaled(radius / norm))
    }
}

fn same_len(a: &Vector, b: &Vector, what: &str) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(config_err(format!("{what}: length {} vs {}", a.len(), b.len())))
    }
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(config_err(format!(
            "{what}: shape {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )))
    }
}

/// `g_new + (1−α)(h − g_old)`
pub fn storm_value_update(h: &Vector, g_new: &Vector, g_old: &Vector, alpha: f64) -> Result<Vector> {
    same_len(h, g_new, "value tracker")?;
    same_len(h, g_old, "value tracker")?;
    let mut out = g_new.clone();
    out.axpy(1.0 - alpha, &h.sub(g_old));
    Ok(out)
}

/// `Π_{C_g}[J_new + (1−β)(u − J_old)]`
pub fn storm_jac_update(
    u: &Matrix,
    j_new: &Matrix,
    j_old: &Matrix,
    beta: f64,
    c_g: f64,
) -> Result<Matrix> {
    same_shape(u, j_new, "jacobian tracker")?;
    same_shape(u, j_old, "jacobian tracker")?;
    let mut out = j_new.clone();
    out.axpy(1.0 - beta, &u.sub(j_old));
    project_ball(&out, c_g)
}

/// `Π_{C_f}[∇f_new + (1−ϱ)(v − ∇f_old)]`
pub fn storm_outer_update(
    v: &Vector,
    grad_new: &Vector,
    grad_old: &Vector,
    varrho: f64,
    c_f: f64,
) -> Result<Vector> {
    same_len(v, grad_new, "outer tracker")?;
    same_len(v, grad_old, "outer tracker")?;
    let mut out = grad_new.clone();
    out.axpy(1.0 - varrho, &v.sub(grad_old));
    project_ball(&out, c_f)
}

/// `uᵀv`
pub fn composite_direction(u: &Matrix, v: &Vector) -> Result<Vector> {
    mat_t_vec(u, v)
}

/// Minibatch initialization from `q` inner and `q` outer draws at `x_1`.
/// `u` and `v` are projected onto their balls so the bounds hold from the
/// first iterate; `v` is evaluated at the averaged `h`.
pub fn cold_start<P: CompositionProblem + ?Sized>(
    problem: &P,
    m: usize,
    x1: &Vector,
    q: u64,
    bounds: (f64, f64),
    inner_rng: &mut RngStream,
    outer_rng: &mut RngStream,
) -> Result<TrackerState> {
    if q == 0 {
        return Err(config_err("cold start needs q >= 1"));
    }
    let (c_f, c_g) = bounds;
    let mut values = Vec::with_capacity(q as usize);
    let mut jacs = Vec::with_capacity(q as usize);
    for _ in 0..q {
        let s = problem.draw_inner(m, inner_rng);
        values.push(problem.sample_g(m, x1, &s));
        jacs.push(problem.sample_jac_g(m, x1, &s));
    }
    let h = Vector::mean_of(&values).expect("q >= 1");
    let u = Matrix::mean_of(&jacs).expect("q >= 1");
    let grads: Vec<Vector> = (0..q)
        .map(|_| {
            let s = problem.draw_outer(m, outer_rng);
            problem.sample_grad_f(m, &h, &s)
        })
        .collect();
    let v = Vector::mean_of(&grads).expect("q >= 1");
    let u = project_ball(&u, c_g)?;
    let v = project_ball(&v, c_f)?;
    let w = composite_direction(&u, &v)?;
    Ok(TrackerState { h, u, v, w })
}
