//! Server-side adaptive matrices `A_t`. All kinds are diagonal, so only the
//! diagonal (or a scalar) is stored.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::numerics::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveKind {
    /// `A_t = I`
    Identity,
    /// `a_t = ϑa_{t−1} + (1−ϑ)w̄_t²`, `A_t = diag(√a_t + ρ)`
    AdamDiag,
    /// `a_t = ϑa_{t−1} + (1−ϑ)‖w̄_t‖`, `A_t = (a_t + ρ)I`
    NormType,
}

impl AdaptiveKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::Identity),
            "adam_diag" => Ok(Self::AdamDiag),
            "norm_type" => Ok(Self::NormType),
            other => Err(config_err(format!("unknown adaptive kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub kind: AdaptiveKind,
    /// Elementwise accumulator for `adam_diag`; a single entry for `norm_type`;
    /// empty for `identity`.
    pub a: Vector,
    pub rho: f64,
    /// Diagonal of the current `A_t`.
    diag: Vector,
}

impl AdaptiveState {
    /// `a_0 = 0`. The initial matrix is `ρI` for the adaptive kinds and `I`
    /// for identity.
    pub fn new(kind: AdaptiveKind, d: usize, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(config_err(format!("rho must be nonnegative, got {rho}")));
        }
        let (a, diag) = match kind {
            AdaptiveKind::Identity => (Vector::zeros(0), Vector::filled(d, 1.0)),
            AdaptiveKind::AdamDiag => (Vector::zeros(d), Vector::filled(d, rho)),
            AdaptiveKind::NormType => (Vector::zeros(1), Vector::filled(d, rho)),
        };
        Ok(Self { kind, a, rho, diag })
    }

    /// Accumulate `w̄` and rebuild `A`. Identity is a no-op.
    pub fn refresh(&mut self, w_bar: &Vector, theta: f64) -> Result<()> {
        if !w_bar.is_finite() {
            return Err(Error::Numerical("non-finite averaged direction".into()));
        }
        if w_bar.len() != self.diag.len() {
            return Err(config_err("averaged direction has the wrong dimension"));
        }
        match self.kind {
            AdaptiveKind::Identity => {}
            AdaptiveKind::AdamDiag => {
                for ((a, d), w) in self
                    .a
                    .as_mut_slice()
                    .iter_mut()
                    .zip(self.diag.as_mut_slice())
                    .zip(w_bar.iter())
                {
                    *a = theta * *a + (1.0 - theta) * w * w;
                    *d = a.sqrt() + self.rho;
                }
            }
            AdaptiveKind::NormType => {
                let a = theta * self.a[0] + (1.0 - theta) * w_bar.norm();
                self.a[0] = a;
                self.diag = Vector::filled(self.diag.len(), a + self.rho);
            }
        }
        Ok(())
    }

    /// `A⁻¹w`
    pub fn inv_apply(&self, w: &Vector) -> Vector {
        match self.kind {
            AdaptiveKind::Identity => w.clone(),
            _ => Vector::from_vec(w.iter().zip(self.diag.iter()).map(|(x, d)| x / d).collect()),
        }
    }

    /// Largest diagonal entry of `A`.
    pub fn operator_norm(&self) -> f64 {
        self.diag.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest diagonal entry of `A`.
    pub fn min_diagonal(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn diagonal(&self) -> &Vector {
        &self.diag
    }
}
