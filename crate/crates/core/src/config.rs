//! TOML experiment configuration: parsing, canonical serialization, hashing,
//! and resolution into a problem instance and a [`RunConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::fedsim::{Algo, RunConfig};
use crate::numerics::Vector;
use crate::precond::AdaptiveKind;
use crate::problems::{
    make_maml, make_quadratic_with, make_robust_fl, AnyProblem, CompositionProblem,
    HeterogeneityProfile, ProblemConstants, QuadraticOptions, SigmaMode,
};
use crate::schedule::{MomentumRule, ScheduleParams, ThetaRule};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub adaptive: AdaptiveSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `quadratic`, `robust_fl` or `maml`.
    pub kind: String,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_m")]
    pub m_clients: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    #[serde(default = "default_n_per_client")]
    pub n_per_client: usize,
    #[serde(default = "default_box")]
    pub box_radius: f64,
    /// Instance seed; heterogeneity draws use `seed + 1`.
    #[serde(default)]
    pub seed: u64,
    /// JSON problem manifest to load instead of generating an instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mode: Option<SigmaMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_cond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_cond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_spread: Option<f64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            kind: "quadratic".into(),
            d: default_d(),
            p: default_p(),
            m_clients: default_m(),
            sigma: 0.0,
            spread: 0.0,
            lambda: 0.0,
            inner_lr: default_inner_lr(),
            n_per_client: default_n_per_client(),
            box_radius: default_box(),
            seed: 0,
            manifest: None,
            sigma_mode: None,
            a_scale: None,
            a_cond: None,
            q_scale: None,
            q_cond: None,
            offset_scale: None,
            curvature_spread: None,
        }
    }
}

fn default_d() -> usize {
    10
}
fn default_p() -> usize {
    5
}
fn default_m() -> usize {
    4
}
fn default_inner_lr() -> f64 {
    0.1
}
fn default_n_per_client() -> usize {
    50
}
fn default_box() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

/// Omitted `n`, `c1`, `c2`, `c3` take their smallest admissible values for
/// the instance constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    pub gamma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub q: u64,
    #[serde(rename = "T")]
    pub horizon: u64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// `fixed` or `tied_to_alpha`.
    #[serde(default = "default_theta_mode")]
    pub theta_mode: ThetaRule,
    /// `theorem` or `constant`.
    #[serde(default = "default_momentum")]
    pub momentum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varrho: Option<f64>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            k: 1.0,
            n: None,
            c1: None,
            c2: None,
            c3: None,
            gamma: 0.1,
            rho: default_rho(),
            q: 1,
            horizon: 100,
            theta: default_theta(),
            theta_mode: default_theta_mode(),
            momentum: default_momentum(),
            alpha: None,
            beta: None,
            varrho: None,
            b: None,
        }
    }
}

fn default_rho() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    0.99
}
fn default_theta_mode() -> ThetaRule {
    ThetaRule::Fixed
}
fn default_momentum() -> String {
    "theorem".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_algo")]
    pub algo: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub average_estimators_at_sync: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_every: Option<u64>,
    /// Every coordinate of `x_1`.
    #[serde(default)]
    pub x1_fill: f64,
    #[serde(default)]
    pub enforce_theorem: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algo: default_algo(),
            seed: 0,
            average_estimators_at_sync: true,
            metrics_every: None,
            x1_fill: 0.0,
            enforce_theorem: false,
        }
    }
}

fn default_algo() -> String {
    "mfcgd".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    /// `identity`, `adam_diag` or `norm_type`.
    #[serde(default = "default_adaptive")]
    pub kind: String,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        Self { kind: default_adaptive() }
    }
}

fn default_adaptive() -> String {
    "adam_diag".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_points")]
    pub gradcheck_points: usize,
    /// Overrides the per-problem tolerance (1e-6 quadratic, 1e-4 otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck_tol: Option<f64>,
    #[serde(default = "default_threshold")]
    pub rate_threshold: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { gradcheck_points: default_points(), gradcheck_tol: None, rate_threshold: default_threshold() }
    }
}

fn default_points() -> usize {
    20
}
fn default_threshold() -> f64 {
    -0.25
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config; a relative `problem.manifest` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Some(m) = &cfg.problem.manifest {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.problem.manifest = Some(dir.join(m));
                }
            }
        }
        Ok(cfg)
    }

    /// Canonical TOML: every section and defaulted key written out in fixed order.
    pub fn canonical(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// FNV-1a of the canonical serialization, as 16 hex digits.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv1a64(self.canonical()?.as_bytes())))
    }

    pub fn algo(&self) -> Result<Algo> {
        Algo::parse(&self.run.algo)
    }

    /// Per-problem gradient-check tolerance.
    pub fn gradcheck_tol(&self) -> f64 {
        self.diagnostics
            .gradcheck_tol
            .unwrap_or(if self.problem.kind == "quadratic" { 1e-6 } else { 1e-4 })
    }

    pub fn build_problem(&self) -> Result<AnyProblem> {
        let p = &self.problem;
        if let Some(path) = &p.manifest {
            let text = std::fs::read_to_string(path)?;
            let problem: AnyProblem = serde_json::from_str(&text)?;
            if problem.kind() != p.kind {
                return Err(config_err(format!(
                    "manifest holds a {} instance but problem.kind = {}",
                    problem.kind(),
                    p.kind
                )));
            }
            return Ok(problem);
        }
        let profile = HeterogeneityProfile::new(p.spread, p.seed.wrapping_add(1));
        let problem = match p.kind.as_str() {
            "quadratic" => {
                let defaults = QuadraticOptions::default();
                let opts = QuadraticOptions {
                    a_scale: p.a_scale.unwrap_or(defaults.a_scale),
                    a_cond: p.a_cond.unwrap_or(defaults.a_cond),
                    q_scale: p.q_scale.unwrap_or(defaults.q_scale),
                    q_cond: p.q_cond.unwrap_or(defaults.q_cond),
                    offset_scale: p.offset_scale.unwrap_or(defaults.offset_scale),
                    curvature_spread: p.curvature_spread.unwrap_or(defaults.curvature_spread),
                    box_radius: p.box_radius,
                };
                AnyProblem::Quadratic(make_quadratic_with(
                    p.seed, p.d, p.p, p.m_clients, profile, p.sigma, &opts,
                )?)
            }
            "robust_fl" => AnyProblem::RobustFl(
                make_robust_fl(
                    p.seed,
                    p.d,
                    p.m_clients,
                    p.n_per_client,
                    profile,
                    p.lambda,
                    p.sigma_mode.unwrap_or(SigmaMode::Sampled),
                )?
                .with_box_radius(p.box_radius),
            ),
            "maml" => AnyProblem::Maml(
                make_maml(p.seed, p.d, p.m_clients, p.inner_lr, profile, p.sigma)?
                    .with_box_radius(p.box_radius),
            ),
            other => return Err(config_err(format!("unknown problem.kind {other:?}"))),
        };
        Ok(problem)
    }

    /// Schedule for `algo`, filling omitted constants from `constants`.
    pub fn build_schedule(
        &self,
        algo: Algo,
        constants: Option<&ProblemConstants>,
    ) -> Result<ScheduleParams> {
        let s = &self.schedule;
        let momentum = match s.momentum.as_str() {
            "theorem" => MomentumRule::Theorem,
            "constant" => MomentumRule::Constant {
                alpha: s.alpha.ok_or_else(|| config_err("constant momentum needs alpha"))?,
                beta: s.beta.ok_or_else(|| config_err("constant momentum needs beta"))?,
                varrho: s.varrho.ok_or_else(|| config_err("constant momentum needs varrho"))?,
            },
            other => return Err(config_err(format!("unknown schedule.momentum {other:?}"))),
        };
        // MFCGD and the baseline precondition with the identity, i.e. ρ = 1.
        let rho = if algo == Algo::Adamfcgd && self.adaptive_kind()? != AdaptiveKind::Identity {
            s.rho
        } else {
            1.0
        };
        if s.n.is_none() && constants.is_none() {
            return Err(config_err("constants unavailable: give n explicitly"));
        }
        let tuned = if s.c1.is_none() || s.c2.is_none() || s.c3.is_none() {
            let pc = constants.ok_or_else(|| {
                config_err("constants unavailable: give c1, c2, c3 explicitly")
            })?;
            Some(ScheduleParams::theorem_tuned(pc, s.k, s.gamma, rho, s.q, s.horizon)?)
        } else {
            None
        };
        let pick = |given: Option<f64>, f: fn(&ScheduleParams) -> f64| {
            given.unwrap_or_else(|| f(tuned.as_ref().expect("tuned when a value is omitted")))
        };
        let mut params = ScheduleParams::new(
            s.k,
            2.0,
            pick(s.c1, |p| p.c1),
            pick(s.c2, |p| p.c2),
            pick(s.c3, |p| p.c3),
            s.gamma,
            s.rho,
            s.q,
            s.horizon,
        )?;
        params.theta = s.theta;
        params.theta_rule = s.theta_mode;
        params.momentum = momentum;
        params.b = s.b;
        if self.problem.kind == "maml" {
            params.inner_lr = Some(self.problem.inner_lr);
        }
        params.n = match s.n {
            Some(n) => n,
            None => {
                let pc = constants.expect("checked above");
                let mut probe = params.clone();
                probe.rho = rho;
                probe.min_n(pc) * (1.0 + 1e-12)
            }
        };
        params.check()?;
        Ok(params)
    }

    pub fn adaptive_kind(&self) -> Result<AdaptiveKind> {
        AdaptiveKind::parse(&self.adaptive.kind)
    }

    /// Run configuration for `problem`, with optional seed and algorithm overrides.
    pub fn build_run(
        &self,
        problem: &dyn CompositionProblem,
        seed: Option<u64>,
        algo: Option<Algo>,
    ) -> Result<RunConfig> {
        let algo = match algo {
            Some(a) => a,
            None => self.algo()?,
        };
        let schedule = self.build_schedule(algo, problem.constants())?;
        let mut rc = RunConfig::new(algo, schedule, seed.unwrap_or(self.run.seed));
        rc.adaptive = self.adaptive_kind()?;
        rc.average_estimators_at_sync = self.run.average_estimators_at_sync;
        rc.metrics_every = self.run.metrics_every;
        rc.enforce_theorem = self.run.enforce_theorem;
        if self.run.x1_fill != 0.0 {
            rc.x1 = Some(Vector::from_vec(vec![self.run.x1_fill; problem.dims().d]));
        }
        if algo == Algo::Baseline {
            rc = crate::fedsim::baseline_preset(&rc);
        }
        Ok(rc)
    }
}
