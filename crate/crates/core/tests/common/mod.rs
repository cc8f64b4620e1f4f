#![allow(dead_code)]

use fedcomp_core::config::ConfigFile;
use fedcomp_core::fedsim::{Algo, RunConfig};
use fedcomp_core::problems::{
    make_maml, make_quadratic, make_quadratic_with, make_robust_fl, AnyProblem,
    HeterogeneityProfile, QuadraticOptions, SigmaMode,
};
use fedcomp_core::schedule::{validate, ScheduleParams};

pub fn quadratic(sigma: f64) -> AnyProblem {
    AnyProblem::Quadratic(
        make_quadratic(3, 20, 10, 8, HeterogeneityProfile::new(0.5, 4), sigma).unwrap(),
    )
}

pub fn robust_fl() -> AnyProblem {
    AnyProblem::RobustFl(
        make_robust_fl(5, 10, 4, 50, HeterogeneityProfile::new(0.3, 6), 0.5, SigmaMode::Sampled)
            .unwrap()
            .with_box_radius(2.0),
    )
}

pub fn maml(sigma: f64) -> AnyProblem {
    AnyProblem::Maml(
        make_maml(7, 8, 4, 0.1, HeterogeneityProfile::new(0.5, 8), sigma)
            .unwrap()
            .with_box_radius(3.0),
    )
}

pub fn all_instances() -> Vec<(&'static str, AnyProblem)> {
    vec![("quadratic", quadratic(1.0)), ("robust_fl", robust_fl()), ("maml", maml(0.3))]
}

/// Noisy quadratic used by the rate and variance-reduction experiments.
pub const RATE_CONFIG: &str = r#"
[problem]
kind = "quadratic"
d = 10
p = 10
m_clients = 4
seed = 11
sigma = 1.0
spread = 0.1
offset_scale = 0.1

[schedule]
k = 1.0
n = 10.0
c1 = 1.0
c2 = 1.0
c3 = 1.0
gamma = 0.5
q = 10
T = 1000
"#;

pub fn rate_instance() -> (ConfigFile, AnyProblem) {
    let cfg = ConfigFile::parse(RATE_CONFIG).unwrap();
    let problem = cfg.build_problem().unwrap();
    (cfg, problem)
}

/// Noiseless instance whose constants admit a theorem-validated schedule
/// with a usable step size.
pub fn converge_instance() -> AnyProblem {
    let opts = QuadraticOptions {
        a_scale: 1.0,
        a_cond: 1.0,
        q_scale: 0.464,
        q_cond: 1.0,
        offset_scale: 0.01,
        curvature_spread: 0.0,
        box_radius: 1.0,
    };
    AnyProblem::Quadratic(
        make_quadratic_with(7, 20, 10, 8, HeterogeneityProfile::new(0.0, 8), 0.0, &opts).unwrap(),
    )
}

/// Largest `γ` on the grid `γ_i = 1e-3·1.03^i` whose tuned schedule passes
/// every constraint.
pub fn largest_validated_schedule(
    problem: &AnyProblem,
    k: f64,
    q: u64,
    horizon: u64,
) -> Option<ScheduleParams> {
    use fedcomp_core::problems::CompositionProblem;
    let pc = problem.constants()?;
    (0..500)
        .rev()
        .map(|i| 1e-3 * 1.03f64.powi(i))
        .filter_map(|g| ScheduleParams::theorem_tuned(pc, k, g, 1.0, q, horizon).ok())
        .find(|p| validate(p, Some(pc)).map(|r| r.all_satisfied()).unwrap_or(false))
}

pub fn plain_schedule(q: u64, horizon: u64, gamma: f64) -> ScheduleParams {
    ScheduleParams::new(1.0, 1000.0, 10.0, 10.0, 10.0, gamma, 1.0, q, horizon).unwrap()
}

pub fn config(algo: Algo, schedule: ScheduleParams, seed: u64) -> RunConfig {
    RunConfig::new(algo, schedule, seed)
}
