//! Acceptance suite. Runs without the libtest harness so every criterion's
//! PASS/FAIL line is printed; exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use fedcomp_core::cli::rate_experiment;
use fedcomp_core::diagnostics::{estimate_L, gradcheck};
use fedcomp_core::fedsim::{baseline_preset, run, run_with_workers, Algo, RunConfig, RunRecord};
use fedcomp_core::numerics::{derive_stream, Purpose, Vector};
use fedcomp_core::precond::AdaptiveKind;
use fedcomp_core::problems::{
    make_maml, make_quadratic, AnyProblem, CompositionProblem, HeterogeneityProfile,
};
use fedcomp_core::schedule::{eta, validate, MomentumRule, ScheduleParams};

use common::*;

const GRADCHECK_TOL_QUADRATIC: f64 = 1e-6;
const GRADCHECK_TOL_OTHER: f64 = 1e-4;
const GRADCHECK_POINTS: usize = 20;
const GRADCHECK_BUDGET_S: f64 = 5.0;
const SMOOTHNESS_PAIRS: usize = 10_000;
const SMOOTHNESS_SLACK: f64 = 1e-6;
const SMOOTHNESS_BUDGET_S: f64 = 10.0;
const GAP_REL_SLACK: f64 = 1e-9;
const GAP_T: u64 = 2000;
const GAP_BUDGET_S: f64 = 60.0;
const REDUCTION_T: u64 = 500;
const REDUCTION_TOL: f64 = 1e-12;
const CONVERGE_T: u64 = 5000;
const CONVERGE_TOL: f64 = 1e-6;
const CONVERGE_BUDGET_S: f64 = 10.0;
const RATE_HORIZONS: [u64; 3] = [1_000, 10_000, 100_000];
const RATE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const RATE_THRESHOLD: f64 = -0.25;
const RATE_BUDGET_S: f64 = 300.0;
const VR_T: u64 = 10_000;
const VR_SEEDS: u64 = 10;
const VR_MIN_WINS: usize = 8;
const REPRO_WORKERS: [usize; 3] = [1, 2, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_gradient_oracles() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut pass = true;
    for (i, (name, problem)) in all_instances().into_iter().enumerate() {
        let tol = if name == "quadratic" { GRADCHECK_TOL_QUADRATIC } else { GRADCHECK_TOL_OTHER };
        let mut rng = derive_stream(100 + i as u64, 0, 0, Purpose::Probe);
        let err = gradcheck(&problem, GRADCHECK_POINTS, &mut rng);
        pass &= err <= tol;
        worst.push(format!("{name} {err:.2e}/{tol:.0e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < GRADCHECK_BUDGET_S;
    outcome(pass, format!("max rel err: {}; {secs:.2}s", worst.join(", ")))
}

fn c2_smoothness() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, (name, problem)) in all_instances().into_iter().enumerate() {
        let bound = problem.constants().unwrap().smoothness();
        let mut rng = derive_stream(200 + i as u64, 0, 0, Purpose::Probe);
        let est = estimate_L(&problem, SMOOTHNESS_PAIRS, &mut rng);
        pass &= est <= bound * (1.0 + SMOOTHNESS_SLACK);
        parts.push(format!("{name} {est:.3e} <= {bound:.3e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < SMOOTHNESS_BUDGET_S;
    outcome(pass, format!("{}; {secs:.2}s", parts.join(", ")))
}

fn gap_matrix_configs() -> Vec<(&'static str, AnyProblem, RunConfig)> {
    let mut out = Vec::new();
    for (name, problem) in all_instances() {
        for algo in [Algo::Mfcgd, Algo::Adamfcgd] {
            for seed in 0..3 {
                let mut c = config(algo, plain_schedule(10, GAP_T, 0.2), seed);
                c.metrics_every = Some(1);
                out.push((name, problem.clone(), c));
            }
        }
    }
    out
}

fn c3_gap_inequality() -> Outcome {
    let start = Instant::now();
    let mut rows = 0usize;
    let mut bad = 0usize;
    let mut failed_runs = 0usize;
    let mut worst_ratio = 0.0_f64;
    for (_, problem, c) in gap_matrix_configs() {
        let rec = run(&problem, &c).unwrap();
        failed_runs += rec.failed.is_some() as usize;
        for r in &rec.rows {
            rows += 1;
            let holds = r.lemma2_lhs <= r.lemma2_rhs * (1.0 + GAP_REL_SLACK);
            bad += !holds as usize;
            if r.lemma2_rhs > 0.0 {
                worst_ratio = worst_ratio.max(r.lemma2_lhs / r.lemma2_rhs);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad == 0 && failed_runs == 0 && rows > 0 && secs < GAP_BUDGET_S;
    outcome(
        pass,
        format!(
            "{bad} violations in {rows} logged rows over 18 runs, max lhs/rhs {worst_ratio:.3e}; {secs:.1}s"
        ),
    )
}

fn reduction_instances() -> Vec<(&'static str, AnyProblem)> {
    vec![
        (
            "quadratic",
            AnyProblem::Quadratic(
                make_quadratic(21, 20, 10, 1, HeterogeneityProfile::iid(22), 0.0).unwrap(),
            ),
        ),
        (
            "maml",
            AnyProblem::Maml(make_maml(23, 8, 1, 0.1, HeterogeneityProfile::iid(24), 0.0).unwrap()),
        ),
    ]
}

fn c4_deterministic_reduction() -> Outcome {
    let mut worst = 0.0_f64;
    for (_, problem) in reduction_instances() {
        let mut schedule = ScheduleParams::new(1.0, 10.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1, 1).unwrap();
        schedule.momentum = MomentumRule::Constant { alpha: 1.0, beta: 1.0, varrho: 1.0 };
        let d = problem.dims().d;
        let mut x = Vector::zeros(d);
        for t in 1..=REDUCTION_T {
            let g = problem.exact_grad_F(&x);
            x.axpy(-schedule.gamma * eta(&schedule, t), &g);
            let mut s = schedule.clone();
            s.horizon = t;
            let mut c = config(Algo::Mfcgd, s, 5);
            c.adaptive = AdaptiveKind::Identity;
            c.projection = Some((1e12, 1e12));
            c.metrics_every = Some(t);
            let rec = run(&problem, &c).unwrap();
            let scale = x.max_abs().max(1.0);
            worst = worst.max(rec.x_final.sub(&x).max_abs() / scale);
        }
    }
    outcome(
        worst <= REDUCTION_TOL,
        format!("max |x_run - x_gd|_inf / max(1,|x|_inf) over t <= {REDUCTION_T}: {worst:.2e}"),
    )
}

fn c5_accounting() -> Outcome {
    let problem = quadratic(1.0);
    let mut detail = Vec::new();
    let mut pass = true;
    for (t, q) in [(10u64, 5u64), (13, 5), (7, 1), (1, 3), (100, 7), (2000, 10)] {
        for algo in [Algo::Mfcgd, Algo::Adamfcgd, Algo::Baseline] {
            let mut c = config(algo, plain_schedule(q, t, 0.2), 1);
            if algo == Algo::Baseline {
                c = baseline_preset(&c);
            }
            let rec = run(&problem, &c).unwrap();
            let ok = rec.samples_per_client == 2 * q + 2 * t
                && rec.comms == t / q
                && rec.rows.last().map(|r| r.samples_cum) == Some(2 * q + 2 * t)
                && rec.rows.last().map(|r| r.comms_cum) == Some(t / q);
            pass &= ok;
            if (t, q) == (10, 5) && algo == Algo::Mfcgd {
                pass &= (rec.samples_per_client, rec.comms) == (30, 2);
                detail.push(format!(
                    "T=10 q=5 -> ({}, {})",
                    rec.samples_per_client, rec.comms
                ));
            }
        }
    }
    detail.push("2q+2T and floor(T/q) on 18 runs".into());
    outcome(pass, detail.join("; "))
}

fn c6_consensus() -> Outcome {
    let mut pass = true;
    let mut min_gap = f64::INFINITY;
    let mut checked = 0usize;
    for (_, problem) in all_instances() {
        for kind in [AdaptiveKind::AdamDiag, AdaptiveKind::NormType] {
            let q = 7;
            let mut s = plain_schedule(q, 300, 0.2);
            s.rho = 0.3;
            let mut c = config(Algo::Adamfcgd, s, 2);
            c.adaptive = kind;
            c.metrics_every = Some(1);
            let rec = run(&problem, &c).unwrap();
            for r in &rec.rows {
                if r.t == 1 || (r.t - 1) % q == 0 {
                    checked += 1;
                    pass &= r.consensus_err == 0.0;
                }
            }
            pass &= rec.audit.max_post_sync_consensus == 0.0;
            pass &= rec.audit.min_a_diag >= c.schedule.rho;
            min_gap = min_gap.min(rec.audit.min_a_diag - c.schedule.rho);
        }
    }
    outcome(
        pass,
        format!("{checked} post-sync rows with zero consensus error; min(A diag) - rho = {min_gap:.3e}"),
    )
}

fn c7_noiseless_convergence() -> Outcome {
    let problem = converge_instance();
    let pc = problem.constants().unwrap().clone();
    let schedule = ScheduleParams::theorem_tuned(&pc, 1.0, 0.24, 1.0, 2, CONVERGE_T).unwrap();
    let validated = validate(&schedule, Some(&pc)).unwrap().all_satisfied();
    let start = Instant::now();
    let mut c = config(Algo::Mfcgd, schedule, 0);
    c.enforce_theorem = true;
    c.metrics_every = Some(100);
    let rec = run(&problem, &c).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = validated
        && rec.failed.is_none()
        && rec.final_grad_norm <= CONVERGE_TOL
        && secs < CONVERGE_BUDGET_S;
    outcome(
        pass,
        format!(
            "validated={validated}, |grad F(x_T)| = {:.3e} at T={CONVERGE_T}; {secs:.2}s",
            rec.final_grad_norm
        ),
    )
}

fn c8_rate() -> Outcome {
    let start = Instant::now();
    let (cfg, problem) = rate_instance();
    let (main, baseline, _) = rate_experiment(&cfg, &problem, &RATE_HORIZONS, &RATE_SEEDS).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = main.fit.slope <= RATE_THRESHOLD
        && baseline.fit.slope > main.fit.slope
        && secs < RATE_BUDGET_S;
    outcome(
        pass,
        format!(
            "mfcgd slope {:.4} (<= {RATE_THRESHOLD}), baseline slope {:.4}; {secs:.1}s",
            main.fit.slope, baseline.fit.slope
        ),
    )
}

fn final_decile_track_h(rec: &RunRecord) -> f64 {
    let n = rec.rows.len();
    let tail = &rec.rows[n - (n / 10).max(1)..];
    tail.iter().map(|r| r.track_h).sum::<f64>() / tail.len() as f64
}

fn c9_variance_reduction() -> Outcome {
    let (_, problem) = rate_instance();
    let q = fedcomp_core::cli::sync_period_for(VR_T);
    let Some(schedule) = largest_validated_schedule(&problem, 1.0, q, VR_T) else {
        return outcome(false, "no validated schedule on the gamma grid".into());
    };
    let mut wins = 0;
    let mut equal_budget = true;
    let mut ratios = Vec::new();
    for seed in 0..VR_SEEDS {
        let mut c = config(Algo::Mfcgd, schedule.clone(), seed);
        c.metrics_every = Some(1);
        let a = run(&problem, &c).unwrap();
        let b = run(&problem, &baseline_preset(&c)).unwrap();
        equal_budget &= a.samples_per_client == b.samples_per_client;
        let (ha, hb) = (final_decile_track_h(&a), final_decile_track_h(&b));
        wins += (ha < hb) as usize;
        ratios.push(ha / hb);
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    outcome(
        equal_budget && wins >= VR_MIN_WINS,
        format!(
            "theorem schedule gamma={:.3} wins {wins}/{VR_SEEDS} seeds; worst mfcgd/baseline ratio {worst:.3e}",
            schedule.gamma
        ),
    )
}

fn c10_reproducibility() -> Outcome {
    let mut pass = true;
    let mut runs = 0;
    for (_, problem) in all_instances() {
        for algo in [Algo::Mfcgd, Algo::Adamfcgd] {
            let c = config(algo, plain_schedule(5, 300, 0.2), 42);
            let reference = run_with_workers(&problem, &c, 1).unwrap().to_csv();
            for w in REPRO_WORKERS {
                for _ in 0..2 {
                    runs += 1;
                    pass &= run_with_workers(&problem, &c, w).unwrap().to_csv() == reference;
                }
            }
        }
    }
    outcome(pass, format!("{runs} reruns byte-identical across workers {REPRO_WORKERS:?}"))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("gradient-oracle agreement", c1_gradient_oracles),
        ("smoothness audit", c2_smoothness),
        ("gap inequality audit", c3_gap_inequality),
        ("deterministic reduction", c4_deterministic_reduction),
        ("sample and communication accounting", c5_accounting),
        ("consensus and adaptive floor", c6_consensus),
        ("noiseless convergence", c7_noiseless_convergence),
        ("rate exponent", c8_rate),
        ("variance reduction", c9_variance_reduction),
        ("reproducibility", c10_reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!("criterion {:>2} {:<36} {}: {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
