//! The client/server driver: local steps, synchronization rounds, sample and
//! communication accounting, metric logging and output selection.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{lemma2_gap_check, GradMapping, Lemma2Bounds};
use crate::error::{config_err, Error, Result};
use crate::estimator::{
    cold_start, composite_direction, storm_jac_update, storm_outer_update, storm_value_update,
    TrackerState,
};
use crate::numerics::{derive_stream, fro_norm, Matrix, Purpose, Vector, SERVER_LINEAGE};
use crate::precond::{AdaptiveKind, AdaptiveState};
use crate::problems::CompositionProblem;
use crate::schedule::{eta, momenta_quiet, theta_at, validate, MomentumRule, ScheduleParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Mfcgd,
    Adamfcgd,
    /// Projected compositional SGD with local averaging: all momenta 1, `A = I`.
    Baseline,
}

impl Algo {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mfcgd" => Ok(Self::Mfcgd),
            "adamfcgd" => Ok(Self::Adamfcgd),
            "baseline" => Ok(Self::Baseline),
            other => Err(config_err(format!("unknown algo {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mfcgd => "mfcgd",
            Self::Adamfcgd => "adamfcgd",
            Self::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algo: Algo,
    pub schedule: ScheduleParams,
    /// Adaptive-matrix generator for `adamfcgd`; the other algorithms use identity.
    pub adaptive: AdaptiveKind,
    pub average_estimators_at_sync: bool,
    pub master_seed: u64,
    /// Log every this many iterations; `None` picks `max(1, ⌈T/10⁴⌉)`.
    pub metrics_every: Option<u64>,
    /// Initial point; `None` is the origin.
    pub x1: Option<Vector>,
    /// Projection radii `(C_f, C_g)`; `None` uses the problem constants.
    pub projection: Option<(f64, f64)>,
    pub enforce_theorem: bool,
    /// Worker threads for client updates; `None` reads `FEDCOMP_THREADS`, then
    /// falls back to one thread.
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn new(algo: Algo, schedule: ScheduleParams, master_seed: u64) -> Self {
        Self {
            algo,
            schedule,
            adaptive: AdaptiveKind::AdamDiag,
            average_estimators_at_sync: true,
            master_seed,
            metrics_every: None,
            x1: None,
            projection: None,
            enforce_theorem: false,
            workers: None,
        }
    }

    /// The adaptive kind actually used by this algorithm.
    pub fn effective_adaptive(&self) -> AdaptiveKind {
        match self.algo {
            Algo::Adamfcgd => self.adaptive,
            Algo::Mfcgd | Algo::Baseline => AdaptiveKind::Identity,
        }
    }

    /// Schedule as seen by the theorem check: MFCGD and the baseline run with
    /// `A = I`, which is the `ρ = 1` case.
    pub fn theorem_schedule(&self) -> ScheduleParams {
        let mut s = self.schedule.clone();
        if self.effective_adaptive() == AdaptiveKind::Identity {
            s.rho = 1.0;
        }
        s
    }

    pub fn cadence(&self) -> u64 {
        self.metrics_every
            .unwrap_or_else(|| self.schedule.horizon.div_ceil(10_000))
            .max(1)
    }
}

/// Variance reduction off: unit momenta and identity preconditioning, with
/// every other field preserved.
pub fn baseline_preset(config: &RunConfig) -> RunConfig {
    let mut out = config.clone();
    out.algo = Algo::Baseline;
    out.adaptive = AdaptiveKind::Identity;
    out.schedule.momentum = MomentumRule::Constant { alpha: 1.0, beta: 1.0, varrho: 1.0 };
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub m: usize,
    pub x: Vector,
    pub tracker: TrackerState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub x_bar: Vector,
    pub adaptive: AdaptiveState,
    /// Next iteration to execute (1-based).
    pub t: u64,
    pub comms: u64,
    pub samples_per_client: u64,
}

/// Everything the per-iteration updates need besides the states.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub params: &'a ScheduleParams,
    pub master_seed: u64,
    /// `(C_f, C_g)` projection radii.
    pub bounds: (f64, f64),
}

fn resolve_bounds<P: CompositionProblem + ?Sized>(
    problem: &P,
    config: &RunConfig,
) -> Result<(f64, f64)> {
    if let Some(b) = config.projection {
        return Ok(b);
    }
    problem
        .constants()
        .map(|c| (c.c_f, c.c_g))
        .ok_or_else(|| config_err("constants unavailable: projection radii must be given"))
}

/// Cold-start every client at `x_1` and generate `A_1` from the averaged
/// cold-start direction.
pub fn init_run<P: CompositionProblem + ?Sized>(
    problem: &P,
    config: &RunConfig,
) -> Result<(ServerState, Vec<ClientState>)> {
    config.schedule.check()?;
    if config.enforce_theorem {
        let report = validate(&config.theorem_schedule(), problem.constants())?;
        let violations = report.violations();
        if !violations.is_empty() {
            let list: Vec<String> = violations
                .iter()
                .map(|c| format!("{} (lhs={:e}, rhs={:e})", c.id, c.lhs, c.rhs))
                .collect();
            return Err(config_err(format!("theorem constraints violated: {}", list.join("; "))));
        }
    }
    let dims = problem.dims();
    let x1 = match &config.x1 {
        Some(x) if x.len() != dims.d => {
            return Err(config_err(format!("x1 has length {}, expected {}", x.len(), dims.d)))
        }
        Some(x) => x.clone(),
        None => Vector::zeros(dims.d),
    };
    let bounds = resolve_bounds(problem, config)?;
    let q = config.schedule.q;
    let seed = config.master_seed;

    let clients = (0..dims.m)
        .map(|m| {
            let mut zi = derive_stream(seed, m as u64, 0, Purpose::ColdInner);
            let mut zo = derive_stream(seed, m as u64, 0, Purpose::ColdOuter);
            let tracker = cold_start(problem, m, &x1, q, bounds, &mut zi, &mut zo)?;
            Ok(ClientState { m, x: x1.clone(), tracker })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adaptive =
        AdaptiveState::new(config.effective_adaptive(), dims.d, config.schedule.rho)?;
    let w_bar = Vector::mean_of(clients.iter().map(|c| &c.tracker.w)).expect("M >= 1");
    adaptive.refresh(&w_bar, theta_at(&config.schedule, 1))?;

    let server = ServerState { x_bar: x1, adaptive, t: 1, comms: 0, samples_per_client: 2 * q };
    Ok((server, clients))
}

/// Move the client to `x_new` and advance its trackers with one inner and
/// one outer draw for iteration `t`.
pub fn advance_trackers<P: CompositionProblem + ?Sized>(
    problem: &P,
    client: &mut ClientState,
    x_new: Vector,
    t: u64,
    ctx: &StepContext<'_>,
) -> Result<()> {
    let m = client.m;
    let mom = momenta_quiet(ctx.params, t);
    let mut zeta_rng = derive_stream(ctx.master_seed, m as u64, t, Purpose::Inner);
    let mut xi_rng = derive_stream(ctx.master_seed, m as u64, t, Purpose::Outer);
    let zeta = problem.draw_inner(m, &mut zeta_rng);
    let xi = problem.draw_outer(m, &mut xi_rng);

    let tr = &client.tracker;
    let h = storm_value_update(
        &tr.h,
        &problem.sample_g(m, &x_new, &zeta),
        &problem.sample_g(m, &client.x, &zeta),
        mom.alpha,
    )?;
    let u = storm_jac_update(
        &tr.u,
        &problem.sample_jac_g(m, &x_new, &zeta),
        &problem.sample_jac_g(m, &client.x, &zeta),
        mom.beta,
        ctx.bounds.1,
    )?;
    let v = storm_outer_update(
        &tr.v,
        &problem.sample_grad_f(m, &h, &xi),
        &problem.sample_grad_f(m, &tr.h, &xi),
        mom.varrho,
        ctx.bounds.0,
    )?;
    let w = composite_direction(&u, &v)?;
    client.x = x_new;
    client.tracker = TrackerState { h, u, v, w };
    if !client.x.is_finite() || !client.tracker.is_finite() {
        return Err(Error::Numerical(format!("client {m} state is not finite at t={t}")));
    }
    Ok(())
}

/// Off-sync iteration for one client: `x ← x − γη_t A_t⁻¹ w`, then the
/// tracker updates.
pub fn local_step<P: CompositionProblem + ?Sized>(
    problem: &P,
    client: &mut ClientState,
    adaptive: &AdaptiveState,
    t: u64,
    ctx: &StepContext<'_>,
) -> Result<()> {
    let step = ctx.params.gamma * eta(ctx.params, t);
    let mut x_new = client.x.clone();
    x_new.axpy(-step, &adaptive.inv_apply(&client.tracker.w));
    advance_trackers(problem, client, x_new, t, ctx)
}

/// Outcome of the server half of a sync iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncOutcome {
    pub x_bar: Vector,
    pub w_bar: Vector,
    pub x_next: Vector,
    /// `‖(x̄_t − x̄_{t+1})/(η_tγ) − A_t⁻¹w̄_t‖`
    pub grad_mapping_err: f64,
}

/// Server aggregation at a sync iteration: average `w` and `x`, refresh `A_t`
/// (except at `t = 1`, where `A_1` already exists), take the averaged step and
/// return the point to broadcast.
pub fn sync_step(
    clients: &[ClientState],
    server: &mut ServerState,
    t: u64,
    params: &ScheduleParams,
) -> Result<SyncOutcome> {
    if !t.is_multiple_of(params.q) {
        return Err(config_err(format!("sync requested at t={t}, which is not a multiple of q")));
    }
    let w_bar = Vector::mean_of(clients.iter().map(|c| &c.tracker.w)).expect("M >= 1");
    let x_bar = Vector::mean_of(clients.iter().map(|c| &c.x)).expect("M >= 1");
    if t > 1 {
        server.adaptive.refresh(&w_bar, theta_at(params, t))?;
    }
    let eta_t = eta(params, t);
    let direction = server.adaptive.inv_apply(&w_bar);
    let mut x_next = x_bar.clone();
    x_next.axpy(-params.gamma * eta_t, &direction);
    let mapping = GradMapping::new(&x_bar, &x_next, eta_t, params.gamma);
    let grad_mapping_err = mapping.d_bar.sub(&direction).norm() / direction.norm().max(1.0);
    server.comms += 1;
    server.x_bar = x_next.clone();
    Ok(SyncOutcome { x_bar, w_bar, x_next, grad_mapping_err })
}

/// Replace every client's trackers by their across-client means.
pub fn average_trackers(clients: &mut [ClientState]) -> Result<()> {
    let h = Vector::mean_of(clients.iter().map(|c| &c.tracker.h)).expect("M >= 1");
    let u = Matrix::mean_of(clients.iter().map(|c| &c.tracker.u)).expect("M >= 1");
    let v = Vector::mean_of(clients.iter().map(|c| &c.tracker.v)).expect("M >= 1");
    let w = composite_direction(&u, &v)?;
    let shared = TrackerState { h, u, v, w };
    for c in clients.iter_mut() {
        c.tracker = shared.clone();
    }
    Ok(())
}

/// One logged iteration, measured at the start of iteration `t`; counters
/// and momenta refer to the completed iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: u64,
    pub eta_t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub varrho: f64,
    pub grad_norm: f64,
    pub f_value: f64,
    pub consensus_err: f64,
    pub track_h: f64,
    pub track_u: f64,
    pub track_v: f64,
    pub lemma2_lhs: f64,
    pub lemma2_rhs: f64,
    pub a_norm: f64,
    pub samples_cum: u64,
    pub comms_cum: u64,
}

pub const CSV_HEADER: &str = "t,eta_t,alpha,beta,varrho,grad_norm,f_value,consensus_err,track_h,track_u,track_v,lemma2_lhs,lemma2_rhs,a_norm,samples_cum,comms_cum";

/// Checks accumulated at every sync and every iteration, independent of the
/// logging cadence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub syncs: u64,
    pub max_grad_mapping_err: f64,
    /// Smallest diagonal entry of `A_t` over all syncs.
    pub min_a_diag: f64,
    /// Largest `‖A_t‖` over all iterations.
    pub max_a_norm: f64,
    /// `√((1/T) Σ_t ‖A_t‖²)`
    pub a_norm_rms: f64,
    /// Largest consensus error measured right after a broadcast.
    pub max_post_sync_consensus: f64,
    pub max_w_norm: f64,
    pub max_u_norm: f64,
    pub max_v_norm: f64,
    pub lemma2_violations: u64,
    pub clamped_steps: u64,
    /// Iterations whose averaged point left the declared box.
    pub box_exits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algo: Algo,
    pub master_seed: u64,
    pub horizon: u64,
    pub q: u64,
    pub rows: Vec<MetricsRow>,
    /// Set when the run aborted; rows up to the failure are kept.
    pub failed: Option<String>,
    pub iterations_completed: u64,
    pub samples_per_client: u64,
    pub comms: u64,
    /// Uniformly drawn averaged iterate `x̄_t`, `t ∈ [1, T]`.
    pub x_hat: Vector,
    pub x_hat_t: u64,
    pub x_hat_grad_norm: f64,
    /// `x̄_{T+1}`, the point after the last iteration.
    pub x_final: Vector,
    pub final_grad_norm: f64,
    pub argmin_t: u64,
    pub min_grad_norm: f64,
    /// `(1/T) Σ_t ‖∇F(x̄_t)‖` over every iteration, logged or not.
    pub mean_grad_norm: f64,
    pub audit: RunAudit,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 + self.rows.len() * 320);
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let reals = [
                r.eta_t,
                r.alpha,
                r.beta,
                r.varrho,
                r.grad_norm,
                r.f_value,
                r.consensus_err,
                r.track_h,
                r.track_u,
                r.track_v,
                r.lemma2_lhs,
                r.lemma2_rhs,
                r.a_norm,
            ];
            write!(s, "{}", r.t).unwrap();
            for v in reals {
                write!(s, ",{v:.16e}").unwrap();
            }
            writeln!(s, ",{},{}", r.samples_cum, r.comms_cum).unwrap();
        }
        if let Some(msg) = &self.failed {
            writeln!(s, "# status=failed: {msg}").unwrap();
        }
        s
    }

    /// Summary object; the config hash is supplied by the caller.
    pub fn summary_json(&self, config_hash: &str) -> serde_json::Value {
        serde_json::json!({
            "config_hash": config_hash,
            "master_seed": self.master_seed,
            "algo": self.algo.name(),
            "status": if self.failed.is_some() { "failed" } else { "ok" },
            "failure": self.failed,
            "T": self.horizon,
            "q": self.q,
            "iterations_completed": self.iterations_completed,
            "samples": self.samples_per_client,
            "comms": self.comms,
            "outputs": {
                "x_hat": self.x_hat,
                "x_hat_t": self.x_hat_t,
                "x_hat_grad_norm": self.x_hat_grad_norm,
                "x_final": self.x_final,
                "final_grad_norm": self.final_grad_norm,
                "argmin_t": self.argmin_t,
                "min_grad_norm": self.min_grad_norm,
            },
            "final_metrics": {
                "mean_grad_norm": self.mean_grad_norm,
                "last_row": self.rows.last(),
            },
            "audit": self.audit,
            "wall_time_s": self.wall_time_s,
        })
    }
}

fn thread_count(config: &RunConfig) -> usize {
    config
        .workers
        .or_else(|| std::env::var("FEDCOMP_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

pub fn run<P: CompositionProblem + ?Sized>(problem: &P, config: &RunConfig) -> Result<RunRecord> {
    let threads = thread_count(config);
    if threads == 1 {
        return run_inner(problem, config, false);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(problem, config, true))
}

/// Run with an explicit worker count, overriding the config and environment.
pub fn run_with_workers<P: CompositionProblem + ?Sized>(
    problem: &P,
    config: &RunConfig,
    workers: usize,
) -> Result<RunRecord> {
    let mut c = config.clone();
    c.workers = Some(workers);
    run(problem, &c)
}

fn for_each_client<F>(clients: &mut [ClientState], parallel: bool, f: F) -> Result<()>
where
    F: Fn(&mut ClientState) -> Result<()> + Sync + Send,
{
    let results: Vec<Result<()>> = if parallel {
        clients.par_iter_mut().map(&f).collect()
    } else {
        clients.iter_mut().map(&f).collect()
    };
    results.into_iter().collect()
}

struct Logger {
    every: u64,
    horizon: u64,
}

impl Logger {
    fn due(&self, t: u64) -> bool {
        t == 1 || t == self.horizon || t.is_multiple_of(self.every)
    }
}

fn run_inner<P: CompositionProblem + ?Sized>(
    problem: &P,
    config: &RunConfig,
    parallel: bool,
) -> Result<RunRecord> {
    let started = Instant::now();
    let params = &config.schedule;
    let (mut server, mut clients) = init_run(problem, config)?;
    let bounds = resolve_bounds(problem, config)?;
    let ctx = StepContext { params, master_seed: config.master_seed, bounds };
    let lemma_bounds = Lemma2Bounds {
        c_f: bounds.0,
        c_g: problem.constants().map_or(bounds.1, |c| c.c_g),
        l_f: problem.constants().map_or(f64::INFINITY, |c| c.l_f),
    };
    let horizon = params.horizon;
    let logger = Logger { every: config.cadence(), horizon };
    let box_radius = problem.box_radius();
    let mut select = derive_stream(config.master_seed, SERVER_LINEAGE, 0, Purpose::OutputSelect);

    let mut rows = Vec::new();
    let mut audit = RunAudit { min_a_diag: f64::INFINITY, ..RunAudit::default() };
    let mut grad_sum = 0.0;
    let mut a_sq_sum = 0.0;
    let mut x_hat = server.x_bar.clone();
    let mut x_hat_t = 1;
    let mut x_hat_grad = f64::NAN;
    let mut min_grad = f64::INFINITY;
    let mut argmin_t = 1;
    let mut failed = None;
    let mut completed = 0;
    let mut warned_box = false;

    for t in 1..=horizon {
        let x_bar = Vector::mean_of(clients.iter().map(|c| &c.x)).expect("M >= 1");
        let grad = problem.exact_grad_F(&x_bar);
        let grad_norm = grad.norm();
        if !grad_norm.is_finite() {
            failed = Some(format!("non-finite gradient at t={t}"));
            break;
        }
        grad_sum += grad_norm;
        if grad_norm < min_grad {
            min_grad = grad_norm;
            argmin_t = t;
        }
        if select.below(t as usize) == 0 {
            x_hat = x_bar.clone();
            x_hat_t = t;
            x_hat_grad = grad_norm;
        }
        if x_bar.max_abs() > box_radius {
            audit.box_exits += 1;
            if !warned_box {
                log::warn!("averaged iterate left the box ‖x‖∞ ≤ {box_radius} at t={t}");
                warned_box = true;
            }
        }
        for c in &clients {
            audit.max_w_norm = audit.max_w_norm.max(c.tracker.w.norm());
            audit.max_u_norm = audit.max_u_norm.max(fro_norm(&c.tracker.u));
            audit.max_v_norm = audit.max_v_norm.max(c.tracker.v.norm());
        }

        let mut row = if logger.due(t) {
            Some(measure_row(problem, &clients, &x_bar, t, params, lemma_bounds, &mut audit))
        } else {
            None
        };

        let step = if t % params.q == 0 {
            sync_iteration(problem, &mut clients, &mut server, t, &ctx, parallel, config, &mut audit)
        } else {
            let adaptive = &server.adaptive;
            for_each_client(&mut clients, parallel, |c| local_step(problem, c, adaptive, t, &ctx))
        };
        let a_norm = server.adaptive.operator_norm();
        a_sq_sum += a_norm * a_norm;
        audit.max_a_norm = audit.max_a_norm.max(a_norm);
        if momenta_quiet(params, t).clamped {
            if audit.clamped_steps == 0 {
                log::warn!("momenta clamped to 1 from t={t}; schedule is outside the theorem regime");
            }
            audit.clamped_steps += 1;
        }

        if let Err(e) = step {
            match e {
                Error::Numerical(msg) => {
                    if let Some(r) = row.as_mut() {
                        r.a_norm = a_norm;
                        rows.push(r.clone());
                    }
                    failed = Some(msg);
                    break;
                }
                other => return Err(other),
            }
        }
        server.t = t + 1;
        server.samples_per_client += 2;
        completed = t;

        if let Some(mut r) = row {
            r.a_norm = a_norm;
            r.samples_cum = server.samples_per_client;
            r.comms_cum = server.comms;
            rows.push(r);
        }
    }

    let x_final = Vector::mean_of(clients.iter().map(|c| &c.x)).expect("M >= 1");
    let final_grad_norm = problem.exact_grad_F(&x_final).norm();
    audit.a_norm_rms = if completed > 0 { (a_sq_sum / completed as f64).sqrt() } else { 0.0 };
    if audit.syncs == 0 {
        audit.min_a_diag = server.adaptive.min_diagonal();
    }
    Ok(RunRecord {
        algo: config.algo,
        master_seed: config.master_seed,
        horizon,
        q: params.q,
        rows,
        failed,
        iterations_completed: completed,
        samples_per_client: server.samples_per_client,
        comms: server.comms,
        x_hat,
        x_hat_t,
        x_hat_grad_norm: x_hat_grad,
        x_final,
        final_grad_norm,
        argmin_t,
        min_grad_norm: min_grad,
        mean_grad_norm: if completed > 0 { grad_sum / completed as f64 } else { f64::NAN },
        audit,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn sync_iteration<P: CompositionProblem + ?Sized>(
    problem: &P,
    clients: &mut [ClientState],
    server: &mut ServerState,
    t: u64,
    ctx: &StepContext<'_>,
    parallel: bool,
    config: &RunConfig,
    audit: &mut RunAudit,
) -> Result<()> {
    let outcome = sync_step(clients, server, t, ctx.params)?;
    audit.syncs += 1;
    audit.max_grad_mapping_err = audit.max_grad_mapping_err.max(outcome.grad_mapping_err);
    audit.min_a_diag = audit.min_a_diag.min(server.adaptive.min_diagonal());
    let x_next = &outcome.x_next;
    for_each_client(clients, parallel, |c| advance_trackers(problem, c, x_next.clone(), t, ctx))?;
    if config.average_estimators_at_sync {
        average_trackers(clients)?;
    }
    let consensus =
        clients.iter().map(|c| c.x.sub(x_next).norm()).fold(0.0_f64, f64::max);
    audit.max_post_sync_consensus = audit.max_post_sync_consensus.max(consensus);
    Ok(())
}

fn measure_row<P: CompositionProblem + ?Sized>(
    problem: &P,
    clients: &[ClientState],
    x_bar: &Vector,
    t: u64,
    params: &ScheduleParams,
    lemma_bounds: Lemma2Bounds,
    audit: &mut RunAudit,
) -> MetricsRow {
    let mm = clients.len() as f64;
    let mut track_h = 0.0;
    let mut track_u = 0.0;
    let mut track_v = 0.0;
    let mut consensus = 0.0_f64;
    for c in clients {
        let tr = &c.tracker;
        track_h += tr.h.sub(&problem.exact_g(c.m, &c.x)).norm_sq() / mm;
        track_u += tr.u.sub(&problem.exact_jac_g(c.m, &c.x)).norm_sq() / mm;
        track_v += tr.v.sub(&problem.exact_grad_f(c.m, &tr.h)).norm_sq() / mm;
        consensus = consensus.max(c.x.sub(x_bar).norm());
    }
    let trackers: Vec<&TrackerState> = clients.iter().map(|c| &c.tracker).collect();
    let lemma = lemma2_gap_check(problem, x_bar, &trackers, lemma_bounds);
    if !lemma.ok {
        audit.lemma2_violations += 1;
    }
    let mom = momenta_quiet(params, t);
    MetricsRow {
        t,
        eta_t: eta(params, t),
        alpha: mom.alpha,
        beta: mom.beta,
        varrho: mom.varrho,
        grad_norm: problem.exact_grad_F(x_bar).norm(),
        f_value: problem.objective(x_bar),
        consensus_err: consensus,
        track_h,
        track_u,
        track_v,
        lemma2_lhs: lemma.lhs,
        lemma2_rhs: lemma.rhs,
        a_norm: f64::NAN,
        samples_cum: 0,
        comms_cum: 0,
    }
}
