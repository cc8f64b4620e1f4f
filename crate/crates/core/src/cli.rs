//! Subcommand implementations behind the `fedcomp` binary. Each returns the
//! process exit code: 0 success, 1 configuration or validation error,
//! 2 numerical failure or tolerance breach.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::config::ConfigFile;
use crate::diagnostics::{gradcheck, rate_fit, RateFit};
use crate::error::{Error, Result};
use crate::fedsim::{baseline_preset, run, Algo, RunConfig, RunRecord};
use crate::numerics::{derive_stream, Purpose};
use crate::problems::{AnyProblem, CompositionProblem};
use crate::schedule::validate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Horizons used when `rate` is given none.
pub const DEFAULT_HORIZONS: [u64; 3] = [1_000, 10_000, 100_000];

fn report(err: &Error) -> i32 {
    eprintln!("error: {err}");
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn load(path: &Path) -> Result<(ConfigFile, AnyProblem)> {
    let cfg = ConfigFile::load(path)?;
    let problem = cfg.build_problem()?;
    Ok((cfg, problem))
}

/// Smallest `q` with `q³ ≥ T`.
pub fn sync_period_for(horizon: u64) -> u64 {
    let mut q = (horizon as f64).cbrt().round().max(1.0) as u64;
    while q * q * q < horizon {
        q += 1;
    }
    while q > 1 && (q - 1).pow(3) >= horizon {
        q -= 1;
    }
    q
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

pub fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    algo: Option<Algo>,
    out: &Path,
    enforce_theorem: bool,
) -> i32 {
    match try_run(config, seed, algo, out, enforce_theorem) {
        Ok(record) if record.failed.is_some() => {
            eprintln!("run failed: {}", record.failed.as_deref().unwrap_or(""));
            EXIT_NUMERICAL
        }
        Ok(record) => {
            println!(
                "{} T={} q={} samples={} comms={} final_grad_norm={:.6e}",
                record.algo.name(),
                record.horizon,
                record.q,
                record.samples_per_client,
                record.comms,
                record.final_grad_norm
            );
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

fn try_run(
    config: &Path,
    seed: Option<u64>,
    algo: Option<Algo>,
    out: &Path,
    enforce_theorem: bool,
) -> Result<RunRecord> {
    let (cfg, problem) = load(config)?;
    let hash = cfg.hash()?;
    let mut rc = cfg.build_run(&problem, seed, algo)?;
    rc.enforce_theorem |= enforce_theorem;
    let record = run(&problem, &rc)?;

    fs::create_dir_all(out)?;
    write_file(&out.join("run.csv"), &record.to_csv())?;
    let summary = record.summary_json(&hash);
    write_file(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    let manifest = json!({
        "config_hash": hash,
        "master_seed": rc.master_seed,
        "config": cfg.canonical()?,
        "problem": problem,
    });
    write_file(&out.join("manifest.json"), &serde_json::to_string(&manifest)?)?;
    Ok(record)
}

pub fn cmd_validate(config: &Path) -> i32 {
    let result = (|| -> Result<bool> {
        let (cfg, problem) = load(config)?;
        let rc = cfg.build_run(&problem, None, None)?;
        let rep = validate(&rc.theorem_schedule(), problem.constants())?;
        println!("{}", serde_json::to_string_pretty(&rep)?);
        for v in rep.violations() {
            eprintln!("violated: {}  (lhs = {:e}, rhs = {:e})", v.id, v.lhs, v.rhs);
        }
        Ok(rep.all_satisfied())
    })();
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CONFIG,
        Err(e) => report(&e),
    }
}

/// Compare closed-form and finite-difference gradients at `points` box points
/// and print the result. Exit 2 when the largest relative error exceeds `tol`.
pub fn gradcheck_exit<P: CompositionProblem + ?Sized>(
    problem: &P,
    points: usize,
    tol: f64,
    seed: u64,
) -> i32 {
    let mut rng = derive_stream(seed, 0, 0, Purpose::Probe);
    let err = gradcheck(problem, points, &mut rng);
    let pass = err <= tol;
    println!(
        "{}",
        json!({ "points": points, "max_rel_err": err, "tol": tol, "pass": pass })
    );
    if pass {
        EXIT_OK
    } else {
        eprintln!("gradient check failed: max rel err {err:e} > {tol:e}");
        EXIT_NUMERICAL
    }
}

pub fn cmd_gradcheck(config: &Path, points: Option<usize>) -> i32 {
    match load(config) {
        Ok((cfg, problem)) => gradcheck_exit(
            &problem,
            points.unwrap_or(cfg.diagnostics.gradcheck_points),
            cfg.gradcheck_tol(),
            cfg.problem.seed,
        ),
        Err(e) => report(&e),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-arm outcome of a rate experiment.
#[derive(Clone, Debug)]
pub struct RateArm {
    pub algo: Algo,
    /// `(T, median over seeds of the running-average gradient norm)`
    pub points: Vec<(f64, f64)>,
    pub fit: RateFit,
}

/// Runs the config's algorithm and its baseline preset at every horizon and
/// seed with `q = ⌈T^{1/3}⌉`, and fits both slopes.
pub fn rate_experiment(
    cfg: &ConfigFile,
    problem: &AnyProblem,
    horizons: &[u64],
    seeds: &[u64],
) -> Result<(RateArm, RateArm, Vec<RunRecord>)> {
    if seeds.is_empty() {
        return Err(crate::error::config_err("rate needs at least one seed"));
    }
    let mut configs: Vec<RunConfig> = Vec::new();
    for &t in horizons {
        let mut c = cfg.clone();
        c.schedule.q = sync_period_for(t);
        c.schedule.horizon = t;
        let base = c.build_run(problem, None, None)?;
        if base.algo == Algo::Baseline {
            return Err(crate::error::config_err("rate compares against the baseline; pick another algo"));
        }
        for &s in seeds {
            let mut rc = base.clone();
            rc.master_seed = s;
            rc.workers = Some(1);
            rc.metrics_every = Some(t);
            configs.push(baseline_preset(&rc));
            configs.push(rc);
        }
    }
    let records: Vec<RunRecord> =
        configs.par_iter().map(|rc| run(problem, rc)).collect::<Result<_>>()?;
    if let Some(r) = records.iter().find(|r| r.failed.is_some()) {
        return Err(Error::Numerical(format!(
            "{} T={} seed={}: {}",
            r.algo.name(),
            r.horizon,
            r.master_seed,
            r.failed.as_deref().unwrap_or("")
        )));
    }
    let arm = |baseline: bool| -> Result<RateArm> {
        let chosen: Vec<&RunRecord> =
            records.iter().filter(|r| (r.algo == Algo::Baseline) == baseline).collect();
        let algo = chosen[0].algo;
        let points: Vec<(f64, f64)> = horizons
            .iter()
            .map(|&t| {
                let mut v: Vec<f64> = chosen
                    .iter()
                    .filter(|r| r.horizon == t)
                    .map(|r| r.mean_grad_norm)
                    .collect();
                (t as f64, median(&mut v))
            })
            .collect();
        let fit = rate_fit(&points)?;
        Ok(RateArm { algo, points, fit })
    };
    let main = arm(false)?;
    let baseline = arm(true)?;
    Ok((main, baseline, records))
}

pub fn cmd_rate(
    config: Option<&Path>,
    horizons: &[u64],
    seeds: &[u64],
    out: Option<&Path>,
    self_test: bool,
) -> i32 {
    let horizons = if horizons.is_empty() { &DEFAULT_HORIZONS[..] } else { horizons };
    if self_test {
        return rate_self_test(horizons, out);
    }
    let Some(config) = config else {
        eprintln!("error: rate needs --config unless --self-test is given");
        return EXIT_CONFIG;
    };
    let result = (|| -> Result<bool> {
        let (cfg, problem) = load(config)?;
        let hash = cfg.hash()?;
        let (main, baseline, records) = rate_experiment(&cfg, &problem, horizons, seeds)?;
        let threshold = cfg.diagnostics.rate_threshold;
        let pass = main.fit.slope <= threshold;

        if let Some(out) = out {
            fs::create_dir_all(out)?;
            write_file(&out.join("rate.csv"), &main.fit.to_csv())?;
            write_file(&out.join("rate_baseline.csv"), &baseline.fit.to_csv())?;
            let mut comparison = String::from("algo,slope,intercept\n");
            for a in [&main, &baseline] {
                comparison.push_str(&format!(
                    "{},{:.16e},{:.16e}\n",
                    a.algo.name(),
                    a.fit.slope,
                    a.fit.intercept
                ));
            }
            write_file(&out.join("comparison.csv"), &comparison)?;
            let mut runs = String::from("algo,T,q,seed,mean_grad_norm,final_grad_norm,samples,comms\n");
            for r in &records {
                runs.push_str(&format!(
                    "{},{},{},{},{:.16e},{:.16e},{},{}\n",
                    r.algo.name(),
                    r.horizon,
                    r.q,
                    r.master_seed,
                    r.mean_grad_norm,
                    r.final_grad_norm,
                    r.samples_per_client,
                    r.comms
                ));
            }
            write_file(&out.join("runs.csv"), &runs)?;
            let summary = json!({
                "config_hash": hash,
                "seeds": seeds,
                "horizons": horizons,
                "threshold": threshold,
                "slope": main.fit.slope,
                "baseline_slope": baseline.fit.slope,
                "pass": pass,
            });
            write_file(&out.join("rate_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
        }
        println!("{} slope = {:.6}", main.algo.name(), main.fit.slope);
        println!("{} slope = {:.6}", baseline.algo.name(), baseline.fit.slope);
        println!("threshold = {threshold}  {}", if pass { "pass" } else { "FAIL" });
        Ok(pass)
    })();
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NUMERICAL,
        Err(e) => report(&e),
    }
}

fn rate_self_test(horizons: &[u64], out: Option<&Path>) -> i32 {
    let points: Vec<(f64, f64)> =
        horizons.iter().map(|&t| (t as f64, (t as f64).powf(-1.0 / 3.0))).collect();
    let fit = match rate_fit(&points) {
        Ok(f) => f,
        Err(e) => return report(&e),
    };
    if let Some(out) = out {
        if let Err(e) = fs::create_dir_all(out)
            .map_err(Error::from)
            .and_then(|_| write_file(&out.join("rate.csv"), &fit.to_csv()))
        {
            return report(&e);
        }
    }
    println!("self-test slope = {:.9}", fit.slope);
    if (fit.slope + 1.0 / 3.0).abs() <= 1e-6 {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    }
}
