mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedcomp_core::cli::{gradcheck_exit, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
use fedcomp_core::numerics::{Matrix, RngStream, Vector};
use fedcomp_core::problems::{
    AnyProblem, CompositionProblem, Dims, InnerSample, OuterSample, ProblemConstants,
};
use tempfile::TempDir;

const QUICK: &str = r#"
[problem]
kind = "quadratic"
d = 6
p = 3
m_clients = 3
sigma = 0.5
spread = 0.2

[schedule]
k = 1.0
n = 100.0
c1 = 2.0
c2 = 2.0
c3 = 2.0
gamma = 0.1
q = 5
T = 10
"#;

const FEASIBLE: &str = r#"
[problem]
kind = "quadratic"
d = 20
p = 10
m_clients = 8
seed = 7
a_cond = 1.0
q_scale = 0.464
q_cond = 1.0
offset_scale = 0.01
curvature_spread = 0.0
box_radius = 1.0

[schedule]
k = 1.0
gamma = 0.24
q = 2
T = 200
"#;

const MAML: &str = r#"
[problem]
kind = "maml"
d = 5
m_clients = 4
sigma = 0.3
spread = 0.5
inner_lr = 0.1
box_radius = 3.0

[schedule]
k = 1.0
n = 1000.0
c1 = 10.0
c2 = 10.0
c3 = 10.0
gamma = 0.2
q = 10
T = 50
"#;

fn fedcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcomp"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_outputs_with_accounting() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "quick.toml", QUICK);
    let out_dir = dir.path().join("out");
    let out = fedcomp(&[
        "run", "--config", cfg.to_str().unwrap(), "--seed", "3", "--algo", "mfcgd", "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["samples"], 30);
    assert_eq!(summary["comms"], 2);
    assert_eq!(summary["master_seed"], 3);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 16);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], summary["config_hash"]);
    assert_eq!(manifest["problem"]["kind"], "quadratic");
    let csv = fs::read_to_string(out_dir.join("run.csv")).unwrap();
    assert!(csv.starts_with(
        "t,eta_t,alpha,beta,varrho,grad_norm,f_value,consensus_err,track_h,track_u,track_v,lemma2_lhs,lemma2_rhs,a_norm,samples_cum,comms_cum\n"
    ));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn run_is_byte_identical_across_invocations_and_threads() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "quick.toml", QUICK);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "2", "8"].iter().enumerate() {
        let out_dir = dir.path().join(format!("o{i}"));
        let out = Command::new(env!("CARGO_BIN_EXE_fedcomp"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--algo", "adamfcgd", "--out"])
            .arg(&out_dir)
            .env("FEDCOMP_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), EXIT_OK);
        outputs.push(fs::read(out_dir.join("run.csv")).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn enforce_theorem_with_n_one_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &QUICK.replace("n = 100.0", "n = 1.0"));
    let out = fedcomp(&[
        "run", "--config", cfg.to_str().unwrap(), "--out",
        dir.path().join("o").to_str().unwrap(), "--enforce-theorem",
    ]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(stderr(&out).contains("n ≥ 2"), "{}", stderr(&out));
}

#[test]
fn unknown_key_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &QUICK.replace("spread = 0.2", "spraed = 0.2"));
    let out = fedcomp(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_CONFIG);
}

#[test]
fn validate_feasible_config_exits_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", FEASIBLE);
    let out = fedcomp(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() >= 15);
    assert!(checks.iter().all(|c| c["satisfied"] == true));
}

#[test]
fn validate_empty_window_prints_both_endpoints() {
    let dir = TempDir::new().unwrap();
    // Tiny n with large momentum constants pushes the lower endpoint above the upper one.
    let text = FEASIBLE.replace(
        "gamma = 0.24",
        "gamma = 0.24\nn = 2.0\nc1 = 1000.0\nc2 = 1000.0\nc3 = 1000.0",
    );
    let cfg = write_config(dir.path(), "window.toml", &text);
    let out = fedcomp(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_CONFIG);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let window = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["id"] == "γ window nonempty")
        .unwrap();
    assert_eq!(window["satisfied"], false);
    let (lo, hi) = (window["lhs"].as_f64().unwrap(), window["rhs"].as_f64().unwrap());
    assert!(lo > hi);
    assert!(stderr(&out).contains("γ window nonempty"));
}

#[test]
fn validate_without_constants_exits_one() {
    let dir = TempDir::new().unwrap();
    let mut problem = common::quadratic(0.5);
    problem.set_constants(None);
    fs::write(dir.path().join("p.json"), serde_json::to_string(&problem).unwrap()).unwrap();
    let text = QUICK.replace("spread = 0.2", "spread = 0.2\nmanifest = \"p.json\"");
    let cfg = write_config(dir.path(), "m.toml", &text);
    let out = fedcomp(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(stderr(&out).contains("constants unavailable"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_on_shipped_instances() {
    let dir = TempDir::new().unwrap();
    for (name, text, tol) in [("q.toml", QUICK, 1e-6), ("m.toml", MAML, 1e-4)] {
        let cfg = write_config(dir.path(), name, text);
        let out = fedcomp(&["gradcheck", "--config", cfg.to_str().unwrap(), "--points", "20"]);
        assert_eq!(code(&out), EXIT_OK, "{}", stderr(&out));
        let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
        assert!(report["max_rel_err"].as_f64().unwrap() <= tol);
        assert_eq!(report["tol"].as_f64().unwrap(), tol);
    }
}

/// Wraps an instance and adds a constant bias to its closed-form gradient.
struct Sabotaged(AnyProblem);

#[allow(non_snake_case)]
impl CompositionProblem for Sabotaged {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn constants(&self) -> Option<&ProblemConstants> {
        self.0.constants()
    }
    fn box_radius(&self) -> f64 {
        self.0.box_radius()
    }
    fn draw_inner(&self, m: usize, rng: &mut RngStream) -> InnerSample {
        self.0.draw_inner(m, rng)
    }
    fn draw_outer(&self, m: usize, rng: &mut RngStream) -> OuterSample {
        self.0.draw_outer(m, rng)
    }
    fn sample_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Vector {
        self.0.sample_g(m, x, s)
    }
    fn sample_jac_g(&self, m: usize, x: &Vector, s: &InnerSample) -> Matrix {
        self.0.sample_jac_g(m, x, s)
    }
    fn sample_grad_f(&self, m: usize, y: &Vector, s: &OuterSample) -> Vector {
        self.0.sample_grad_f(m, y, s)
    }
    fn exact_g(&self, m: usize, x: &Vector) -> Vector {
        self.0.exact_g(m, x)
    }
    fn exact_jac_g(&self, m: usize, x: &Vector) -> Matrix {
        self.0.exact_jac_g(m, x)
    }
    fn exact_grad_f(&self, m: usize, y: &Vector) -> Vector {
        self.0.exact_grad_f(m, y)
    }
    fn outer_value(&self, m: usize, y: &Vector) -> f64 {
        self.0.outer_value(m, y)
    }
    fn exact_grad_F(&self, x: &Vector) -> Vector {
        let mut g = self.0.exact_grad_F(x);
        g[0] += 1e-3;
        g
    }
}

#[test]
fn gradcheck_catches_a_sabotaged_oracle() {
    let honest = common::quadratic(0.0);
    assert_eq!(gradcheck_exit(&honest, 20, 1e-6, 0), EXIT_OK);
    assert_eq!(gradcheck_exit(&Sabotaged(honest), 20, 1e-6, 0), EXIT_NUMERICAL);
}

#[test]
fn rate_self_test_recovers_minus_one_third() {
    let out = fedcomp(&["rate", "--self-test"]);
    assert_eq!(code(&out), EXIT_OK);
    assert!(stdout(&out).contains("-0.333333333"), "{}", stdout(&out));
}

#[test]
fn rate_writes_comparison_and_flags_breach() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "rate.toml", common::RATE_CONFIG);
    let out_dir = dir.path().join("rate");
    // Short horizons keep this quick; a threshold of -1 cannot be met there.
    let strict = write_config(
        dir.path(),
        "strict.toml",
        &format!("{}\n[diagnostics]\nrate_threshold = -1.0\n", common::RATE_CONFIG),
    );
    let out = fedcomp(&[
        "rate", "--config", strict.to_str().unwrap(), "--horizons", "100,200,400", "--seeds",
        "0,1,2", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), EXIT_NUMERICAL, "{}", stderr(&out));
    let comparison = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("algo,slope,intercept\nmfcgd,"));
    assert!(comparison.contains("\nbaseline,"));
    let rate = fs::read_to_string(out_dir.join("rate.csv")).unwrap();
    assert_eq!(rate.lines().count(), 4);
    assert_eq!(
        fs::read_to_string(out_dir.join("runs.csv")).unwrap().lines().count(),
        1 + 3 * 3 * 2
    );

    let out = fedcomp(&["rate", "--config", cfg.to_str().unwrap(), "--horizons", "100,200"]);
    assert_eq!(code(&out), EXIT_CONFIG);
}
