use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use venttsel_cli::FieldFile;

const SMALL: &str = "[grid]\nnx = 12\nny = 5\nnt = 12\n";

fn problem(extra: &str) -> String {
    format!(
        "{SMALL}[problem]\npreset = \"quadratic\"\nphi = \"phi_identity\"\nbeta = 0.5\ntarget = \"wave\"\n\
         source = \"bump\"\ninitial = \"zero\"\ncontrol = \"wave\"\n{extra}"
    )
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn exec(&self, command: &str, flags: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_venttsel"))
            .arg(command)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(self.out())
            .arg("--quiet")
            .args(flags)
            .output()
            .unwrap()
    }

    fn report(&self) -> serde_json::Value {
        read_json(&self.out().join("report.json"))
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_with_zero_data_writes_zero_state() {
    let run = Run::new(SMALL);
    let out = run.exec("solve", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(run.out().join("state.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,j,i,value"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 13 * 5 * 12);
    assert!(rows.iter().all(|r| r.ends_with(",0")));
    assert_eq!(run.report()["state_max_abs"], 0.0);
}

#[test]
fn grad_check_meets_tolerance() {
    let run = Run::new(&problem(""));
    let out = run.exec("grad-check", &["--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let report = run.report();
    assert!(report["max_relative_error"].as_f64().unwrap() <= 1e-6);
    assert_eq!(report["passed"], true);
    assert_eq!(report["seed"], 5);
}

#[test]
fn negative_beta_is_a_config_error_without_outputs() {
    let run = Run::new(&problem("").replace("beta = 0.5", "beta = -1.0"));
    let out = run.exec("solve", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!run.out().exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
}

#[test]
fn malformed_and_missing_configs_exit_with_two() {
    let run = Run::new("[grid\nnx = ");
    assert_eq!(run.exec("solve", &[]).status.code(), Some(2));
    let run = Run::new(&problem("").replace("phi_identity", "phi_unknown"));
    assert_eq!(run.exec("solve", &[]).status.code(), Some(2));
    assert!(!run.out().exists());
    let out = Command::new(env!("CARGO_BIN_EXE_venttsel"))
        .args(["solve", "--config", "/nonexistent/run.toml", "--quiet"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn command_requirements_are_checked_before_running() {
    let run = Run::new(&problem(""));
    assert_eq!(run.exec("optimize-box", &[]).status.code(), Some(2));
    assert_eq!(run.exec("optimize-kkt", &[]).status.code(), Some(2));
    let bounded = Run::new(&problem("bounds = { lower = -1.0, upper = 1.0 }\n"));
    assert_eq!(bounded.exec("optimize-picard", &[]).status.code(), Some(2));
    assert!(!run.out().exists() && !bounded.out().exists());
}

#[test]
fn stencil_flag_is_validated_and_applied() {
    let run = Run::new(&problem(""));
    assert_eq!(run.exec("solve", &["--normal-stencil", "3"]).status.code(), Some(2));
    assert_eq!(run.exec("solve", &["--normal-stencil", "1"]).status.code(), Some(0));
    let first = std::fs::read(run.out().join("state.csv")).unwrap();
    assert_eq!(run.exec("solve", &["--normal-stencil", "2"]).status.code(), Some(0));
    let second = std::fs::read(run.out().join("state.csv")).unwrap();
    assert_ne!(first, second);
}

#[test]
fn dumped_fields_round_trip() {
    let run = Run::new(&problem(""));
    assert_eq!(run.exec("adjoint", &["--dump-fields"]).status.code(), Some(0));
    let state = FieldFile::read(&run.out().join("state.vtf")).unwrap().into_state().unwrap();
    let text = std::fs::read_to_string(run.out().join("state.csv")).unwrap();
    for (row, v) in text.lines().skip(1).zip(state.values().iter()) {
        let value: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(value, *v);
    }
    let gradient = FieldFile::read(&run.out().join("gradient.vtf")).unwrap();
    assert!(gradient.into_boundary().is_ok());
}

#[test]
fn every_command_runs() {
    let config = problem(
        "bounds = { lower = -0.3, upper = 0.3 }\n[[problem.constraints]]\nkind = \"equality\"\nvolume = \"identity\"\noffset = 0.2\n\
         [check]\ndirections = 2\nlambda = 1e-4\nepsilon = 1e-3\nrefinements = [[8, 5, 8], [16, 9, 32]]\n",
    );
    let run = Run::new(&config);
    for command in [
        "solve",
        "adjoint",
        "duality-check",
        "grad-check",
        "hess-check",
        "mms-convergence",
        "optimize-box",
        "optimize-kkt",
        "second-order-check",
        "regularity-check",
    ] {
        let out = run.exec(command, &[]);
        assert_eq!(out.status.code(), Some(0), "{command}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(run.report()["command"], command);
    }
    let report = run.report();
    assert_eq!(report["regular"], true);

    let picard = Run::new(&problem(""));
    assert_eq!(picard.exec("optimize-picard", &[]).status.code(), Some(0));
    assert_eq!(picard.report()["passed"], true);
}

#[test]
fn unconverged_kkt_run_writes_best_iterate_and_exits_one() {
    let run = Run::new(&problem(
        "[[problem.constraints]]\nkind = \"equality\"\nvolume = \"identity\"\noffset = 0.2\n\
         [optimize]\nmax_iter = 500\ngrad_tol = 1e-8\narmijo_c = 1e-4\nbacktrack_factor = 0.5\ninitial_step = 1.0\n\
         picard_damping = 1.0\nal_penalty = 10.0\nal_penalty_growth = 10.0\nal_outer_iters = 1\nal_feas_tol = 1e-8\n",
    ));
    let out = run.exec("optimize-kkt", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run.report()["converged"], false);
    assert!(run.out().join("control.csv").exists());
}
