use std::path::Path;
use std::process::Command;

use hydroctrl::config::{parse_override, RunConfig};
use hydroctrl::data::random_state;
use hydroctrl::failure::{EXIT_ASSERTION, EXIT_BUDGET, EXIT_CONFIG, EXIT_GUARD};
use hydroctrl::io::{
    fmt_f64, read_state, read_trajectory, state_csv, trajectory_csv, write_atomic,
};
use hydroctrl_core::dno::DnoConfig;
use hydroctrl_core::evolution::{solve_nonlinear, StepperConfig};
use hydroctrl_core::hydro::PhysParams;
use proptest::prelude::*;
use serde_json::Value;

fn bin(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hydroctrl"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("HYDROCTRL_THREADS")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn overrides_parse_json_and_strings() {
    assert_eq!(
        parse_override("grid.n=128").unwrap(),
        ("grid.n".into(), Value::from(128))
    );
    assert_eq!(
        parse_override("out=runs/a").unwrap(),
        ("out".into(), Value::from("runs/a"))
    );
    assert!(parse_override("novalue").is_err());
    assert!(parse_override("=3").is_err());
    let cfg = RunConfig::load(
        None,
        &["grid.n=128".into(), "control.omega=[[0,1]]".into()],
        Some(9),
        None,
    )
    .unwrap();
    assert_eq!(cfg.grid.n, 128);
    assert_eq!(cfg.control.omega, vec![[0.0, 1.0]]);
    assert_eq!(cfg.seed, 9);
}

#[test]
fn unknown_and_invalid_keys_are_rejected() {
    for bad in [
        "grid.size=3",
        "physics.g=-1",
        "grid.n=7",
        "control.cg_tol=2",
        "ingham.trials=0",
        "grid=3",
    ] {
        let err = RunConfig::load(None, &[bad.into()], None, None).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG, "{bad}");
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.grid.n = 32;
    cfg.grid.depth = Some(2.0);
    cfg.control.delta_sweep = vec![1e-2, 1e-3];
    let path = dir.path().join("cfg.json");
    write_atomic(&path, serde_json::to_string(&cfg).unwrap().as_bytes()).unwrap();
    let back = RunConfig::load(Some(&path), &[], None, None).unwrap();
    assert_eq!(back, cfg);
    let missing =
        RunConfig::load(Some(&dir.path().join("nope.json")), &[], None, None).unwrap_err();
    assert!(missing.message.contains("nope.json"));
}

#[test]
fn trajectory_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let u0 = random_state(16, 3, 0.02, 1.0, 4);
    let traj = solve_nonlinear(
        &u0,
        None,
        0.05,
        &PhysParams::default(),
        &DnoConfig::default(),
        &StepperConfig { dt: 0.01 },
    )
    .unwrap();
    let path = dir.path().join("trajectory.csv");
    write_atomic(&path, trajectory_csv(&traj).as_bytes()).unwrap();
    let back = read_trajectory(&path, None, 16).unwrap();
    assert_eq!(back.times, traj.times);
    for (a, b) in back.states.iter().zip(&traj.states) {
        assert!(a.sub(b).eta.max_abs_coeff() + a.sub(b).psi.max_abs_coeff() <= 1e-15);
    }
    assert!(read_trajectory(&path, None, 32).is_err());
}

#[test]
fn zero_state_simulation_reports_zero_norms() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = bin(
        dir.path(),
        &[
            "simulate",
            "--override",
            "horizon=0.1",
            "--override",
            "grid.n=16",
        ],
    );
    assert_eq!(code, 0);
    let s = json(&dir.path().join("summary.json"));
    for key in ["h0", "h1", "eta_l2", "psi_l2"] {
        assert_eq!(s["final"][key], 0.0);
    }
    assert!(dir.path().join("norms.csv").exists() && dir.path().join("trajectory.csv").exists());
}

#[test]
fn missing_input_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = bin(
        dir.path(),
        &[
            "simulate",
            "--override",
            "initial_state=\"absent_state.csv\"",
        ],
    );
    assert_eq!(code as u8, EXIT_CONFIG);
    assert!(err.contains("absent_state.csv"), "{err}");
}

#[test]
fn stored_state_drives_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("u0.csv");
    write_atomic(
        &state,
        state_csv(&random_state(16, 3, 0.02, 1.0, 2)).as_bytes(),
    )
    .unwrap();
    let arg = format!("initial_state=\"{}\"", state.display());
    let (code, _, _) = bin(
        dir.path(),
        &[
            "simulate",
            "--override",
            &arg,
            "--override",
            "grid.n=16",
            "--override",
            "horizon=0.1",
        ],
    );
    assert_eq!(code, 0);
    assert!(
        json(&dir.path().join("summary.json"))["final"]["h0"]
            .as_f64()
            .unwrap()
            > 0.0
    );
}

#[test]
fn simulate_reports_fourth_order() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = bin(
        dir.path(),
        &[
            "simulate",
            "--override",
            "amplitude=0.02",
            "--override",
            "horizon=0.4",
            "--override",
            "dt=0.01",
            "--override",
            "check_order=true",
        ],
    );
    assert_eq!(code, 0);
    let order = json(&dir.path().join("summary.json"))["convergence_order"]
        .as_f64()
        .unwrap();
    assert!((3.7..=4.3).contains(&order), "{order}");
}

#[test]
fn steep_data_is_a_guard_violation() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = bin(dir.path(), &["simulate", "--override", "amplitude=3"]);
    assert_eq!(code as u8, EXIT_GUARD);
    assert!(err.contains("t = "), "{err}");
}

#[test]
fn elastic_suite_passes_and_fault_injection_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(dir.path(), &["verify", "elastic"]).0, 0);
    let base = [
        "--override",
        "grid.n=32",
        "--override",
        "amplitude=0.05",
        "--override",
        "horizon=0.1",
        "--override",
        "dt=0.005",
    ];
    let mut args = vec!["verify", "reduction"];
    args.extend(base);
    assert_eq!(bin(dir.path(), &args).0, 0);
    args.push("--inject-fault");
    let (code, out, _) = bin(dir.path(), &args);
    assert_eq!(code as u8, EXIT_ASSERTION);
    assert!(out.contains("eq2_residual"), "{out}");
    let rep = json(&dir.path().join("verify_reduction.json"));
    assert_eq!(rep["passed"], false);
    assert_eq!(
        bin(dir.path(), &["verify", "elastic", "--inject-fault"]).0 as u8,
        EXIT_CONFIG
    );
}

#[test]
fn ingham_report_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "verify",
        "ingham",
        "--seed",
        "5",
        "--override",
        "horizon=0.5",
    ];
    assert_eq!(bin(a.path(), &args).0, 0);
    assert_eq!(bin(b.path(), &args).0, 0);
    let ra = std::fs::read(a.path().join("verify_ingham.json")).unwrap();
    let rb = std::fs::read(b.path().join("verify_ingham.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn thread_cap_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "ingham-sweep",
        "--override",
        "ingham.n_max=10",
        "--override",
        "ingham.trials=20",
        "--out",
    ];
    let run = |dir: &Path, threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_hydroctrl"))
            .args(args)
            .arg(dir)
            .env("HYDROCTRL_THREADS", threads)
            .output()
            .unwrap()
            .status
    };
    assert!(run(a.path(), "1").success());
    assert!(run(b.path(), "3").success());
    assert_eq!(
        std::fs::read(a.path().join("ingham_sweep.csv")).unwrap(),
        std::fs::read(b.path().join("ingham_sweep.csv")).unwrap()
    );
    assert_eq!(run(a.path(), "zero").code(), Some(EXIT_CONFIG as i32));
}

#[test]
fn control_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = bin(
        dir.path(),
        &[
            "control",
            "nonlinear",
            "--override",
            "grid.n=16",
            "--override",
            "amplitude=0.5",
        ],
    );
    assert_eq!(code as u8, EXIT_GUARD);
    let (code, _, err) = bin(
        dir.path(),
        &[
            "control",
            "linear",
            "--override",
            "grid.n=16",
            "--override",
            "horizon=0.2",
            "--override",
            "control.cg_maxiter=1",
            "--override",
            "control.cg_tol=1e-12",
        ],
    );
    assert_eq!(code as u8, EXIT_BUDGET, "{err}");
    let (code, _, _) = bin(
        dir.path(),
        &["control", "linear", "--override", "grid.n=16"],
    );
    assert_eq!(code, 0);
    let rep = json(&dir.path().join("control_linear.json"));
    assert!(rep["runs"][0]["certified_error"].as_f64().unwrap() <= 1e-6);
    assert!(dir.path().join("control_linear.csv").exists());
}

#[test]
fn reduce_report_writes_stage_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = bin(
        dir.path(),
        &[
            "reduce-report",
            "--override",
            "grid.n=32",
            "--override",
            "amplitude=0.05",
            "--override",
            "horizon=0.1",
            "--override",
            "dt=0.005",
        ],
    );
    assert_eq!(code, 0);
    let rep = json(&dir.path().join("reduction_report.json"));
    assert_eq!(rep["stages"].as_array().unwrap().len(), 9);
    assert_eq!(rep["all_within_ceiling"], true);
}

#[test]
fn bad_arguments_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        bin(dir.path(), &["verify", "nonsense"]).0 as u8,
        EXIT_CONFIG
    );
    assert_eq!(bin(dir.path(), &["frobnicate"]).0 as u8, EXIT_CONFIG);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn floats_print_exactly(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn state_files_round_trip(seed in 0u64..10_000, size in 1e-4f64..0.1, log_n in 3u32..8) {
        let n = 1usize << log_n;
        let u = random_state(n, 3.min(n as i64 / 2 - 1), size, 1.0, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        write_atomic(&path, state_csv(&u).as_bytes()).unwrap();
        let back = read_state(&path, n).unwrap();
        let d = back.sub(&u);
        prop_assert!(d.eta.max_abs_coeff() + d.psi.max_abs_coeff() <= 1e-15);
    }

    #[test]
    fn configs_round_trip_through_json(n in 4usize..64, g in 0.1f64..10.0, seed in any::<u64>(), depth in proptest::option::of(0.5f64..5.0)) {
        let mut cfg = RunConfig::default();
        cfg.grid.n = 2 * n;
        cfg.grid.depth = depth;
        cfg.physics.g = g;
        cfg.seed = seed;
        cfg.mode_cutoff = 2;
        let text = serde_json::to_string(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        write_atomic(&path, text.as_bytes()).unwrap();
        prop_assert_eq!(RunConfig::load(Some(&path), &[], None, None).unwrap(), cfg);
    }
}
