use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn nsfemdg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsfemdg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn stationary_run_writes_constant_mass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# rest state\npreset = stationary\nn = 2\nt_final = 0.5\ncadence = 1\n",
    )
    .unwrap();
    let o = nsfemdg(
        &["run", "--config", "run.cfg", "--output_dir", "out"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = read_csv(&dir.path().join("out/diagnostics.csv"));
    assert_eq!(
        header,
        [
            "step",
            "t",
            "mass",
            "kinetic",
            "internal",
            "grad_diss",
            "D2",
            "D5",
            "min_rho",
            "energy_margin",
            "positivity_slack",
            "newton_iters",
            "alpha_nodes_used"
        ]
    );
    // dt = 0.5 h with h = √3/2 on the unit cube: two steps reach t = 0.5
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] == rows[0][2]));
    for k in 0..3 {
        let vtk =
            std::fs::read_to_string(dir.path().join(format!("out/state_{k:05}.vtk"))).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(vtk.contains("SCALARS density double 1"));
    }
}

#[test]
fn bump_run_has_monotone_energy() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(
        &[
            "run",
            "--preset",
            "bump",
            "--n",
            "4",
            "--steps",
            "6",
            "--cadence",
            "0",
            "--output_dir",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&dir.path().join("o/diagnostics.csv"));
    assert_eq!(rows.len(), 7);
    let energy: Vec<f64> = rows
        .iter()
        .map(|r| r[3].parse::<f64>().unwrap() + r[4].parse::<f64>().unwrap())
        .collect();
    assert!(
        energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
        "{energy:?}"
    );
    assert!(!dir.path().join("o/state_00000.vtk").exists());
}

#[test]
fn identical_configs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = nsfemdg(
            &[
                "run",
                "--preset",
                "shear",
                "--n",
                "2",
                "--steps",
                "3",
                "--output_dir",
                out,
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(dir.path().join("a/diagnostics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/diagnostics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    for (out, threads) in [("one", "1"), ("three", "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_nsfemdg"))
            .args([
                "run",
                "--preset",
                "bump",
                "--n",
                "2",
                "--steps",
                "2",
                "--cadence",
                "0",
            ])
            .args(["--output_dir", out])
            .env("NSFEMDG_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(dir.path().join("one/diagnostics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("three/diagnostics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn step_failure_exits_with_2_and_names_step_and_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(
        &[
            "run",
            "--preset",
            "bump",
            "--n",
            "2",
            "--steps",
            "2",
            "--newton_max_iter",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("step 1 failed") && err.contains("alpha ="),
        "{err}"
    );
}

#[test]
fn configuration_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "n = 2\nepsilon = 0.1\n").unwrap();
    let o = nsfemdg(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));

    std::fs::write(dir.path().join("typo.cfg"), "n = 2\ngama = 4\n").unwrap();
    let o = nsfemdg(&["check", "--config", "typo.cfg"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2: unknown key 'gama'"));

    let o = nsfemdg(&["run", "--config", "missing.cfg"], dir.path());
    assert_eq!(code(&o), 1);

    let o = Command::new(env!("CARGO_BIN_EXE_nsfemdg"))
        .args(["check"])
        .env("NSFEMDG_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn low_gamma_is_only_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(
        &["run", "--gamma", "2", "--steps", "1", "--cadence", "0"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
}

#[test]
fn check_passes_quickly_on_n1() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = nsfemdg(&["check", "--check_n", "1"], dir.path());
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("all 11 checks passed"));
}

#[test]
fn default_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(&["check"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn corrupted_flux_sign_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(&["check", "--mutate_flux_sign", "true"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL] continuity oracle"));
}

#[test]
fn rates_study_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(
        &["study", "--study", "rates", "--output_dir", "s"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("s/study_rates.csv"));
    assert_eq!(
        header,
        ["n", "h", "l2_error", "h1_error", "l2_rate", "h1_rate"]
    );
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let l2: f64 = r[4].parse().unwrap();
        let h1: f64 = r[5].parse().unwrap();
        assert!(
            (1.8..=2.2).contains(&l2) && (0.8..=1.2).contains(&h1),
            "{r:?}"
        );
    }
}

#[test]
fn cauchy_study_on_stationary_data_measures_only_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(
        &[
            "study",
            "--study",
            "cauchy",
            "--study_n",
            "1,2,4",
            "--t_final",
            "0.25",
            "--output_dir",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let (header, rows) = read_csv(&dir.path().join("s/study_cauchy.csv"));
    assert_eq!(header, ["n_coarse", "n_fine", "difference"]);
    // ρ_h ≡ 1 + κh, so the difference is κ(h − h/2)·√(T |Ω|)
    let h1 = 3f64.sqrt();
    for (k, r) in rows.iter().enumerate() {
        let h = h1 / (1 << k) as f64;
        let expected = 0.01 * (h / 2.0) * 0.5;
        let d: f64 = r[2].parse().unwrap();
        assert!((d - expected).abs() <= 1e-12, "{d} vs {expected}");
    }
}

#[test]
fn pdecay_study_on_stationary_data_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfemdg(
        &[
            "study",
            "--study",
            "pdecay",
            "--study_n",
            "1,2",
            "--t_final",
            "0.5",
            "--output_dir",
            "s",
        ],
        dir.path(),
    );
    let (header, rows) = read_csv(&dir.path().join("s/study_pdecay.csv"));
    assert_eq!(header.len(), 10);
    for r in &rows {
        for v in &r[2..6] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
    // zero is not a strict decrease
    assert_eq!(code(&o), 2);
}
