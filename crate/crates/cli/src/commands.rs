//! `run`, `check` and `study`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use nsfemdg_core::diagnostics::{
    cauchy_convergence_study, interpolation_rate_study, p_decay_study, Directed, SineBump,
    SineVector,
};
use nsfemdg_core::verify::run_check_suite;
use nsfemdg_core::{build_box_mesh, run, step_count, vtk, DiagnosticsRow, Error, Vec3};

use crate::config::{RunConfig, StudyKind};

pub const THREADS_ENV: &str = "NSFEMDG_THREADS";

/// Result of a command, mapped to the process exit code by the binary.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    /// Exit code 1.
    ConfigError(String),
    /// Exit code 2.
    NumericalFailure(String),
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::ConfigError(_) => 1,
            Outcome::NumericalFailure(_) => 2,
        }
    }
}

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        match e {
            Error::StepFailed { .. }
            | Error::Solve(_)
            | Error::Domain(_)
            | Error::LinearSolver(_) => Outcome::NumericalFailure(e.to_string()),
            _ => Outcome::ConfigError(e.to_string()),
        }
    }
}

/// Caps the global worker pool at `NSFEMDG_THREADS` when set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn io_outcome(path: &Path, e: impl std::fmt::Display) -> Outcome {
    Outcome::ConfigError(format!("{}: {e}", path.display()))
}

fn f(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn cmd_run(cfg: &RunConfig) -> Outcome {
    match run_inner(cfg) {
        Ok(o) | Err(o) => o,
    }
}

fn run_inner(cfg: &RunConfig) -> Result<Outcome, Outcome> {
    let domain = cfg
        .domain()
        .map_err(|e| Outcome::ConfigError(e.to_string()))?;
    let mesh = build_box_mesh(cfg.n, domain)?;
    let params = &cfg.params;
    let init = cfg.preset().initial_state(&mesh, params)?;
    let steps = cfg
        .steps
        .unwrap_or_else(|| step_count(cfg.t_final, params.dt(&mesh)));
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_outcome(out, e))?;
    let csv_path = out.join("diagnostics.csv");
    let mut csv = csv::Writer::from_path(&csv_path).map_err(|e| io_outcome(&csv_path, e))?;
    csv.write_record(DiagnosticsRow::HEADER)
        .map_err(|e| io_outcome(&csv_path, e))?;
    log::info!(
        "run: preset {}, n = {}, {} elements, dt = {:.4e}, {} steps",
        cfg.preset,
        cfg.n,
        mesh.n_elements(),
        params.dt(&mesh),
        steps
    );

    let result = run(&mesh, params, init, steps, &mut |state, row| {
        csv.write_record(row.fields())
            .and_then(|_| csv.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        if cfg.cadence > 0 && state.step % cfg.cadence == 0 {
            let path = out.join(format!("state_{:05}.vtk", state.step));
            let mut w = BufWriter::new(File::create(&path)?);
            vtk::write_state(&mut w, &mesh, state)?;
        }
        log::debug!(
            "step {}: mass {:.12e}, energy margin {:.3e}, newton {}",
            row.step,
            row.ledger.mass,
            row.energy_margin,
            row.newton_iters
        );
        Ok(())
    });
    match result {
        Ok(traj) => {
            let last = traj.rows.last().expect("initial row");
            log::info!(
                "done: t = {:.4}, mass {:.15e}, min rho {:.6e}, energy margin {:.3e}",
                last.t,
                last.ledger.mass,
                last.ledger.min_rho,
                last.energy_margin
            );
            Ok(Outcome::Success)
        }
        Err(e @ Error::StepFailed { .. }) => Err(Outcome::NumericalFailure(e.to_string())),
        Err(Error::Io(e)) => Err(io_outcome(out, e)),
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_check(cfg: &RunConfig) -> Outcome {
    let report = match run_check_suite(&cfg.params, &cfg.check_n, cfg.seed) {
        Ok(r) => r,
        Err(e) => return e.into(),
    };
    for e in &report.entries {
        println!(
            "[{}] {}: {:.3e} (tolerance {:.0e})",
            if e.passed() { "PASS" } else { "FAIL" },
            e.name,
            e.value,
            e.tolerance
        );
    }
    let failed = report.entries.iter().filter(|e| !e.passed()).count();
    if failed == 0 {
        println!("all {} checks passed", report.entries.len());
        Outcome::Success
    } else {
        Outcome::NumericalFailure(format!(
            "{failed} of {} checks failed",
            report.entries.len()
        ))
    }
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Outcome> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_outcome(path, e))?;
    w.write_record(header).map_err(|e| io_outcome(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_outcome(path, e))?;
    }
    w.flush().map_err(|e| io_outcome(path, e))
}

/// Lowest quadrature degree used to measure interpolation errors.
const RATES_MIN_DEGREE: usize = 4;

pub fn cmd_study(cfg: &RunConfig) -> Outcome {
    match study_inner(cfg) {
        Ok(o) | Err(o) => o,
    }
}

fn study_inner(cfg: &RunConfig) -> Result<Outcome, Outcome> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_outcome(out, e))?;
    let params = &cfg.params;
    let ns = &cfg.study_n;
    let preset = cfg.preset();
    let path = out.join(format!("study_{}.csv", cfg.study));
    let (passed, summary) = match cfg.study {
        StudyKind::Rates => {
            let s = interpolation_rate_study(
                &SineVector,
                preset.domain,
                ns,
                params.face_quad_degree.max(RATES_MIN_DEGREE),
                params.elem_quad_degree.max(RATES_MIN_DEGREE),
            )?;
            let rows: Vec<Vec<String>> = (0..ns.len())
                .map(|j| {
                    let rate = |r: &[f64]| if j == 0 { String::new() } else { f(r[j - 1]) };
                    vec![
                        ns[j].to_string(),
                        f(s.h[j]),
                        f(s.l2[j]),
                        f(s.h1[j]),
                        rate(&s.l2_rates),
                        rate(&s.h1_rates),
                    ]
                })
                .collect();
            write_table(
                &path,
                &["n", "h", "l2_error", "h1_error", "l2_rate", "h1_rate"],
                &rows,
            )?;
            let ok = s.l2_rates.iter().all(|r| (1.8..=2.2).contains(r))
                && s.h1_rates.iter().all(|r| (0.8..=1.2).contains(r));
            (
                ok,
                format!("L2 rates {:?}, H1 rates {:?}", s.l2_rates, s.h1_rates),
            )
        }
        StudyKind::Cauchy => {
            let s = cauchy_convergence_study(&preset, params, ns, cfg.t_final)?;
            let rows: Vec<Vec<String>> = s
                .differences
                .iter()
                .enumerate()
                .map(|(j, d)| vec![ns[j].to_string(), ns[j + 1].to_string(), f(*d)])
                .collect();
            write_table(&path, &["n_coarse", "n_fine", "difference"], &rows)?;
            (
                s.strictly_decreasing,
                format!("differences {:?}", s.differences),
            )
        }
        StudyKind::PDecay => {
            let v = Directed {
                scalar: SineBump,
                direction: Vec3::new(1.0, 2.0, 3.0),
            };
            let s = p_decay_study(&preset, params, ns, cfg.t_final, &SineBump, &v)?;
            let rows: Vec<Vec<String>> = (0..ns.len())
                .map(|j| {
                    let mut r = vec![ns[j].to_string(), f(s.h[j])];
                    r.extend(s.magnitudes[j].iter().map(|&m| f(m)));
                    for i in 0..4 {
                        r.push(if j == 0 {
                            String::new()
                        } else {
                            f(s.rates[j - 1][i])
                        });
                    }
                    r
                })
                .collect();
            write_table(
                &path,
                &[
                    "n", "h", "P1", "P2", "P3", "P4", "P1_rate", "P2_rate", "P3_rate", "P4_rate",
                ],
                &rows,
            )?;
            (s.monotone, format!("magnitudes {:?}", s.magnitudes))
        }
    };
    log::info!("{} study: {summary}", cfg.study);
    println!("wrote {}", path.display());
    if passed {
        Ok(Outcome::Success)
    } else {
        Err(Outcome::NumericalFailure(format!(
            "{} study criterion not met: {summary}",
            cfg.study
        )))
    }
}
