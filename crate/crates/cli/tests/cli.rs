use std::path::Path;
use std::process::Command;

use disa_cli::config::{ExperimentConfig, SolverName};
use disa_cli::experiment::{run_experiment, Status};
use disa_cli::sweep::{run_sweep, sweep_u_scale, SweepOutcome};
use disa_cli::CliError;

fn lasso(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "[problem]\nkind = \"lasso\"\nm = 4\nn = 20\nu_rows = 3\nseed = 5\n{extra}\n[output]\ndir = \"{}\"\n",
        dir.display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn without_ms(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn lasso_defaults_converge_and_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = lasso(tmp.path(), "");
    let s = run_experiment(&cfg).unwrap();
    assert!(s.converged && !s.partial);
    assert!(s.iterations > 0);
    assert_eq!(s.config_hash, cfg.hash());
    for f in ["trace.csv", "summary.json", "plot_iter.csv", "plot_time.csv", "config.toml"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["converged"], true);
    assert_eq!(json["iterations"], s.iterations);
    let trace = std::fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iter,re_err,consensus,kkt_norm,objective,h_dist,m_step,eps,ms");
    assert_eq!(trace.lines().count(), s.iterations + 2);
    let saved = ExperimentConfig::load(&tmp.path().join("config.toml")).unwrap();
    assert_eq!(saved.hash(), cfg.hash());
}

#[test]
fn reruns_are_identical_apart_from_wallclock() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, extra) in [(&a, ""), (&b, "")] {
        let mut cfg = lasso(dir.path(), extra);
        cfg.solver.name = SolverName::Vdisa;
        run_experiment(&cfg).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert_eq!(without_ms(&read(&a)), without_ms(&read(&b)));
    let plot = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("plot_iter.csv")).unwrap();
    assert_eq!(plot(&a), plot(&b));
}

#[test]
fn invalid_steps_fail_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = lasso(&out, "[solver]\nname = \"disa\"\ntau = 0.001\nbeta = 2000.0\n");
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Config(ref m) if m.contains("below 1")), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn budget_and_divergence_are_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = lasso(tmp.path(), "[solver]\nname = \"condat_vu\"\n[stopping]\nrule = \"re_err\"\ntol = 1e-7\nmax_iters = 50\n");
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.status, Status::Budget);
    assert!(s.partial);
    assert_eq!(s.exit_code(true), 4);
    assert_eq!(s.exit_code(false), 0);

    let mut cfg = lasso(tmp.path(), "[solver]\nname = \"lalm\"\n");
    cfg.problem.u_scale = 100.0;
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.status, Status::Diverged);
    assert!(s.diverged_at.is_some());
    assert_eq!(s.exit_code(true), 3);
}

#[test]
fn sweep_marks_baselines_over_budget_at_large_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = lasso(tmp.path(), "[stopping]\nrule = \"re_err\"\ntol = 1e-7\nmax_iters = 20000\n");
    cfg.sweep.solvers = vec![SolverName::Disa, SolverName::CondatVu, SolverName::Nids];
    let t = sweep_u_scale(&cfg, &[1.0, 1e3]).unwrap();
    assert_eq!(t.cells.len(), 6);
    let disa = t.column(SolverName::Disa);
    assert!(disa.iter().all(|c| c.status == Some(Status::Converged)));
    assert!(disa[1].max_uut_norm > 1e5 * disa[0].max_uut_norm);
    let cv = t.column(SolverName::CondatVu);
    assert_eq!(cv[1].label(), ">budget");
    // NIDS needs g = 0; the cell fails and the sweep carries on.
    assert!(t.column(SolverName::Nids).iter().all(|c| c.label() == "failed" && c.error.is_some()));
    assert!(t.render().lines().count() == 3);
}

#[test]
fn single_cell_sweep_is_a_plain_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = lasso(tmp.path(), "");
    cfg.sweep.solvers = vec![SolverName::Disa];
    match run_sweep(&cfg, &[1.0]).unwrap() {
        SweepOutcome::Single(s) => assert!(s.converged),
        SweepOutcome::Table(_) => panic!("expected a single run"),
    }
    assert!(tmp.path().join("summary.json").exists());
    assert!(!tmp.path().join("sweep.csv").exists());
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = tmp.path().join(name);
        std::fs::write(&p, format!("[problem]\nkind = \"lasso\"\nm = 3\nn = 15\nu_rows = 3\n{body}")).unwrap();
        p
    };
    let bin = env!("CARGO_BIN_EXE_disa");
    let status = |cfg: &Path, args: &[&str]| {
        Command::new(bin)
            .arg("--config")
            .arg(cfg)
            .arg("--out")
            .arg(tmp.path().join("out"))
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
    };
    let ok = write("ok.toml", "");
    assert_eq!(status(&ok, &[]), Some(0));
    assert_eq!(status(&ok, &["--solver", "condat_vu", "--max-iters", "20"]), Some(4));
    assert_eq!(status(&ok, &["--solver", "lalm", "--sweep-scales", "1000"]), Some(3));
    assert_eq!(status(&ok, &["--tol", "-1"]), Some(2));
    assert_eq!(status(&write("bad.toml", "[solver]\nname = \"disa\"\ntau = 10.0\n"), &[]), Some(2));
    assert_eq!(status(&tmp.path().join("missing.toml"), &[]), Some(2));
    assert_eq!(status(&ok, &["--sweep-scales", "1,10", "--max-iters", "200"]), Some(0));
    assert!(tmp.path().join("out/sweep.csv").exists());
}
