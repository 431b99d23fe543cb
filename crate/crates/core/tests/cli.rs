use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_riscal");

fn riscal(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn riscal")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 10] = ["--mris", "4", "--mr", "2", "--bits", "2", "--groups", "3", "--pilot-len", "20"];

fn run_in(dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    riscal(&args)
}

#[test]
fn bound_prints_the_minimum_measurement_count() {
    let o = riscal(&["bound", "--mris", "16", "--bits", "4", "--mr", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("Q_min=46"), "{text}");
    assert!(text.contains("O_min=3"), "{text}");
}

#[test]
fn version_reports_config_schema() {
    let o = riscal(&["--version"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("config schema 1"));
}

#[test]
fn invalid_input_exits_with_1() {
    let o = riscal(&["calibrate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(riscal(&["bound", "--bits", "x"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    assert_eq!(riscal(&["bound", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn singular_fim_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "crb", &["--mris", "16", "--bits", "4", "--mr", "4", "--groups", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("at least 3"), "{err}");
}

#[test]
fn divergence_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL.to_vec();
    args.extend(["--lr", "50", "--max-epochs", "200"]);
    let o = run_in(dir.path(), "calibrate", &args);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn calibrate_reads_simulated_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run_in(&sim, "simulate", &SMALL);
    assert!(o.status.success());
    for f in ["channels.csv", "true_table.csv", "schedule.csv", "measurements.csv", "run_manifest.txt"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let direct = dir.path().join("direct");
    let from_files = dir.path().join("files");
    assert!(run_in(&direct, "calibrate", &SMALL).status.success());
    let mut args = SMALL.to_vec();
    args.extend(["--input", sim.to_str().unwrap()]);
    let o = run_in(&from_files, "calibrate", &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("phase RMSE"));

    // The CSV round trip is exact, so both routes train on identical data.
    for f in ["estimated_table.csv", "history.csv", "summary.txt"] {
        assert_eq!(fs::read(direct.join(f)).unwrap(), fs::read(from_files.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(direct.join("summary.txt")).unwrap();
    for key in ["epochs_run", "final_c_ave", "converged", "rmse_deg"] {
        assert!(summary.contains(key), "{summary}");
    }
}

#[test]
fn crb_writes_bound_and_fim_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("fim.bin");
    let mut args = SMALL.to_vec();
    args.extend(["--dump-fim", dump.to_str().unwrap()]);
    let o = run_in(dir.path(), "crb", &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fim = riscal::io::read_fim_binary(&dump).unwrap();
    // M_ris (L - 1) phases plus 2 M_r M_ris channel parameters.
    assert_eq!(fim.shape(), (4 * 3 + 2 * 2 * 4, 4 * 3 + 2 * 2 * 4));
    let rows = fs::read_to_string(dir.path().join("crb.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("element,gear,crb_deg"));
    assert_eq!(rows.lines().count(), 1 + 4 * 3);
}

#[test]
fn sweeps_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = SMALL.to_vec();
    args.extend(["--snr-db", "0,20", "--trials", "2"]);
    assert!(run_in(dir.path(), "sweep-rmse", &args).status.success());
    let rmse = fs::read_to_string(dir.path().join("rmse_vs_snr.csv")).unwrap();
    assert_eq!(rmse.lines().next(), Some("snr_db,rmse_deg,crb_deg,ratio,trials"));
    assert_eq!(rmse.lines().count(), 3);

    let conv = dir.path().join("conv");
    let mut args = vec!["--mris", "4,6", "--mr", "2", "--bits", "2", "--groups", "3", "--pilot-len", "20"];
    args.extend(["--snr-db", "10", "--trials", "2"]);
    assert!(run_in(&conv, "sweep-convergence", &args).status.success());
    let c = fs::read_to_string(conv.join("convergence.csv")).unwrap();
    assert_eq!(c.lines().next(), Some("epoch,c_ave,snr_db,m_ris"));
    assert!(c.lines().skip(1).any(|l| l.ends_with(",10.0,6")));
}

#[test]
fn bench_reports_runtime_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "bench", &["--mris", "8,16", "--mr", "2", "--groups", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(dir.path().join("runtime.csv")).unwrap();
    assert_eq!(t.lines().next(), Some("m_ris,sec_per_epoch"));
    assert_eq!(t.lines().count(), 3);
}

#[test]
fn manifest_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let mut args = SMALL.to_vec();
    args.extend(["--seed", "77", "--snr-db", "15", "--channel", "rayleigh"]);
    assert!(run_in(&first, "calibrate", &args).status.success());
    let manifest = first.join("run_manifest.txt");
    let second = dir.path().join("b");
    let o = run_in(&second, "calibrate", &["--config", manifest.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["estimated_table.csv", "history.csv", "summary.txt", "run_manifest.txt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("command = calibrate"));
    assert!(text.contains("channel = rayleigh"));
}
