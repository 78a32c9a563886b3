use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spinforge"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(format!("{name}.spin"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// A short citrate run: 20 segments over 2 ms, 6 epochs.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[systems]
citrate = "{}"

[program]
segments = 20
duration_s = 0.002

[objective]
power_weight = 0.0
tasks = [{{ system = "citrate", kind = "state_fidelity", target = "I1x" }}]

[optimizer]
epochs = 6
seed = 4
snapshot_every = 3
{extra}
"#,
        data("citrate").display()
    );
    let p = dir.join("tiny.run");
    std::fs::write(&p, text).unwrap();
    p
}

fn optimize(config: &Path, out: &Path, args: &[&str]) -> Output {
    run(bin().arg("--out").arg(out).arg("-q").args(args).arg("optimize").arg("--config").arg(config))
}

#[test]
fn simulate_state_writes_outputs_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let o = run(bin()
        .arg("--out")
        .arg(&out)
        .args(["simulate", "--state", "I1x - 2*I1x.I2z", "--lb", "1", "--system"])
        .arg(data("citrate")));
    assert!(o.status.success(), "{}", stderr(&o));
    let spec = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(spec.lines().count() > 1000);
    assert!(out.join("fid.csv").exists());
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["inputs"].as_object().unwrap().len(), 1);
    assert_eq!(m["outputs"], serde_json::json!(["fid.csv", "spectrum.csv"]));
}

#[test]
fn missing_system_is_a_validation_error_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let o = run(bin()
        .arg("--out")
        .arg(&out)
        .args(["simulate", "--state", "I1x", "--system"])
        .arg(tmp.path().join("absent.spin")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.spin"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn nonpositive_press_te_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = run(bin()
        .arg("--out")
        .arg(tmp.path().join("p"))
        .args(["simulate", "--press-te", "0", "--system"])
        .arg(data("citrate")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_problems_are_reported_together() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "step_size = -1.0");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("citrate.spin", "nope.spin");
    std::fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("o");
    let o = optimize(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.lines().filter(|l| l.starts_with("error:")).count() >= 2, "{err}");
    assert!(!out.exists());
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    let common = ["gradcheck", "--segments", "6", "--segment-s", "2e-4", "--system"];
    let o = run(bin().args(common).arg(data("citrate")));
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"), "{}", stdout(&o));
    let o = run(bin().args(common).arg(data("citrate")).arg("--corrupt"));
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let o = run(bin().arg("--out").arg(tmp.path().join("d")).arg("optimize").arg("--config").arg(&cfg).arg("--dry-run"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# plan: 1 system(s), 1 task(s)"), "{text}");
    assert!(text.contains("step_size"), "defaults are materialized: {text}");
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn optimize_outputs_seed_and_rerun_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert!(optimize(&cfg, &a, &[]).status.success());
    assert!(optimize(&cfg, &b, &["--threads", "1"]).status.success());
    assert!(optimize(&cfg, &c, &["--seed", "5"]).status.success());

    for f in ["history.csv", "best_pulse.toml", "best_pulse_shape.csv", "best_spectra.csv", "summary.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert!(a.join("snapshot_epoch3.csv").exists());
    let hist = |d: &Path| std::fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(hist(&a).lines().count(), 7);
    assert_eq!(hist(&a), hist(&b), "worker count changed the result");
    assert_ne!(hist(&a), hist(&c), "seed has no effect");
    assert_eq!(manifest(&c)["seed"], 5);

    // Rerun from the recorded manifest reproduces the history exactly.
    let r = tmp.path().join("rerun");
    let o = optimize(&a.join("manifest.json"), &r, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(hist(&a), hist(&r));

    // A changed input is detected before anything runs.
    let sys = tmp.path().join("citrate.spin");
    std::fs::copy(data("citrate"), &sys).unwrap();
    let local = tiny_config(tmp.path(), "");
    let text = std::fs::read_to_string(&local).unwrap().replace(&data("citrate").display().to_string(), "citrate.spin");
    std::fs::write(&local, text).unwrap();
    let d = tmp.path().join("d");
    assert!(optimize(&local, &d, &[]).status.success());
    std::fs::write(&sys, std::fs::read_to_string(&sys).unwrap() + "\n# edited\n").unwrap();
    let o = optimize(&d.join("manifest.json"), &tmp.path().join("e"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("changed"), "{}", stderr(&o));

    // A directory holding another command's run is refused.
    let o = run(bin().arg("--out").arg(&a).args(["simulate", "--state", "I1x", "--system"]).arg(data("citrate")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_and_export_a_pulse() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let a = tmp.path().join("a");
    assert!(optimize(&cfg, &a, &[]).status.success());
    let pulse = a.join("best_pulse.toml");

    let o = run(bin()
        .arg("--out")
        .arg(tmp.path().join("an"))
        .args(["analyze", "--top", "3", "--system"])
        .arg(data("citrate"))
        .arg("--pulse")
        .arg(&pulse));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("an/decomposition.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("label,coefficient,expression"));
    assert_eq!(lines.count(), 3);

    let o = run(bin()
        .arg("--out")
        .arg(tmp.path().join("an0"))
        .args(["analyze", "--top", "0", "--system"])
        .arg(data("citrate"))
        .arg("--pulse")
        .arg(&pulse));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("top"), "{}", stderr(&o));

    let ex = tmp.path().join("ex");
    let o = run(bin().arg("--out").arg(&ex).arg("export").arg("--pulse").arg(&pulse));
    assert!(o.status.success(), "{}", stderr(&o));
    let shape = std::fs::read_to_string(ex.join("best_pulse_shape.csv")).unwrap();
    assert_eq!(shape, std::fs::read_to_string(a.join("best_pulse_shape.csv")).unwrap());
    assert!(ex.join("best_pulse.toml").exists());
}
