use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).current_dir(cwd).env_remove("LAB_WORKERS").output().unwrap()
}

fn report(dir: &Path, run: &str) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("runs").join(run).join("report.json")).unwrap()).unwrap()
}

#[test]
fn config_file_run_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        "experiment = \"conditions-sweep\"\nname = \"sweep\"\n[grid]\nradii = [1, 2, 4]\n[conditions]\nchecks = [\"vd\", \"jump\"]\n",
    )
    .unwrap();
    let out = lab(&["run", "sweep.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "sweep");
    assert_eq!(r["experiment"], "conditions-sweep");
    assert!(r["constants"]["vd.C_V"].as_f64().unwrap() > 1.0);
    for f in ["config.resolved", "metadata.json", "vd.csv", "jump.csv"] {
        assert!(dir.path().join("runs/sweep").join(f).exists(), "{f}");
    }
}

#[test]
fn failing_threshold_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.toml"),
        "experiment = \"conditions-sweep\"\nname = \"t\"\n[grid]\nradii = [1, 2]\n[conditions]\nchecks = [\"vd\"]\n\
         [[thresholds]]\nconstant = \"vd.C_V\"\nmax = 1.1\n",
    )
    .unwrap();
    let out = lab(&["run", "t.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL vd.C_V"));
    assert_eq!(report(dir.path(), "t")["passed"], false);
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "experiment = \"phi\"\n[harnack]\nlambda = 1.5\n").unwrap();
    let out = lab(&["run", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("harnack.lambda"));
    assert_eq!(lab(&["run", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["cex", "ladder", "--alpha", "0.5"], dir.path()).status.code(), Some(2));
}

#[test]
fn subcommand_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(
        &["exit-time", "--alpha", "1.5", "--radii", "2,4", "--trajectories", "500", "--seed", "7", "--name", "e", "--workers", "2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "e");
    assert_eq!(r["config"]["seed"], 7);
    assert_eq!(r["config"]["model"]["kernel"]["alpha"], 1.5);
    assert_eq!(r["results"]["exit_time_mc"].as_array().unwrap().len(), 2);
    let resolved = fs::read_to_string(dir.path().join("runs/e/config.resolved")).unwrap();
    assert!(resolved.contains("trajectories = 500"));
}

#[test]
fn out_of_range_alpha_warns_but_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["conditions", "--alpha", "2.5", "--radii", "1,2", "--name", "w"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: alpha = 2.5"));
    assert_eq!(report(dir.path(), "w")["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        jumplab_cli::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        n += 1;
    }
    assert!(n >= 5);
}
