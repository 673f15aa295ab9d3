use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gamefam::baggfn::{BaggfnFamily, ParameterRange};

fn gamefam(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gamefam"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("GAMEFAM_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn tiny_config(kind: &str, parameter: &str, extra: &str) -> String {
    format!(
        r#"
kind = "{kind}"
seed = 3

[game]
num_strategies = 3
num_functions = 3
parameter = {parameter}

[model.vpl]
trunk_widths = [16]
head_width = 4

[train]
epochs = 1

[budget]
total = 60
{extra}
"#
    )
}

const PLAYERS: &str = r#"{ kind = "player_count", min = 4, max = 6 }"#;

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.toml", &tiny_config("robustness", PLAYERS, ""));
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for target in [&a, &b] {
        let out = gamefam(dir.path(), &["generate", "--config", cfg, "--output", target.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let out = gamefam(dir.path(), &["generate", "--config", cfg]);
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("generate/3/game_0.json").exists());
}

#[test]
fn generate_parameter_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let er = tiny_config("robustness", r#"{ kind = "er_threshold", min = 0.15, max = 0.25 }"#, "");
    let cfg = write_config(dir.path(), "er.toml", &er);
    let path = dir.path().join("er.json");
    let out = gamefam(dir.path(), &["generate", "--config", cfg.to_str().unwrap(), "--output", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fam = BaggfnFamily::load(&path).unwrap();
    assert_eq!(fam.parameter, ParameterRange::ErThreshold { min: 0.15, max: 0.25 });
    assert_eq!(fam.er_threshold, None);

    let players = tiny_config("robustness", r#"{ kind = "player_count", min = 90, max = 100 }"#, "");
    let cfg = write_config(dir.path(), "p.toml", &players);
    let path = dir.path().join("p.json");
    let out = gamefam(dir.path(), &["generate", "--config", cfg.to_str().unwrap(), "--output", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let fam = BaggfnFamily::load(&path).unwrap();
    assert_eq!(fam.parameter.grid(11).len(), 11);
}

#[test]
fn analyze_with_oracle_needs_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", &tiny_config("robustness", PLAYERS, ""));
    let out = gamefam(
        dir.path(),
        &["analyze", "--config", cfg.to_str().unwrap(), "--use-oracle", "--resolution", "6", "--iterations", "50"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("analyze/3/robustness.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# gamefam "));
    assert_eq!(lines.len() - 2, 28);
    let text = fs::read_to_string(dir.path().join("analyze/3/sensitivity.csv")).unwrap();
    assert_eq!(text.lines().count() - 2, 3);
}

#[test]
fn train_evaluate_nash_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.toml", &tiny_config("robustness", PLAYERS, ""));
    let cfg = cfg.to_str().unwrap();
    let fam = dir.path().join("fam.json");
    assert_eq!(code(&gamefam(dir.path(), &["generate", "--config", cfg, "--output", fam.to_str().unwrap()])), 0);
    let fam = fam.to_str().unwrap();
    let model = dir.path().join("m.gfsm");
    let out = gamefam(
        dir.path(),
        &["train", "--config", cfg, "--game-file", fam, "--budget", "60", "--output", model.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = model.to_str().unwrap();
    let out =
        gamefam(dir.path(), &["evaluate", "--config", cfg, "--game-file", fam, "--model", model, "--resolution", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.path().join("evaluate/3/mae_report.csv")).unwrap();
    assert_eq!(report.lines().nth(1), Some("game_id,model,v,mae,n_mixtures"));
    let out = gamefam(
        dir.path(),
        &["nash", "--game-file", fam, "--model", model, "--restarts", "3", "--iterations", "20", "--seed", "3"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("nash/3/candidates.csv").exists());

    let fpl = dir.path().join("fpl.gfsm");
    let out = gamefam(
        dir.path(),
        &["train", "--game-file", fam, "--fpl-at", "5", "--budget", "30", "--output", fpl.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "kind = \"refinement\"\nunknown = 1\n");
    let out = gamefam(dir.path(), &["experiment", "refinement", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(out.stdout.is_empty());

    let cfg = write_config(dir.path(), "r.toml", &tiny_config("robustness", PLAYERS, ""));
    let out = gamefam(dir.path(), &["experiment", "sensitivity", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let out = gamefam(dir.path(), &["experiment", "no_such_kind", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&gamefam(dir.path(), &["experiment", "robustness"])), 2);
    assert_eq!(code(&gamefam(dir.path(), &["analyze", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&gamefam(dir.path(), &["--bogus-flag"])), 2);
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "r.toml", &tiny_config("robustness", PLAYERS, ""));
    let junk = write_config(dir.path(), "junk.gfsm", "not a model");
    let out = gamefam(dir.path(), &["analyze", "--config", cfg.to_str().unwrap(), "--model", junk.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let missing = dir.path().join("missing.json");
    let out = gamefam(dir.path(), &["nash", "--game-file", missing.to_str().unwrap(), "--use-oracle"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn experiment_writes_run_directory_and_honours_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        &tiny_config("sensitivity", PLAYERS, "[analysis]\nuse_oracle = true\niterations = 40\n"),
    );
    let root = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_gamefam"))
        .args(["experiment", "sensitivity", "--config", cfg.to_str().unwrap(), "--seed", "9"])
        .env("GAMEFAM_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.join("sensitivity/9");
    assert!(run.join("manifest.json").exists());
    let first = fs::read(run.join("sensitivity.csv")).unwrap();
    assert!(String::from_utf8_lossy(&first).starts_with("# gamefam 0.1.0 seed=9 config_hash="));
    let again = Command::new(env!("CARGO_BIN_EXE_gamefam"))
        .args(["--threads", "1", "experiment", "sensitivity", "--config", cfg.to_str().unwrap(), "--seed", "9"])
        .env("GAMEFAM_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&again), 0);
    assert_eq!(fs::read(run.join("sensitivity.csv")).unwrap(), first);
}
