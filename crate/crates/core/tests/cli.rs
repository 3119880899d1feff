use std::path::{Path, PathBuf};
use std::process::Command;

use duncan::cli::{EXIT_RUNTIME, EXIT_USAGE, Evaluation};

fn duncan(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_duncan")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(root: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 3
data_root = "{root}"

[dataset]
manifest = "sim/IS_T1_MIN/dataset.toml"

[simulate]
severities = ["minor"]
test_fraction = 0.25

[simulate.phantoms]
count = 4
slices = 4
rows = 32
cols = 32

[train]
total_steps = 2
checkpoint_every = 1

[train.network]
base_filters = 4
input_shape = [32, 32, 3]
discriminator_filters = [8, 16, 32, 64]
{extra}"#,
        root = root.display()
    );
    let path = root.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let extra = r#"
[evaluate]
segmentation_threshold = 0.725

[[evaluate.groups]]
severity = "minor"
reference = "sim/IS_T1_MIN/dataset.toml"
test = "corr"
test_suffix = "_corrected"

[report]
evaluation = "eval/evaluation.json"

[[report.panels]]
corrupted = "sim/IS_T1_MIN/phantom_0003.rvol"
corrected = "corr/phantom_0003_corrected.rvol"
reference = "sim/clean/phantom_0003.rvol"
"#;
    let config = write_config(root, extra);
    let c = p(&config);
    let (sim, run, corr, eval, rep) = (root.join("sim"), root.join("run"), root.join("corr"), root.join("eval"), root.join("rep"));

    assert_eq!(duncan(&["--config", c, "--output-dir", p(&sim), "simulate"]), 0);
    assert!(sim.join("IS_T1_MIN/manifest.toml").exists());
    assert!(sim.join("clean/phantom_0003.rvol").exists());

    assert_eq!(duncan(&["--config", c, "--output-dir", p(&run), "train"]), 0);
    let checkpoint = run.join("checkpoint.safetensors");
    assert!(checkpoint.exists());
    assert_eq!(std::fs::read_to_string(run.join("loss_log.jsonl")).unwrap().lines().count(), 2);

    assert_eq!(duncan(&["--config", c, "--output-dir", p(&corr), "correct", "--checkpoint", p(&checkpoint)]), 0);
    assert!(corr.join("phantom_0003_corrected.rvol").exists());

    assert_eq!(duncan(&["--config", c, "--output-dir", p(&eval), "evaluate"]), 0);
    let summary = std::fs::read_to_string(eval.join("summary.csv")).unwrap();
    assert!(summary.starts_with("severity,metric,mean,sem,n\n"));
    assert!(summary.contains("minor,ssim,"));
    let evaluation: Evaluation = serde_json::from_str(&std::fs::read_to_string(eval.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(evaluation.seed, 3);
    assert!(evaluation.exceptions.is_empty());

    assert_eq!(duncan(&["--config", c, "--output-dir", p(&rep), "report"]), 0);
    assert!(rep.join("bars_ssim.png").exists());
    assert!(rep.join("panel_0.png").exists());

    // Outputs are never overwritten silently.
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&sim), "simulate"]), EXIT_USAGE);
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&sim), "--force", "simulate"]), 0);
}

#[test]
fn resumed_training_extends_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = write_config(root, "");
    let c = p(&config);
    let (sim, run) = (root.join("sim"), root.join("run"));
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&sim), "simulate"]), 0);
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&run), "train", "--steps", "1"]), 0);
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&run), "train", "--steps", "3", "--resume"]), 0);
    let log = std::fs::read_to_string(run.join("loss_log.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![0, 1, 2]);
}

#[test]
fn missing_test_volume_is_reported_with_runtime_status() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let extra = r#"
[[evaluate.groups]]
severity = "minor"
reference = "sim/clean"
test = "sim/IS_T1_MIN"
"#;
    let config = write_config(root, extra);
    let c = p(&config);
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&root.join("sim")), "simulate"]), 0);
    std::fs::remove_file(root.join("sim/IS_T1_MIN/phantom_0002.rvol")).unwrap();
    let eval = root.join("eval");
    assert_eq!(duncan(&["--config", c, "--output-dir", p(&eval), "evaluate"]), EXIT_RUNTIME);
    let summary = std::fs::read_to_string(eval.join("summary.csv")).unwrap();
    let exceptions = summary.split("# exceptions\n").nth(1).unwrap();
    assert!(exceptions.contains("minor,phantom_0002,missing test volume"), "{summary}");
    assert!(summary.contains("minor,ssim,"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_status() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let bad = root.join("bad.toml");
    std::fs::write(&bad, "[train]\ntotal_stepz = 3\n").unwrap();
    assert_eq!(duncan(&["--config", p(&bad), "train"]), EXIT_USAGE);
    assert_eq!(duncan(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(duncan(&["simulate", "--severity", "none"]), EXIT_USAGE);

    let config = write_config(root, "");
    let missing = root.join("nope.safetensors");
    assert_eq!(
        duncan(&["--config", p(&config), "--output-dir", p(&root.join("o")), "correct", "--checkpoint", p(&missing)]),
        EXIT_RUNTIME
    );
    assert_eq!(duncan(&["--help"]), 0);
}
