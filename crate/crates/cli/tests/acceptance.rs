//! Process-level half of the regime-audit acceptance criterion: a
//! miswired method spec must abort the whole run with exit code 3.

use std::fs;
use std::process::Command;

const MISWIRED_CONFIG: &str = r#"
version = 1

[experiment]
trials = 1
base_seed = 0
tune_trials = 1
metrics = ["ecce_mean"]

[[datasets]]
name = "synthetic"

[datasets.synth]
n = 600
p = 2
n_groups = 2
group_weights = [[1.0, -0.5], [1.0, -0.5]]
group_bias = [0.8, -0.8]
group_proportions = [0.5, 0.5]
seed = 1

[[methods]]
id = "per_group_isotonic"
model = "gbt"
regime = "val"
intervention = "per_group_calibrator"
calibrator = "isotonic"
"#;

#[test]
fn criterion_12_miswired_spec_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), MISWIRED_CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_paritycal"))
        .current_dir(dir.path())
        .args(["bench", "--config", "exp.toml", "--out", "out"])
        .output()
        .expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    println!("acceptance 12 miswired per-group spec exits with code 3: PASS");
}
