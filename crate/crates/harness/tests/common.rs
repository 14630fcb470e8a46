#![allow(dead_code)]

use rectiflow_harness::{parse_config_str, ExperimentConfig};

/// A 2D mixture config small enough to train and evaluate in a few seconds.
pub fn small_config(model: &str, samplers: &str) -> ExperimentConfig {
    let text = format!(
        r#"
seed = 11

[data]
kind = "mixture"
means = [[-2.0, 0.0], [2.0, 0.0]]
std = 0.5

[model]
kind = "{model}"
hidden = [16, 16]
data_mean = {{ kind = "empirical", samples = 2000 }}

[train]
steps = 40
batch_size = 64
log_every = 10

{samplers}

[sampling]
n_samples = 300
trajectory_samples = 3

[metrics]
probes = 50
reference_samples = 300
grid_resolution = 5
"#
    );
    parse_config_str(&text).unwrap()
}

pub const TWO_SAMPLERS: &str = r#"
[[samplers]]
kind = "euler"
steps = 20

[[samplers]]
kind = "curved_euler_sde"
steps = 20
"#;

pub const EULER_ONLY: &str = r#"
[[samplers]]
kind = "euler"
steps = 20
"#;

pub fn read(dir: &std::path::Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}
