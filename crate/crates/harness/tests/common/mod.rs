#![allow(dead_code)]

use std::path::Path;

use glap_harness::ExperimentConfig;

pub const SINE: &str = r#"
seeds = [0, 1]
output_dir = "runs/test"

[task]
kind = "sine_regression"
n = 40
noise_sd = 0.1
n_test = 30

[network]
input_dim = 1
output_dim = 1
hidden = [10]
activation = "tanh"
bias_per_layer = [true, true]

[likelihood]
kind = "gaussian"
variance = 0.01

[sampler]
kind = "sampled_laplace"
samples = 20
rank = 6
alpha = 1.0
seed = 7

[train]
optimizer = "adam"
lr = 0.02
epochs = 2000
seed = 3

[eval]
predictive = "nn"
metrics = ["map_train_rmse", "train_rmse", "test_variance"]
"#;

pub const MIXTURE: &str = r#"
seeds = [4]
output_dir = "runs/test"

[task]
kind = "gaussian_mixture_2class"
n = 40
means = [[-1.0, 0.0], [1.0, 0.0]]
sd = 0.6
n_test = 20

[network]
input_dim = 2
output_dim = 1
hidden = [6]
activation = "tanh"
bias_per_layer = [true, true]

[likelihood]
kind = "bernoulli"

[sampler]
kind = "sampled_laplace"
samples = 4000
rank = 10
alpha = 2.0
seed = 1

[train]
optimizer = "adam"
lr = 0.05
epochs = 200
seed = 2

[eval]
predictive = "nn"
metrics = ["test_accuracy", "map_test_accuracy", "test_nll", "test_ece"]
"#;

pub fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).expect("fixture config parses")
}

pub fn with_output(text: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = parse(text);
    cfg.output_dir = dir.to_path_buf();
    cfg
}
