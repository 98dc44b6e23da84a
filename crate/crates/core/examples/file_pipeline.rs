//! The file-based workflow behind the command-line tool: write a synthetic
//! dataset, run an experiment from a config, then compare two configs.
//!
//! cargo run --release --example file_pipeline [out_dir]

use std::path::PathBuf;

use colla::io::{self, DatasetSource, RunConfig, SynthSpec};
use colla::simulator::{ExperimentConfig, Method};
use colla::task_model::TaskKind;

fn main() -> colla::error::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("colla-pipeline"));
    let spec = SynthSpec {
        d: 6,
        u_true: 3,
        n_tasks: 20,
        n_agents: 2,
        instances_per_task: 30,
        noise_sd: 0.2,
        sparsity: 2,
        seed: 3,
        kind: TaskKind::Regression,
    };
    io::write_synth(&spec, &out.join("data"))?;

    let mut experiment = ExperimentConfig::new(Method::Colla);
    experiment.n_agents = 2;
    experiment.n_trials = 5;
    experiment.model.dict_size = 3;
    let colla = RunConfig {
        dataset: DatasetSource {
            manifest: Some(out.join("data").join("manifest.toml")),
            synth: None,
        },
        experiment,
        grid: None,
    };
    let config_path = out.join("colla.toml");
    std::fs::write(&config_path, colla.to_toml()?)?;
    io::run_config_file(&config_path, &out.join("run"))?;

    let mut ella = colla.clone();
    ella.experiment.method = Method::Ella;
    io::compare(&mut [colla, ella], None, &out.join("compare"))?;

    print!(
        "{}",
        std::fs::read_to_string(out.join("compare").join("comparison.csv"))?
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
