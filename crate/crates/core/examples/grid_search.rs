//! Pick the dictionary size and penalties by validation on held-out
//! training data, for data-starved tasks built from three latent atoms.
//!
//! cargo run --release --example grid_search

use colla::evaluation::{grid_search, ParamGrid, ValidationSpec};
use colla::io::{synth_generate, SynthSpec};
use colla::simulator::{ExperimentConfig, Method};
use colla::task_model::TaskKind;

fn main() -> colla::error::Result<()> {
    let data = synth_generate(&SynthSpec {
        d: 8,
        u_true: 3,
        n_tasks: 60,
        n_agents: 2,
        instances_per_task: 30,
        noise_sd: 0.5,
        sparsity: 2,
        seed: 900,
        kind: TaskKind::Regression,
    })?;
    let mut template = ExperimentConfig::new(Method::Colla);
    template.n_agents = 2;
    let grid = ParamGrid {
        dict_size: (1..=8).collect(),
        lambda: vec![1e-2, 1e-1, 1.0],
        mu: vec![1e-2, 1e-1, 1.0],
        rho: vec![1e-1],
    };
    let outcome = grid_search(
        &template,
        &data.tasks,
        &grid,
        &ValidationSpec {
            holdout: 0.2,
            trials: 5,
        },
    )?;
    // Best validation score per dictionary size.
    for u in grid.dict_size.iter() {
        let best = outcome
            .cells
            .iter()
            .filter(|c| c.config.model.dict_size == *u)
            .map(|c| c.score)
            .fold(f64::NEG_INFINITY, f64::max);
        println!("u {u}: best score {best:.5}");
    }
    let best = &outcome.best.model;
    println!(
        "best: u = {} (planted 3), lambda = {}, mu = {}",
        best.dict_size, best.lambda, best.mu
    );
    Ok(())
}
