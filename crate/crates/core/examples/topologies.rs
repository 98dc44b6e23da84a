//! Sweep the four network topologies on one dataset and report the final
//! accuracy and communication volume of each.
//!
//! cargo run --release --example topologies

use colla::consensus::{make_topology, TopologyKind};
use colla::evaluation::mean_std_err;
use colla::io::{synth_generate, SynthSpec};
use colla::simulator::{run_experiment, ExperimentConfig, Method};
use colla::task_model::TaskKind;

fn main() -> colla::error::Result<()> {
    let n_agents = 6;
    let data = synth_generate(&SynthSpec {
        d: 8,
        u_true: 3,
        n_tasks: 60,
        n_agents,
        instances_per_task: 16,
        noise_sd: 0.3,
        sparsity: 2,
        seed: 1,
        kind: TaskKind::Regression,
    })?;
    println!(
        "{:<9} {:>6} {:>12} {:>10} {:>12}",
        "topology", "edges", "final rmse", "std err", "residual"
    );
    for kind in TopologyKind::ALL {
        let mut cfg = ExperimentConfig::new(Method::Colla);
        cfg.n_agents = n_agents;
        cfg.topology = kind;
        cfg.n_trials = 20;
        cfg.model.dict_size = 3;
        cfg.model.lambda = 0.1;
        cfg.model.mu = 0.1;
        cfg.model.rho = 0.1;
        let result = run_experiment(&cfg, &data.tasks)?;
        let last = result.curve_summary().last().copied().unwrap();
        let residual: Vec<f64> = result
            .trials
            .iter()
            .map(|t| *t.consensus_residual.last().unwrap())
            .collect();
        println!(
            "{:<9} {:>6} {:>12.5} {:>10.5} {:>12.2e}",
            kind.name(),
            make_topology(kind, n_agents, cfg.seeds.topology_seed)?.n_edges(),
            last.mean,
            last.std_err,
            mean_std_err(&residual).mean
        );
    }
    Ok(())
}
