//! Learn the same synthetic task streams with and without communication and
//! compare the learning curves and jumpstart against single-task learning.
//!
//! cargo run --release --example colla_vs_ella

use colla::consensus::TopologyKind;
use colla::evaluation::jumpstart;
use colla::io::{synth_generate, SynthSpec};
use colla::simulator::{run_experiment, ExperimentConfig, Method};
use colla::task_model::TaskKind;

fn main() -> colla::error::Result<()> {
    let data = synth_generate(&SynthSpec {
        d: 8,
        u_true: 3,
        n_tasks: 40,
        n_agents: 2,
        instances_per_task: 16,
        noise_sd: 0.3,
        sparsity: 2,
        seed: 1,
        kind: TaskKind::Regression,
    })?;

    let mut cfg = ExperimentConfig::new(Method::Colla);
    cfg.n_agents = 2;
    cfg.topology = TopologyKind::Chain;
    cfg.n_trials = 30;
    cfg.model.dict_size = 3;
    cfg.model.lambda = 0.1;
    cfg.model.mu = 0.1;
    cfg.model.rho = 0.1;

    let mut results = Vec::new();
    for method in [Method::Colla, Method::Ella, Method::Stl] {
        cfg.method = method;
        results.push(run_experiment(&cfg, &data.tasks)?);
    }
    let stl = &results[2];

    println!("{:>3} {:>10} {:>10} {:>10}", "t", "colla", "ella", "stl");
    let curves: Vec<_> = results.iter().map(|r| r.curve_summary()).collect();
    for (t, ((c, e), s)) in curves[0].iter().zip(&curves[1]).zip(&curves[2]).enumerate() {
        println!("{:>3} {:>10.4} {:>10.4} {:>10.4}", t + 1, c.mean, e.mean, s.mean);
    }
    for r in &results[..2] {
        println!("jumpstart {}: {:.2}%", r.label, jumpstart(r, stl)?);
    }
    Ok(())
}
