//! Solve the pooled multi-task problem centrally and across a network, and
//! check that both reach the same objective.
//!
//! cargo run --release --example batch_baselines

use colla::io::{synth_generate, SynthSpec};
use colla::simulator::{run_trial, ExperimentConfig, Method};
use colla::task_model::TaskKind;

fn main() -> colla::error::Result<()> {
    let data = synth_generate(&SynthSpec {
        d: 6,
        u_true: 3,
        n_tasks: 12,
        n_agents: 3,
        instances_per_task: 30,
        noise_sd: 0.1,
        sparsity: 2,
        seed: 600,
        kind: TaskKind::Regression,
    })?;
    let mut cfg = ExperimentConfig::new(Method::GoMtl);
    cfg.n_agents = 3;
    cfg.model.dict_size = 3;
    cfg.model.lambda = 0.1;
    cfg.model.mu = 0.1;
    cfg.model.rho = 1.0;
    for method in [Method::GoMtl, Method::OfflineColla] {
        cfg.method = method;
        let r = run_trial(&cfg, &data.tasks, 0)?;
        println!(
            "{:<14} objective {:.10}  alternations {:>3}  converged {}  final rmse {:.5}",
            method.name(),
            r.final_objective().unwrap_or(f64::NAN),
            r.objective_trace.len(),
            r.converged,
            r.curve.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
