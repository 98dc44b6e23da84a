//! Encode one regression task and one classification task, then compute
//! their sparse codes against a fixed dictionary.
//!
//! cargo run --example encode_and_code

use colla::io::{synth_generate, SynthSpec};
use colla::sparse_coding::{kkt_residual, solve_weighted_lasso, LassoOptions};
use colla::task_model::{fit_task, NewtonOptions, TaskKind};
use nalgebra::DVector;

fn compact(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn main() -> colla::error::Result<()> {
    for kind in [TaskKind::Regression, TaskKind::Classification] {
        let data = synth_generate(&SynthSpec {
            d: 6,
            u_true: 3,
            n_tasks: 1,
            n_agents: 1,
            instances_per_task: 200,
            noise_sd: 0.1,
            sparsity: 2,
            seed: 7,
            kind,
        })?;
        let task = &data.tasks[0];
        let enc = fit_task(task, 1e-2, NewtonOptions::default())?;
        println!("{kind:?} task {}: alpha = {}", task.task_id, compact(&enc.alpha));

        for mu in [1e-3, 1e-1, 1.0] {
            let code = solve_weighted_lasso(&data.dictionary, &enc, mu, LassoOptions::default(), None)?;
            println!(
                "  mu = {mu:<6} support {:?}  objective {:.5}  kkt {:.1e}",
                code.support,
                code.objective_value,
                kkt_residual(&data.dictionary, &enc, mu, &code.s)?
            );
        }
        println!("  planted code: {}", compact(&data.codes[0]));
    }
    Ok(())
}
