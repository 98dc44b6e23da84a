//! Run the distributed dictionary solve on a small network and compare every
//! agent's copy with the pooled solution a central server would compute.
//!
//! cargo run --example admm_consensus

use colla::consensus::{
    admm_until_consensus, make_topology, rho_admissibility, AdmmParams, DualVariable, TopologyKind,
};
use colla::knowledge_base::{ella_update, Accumulator, KnowledgeBase};
use colla::task_model::TaskEncoding;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> colla::error::Result<()> {
    let (n, d, u, lambda) = (5, 4, 3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gauss = move || rng.sample::<f64, _>(StandardNormal);

    let accs: Vec<Accumulator> = (0..n)
        .map(|_| {
            let mut acc = Accumulator::new(d, u);
            for _ in 0..6 {
                let b = DMatrix::from_fn(d, d, |_, _| gauss());
                let enc = TaskEncoding {
                    alpha: DVector::from_fn(d, |_, _| gauss()),
                    hessian: &b * b.transpose() * 0.1 + DMatrix::identity(d, d),
                    ridge_reg: 1e-2,
                };
                acc.accumulate(&DVector::from_fn(u, |_, _| gauss()), &enc)?;
            }
            Ok(acc)
        })
        .collect::<colla::error::Result<_>>()?;

    // Central solve: (sum_i A_i/T_i + N lambda I) vec L = sum_i b_i/T_i.
    let pooled = Accumulator::pooled_average(&accs)?;
    let central = ella_update(&pooled, n as f64 * lambda)?;

    for kind in TopologyKind::ALL {
        let graph = make_topology(kind, n, 3)?;
        let diag = rho_admissibility(&graph, &accs, lambda, 1.0);
        let rho = 0.9 * diag.bound;
        let mut dicts = vec![KnowledgeBase::zeros(d, u); n];
        let mut duals = DualVariable::zeros(&graph, d, u);
        let params = AdmmParams::new(rho, lambda, 20_000);
        let trace = admm_until_consensus(&graph, &accs, &mut dicts, &mut duals, &params, 1e-9)?;
        let gap = dicts
            .iter()
            .map(|kb| (&kb.dict - &central.dict).norm())
            .fold(0.0, f64::max);
        println!(
            "{:<8} edges {:>2}  rho {:.4}  iterations {:>5}  residual {:.2e}  max gap to pooled {:.2e}",
            kind.name(),
            graph.n_edges(),
            rho,
            trace.residuals.len(),
            trace.final_residual(),
            gap
        );
    }
    Ok(())
}
