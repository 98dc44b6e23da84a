use colla::evaluation::{grid_search, rmse, split_task, ParamGrid, SplitSpec, ValidationSpec};
use colla::io::{synth_generate, SynthSpec};
use colla::simulator::{ExperimentConfig, Method};
use colla::sparse_coding::{solve_weighted_lasso, LassoOptions};
use colla::task_model::{fit_ridge_regression, TaskKind};

fn spec(n_tasks: usize, m: usize, noise: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        d: 8,
        u_true: 3,
        n_tasks,
        n_agents: 2,
        instances_per_task: m,
        noise_sd: noise,
        sparsity: 2,
        seed,
        kind: TaskKind::Regression,
    }
}

#[test]
fn grid_search_finds_the_planted_dictionary_size() {
    let mut hits = 0;
    let mut picks = Vec::new();
    for seed in 0..20 {
        let data = synth_generate(&spec(60, 30, 0.5, 900 + seed)).unwrap();
        let mut template = ExperimentConfig::new(Method::Colla);
        template.n_agents = 2;
        template.seeds.split_seed = seed;
        template.seeds.stream_seed = seed;
        let grid = ParamGrid {
            dict_size: (1..=8).collect(),
            lambda: vec![1e-2, 1e-1, 1.0],
            mu: vec![1e-2, 1e-1, 1.0],
            rho: vec![1e-1],
        };
        let validation = ValidationSpec {
            holdout: 0.2,
            trials: 5,
        };
        let u = grid_search(&template, &data.tasks, &grid, &validation)
            .unwrap()
            .best
            .model
            .dict_size;
        picks.push(u);
        hits += usize::from((2..=4).contains(&u));
    }
    assert!(hits >= 18, "selected sizes {picks:?}");
}

struct SupportCounts {
    mu: f64,
    /// Codes whose support lies inside the planted support.
    inside: usize,
    /// Codes whose support covers the planted support.
    covering: usize,
}

/// Codes every task against the planted dictionary with one μ picked from
/// the powers-of-ten grid by mean held-out RMSE.
fn support_counts() -> SupportCounts {
    let data = synth_generate(&spec(100, 40, 0.3, 31)).unwrap();
    let halves: Vec<_> = data
        .tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            split_task(
                t,
                &SplitSpec {
                    seed: k as u64,
                    fraction: 0.5,
                },
            )
            .unwrap()
        })
        .collect();
    let encodings: Vec<_> = halves
        .iter()
        .map(|(train, _)| fit_ridge_regression(train, 1e-2).unwrap())
        .collect();
    let codes_at = |mu: f64| -> Vec<_> {
        encodings
            .iter()
            .map(|enc| {
                solve_weighted_lasso(&data.dictionary, enc, mu, LassoOptions::default(), None)
                    .unwrap()
                    .s
            })
            .collect()
    };
    let score = |mu: f64| -> f64 {
        codes_at(mu)
            .iter()
            .zip(&halves)
            .map(|(s, (_, test))| {
                let theta = &data.dictionary * s;
                let preds: Vec<f64> = test.features.column_iter().map(|x| theta.dot(&x)).collect();
                rmse(&preds, test.targets.as_slice()).unwrap()
            })
            .sum()
    };
    let mu = ParamGrid::powers_of_ten()
        .into_iter()
        .min_by(|&a, &b| score(a).total_cmp(&score(b)))
        .unwrap();
    let codes = codes_at(mu);
    let pairs = || codes.iter().zip(&data.codes);
    SupportCounts {
        mu,
        inside: pairs()
            .filter(|(s, planted)| s.iter().zip(planted.iter()).all(|(v, p)| *v == 0.0 || *p != 0.0))
            .count(),
        covering: pairs()
            .filter(|(s, planted)| s.iter().zip(planted.iter()).all(|(v, p)| *p == 0.0 || *v != 0.0))
            .count(),
    }
}

#[test]
fn lasso_at_tuned_mu_finds_the_planted_atoms() {
    let c = support_counts();
    assert!(
        c.covering >= 90,
        "mu {}: {}/100 codes cover the planted support",
        c.mu,
        c.covering
    );
}

/// Validation-tuned μ favors prediction, and the extra atoms it keeps pick
/// up noise; only a small share of codes stay inside the planted support.
#[test]
#[ignore = "validation-tuned mu over-selects atoms on this generator"]
fn lasso_at_tuned_mu_stays_inside_the_planted_support() {
    let c = support_counts();
    assert!(
        c.inside >= 90,
        "mu {}: {}/100 codes inside the planted support",
        c.mu,
        c.inside
    );
}
