//! Seeded random hyperparameter search for LassoRNet, selecting by
//! validation MSE, with the per-trial audit log written as JSON lines.

use lassornet::data::{prepare_split, synth_cohort, NormalizationScope, SynthSpec};
use lassornet::trainer::{random_search, write_trial_log, SearchSpace, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_people: 16,
        n_genes: 40,
        n_rhythmic: 8,
        ..SynthSpec::default()
    };
    let split = prepare_split(&synth_cohort(&spec, 5)?, 5, NormalizationScope::Train)?;
    let space = SearchSpace {
        trials: 6,
        lambda: [1e-3, 1e-1],
        tau: [0.1, 10.0],
        step_size: [1e-2, 1e-1],
        hidden_sizes: vec![3, 6],
        output_sizes: vec![2, 4],
        base: TrainConfig {
            max_epochs: 150,
            patience: 30,
            ..TrainConfig::default()
        },
    };
    let out = random_search(&space, &split, 5)?;
    for t in &out.trials {
        println!(
            "trial {}: lambda {:.4} tau {:.3} step {:.4} H {} P {} -> validation MSE {}",
            t.trial,
            t.config.lambda,
            t.config.tau,
            t.config.step_size,
            t.config.hidden_size,
            t.config.output_size,
            t.validation_mse.map(|m| format!("{m:.5}")).unwrap_or_else(|| "failed".into())
        );
    }
    println!("selected trial {} with {} inputs", out.best_trial, out.best.selected_features.len());

    let mut log = Vec::new();
    write_trial_log(&mut log, &out.trials)?;
    println!("audit log: {} bytes of JSON lines", log.len());
    Ok(())
}
