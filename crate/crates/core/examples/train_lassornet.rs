//! Train LassoRNet with fixed hyperparameters by proximal gradient descent,
//! watching the objective, the feasibility of the hierarchy constraint, and
//! which genes survive.

use lassornet::data::{prepare_split, synth_cohort, NormalizationScope, SynthSpec};
use lassornet::trainer::{lambda_max, pair_mse, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_people: 20,
        n_genes: 60,
        n_rhythmic: 10,
        ..SynthSpec::default()
    };
    let split = prepare_split(&synth_cohort(&spec, 3)?, 3, NormalizationScope::Train)?;
    let cfg = TrainConfig {
        lambda: 0.03,
        tau: 1.0,
        step_size: 0.05,
        hidden_size: 4,
        output_size: 4,
        max_epochs: 300,
        patience: 40,
        ..TrainConfig::default()
    };
    let fit = train(&cfg, &split)?;
    for r in fit.history.iter().step_by(25) {
        println!(
            "epoch {:>3}  objective {:.5}  validation {:.5}  step {:.4}  max constraint violation {:.1e}",
            r.epoch, r.objective, r.validation_loss, r.step_size, r.max_violation
        );
    }
    let rhythmic = fit.selected_features.iter().filter(|&&k| k < spec.n_rhythmic).count();
    println!(
        "best epoch {}: {} of {} inputs selected ({} rhythmic genes); test pair MSE {:.4}",
        fit.best_epoch,
        fit.selected_features.len(),
        fit.feature_names.len(),
        rhythmic,
        pair_mse(&fit.model, &split.test, cfg.zt_augmented)?
    );

    let lmax = lambda_max(&cfg, &split)?;
    let empty = train(&TrainConfig { lambda: lmax, ..cfg }, &split)?;
    println!("at lambda_max = {lmax:.4}: {} inputs selected", empty.selected_features.len());
    Ok(())
}
