//! The linear comparison methods: group elastic net on all genes, the same
//! restricted to a gene panel, and PLSR with top-K gene selection, each
//! with and without the sampling-time encoding.

use lassornet::baselines::{
    fit_elastic_net, hyper_search_en, hyper_search_plsr, intercept_only, validation_mse, EnGrid, EnSettings, GenePanel, PlsGrid,
};
use lassornet::data::{prepare_split, synth_cohort, NormalizationScope, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_people: 20,
        n_genes: 50,
        n_rhythmic: 10,
        ..SynthSpec::default()
    };
    let split = prepare_split(&synth_cohort(&spec, 9)?, 9, NormalizationScope::Train)?;
    let settings = EnSettings::default();
    let grid = EnGrid {
        n_lambda: 10,
        alphas: vec![0.5, 1.0],
        ..EnGrid::default()
    };
    let panel = GenePanel::parse("# first rhythmic genes\ngene0000\ngene0001\ngene0002 # inline comment\ngene0003\n");

    let base = intercept_only(&split, false)?;
    let mse0 = validation_mse(&base.predict_pairs(&split.validation)?, &split.validation);
    println!("intercept only: validation MSE {mse0:.4}");

    for aug in [false, true] {
        let (en, path) = hyper_search_en(&split, &grid, None, aug, &settings)?;
        let mse = validation_mse(&en.linear.predict_pairs(&split.validation)?, &split.validation);
        println!(
            "elastic net (aug {aug}): lambda {:.4} alpha {} -> {} genes, validation MSE {mse:.4} ({} grid points)",
            en.lambda,
            en.alpha,
            en.linear.selected().len(),
            path.len()
        );
        let tm = fit_elastic_net(&split, en.lambda, en.alpha, Some(&panel), aug, &settings)?;
        let mse = validation_mse(&tm.linear.predict_pairs(&split.validation)?, &split.validation);
        println!("  restricted to {} panel genes: validation MSE {mse:.4}", panel.genes.len());

        let plsr_grid = PlsGrid {
            latent: vec![2, 4],
            k: vec![10, 25],
        };
        let (pls, _) = hyper_search_plsr(&split, &plsr_grid, aug)?;
        let mse = validation_mse(&pls.linear.predict_pairs(&split.validation)?, &split.validation);
        println!("  PLSR: {} components, top {} genes, validation MSE {mse:.4}", pls.n_latent, pls.k);
    }
    Ok(())
}
