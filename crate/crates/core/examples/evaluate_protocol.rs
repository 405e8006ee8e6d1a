//! The full comparison on one seeded split: every method selects its
//! hyperparameters on validation, is scored on test, and the reports are
//! written as JSON lines and rendered as a table. The fitted LassoRNet is
//! then saved and applied to the raw cohort.

use lassornet::baselines::{EnGrid, PlsGrid};
use lassornet::data::{synth_cohort, SynthSpec};
use lassornet::evaluation::{render_table, run_protocol, write_reports, Method, ProtocolConfig, SavedModel};
use lassornet::trainer::{SearchSpace, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_people: 18,
        n_genes: 60,
        n_rhythmic: 12,
        ..SynthSpec::default()
    };
    let raw = synth_cohort(&spec, 1)?;
    let cfg = ProtocolConfig {
        en_grid: EnGrid {
            n_lambda: 8,
            alphas: vec![0.5, 1.0],
            ..EnGrid::default()
        },
        plsr_grid: PlsGrid {
            latent: vec![2, 4],
            k: vec![15, 60],
        },
        lassornet: SearchSpace {
            trials: 4,
            lambda: [1e-3, 1e-1],
            tau: [0.1, 10.0],
            step_size: [1e-2, 1e-1],
            hidden_sizes: vec![4],
            output_sizes: vec![4],
            base: TrainConfig {
                max_epochs: 200,
                patience: 40,
                ..TrainConfig::default()
            },
        },
        panel_genes: Some((0..8).map(|k| format!("gene{k:04}")).collect()),
        ..ProtocolConfig::default()
    };

    let out = run_protocol(&raw, &cfg, 7)?;
    let reports = out.reports();
    let mut jsonl = Vec::new();
    write_reports(&mut jsonl, &reports)?;
    println!("{} report lines, config digest {}", reports.len(), cfg.digest());
    print!("{}", render_table(&reports));

    let best = out
        .outcomes
        .iter()
        .find(|o| o.report.method == Method::Lassornet && o.fitted.is_some())
        .and_then(|o| o.fitted.as_ref())
        .ok_or("LassoRNet did not fit")?;
    let saved = SavedModel::new(best, &out.split.train, 7, &cfg.digest());
    let rows = saved.predict(&raw)?;
    let r = &rows[0];
    println!(
        "saved-model prediction for {} sample {}: ICT {:.2} h, DLMO {}",
        r.person_id,
        r.sample_index,
        r.ict.map(|t| t.hours()).unwrap_or(f64::NAN),
        r.dlmo.map(|t| format!("{:.2} h", t.hours())).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}
