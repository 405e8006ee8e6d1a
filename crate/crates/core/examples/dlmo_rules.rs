//! DLMO estimation from per-sample ICT predictions: the single-sample rule
//! anchored at the best-calibrated clock time, and the three-sample
//! weighted rule fitted on validation people.

use lassornet::circular_time::{circ_error, CircTime};
use lassornet::dlmo::{anchor, best_zt, fit_dlmo_weights, predict_dlmo_single, predict_dlmo_weighted, PersonPrediction};

fn person(id: usize, dlmo: f64, first_zt: f64, noise: &[f64]) -> PersonPrediction {
    let zt: Vec<CircTime> = (0..6).map(|j| CircTime::new(first_zt + 4.0 * j as f64)).collect();
    let predicted_ict = zt
        .iter()
        .zip(noise.iter().cycle())
        .map(|(z, e)| Some(CircTime::new(z.hours() + dlmo + e)))
        .collect();
    PersonPrediction {
        person_id: format!("p{id}"),
        zt,
        predicted_ict,
        dlmo: Some(CircTime::new(dlmo)),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let noise = [0.4, -0.3, 0.1, -0.2, 0.5, -0.1, 0.0];
    let validation: Vec<PersonPrediction> = (0..8)
        .map(|i| person(i, 20.0 + 0.5 * i as f64, (i % 3) as f64, &noise[i % 3..]))
        .collect();
    let test: Vec<PersonPrediction> = (0..4)
        .map(|i| person(10 + i, 21.0 + 0.7 * i as f64, (i % 2) as f64, &noise[(i + 2) % 4..]))
        .collect();

    let bz = best_zt(&validation)?;
    println!("best-calibrated ZT on validation: {:.2} h", bz.hours());
    let anchors: Vec<_> = validation.iter().map(|p| anchor(p, bz, 3)).collect::<Result<_, _>>()?;
    let w = fit_dlmo_weights(&validation, &anchors, false)?;
    println!("weights {:?}, unwrap center {:.2} h", w.alpha.map(|a| (a * 1000.0).round() / 1000.0), w.center);

    for p in &test {
        let truth = p.dlmo.unwrap();
        let single = predict_dlmo_single(p, &anchor(p, bz, 1)?)?;
        let weighted = predict_dlmo_weighted(p, &anchor(p, bz, 3)?, &w)?;
        println!(
            "{}: true {:.2}  single {:.2} (err {:.2})  weighted {:.2} (err {:.2})",
            p.person_id,
            truth.hours(),
            single.hours(),
            circ_error(truth, single),
            weighted.hours(),
            circ_error(truth, weighted)
        );
    }
    Ok(())
}
