//! Encode times of day on the unit circle, decode them back, and score
//! predictions with the circular median error and the error-curve AUC.

use lassornet::circular_time::{auc, circ_error, mae, CircTime};

fn main() {
    let truth = [23.0, 6.5, 12.0, 18.25, 0.5];
    let pred = [1.0, 7.0, 10.0, 18.0, 23.5];

    for t in [0.0, 6.0, 13.5, 23.9] {
        let p = CircTime::new(t).encode();
        println!("{t:>5.2} h -> ({:+.4}, {:+.4}) -> {:.4} h", p.t1, p.t2, p.decode().unwrap().hours());
    }

    let errors: Vec<f64> = truth
        .iter()
        .zip(&pred)
        .map(|(&t, &p)| circ_error(CircTime::new(t), CircTime::new(p)))
        .collect();
    for ((t, p), e) in truth.iter().zip(&pred).zip(&errors) {
        println!("truth {t:>5.2}  pred {p:>5.2}  error {e:.2} h");
    }
    println!("median absolute error: {:.3} h", mae(&errors).unwrap());
    println!("AUC of the error curve: {:.3}", auc(&errors).unwrap());
}
