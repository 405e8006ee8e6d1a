//! Forward pass of the bidirectional LSTM with linear skip connection, and
//! a spot check of its backpropagation-through-time gradient against
//! central finite differences.

use lassornet::bilstm::{BiLstmModel, Mat, Sequence, SequenceBatch};
use lassornet::circular_time::CircTime;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, h, p) = (5, 3, 2);
    let mut model = BiLstmModel::init(d, h, p, 11);
    for (i, x) in model.theta.iter_mut().enumerate() {
        *x = 0.1 * (i as f64 - 1.5);
    }
    for (i, x) in model.beta.iter_mut().enumerate() {
        *x = 0.05 * ((i * 7 % 5) as f64 - 2.0);
    }

    let sequences = (0..3)
        .map(|s| {
            let n = 4;
            let inputs = Mat::from_fn(n, d, |j, k| ((s * 31 + j * 7 + k * 3) % 11) as f64 / 5.0 - 1.0);
            let targets = Mat::from_fn(n, 2, |j, c| {
                let t = CircTime::new(4.0 * j as f64 + s as f64).encode();
                if c == 0 {
                    t.t1
                } else {
                    t.t2
                }
            });
            Sequence {
                inputs,
                targets: Some(targets),
            }
        })
        .collect();
    let batch = SequenceBatch { sequences };

    let (loss, grad) = model.gradients(&batch)?;
    println!("{} parameters, loss {loss:.6}", model.n_params());
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for idx in (0..model.n_params()).step_by(17) {
        let mut plus = model.clone();
        plus.set_param(idx, model.param(idx) + eps);
        let mut minus = model.clone();
        minus.set_param(idx, model.param(idx) - eps);
        let fd = (plus.loss(&batch)? - minus.loss(&batch)?) / (2.0 * eps);
        let g = grad.param(idx);
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("largest relative gradient error over sampled coordinates: {worst:.2e}");
    let pred = model.predict_sequence(&batch.sequences[0].inputs)?;
    println!("first sequence predictions (sin, cos):\n{pred:.4}");
    Ok(())
}
