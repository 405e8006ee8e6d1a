//! The hierarchical proximal map: shrink a linear weight pair as a group
//! and clip every network input weight of the same variable to tau times
//! the pair's norm.

use lassornet::hierprox::{objective, prox, prox_with, soft_threshold, Enumeration, HierProxProblem};

fn main() {
    let v = vec![0.9, -0.4];
    let u = vec![vec![1.5, -0.2, 0.05], vec![-2.0, 0.7, 0.3]];
    for tau in [0.0, 0.5, 2.0] {
        let p = HierProxProblem::new(v.clone(), u.clone(), 0.3, 0.0, tau);
        let sol = prox(&p);
        let bn = sol.b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let wmax = sol.w.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        println!(
            "tau {tau:>3}: b = [{:+.4}, {:+.4}]  max|w| = {wmax:.4} <= tau*|b| = {:.4}  clipped per block {:?}  objective {:.5}",
            sol.b[0],
            sol.b[1],
            tau * bn,
            sol.s,
            objective(&p, &sol.b, &sol.w)
        );
        let brute = prox_with(&p, Enumeration::ProductGrid);
        assert!((objective(&p, &brute.b, &brute.w) - objective(&p, &sol.b, &sol.w)).abs() < 1e-12);
    }

    // tau = 0 reduces to group soft-thresholding of v.
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = soft_threshold(norm, 0.3) / norm;
    println!("group soft-threshold at tau 0: [{:+.4}, {:+.4}]", v[0] * scale, v[1] * scale);
}
